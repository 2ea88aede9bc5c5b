"""Free-energy reconstruction and tail-probability integration.

Given a trained bias potential V and the reference density, the density of
the quantity of interest is recovered on the working grid as
p_R ∝ exp(-F) with F = -log p_ref - V on nodes where p_ref is positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from rareebm.bias import BiasPotential
from rareebm.densities import GridFunction, ReferenceDensity, grid_integral
from rareebm.errors import EstimationError, NumericError

# p_ref below this is treated as zero support; the bias is unidentifiable there.
SUPPORT_EPS = 1e-300


@dataclass(frozen=True)
class FreeEnergyEstimate:
    free_energy: GridFunction
    support_mask: np.ndarray = field(repr=False)
    density: GridFunction  # normalized p_R on the grid
    tail_warning: bool = False


def free_energy_from_bias(
    bias: BiasPotential, p_ref: ReferenceDensity, grid: GridFunction
) -> FreeEnergyEstimate:
    """Reconstruct F and the normalized density of R on the grid.

    F is defined only up to an additive constant; the maximum of -F is
    subtracted before exponentiating so the result is overflow-safe and
    invariant under V -> V + c.
    """
    xs = grid.xs
    ref_vals = np.asarray(p_ref.pdf(xs), dtype=float)
    mask = ref_vals > SUPPORT_EPS
    if not np.any(mask):
        raise EstimationError("reference density vanishes on the whole grid")
    v_vals = np.asarray(bias(xs), dtype=float)
    neg_f = np.full(len(xs), -np.inf)
    neg_f[mask] = np.log(ref_vals[mask]) + v_vals[mask]
    shift = np.max(neg_f)
    dens = np.where(mask, np.exp(neg_f - shift), 0.0)
    total = float(np.trapezoid(dens, dx=grid.h))
    if total <= 0:
        raise EstimationError("reconstructed density integrates to zero")
    dens /= total
    # Large finite stand-in outside the support keeps the grid finite.
    f_vals = np.where(mask, -(neg_f - shift), 750.0)
    tail = dens[-5:].max() >= 1e-16 * dens.max()
    return FreeEnergyEstimate(
        free_energy=grid.with_values(f_vals),
        support_mask=mask,
        density=grid.with_values(dens),
        tail_warning=bool(tail),
    )


def tail_probability(est: FreeEnergyEstimate, threshold: float) -> float:
    """P(R >= threshold): trapezoid integral of p_R from the threshold up."""
    g = est.density
    if threshold < g.lo - 1e-12 or threshold > g.hi + 1e-12:
        raise NumericError("threshold outside the working grid")
    p = grid_integral(g, max(threshold, g.lo), g.hi)
    return float(min(max(p, 0.0), 1.0))
