"""Bias potential representations: RBF-parametric and non-parametric grid form."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from rareebm.densities import GridFunction


@dataclass(frozen=True)
class RbfBias:
    """Sum of squared-exponential radial basis functions.

    V(r) = sum_j w_j * exp(-(kappa * (r - b_j))^2) with fixed, equispaced
    centers b_j and a single shape parameter kappa; only the weights are
    trained.
    """

    weights: np.ndarray = field(repr=False)
    centers: np.ndarray = field(repr=False)
    kappa: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        b = np.asarray(self.centers, dtype=float)
        if w.shape != b.shape or w.ndim != 1 or len(w) < 1:
            raise ValueError("weights and centers must be 1-D arrays of equal length >= 1")
        if len(b) > 1 and not np.all(np.diff(b) > 0):
            raise ValueError("centers must be strictly increasing")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "centers", b)

    @classmethod
    def zero(cls, n_basis: int, lo: float, hi: float, kappa: float) -> "RbfBias":
        return cls(np.zeros(n_basis), np.linspace(lo, hi, n_basis), kappa)

    def features(self, r):
        """Kernel activations exp(-(kappa*(r-b_j))^2); also d V / d w_j."""
        r = np.asarray(r, dtype=float)
        z = self.kappa * (r[..., None] - self.centers)
        return np.exp(-z * z)

    def __call__(self, r):
        return self.features(r) @ self.weights

    def weight_gradient(self, r):
        return self.features(r)

    def with_weights(self, weights) -> "RbfBias":
        return RbfBias(np.asarray(weights, dtype=float), self.centers, self.kappa)


@dataclass(frozen=True)
class GridBias:
    """Non-parametric bias potential tabulated on a grid.

    Evaluation interpolates linearly between nodes and extends the boundary
    values as constants outside [lo, hi], so Metropolis excursions beyond
    the grid remain well defined.
    """

    grid: GridFunction

    def __call__(self, r):
        return self.grid.interp(r)

    @classmethod
    def zero(cls, lo: float, hi: float, h: float) -> "GridBias":
        return cls(GridFunction.zeros(lo, hi, h))

    def updated(self, direction: GridFunction, step: float) -> "GridBias":
        """New bias with node values moved by -step * direction."""
        if not self.grid.same_domain(direction):
            raise ValueError("direction grid does not match the bias grid")
        return GridBias(self.grid.with_values(self.grid.values - step * direction.values))


BiasPotential = RbfBias | GridBias


def save_bias_csv(bias: BiasPotential, grid: GridFunction, path) -> None:
    """Tabulate the bias on the working grid and write (r, V(r)) rows."""
    xs = grid.xs
    vals = np.asarray(bias(xs), dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "V"])
        for x, v in zip(xs, vals):
            w.writerow([format(x, ".17g"), format(v, ".17g")])
