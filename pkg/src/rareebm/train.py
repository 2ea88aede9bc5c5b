"""Bias-potential training: stochastic KL-gradient descent with momentum.

Each iteration draws chain samples of R under the current bias, forms the
KL gradient (sample-based for the RBF form, density-difference for the grid
form), applies an SGDM update and records diagnostics. Training stops at
the step limit or, when enabled, as soon as the wild-bootstrap KSD test no
longer rejects agreement between the chain samples and the reference
density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from rareebm.bias import BiasPotential, GridBias, RbfBias
from rareebm.densities import GridFunction, ReferenceDensity, grid_normalize, kde_gaussian
from rareebm.errors import EstimationError, TrainingError
from rareebm.estimator import free_energy_from_bias, tail_probability
from rareebm.ksd import KsdTestConfig, SteinKernelConfig, ksd_statistic, wild_bootstrap_test
from rareebm.mcmc import BiasedTarget, ChainConfig, mh_run
from rareebm.problems import RareEventQuery, TargetProblem

_ABORT_BIAS_MAGNITUDE = 1e6


@dataclass(frozen=True)
class SgdmState:
    momentum: np.ndarray = field(repr=False)
    step_index: int = 0
    momentum_weight: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.momentum_weight < 1.0:
            raise ValueError("momentum weight must lie in [0, 1)")


def sgdm_step(state: SgdmState, grad: np.ndarray, learning_rate: float) -> tuple[np.ndarray, SgdmState]:
    """One momentum update; returns (parameter delta, new state)."""
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise TrainingError("non-finite gradient")
    m = state.momentum_weight * state.momentum + (1.0 - state.momentum_weight) * grad
    return -learning_rate * m, SgdmState(m, state.step_index + 1, state.momentum_weight)


@dataclass(frozen=True)
class ConstantLr:
    gamma: float

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("learning rate must be positive")

    def value(self, n: int) -> float:
        return self.gamma


@dataclass(frozen=True)
class ExpDecayLr:
    gamma0: float
    factor: float  # negative exponent rate; gamma_n = gamma0 * exp(factor * n)

    def __post_init__(self):
        if self.gamma0 <= 0 or self.factor >= 0:
            raise ValueError("need gamma0 > 0 and factor < 0")

    def value(self, n: int) -> float:
        return self.gamma0 * math.exp(self.factor * n)


LrSchedule = Union[ConstantLr, ExpDecayLr]


@dataclass(frozen=True)
class KsdStopping:
    kernel: SteinKernelConfig = SteinKernelConfig()
    test: KsdTestConfig = KsdTestConfig()
    min_steps: int = 5


@dataclass(frozen=True)
class TrainConfig:
    max_steps: int
    n_grad_samples: int
    chain: ChainConfig
    schedule: LrSchedule
    momentum_weight: float = 0.5
    stopping: Optional[KsdStopping] = None
    track_kl: bool = True
    keep_last_biases: int = 10  # window for averaged tail estimates
    grad_clip: Optional[float] = None  # componentwise gradient magnitude cap
    kde_bandwidth: Optional[float] = None  # fixed KDE bandwidth (None: data-driven)

    def __post_init__(self):
        if self.max_steps < 0 or self.n_grad_samples < 1 or self.keep_last_biases < 1:
            raise ValueError("invalid training configuration")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")
        if self.kde_bandwidth is not None and self.kde_bandwidth <= 0:
            raise ValueError("kde_bandwidth must be positive")
        if self.chain.n_keep != self.n_grad_samples:
            raise ValueError("chain n_keep must equal n_grad_samples")


@dataclass(frozen=True)
class TrainRecord:
    iteration: int
    kl: Optional[float]
    ksd: float
    p_hat: float
    budget: int  # cumulative forward evaluations
    acceptance: float


@dataclass
class TrainResult:
    bias: BiasPotential
    trace: list[TrainRecord]
    budget: int
    stop_reason: str
    # Biases from the last keep_last_biases iterations (final one included);
    # averaging tail estimates over them damps the stochastic-gradient noise
    # of a single read-out.
    recent_biases: list = field(default_factory=list)


def kl_gradient_rbf(bias: RbfBias, ref_samples: np.ndarray, biased_samples: np.ndarray) -> np.ndarray:
    """Sample estimate of the KL gradient with respect to the RBF weights."""
    ref_samples = np.asarray(ref_samples, dtype=float)
    biased_samples = np.asarray(biased_samples, dtype=float)
    if len(ref_samples) != len(biased_samples) or len(ref_samples) < 1:
        raise ValueError("need equal, nonzero sample counts")
    return bias.weight_gradient(ref_samples).mean(axis=0) - bias.weight_gradient(biased_samples).mean(axis=0)


def mle_gradient_rbf(bias: RbfBias, ref_samples: np.ndarray, biased_samples: np.ndarray) -> np.ndarray:
    """Negative gradient of the normalized log-likelihood of the ref samples.

    The intractable normalizer gradient is replaced by the biased-sample
    average; algebraically identical to kl_gradient_rbf but kept as an
    independent code path for the equivalence check.
    """
    ref_samples = np.asarray(ref_samples, dtype=float)
    biased_samples = np.asarray(biased_samples, dtype=float)
    loglik_grad = -bias.weight_gradient(ref_samples).mean(axis=0) + bias.weight_gradient(biased_samples).mean(axis=0)
    return -loglik_grad


def kl_gradient_grid(p_ref_grid: GridFunction, p_v_grid: GridFunction) -> GridFunction:
    """Nodewise descent direction p_ref - p_V for the grid-form bias."""
    if not p_ref_grid.same_domain(p_v_grid):
        raise ValueError("grid domains do not match")
    return p_ref_grid.with_values(p_ref_grid.values - p_v_grid.values)


def estimate_kl(p_ref: ReferenceDensity, p_v_grid: GridFunction) -> float:
    """Trapezoid estimate of KL(p_ref || p_V) on the grid; p_V clamped at 1e-12."""
    xs = p_v_grid.xs
    ref_vals = np.asarray(p_ref.pdf(xs), dtype=float)
    pv = np.clip(p_v_grid.values, 1e-12, None)
    integrand = np.where(ref_vals > 0, ref_vals * (np.log(np.where(ref_vals > 0, ref_vals, 1.0)) - np.log(pv)), 0.0)
    return float(np.trapezoid(integrand, dx=p_v_grid.h))


def train_bias_potential(
    problem: TargetProblem,
    query: RareEventQuery,
    p_ref: ReferenceDensity,
    bias_init: BiasPotential,
    cfg: TrainConfig,
    proposal,
    grid: GridFunction,
    rng: np.random.Generator,
    init_point: Optional[np.ndarray] = None,
) -> TrainResult:
    """Optimize the bias potential and record the per-iteration trace.

    `grid` is the working grid used for the KDE, the grid-form gradient and
    the probability reconstruction; `proposal` is a pre-tuned RandomWalk or
    Pcn proposal.
    """
    bias = bias_init
    is_grid = isinstance(bias, GridBias)
    p_ref_grid = grid.with_values(np.asarray(p_ref.pdf(grid.xs), dtype=float))
    dim = len(bias.grid.values) if is_grid else len(bias.weights)
    sgdm = SgdmState(np.zeros(dim), 0, cfg.momentum_weight)
    trace: list[TrainRecord] = []
    recent: list[BiasPotential] = []
    budget = 0
    stop_reason = "max_steps"

    if cfg.max_steps == 0:
        return TrainResult(bias=bias, trace=trace, budget=0, stop_reason="max_steps", recent_biases=[bias])

    start = problem.init_point if init_point is None else np.asarray(init_point, dtype=float)
    if start is None:
        raise TrainingError("no chain start point available")
    chain_state = start  # raw theta; first mh_run evaluates it (+1 budget)

    for it in range(cfg.max_steps):
        target = BiasedTarget(problem, bias)
        res = mh_run(target, proposal, chain_state, cfg.chain, rng)
        chain_state = res.state
        budget += res.budget
        s_samples = res.rs

        p_v_kde = None
        if is_grid or cfg.track_kl:
            try:
                p_v_kde = grid_normalize(kde_gaussian(s_samples, grid, bandwidth=cfg.kde_bandwidth))
            except EstimationError:
                p_v_kde = None

        lr = cfg.schedule.value(sgdm.step_index)
        if is_grid:
            if p_v_kde is None:
                raise TrainingError("degenerate chain samples: KDE unavailable for grid update")
            grad_vals = kl_gradient_grid(p_ref_grid, p_v_kde).values
            if cfg.grad_clip is not None:
                grad_vals = np.clip(grad_vals, -cfg.grad_clip, cfg.grad_clip)
            delta, sgdm = sgdm_step(sgdm, grad_vals, lr)
            bias = GridBias(bias.grid.with_values(bias.grid.values + delta))
            max_mag = float(np.abs(bias.grid.values).max())
        else:
            ref_samples = p_ref.sample(rng, cfg.n_grad_samples)
            grad = kl_gradient_rbf(bias, ref_samples, s_samples)
            if cfg.grad_clip is not None:
                grad = np.clip(grad, -cfg.grad_clip, cfg.grad_clip)
            delta, sgdm = sgdm_step(sgdm, grad, lr)
            bias = bias.with_weights(bias.weights + delta)
            max_mag = float(np.abs(bias.weights).max())

        recent.append(bias)
        if len(recent) > cfg.keep_last_biases:
            recent.pop(0)

        if not math.isfinite(max_mag) or max_mag > _ABORT_BIAS_MAGNITUDE:
            result = TrainResult(bias=bias, trace=trace, budget=budget, stop_reason="diverged", recent_biases=recent)
            err = TrainingError("bias potential diverged during training")
            err.result = result
            raise err

        est = free_energy_from_bias(bias, p_ref, grid)
        p_hat = tail_probability(est, query.threshold)
        kl = estimate_kl(p_ref, p_v_kde) if (cfg.track_kl and p_v_kde is not None) else None
        ksd_val = ksd_statistic(s_samples, p_ref, cfg.stopping.kernel if cfg.stopping else SteinKernelConfig())
        trace.append(
            TrainRecord(
                iteration=it,
                kl=kl,
                ksd=ksd_val,
                p_hat=p_hat,
                budget=budget,
                acceptance=res.acceptance_rate,
            )
        )

        if cfg.stopping is not None and (it + 1) >= cfg.stopping.min_steps:
            outcome = wild_bootstrap_test(s_samples, p_ref, cfg.stopping.kernel, cfg.stopping.test, rng)
            if not outcome.reject:
                stop_reason = "ksd"
                break

    return TrainResult(bias=bias, trace=trace, budget=budget, stop_reason=stop_reason, recent_biases=recent)
