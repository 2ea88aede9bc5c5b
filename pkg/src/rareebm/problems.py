"""Rare-event target problems and their analytic reference answers.

Three benchmark problems are provided: a conjugate-Gaussian contamination
field (inversion setting, generalized chi-square oracle), the two-dimensional
four-branch function (traditional setting) and a load/capacity reliability
problem with lognormal component capacities (inversion setting, 1-D
quadrature oracle).

All problem callables are vectorized: theta has shape (n, d) and the result
shape (n,).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy.special import ndtr, ndtri

from rareebm.errors import ConfigurationError
from rareebm.gchi2 import gaussian_quadratic_tail

_EULER_GAMMA = 0.5772156649015329


@dataclass(frozen=True)
class RareEventQuery:
    """Query P(qoi(theta) >= threshold); '<=' events are posed by negating qoi."""

    threshold: float

    def __post_init__(self):
        if not math.isfinite(self.threshold):
            raise ConfigurationError("query threshold must be finite")


@dataclass(frozen=True)
class TargetProblem:
    """A rare-event target: prior (optionally with likelihood) plus the scalar map R."""

    dim: int
    log_prior: Callable[[np.ndarray], np.ndarray]
    qoi: Callable[[np.ndarray], np.ndarray]
    log_likelihood: Optional[Callable[[np.ndarray], np.ndarray]] = None
    from_standard_normal: Optional[Callable[[np.ndarray], np.ndarray]] = None  # u -> theta
    to_standard_normal: Optional[Callable[[np.ndarray], np.ndarray]] = None  # theta -> u
    sample_prior: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None
    init_point: Optional[np.ndarray] = None

    def log_target(self, theta: np.ndarray) -> np.ndarray:
        """Unnormalized log density of the prior or, when data exist, the posterior."""
        val = self.log_prior(theta)
        if self.log_likelihood is not None:
            val = val + self.log_likelihood(theta)
        return val


# ---------------------------------------------------------------------------
# Contamination field (conjugate Gaussian inversion)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContaminationSpec:
    n_cells: int = 9
    prior_mean: float = 1.0
    prior_sd: float = 0.3
    measured_cells: tuple[int, ...] = (0, 1, 4)
    noise_sd: float = 0.05
    truth: Optional[tuple[float, ...]] = None
    data: Optional[tuple[float, ...]] = None
    rng_seed: int = 2024

    def __post_init__(self):
        cells = tuple(self.measured_cells)
        if len(set(cells)) != len(cells) or any(not 0 <= c < self.n_cells for c in cells):
            raise ConfigurationError("measured cells must be distinct indices in [0, n_cells)")
        if self.prior_sd <= 0 or self.noise_sd < 0:
            raise ConfigurationError("prior_sd must be positive and noise_sd nonnegative")


@dataclass(frozen=True)
class ContaminationProblem:
    problem: TargetProblem
    spec: ContaminationSpec
    truth: np.ndarray = field(repr=False)
    data: np.ndarray = field(repr=False)
    posterior_mean: np.ndarray = field(repr=False)
    posterior_cov: np.ndarray = field(repr=False)

    def oracle_tail(self, threshold: float) -> float:
        return contamination_truth(self.posterior_mean, self.posterior_cov, threshold)

    def export_csv(self, path) -> None:
        measured = set(self.spec.measured_cells)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell", "truth", "measurement"])
            for i, t in enumerate(self.truth):
                if i in measured:
                    y = self.data[list(self.spec.measured_cells).index(i)]
                    w.writerow([i, format(t, ".17g"), format(y, ".17g")])
                else:
                    w.writerow([i, format(t, ".17g"), ""])


def conjugate_gaussian_posterior(prior_mean, prior_cov, obs_matrix, noise_cov, data):
    """Posterior mean/covariance for y = H theta + eps with Gaussian prior and noise."""
    prior_mean = np.asarray(prior_mean, dtype=float)
    prior_cov = np.asarray(prior_cov, dtype=float)
    obs = np.asarray(obs_matrix, dtype=float)
    noise_cov = np.asarray(noise_cov, dtype=float)
    data = np.asarray(data, dtype=float)
    if obs.shape[0] == 0:
        return prior_mean.copy(), prior_cov.copy()
    s = obs @ prior_cov @ obs.T + noise_cov
    gain = prior_cov @ obs.T @ np.linalg.inv(s)
    mean = prior_mean + gain @ (data - obs @ prior_mean)
    cov = prior_cov - gain @ obs @ prior_cov
    return mean, 0.5 * (cov + cov.T)


def contamination_problem(spec: ContaminationSpec = ContaminationSpec()) -> ContaminationProblem:
    m = spec.n_cells
    rng = np.random.default_rng(spec.rng_seed)
    if spec.truth is not None:
        truth = np.asarray(spec.truth, dtype=float)
        if truth.shape != (m,):
            raise ConfigurationError("truth must have one value per cell")
    else:
        truth = rng.normal(spec.prior_mean, spec.prior_sd, size=m)
    measured = np.asarray(spec.measured_cells, dtype=int)
    if spec.data is not None:
        data = np.asarray(spec.data, dtype=float)
        if data.shape != (len(measured),):
            raise ConfigurationError("data must have one value per measured cell")
    else:
        data = truth[measured] + rng.normal(0.0, spec.noise_sd, size=len(measured))

    prior_mean = np.full(m, spec.prior_mean)
    prior_cov = spec.prior_sd**2 * np.eye(m)
    obs = np.zeros((len(measured), m))
    obs[np.arange(len(measured)), measured] = 1.0
    noise_cov = spec.noise_sd**2 * np.eye(len(measured))
    post_mean, post_cov = conjugate_gaussian_posterior(prior_mean, prior_cov, obs, noise_cov, data)

    inv_var = 1.0 / spec.prior_sd**2
    noise_var = spec.noise_sd**2

    def log_prior(theta):
        theta = np.atleast_2d(theta)
        diff = theta - spec.prior_mean
        return -0.5 * inv_var * np.einsum("ij,ij->i", diff, diff)

    def log_likelihood(theta):
        theta = np.atleast_2d(theta)
        if len(measured) == 0:
            return np.zeros(theta.shape[0])
        resid = theta[:, measured] - data
        return -0.5 * np.einsum("ij,ij->i", resid, resid) / noise_var

    def qoi(theta):
        theta = np.atleast_2d(theta)
        return np.einsum("ij,ij->i", theta, theta)

    problem = TargetProblem(
        dim=m,
        log_prior=log_prior,
        qoi=qoi,
        log_likelihood=log_likelihood,
        sample_prior=lambda g, n: g.normal(spec.prior_mean, spec.prior_sd, size=(n, m)),
        init_point=post_mean.copy(),
    )
    return ContaminationProblem(
        problem=problem,
        spec=spec,
        truth=truth,
        data=data,
        posterior_mean=post_mean,
        posterior_cov=post_cov,
    )


def contamination_truth(posterior_mean, posterior_cov, threshold: float) -> float:
    """Oracle P(theta^T theta >= threshold) for the Gaussian posterior."""
    return gaussian_quadratic_tail(posterior_mean, posterior_cov, threshold)


# ---------------------------------------------------------------------------
# Four-branch function (traditional setting)
# ---------------------------------------------------------------------------


def four_branch(theta) -> np.ndarray:
    """Minimum of the four branch limit-state expressions."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    t1, t2 = theta[:, 0], theta[:, 1]
    sq = 0.1 * (t1 - t2) ** 2
    ssum = (t1 + t2) / math.sqrt(2.0)
    branches = np.stack(
        [
            3.0 + sq - ssum,
            3.0 + sq + ssum,
            (t1 - t2) + 6.0 / math.sqrt(2.0),
            (t2 - t1) + 6.0 / math.sqrt(2.0),
        ]
    )
    return branches.min(axis=0)


def four_branch_problem() -> TargetProblem:
    def log_prior(theta):
        theta = np.atleast_2d(theta)
        return -0.5 * np.einsum("ij,ij->i", theta, theta)

    return TargetProblem(
        dim=2,
        log_prior=log_prior,
        qoi=lambda th: -four_branch(th),
        sample_prior=lambda g, n: g.standard_normal((n, 2)),
        from_standard_normal=lambda u: np.asarray(u, dtype=float),
        to_standard_normal=lambda th: np.asarray(th, dtype=float),
        init_point=np.zeros(2),
    )


# ---------------------------------------------------------------------------
# Load / capacity reliability problem
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LoadCapacitySpec:
    n_components: int = 10
    load_mean: float = 2.0
    load_sd: float = 1.0
    capacity_mean: float = 12.0
    capacity_sd: float = 2.0
    sigma_y: float = 0.05

    def __post_init__(self):
        if self.n_components < 1:
            raise ConfigurationError("n_components must be >= 1")
        if min(self.load_sd, self.capacity_mean, self.capacity_sd, self.sigma_y) <= 0:
            raise ConfigurationError("scale parameters must be positive")

    @property
    def measurement(self) -> float:
        """Per-component capacity measurement y_i = 8**(1/n_components)."""
        return 8.0 ** (1.0 / self.n_components)

    def lognormal_params(self) -> tuple[float, float]:
        """Total-capacity log-space parameters by moment matching (mean, sd)."""
        sigma2 = math.log(1.0 + (self.capacity_sd / self.capacity_mean) ** 2)
        mu = math.log(self.capacity_mean) - 0.5 * sigma2
        return mu, sigma2

    def gumbel_params(self) -> tuple[float, float]:
        scale = self.load_sd * math.sqrt(6.0) / math.pi
        loc = self.load_mean - _EULER_GAMMA * scale
        return loc, scale


@dataclass(frozen=True)
class LoadCapacityProblem:
    problem: TargetProblem
    spec: LoadCapacitySpec
    # posterior of each log component capacity (Gaussian-Gaussian conjugacy)
    log_post_mean: float
    log_post_var: float

    @property
    def capacity_log_posterior(self) -> tuple[float, float]:
        """Mean and variance of the posterior of log total capacity."""
        n = self.spec.n_components
        return n * self.log_post_mean, n * self.log_post_var

    def oracle_failure_probability(self) -> float:
        """P(load >= capacity | data) by quadrature over the posterior capacity."""
        loc, scale = self.spec.gumbel_params()
        m_s, v_s = self.capacity_log_posterior
        sd_s = math.sqrt(v_s)

        def integrand(s):
            z = (math.exp(s) - loc) / scale
            sf = -math.expm1(-math.exp(-z))
            dens = math.exp(-0.5 * ((s - m_s) / sd_s) ** 2) / (sd_s * math.sqrt(2 * math.pi))
            return dens * sf

        val, _ = integrate.quad(integrand, m_s - 10 * sd_s, m_s + 10 * sd_s, epsabs=1e-16, epsrel=1e-10)
        return float(val)


def load_capacity_problem(spec: LoadCapacitySpec = LoadCapacitySpec()) -> LoadCapacityProblem:
    n = spec.n_components
    mu_c, sigma2_c = spec.lognormal_params()
    mu_i = mu_c / n
    var_i = sigma2_c / n
    sd_i = math.sqrt(var_i)
    loc, scale = spec.gumbel_params()
    log_y = math.log(spec.measurement)
    sy2 = spec.sigma_y**2

    def log_prior(theta):
        theta = np.atleast_2d(theta)
        load, comps = theta[:, 0], theta[:, 1:]
        z = (load - loc) / scale
        lp = -math.log(scale) - z - np.exp(-z)
        with np.errstate(divide="ignore", invalid="ignore"):
            logc = np.log(comps)
            comp_lp = -logc - 0.5 * ((logc - mu_i) / sd_i) ** 2 - math.log(sd_i * math.sqrt(2 * math.pi))
        comp_lp = np.where(comps > 0, comp_lp, -np.inf)
        return lp + comp_lp.sum(axis=1)

    def log_likelihood(theta):
        theta = np.atleast_2d(theta)
        comps = theta[:, 1:]
        with np.errstate(divide="ignore", invalid="ignore"):
            resid = log_y - np.log(comps)
            ll = -0.5 * (resid * resid).sum(axis=1) / sy2
        return np.where((comps > 0).all(axis=1), ll, -np.inf)

    def qoi(theta):
        theta = np.atleast_2d(theta)
        return theta[:, 0] - np.exp(np.log(theta[:, 1:]).sum(axis=1))

    def from_u(u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        theta = np.empty_like(u)
        theta[:, 0] = loc - scale * np.log(-np.log(np.clip(ndtr(u[:, 0]), 1e-300, 1.0 - 1e-16)))
        theta[:, 1:] = np.exp(mu_i + sd_i * u[:, 1:])
        return theta

    def to_u(theta):
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        u = np.empty_like(theta)
        z = (theta[:, 0] - loc) / scale
        u[:, 0] = ndtri(np.clip(np.exp(-np.exp(-z)), 1e-300, 1.0 - 1e-16))
        u[:, 1:] = (np.log(theta[:, 1:]) - mu_i) / sd_i
        return u

    def sample_prior(g: np.random.Generator, m: int):
        theta = np.empty((m, n + 1))
        theta[:, 0] = loc - scale * np.log(-np.log(g.uniform(size=m)))
        theta[:, 1:] = np.exp(g.normal(mu_i, sd_i, size=(m, n)))
        return theta

    post_var = 1.0 / (1.0 / var_i + 1.0 / sy2)
    post_mean = post_var * (mu_i / var_i + log_y / sy2)

    median_theta = np.empty(n + 1)
    median_theta[0] = loc - scale * math.log(math.log(2.0))
    median_theta[1:] = math.exp(post_mean)

    problem = TargetProblem(
        dim=n + 1,
        log_prior=log_prior,
        qoi=qoi,
        log_likelihood=log_likelihood,
        from_standard_normal=from_u,
        to_standard_normal=to_u,
        sample_prior=sample_prior,
        init_point=median_theta,
    )
    return LoadCapacityProblem(
        problem=problem,
        spec=spec,
        log_post_mean=post_mean,
        log_post_var=post_var,
    )
