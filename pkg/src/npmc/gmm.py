"""Two-mean Gaussian mixture benchmark.

Scalar observations come from ``rho * N(theta_1, sigma^2) +
(1 - rho) * N(theta_2, sigma^2)`` with known mixture weight and variance;
the unknowns are the two component means, with independent
``N(nu, sigma^2 / lambda)`` priors.  Despite having only two parameters,
the likelihood is a product of up to a thousand factors, which makes the
standard importance weights collapse onto a handful of samples and is what
makes this such a sharp test bed for weight-transformation schemes.

:func:`grid_posterior_oracle` integrates the exact unnormalized posterior on
a rectangular grid (trapezoidal quadrature) to give reference posterior
means and per-component mean-square-error floors.  :func:`degeneracy_study`
measures how the maximum normalized weight and the effective sample size of
plain prior-proposal importance sampling scale with the number of
observations and samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from npmc.pmc import TargetModel
from npmc.sampling import ParticleSet, RngStream
from npmc.weights import normalize

__all__ = [
    "GmmSpec",
    "GridPosterior",
    "GridTooSmallError",
    "degeneracy_study",
    "gmm_generate",
    "gmm_log_prior",
    "gmm_loglik",
    "gmm_target_model",
    "grid_posterior_oracle",
]

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GmmSpec:
    """Mixture and prior hyperparameters; defaults match the benchmark setup."""

    rho: float = 0.2
    sigma2: float = 1.0
    nu: float = 1.0
    lam: float = 0.1
    theta_true: tuple[float, float] = (0.0, 2.0)

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if self.lam <= 0:
            raise ValueError("lam must be positive")

    @property
    def prior_var(self) -> float:
        return self.sigma2 / self.lam


class GridTooSmallError(ValueError):
    """Posterior mass on the grid boundary exceeds the tolerated fraction."""


def gmm_generate(spec: GmmSpec, n: int, rng: RngStream) -> np.ndarray:
    """Draw ``n`` observations: component 1 with probability ``rho``, else 2."""
    if n < 1:
        raise ValueError("n must be at least 1")
    gen = rng.generator()
    means = np.where(
        gen.random(n) < spec.rho, spec.theta_true[0], spec.theta_true[1]
    )
    return means + math.sqrt(spec.sigma2) * gen.standard_normal(n)


def _loglik_matrix(theta1, theta2, data: np.ndarray, spec: GmmSpec) -> np.ndarray:
    """Log-likelihood for broadcastable arrays of component means.

    ``theta1`` and ``theta2`` must broadcast against each other; the result
    has their broadcast shape, with the per-observation mixture terms summed
    out via a stable pairwise log-add.
    """
    t1 = np.asarray(theta1, dtype=float)[..., None]
    t2 = np.asarray(theta2, dtype=float)[..., None]
    norm = -0.5 * LOG_2PI - 0.5 * math.log(spec.sigma2)
    inv2 = 0.5 / spec.sigma2
    a = math.log(spec.rho) + norm - inv2 * (data - t1) ** 2
    b = math.log1p(-spec.rho) + norm - inv2 * (data - t2) ** 2
    return np.logaddexp(a, b).sum(axis=-1)


def gmm_loglik(theta, data: np.ndarray, spec: GmmSpec) -> float:
    """Exact log-likelihood of the two component means given the data."""
    t = np.asarray(theta, dtype=float)
    return float(_loglik_matrix(t[0], t[1], np.asarray(data, float), spec))


def gmm_log_prior(theta, spec: GmmSpec) -> float:
    """Independent normal priors on both means: ``N(nu, sigma^2 / lambda)``."""
    t = np.asarray(theta, dtype=float)
    v = spec.prior_var
    d = t - spec.nu
    return float(-(LOG_2PI + math.log(v)) - 0.5 * (d @ d) / v)


def gmm_target_model(data: np.ndarray, spec: GmmSpec) -> TargetModel:
    """Wire the mixture posterior into the engine interface."""
    y = np.asarray(data, dtype=float)
    prior_std = math.sqrt(spec.prior_var)

    def sample_prior(m: int, rng: RngStream) -> ParticleSet:
        gen = rng.generator()
        return ParticleSet(spec.nu + prior_std * gen.standard_normal((m, 2)), None)

    def log_prior(theta: np.ndarray) -> float:
        return gmm_log_prior(theta, spec)

    def log_likelihood(theta: np.ndarray, rng: RngStream) -> float:
        return gmm_loglik(theta, y, spec)

    def log_likelihood_batch(positions: np.ndarray, rng: RngStream) -> np.ndarray:
        return _loglik_matrix(positions[:, 0], positions[:, 1], y, spec)

    return TargetModel(
        dim=2,
        sample_prior=sample_prior,
        log_prior=log_prior,
        log_likelihood=log_likelihood,
        log_likelihood_batch=log_likelihood_batch,
    )


@dataclass(frozen=True)
class GridPosterior:
    """Quadrature summary: posterior mean, per-component MSE floor, evidence."""

    mean: np.ndarray
    min_mse: np.ndarray
    log_evidence: float
    bounds: tuple[tuple[float, float], tuple[float, float]]
    resolution: int


def default_grid_bounds(spec: GmmSpec, width: float = 6.0):
    half = width * math.sqrt(spec.prior_var)
    lo, hi = spec.nu - half, spec.nu + half
    return ((lo, hi), (lo, hi))


def grid_posterior_oracle(
    data: np.ndarray,
    spec: GmmSpec,
    bounds=None,
    resolution: int = 500,
    boundary_tol: float = 1e-6,
    chunk: int = 16,
) -> GridPosterior:
    """Trapezoidal quadrature of the unnormalized posterior on a 2-D grid.

    Default bounds cover six prior standard deviations around the prior mean
    on each axis.  For sharp posteriors (many observations) call this twice:
    once with the defaults to locate the mass, then again zoomed in around
    the reported mean; the boundary-mass check guards both calls against
    truncating posterior mass.
    """
    y = np.asarray(data, dtype=float)
    if bounds is None:
        bounds = default_grid_bounds(spec)
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    (lo1, hi1), (lo2, hi2) = bounds
    g1 = np.linspace(lo1, hi1, resolution)
    g2 = np.linspace(lo2, hi2, resolution)

    norm = -0.5 * LOG_2PI - 0.5 * math.log(spec.sigma2)
    inv2 = 0.5 / spec.sigma2
    log_post = np.empty((resolution, resolution))
    if y.size == 0:
        log_post[:] = 0.0
    else:
        # mixture terms are separable per component: build the two
        # (grid, n) factor tables once, then combine row-chunks to keep the
        # (chunk, grid, n) intermediate in cache-friendly memory
        a = math.log(spec.rho) + norm - inv2 * (y[None, :] - g1[:, None]) ** 2
        b = math.log1p(-spec.rho) + norm - inv2 * (y[None, :] - g2[:, None]) ** 2
        for start in range(0, resolution, chunk):
            stop = min(start + chunk, resolution)
            log_post[start:stop] = np.logaddexp(
                a[start:stop, None, :], b[None, :, :]
            ).sum(axis=-1)
    v = spec.prior_var
    lp1 = -0.5 * (LOG_2PI + math.log(v)) - 0.5 * (g1 - spec.nu) ** 2 / v
    lp2 = -0.5 * (LOG_2PI + math.log(v)) - 0.5 * (g2 - spec.nu) ** 2 / v
    log_post += lp1[:, None] + lp2[None, :]

    h1 = (hi1 - lo1) / (resolution - 1)
    h2 = (hi2 - lo2) / (resolution - 1)
    w1 = np.full(resolution, h1)
    w1[0] = w1[-1] = h1 / 2
    w2 = np.full(resolution, h2)
    w2[0] = w2[-1] = h2 / 2

    c = log_post.max()
    density = np.exp(log_post - c) * (w1[:, None] * w2[None, :])
    total = density.sum()

    edge = density[0, :].sum() + density[-1, :].sum()
    edge += density[1:-1, 0].sum() + density[1:-1, -1].sum()
    if edge / total > boundary_tol:
        raise GridTooSmallError(
            f"grid too small: boundary mass fraction {edge / total:.3g} "
            f"exceeds {boundary_tol:g}"
        )

    mean1 = float((density.sum(axis=1) * g1).sum() / total)
    mean2 = float((density.sum(axis=0) * g2).sum() / total)
    t1, t2 = spec.theta_true
    mse1 = float((density.sum(axis=1) * (g1 - t1) ** 2).sum() / total)
    mse2 = float((density.sum(axis=0) * (g2 - t2) ** 2).sum() / total)
    return GridPosterior(
        mean=np.array([mean1, mean2]),
        min_mse=np.array([mse1, mse2]),
        log_evidence=float(c + math.log(total)),
        bounds=((lo1, hi1), (lo2, hi2)),
        resolution=resolution,
    )


def zoomed_posterior_oracle(
    data: np.ndarray,
    spec: GmmSpec,
    resolution: int = 500,
    zoom_stds: float = 12.0,
    min_half_width: float = 0.75,
) -> GridPosterior:
    """Two-pass oracle: locate mass on the prior-wide grid, then refine.

    The second pass re-grids around the first-pass posterior mean with a
    half-width of ``zoom_stds`` posterior standard deviations (at least
    ``min_half_width``), which resolves the sharp many-observation posterior
    that a prior-wide grid undersamples.
    """
    coarse = grid_posterior_oracle(data, spec, resolution=resolution)
    post_var = np.maximum(coarse.min_mse - (coarse.mean - spec.theta_true) ** 2, 0.0)
    half = np.maximum(zoom_stds * np.sqrt(post_var), min_half_width)
    bounds = (
        (coarse.mean[0] - half[0], coarse.mean[0] + half[0]),
        (coarse.mean[1] - half[1], coarse.mean[1] + half[1]),
    )
    return grid_posterior_oracle(data, spec, bounds=bounds, resolution=resolution)


def degeneracy_study(
    spec: GmmSpec,
    n_grid: Sequence[int],
    m_grid: Sequence[int],
    runs: int,
    rng: Optional[RngStream] = None,
) -> list[dict]:
    """Average max-weight and ESS of prior-proposal importance sampling.

    For every pair (number of observations, number of samples), draws an
    independent dataset and an independent prior sample set per run, weights
    the samples by the likelihood alone (the prior proposal cancels), and
    averages the maximum normalized weight and the effective sample size.
    """
    root = rng if rng is not None else RngStream(0)
    prior_std = math.sqrt(spec.prior_var)
    rows = []
    for ni, n in enumerate(n_grid):
        for mi, m in enumerate(m_grid):
            cell = root.substream(ni).substream(mi)
            max_w = np.empty(runs)
            ess_vals = np.empty(runs)
            for p in range(runs):
                gen = cell.substream(p).generator()
                if n > 0:
                    means = np.where(
                        gen.random(n) < spec.rho,
                        spec.theta_true[0],
                        spec.theta_true[1],
                    )
                    y = means + math.sqrt(spec.sigma2) * gen.standard_normal(n)
                else:
                    y = np.empty(0)
                thetas = spec.nu + prior_std * gen.standard_normal((m, 2))
                if n > 0:
                    lw = _loglik_matrix(thetas[:, 0], thetas[:, 1], y, spec)
                else:
                    lw = np.zeros(m)
                if m == 1:
                    max_w[p] = 1.0
                    ess_vals[p] = 1.0
                else:
                    w, _ = normalize(lw)
                    max_w[p] = w.max()
                    ess_vals[p] = 1.0 / float(np.sum(w * w))
            rows.append(
                {
                    "n_observations": int(n),
                    "m_samples": int(m),
                    "mean_max_weight": float(max_w.mean()),
                    "mean_ess": float(ess_vals.mean()),
                }
            )
    return rows
