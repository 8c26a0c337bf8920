"""Reproducible random streams, multinomial resampling, and the moment-matched
multivariate normal proposal.

Randomness is addressed through :class:`RngStream`, a value identifying one
independent stream of a counter-based generator (Philox) keyed by
``(master_seed, stream_id)``.  The same pair produces the same sequence on
every platform; distinct pairs give statistically independent streams.
Streams derive children deterministically, so per-run / per-iteration /
per-particle randomness does not depend on how work is scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "GaussianProposal",
    "ParticleSet",
    "RngStream",
    "fit_gaussian_proposal",
    "log_mvn_density",
    "multinomial_resample",
    "sample_proposal",
]

_CHILD_BASE = 2**64

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class RngStream:
    """Handle to one independent, platform-stable random stream.

    ``substream(k)`` derives child streams along a tree whose flattened ids
    never collide (the id encodes the child path in base-2**64 digits), so a
    root stream per experiment is enough to give every run, iteration, and
    particle its own independent generator.
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        if self.stream_id < 0:
            raise ValueError("stream_id must be non-negative")

    def generator(self) -> np.random.Generator:
        """Fresh generator for this stream; same stream, same sequence."""
        ss = np.random.SeedSequence(entropy=(self.master_seed, self.stream_id))
        return np.random.Generator(np.random.Philox(ss))

    def substream(self, index: int) -> "RngStream":
        if not 0 <= index < _CHILD_BASE - 1:
            raise ValueError(f"substream index out of range: {index}")
        return RngStream(self.master_seed, self.stream_id * _CHILD_BASE + index + 1)


@dataclass(frozen=True)
class ParticleSet:
    """Particle positions with normalized weights, or unweighted (weights=None)."""

    positions: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if not np.isfinite(pos).all():
            raise ValueError("particle positions must be finite")
        if pos.shape[0] < 2:
            raise ValueError("a particle set needs at least 2 particles")
        object.__setattr__(self, "positions", pos)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (pos.shape[0],):
                raise ValueError("weights length must match particle count")
            if (w < 0).any() or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("weights must be normalized and non-negative")
            object.__setattr__(self, "weights", w)

    @property
    def m(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def is_weighted(self) -> bool:
        return self.weights is not None


@dataclass(frozen=True)
class GaussianProposal:
    """Multivariate normal proposal with a cached Cholesky factor.

    The covariance must be symmetric (within 1e-10).  If it is not positive
    definite - typical after resampling collapses onto few unique particles -
    a diagonal jitter of ``1e-9 * max(1, trace/K)`` is added, retrying once
    at ``1e-6`` scaling, so a degenerate iteration cannot abort a run.
    """

    mean: np.ndarray
    covariance: np.ndarray
    cholesky_factor: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.covariance, dtype=float)
        k = mean.size
        if cov.shape != (k, k):
            raise ValueError("covariance shape must match the mean dimension")
        if np.abs(cov - cov.T).max() > 1e-10:
            raise ValueError("covariance must be symmetric within 1e-10")
        cov = 0.5 * (cov + cov.T)
        if self.cholesky_factor is None:
            cov, chol = _jittered_cholesky(cov)
        else:
            chol = np.asarray(self.cholesky_factor, dtype=float)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "cholesky_factor", chol)

    @property
    def dim(self) -> int:
        return self.mean.size


def _jittered_cholesky(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k = cov.shape[0]
    scale = max(1.0, float(np.trace(cov)) / k)
    for eps in (0.0, 1e-9 * scale, 1e-6 * scale):
        candidate = cov + eps * np.eye(k) if eps else cov
        try:
            return candidate, np.linalg.cholesky(candidate)
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("covariance not positive definite even with jitter")


def multinomial_resample(particles: ParticleSet, rng: RngStream) -> ParticleSet:
    """Sample M positions with replacement, with probability equal to weight.

    The output is unweighted and its positions are a subset of the input's.
    """
    if not particles.is_weighted:
        raise ValueError("multinomial_resample requires a weighted particle set")
    gen = rng.generator()
    idx = gen.choice(particles.m, size=particles.m, p=particles.weights)
    return ParticleSet(particles.positions[idx], None)


def fit_gaussian_proposal(particles: ParticleSet) -> GaussianProposal:
    """Moment-matched proposal from an unweighted (post-resampling) set.

    Both moments use the 1/M convention: the covariance is the population
    covariance of the particle cloud, not the 1/(M-1) sample estimate.
    """
    if particles.is_weighted:
        raise ValueError("fit_gaussian_proposal expects an unweighted particle set")
    pos = particles.positions
    mean = pos.mean(axis=0)
    centered = pos - mean
    cov = centered.T @ centered / pos.shape[0]
    return GaussianProposal(mean, cov)


def sample_proposal(proposal: GaussianProposal, m: int, rng: RngStream) -> ParticleSet:
    """Draw ``m`` i.i.d. samples ``mean + L z`` with ``z`` standard normal."""
    if m < 2:
        raise ValueError("m must be at least 2")
    gen = rng.generator()
    z = gen.standard_normal((m, proposal.dim))
    return ParticleSet(proposal.mean + z @ proposal.cholesky_factor.T, None)


def log_mvn_density(proposal: GaussianProposal, x) -> float | np.ndarray:
    """Exact MVN log-density at ``x`` (a K-vector, or an (n, K) batch)."""
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != proposal.dim:
        raise ValueError(
            f"dimension mismatch: proposal is {proposal.dim}-dimensional, "
            f"got points of dimension {pts.shape[1]}"
        )
    chol = proposal.cholesky_factor
    z = solve_triangular(chol, (pts - proposal.mean).T, lower=True)
    log_det = np.sum(np.log(np.diag(chol)))
    out = -0.5 * (proposal.dim * LOG_2PI + np.sum(z * z, axis=0)) - log_det
    return float(out[0]) if single else out
