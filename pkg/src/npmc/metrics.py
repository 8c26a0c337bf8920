"""Estimation-quality metrics over unweighted sample sets and run ensembles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from npmc.pmc import IterationRecord
from npmc.sampling import ParticleSet

__all__ = ["RunSummary", "mse", "nmse", "summarize_runs", "weighted_mse"]


def _positions(samples) -> np.ndarray:
    if isinstance(samples, ParticleSet):
        return samples.positions
    return np.atleast_2d(np.asarray(samples, dtype=float))


def mse(samples, theta_true, k: Optional[int] = None):
    """Mean squared error of unweighted samples around the true parameter.

    Returns the per-coordinate vector, or a scalar when ``k`` is given.
    """
    pos = _positions(samples)
    true = np.asarray(theta_true, dtype=float)
    per_k = np.mean((pos - true) ** 2, axis=0)
    return float(per_k[k]) if k is not None else per_k


def weighted_mse(particles: ParticleSet, theta_true) -> np.ndarray:
    """Self-normalized-weights variant of :func:`mse` for weighted sets."""
    if not particles.is_weighted:
        raise ValueError("weighted_mse needs a weighted particle set")
    true = np.asarray(theta_true, dtype=float)
    return particles.weights @ (particles.positions - true) ** 2


def nmse(samples, theta_true) -> tuple[np.ndarray, float]:
    """Per-coordinate MSE divided by the squared true value, plus its mean.

    Normalizing lets parameters that differ by orders of magnitude share an
    error scale; a true value of zero therefore has no meaningful NMSE.
    """
    true = np.asarray(theta_true, dtype=float)
    if (true == 0).any():
        raise ValueError("nmse undefined when a true parameter is zero")
    per_k = mse(samples, true) / true**2
    return per_k, float(per_k.mean())


@dataclass(frozen=True)
class RunSummary:
    """Cross-run per-iteration means/stds and final-iteration scatter pairs.

    Standard deviations are population (1/P) across the run ensemble.
    ``final_ness`` pairs with ``final_log10_nmse`` per run for the
    convergence-diagnosis scatter.
    """

    iterations: np.ndarray
    ness_standard_mean: np.ndarray
    ness_standard_std: np.ndarray
    ness_transformed_mean: np.ndarray
    ness_transformed_std: np.ndarray
    mse_mean: np.ndarray
    mse_std: np.ndarray
    nmse_mean: np.ndarray
    nmse_std: np.ndarray
    mean_nmse_mean: np.ndarray
    mean_nmse_std: np.ndarray
    final_ness: np.ndarray
    final_log10_nmse: np.ndarray


def summarize_runs(
    traces: Sequence[Sequence[IterationRecord]],
    sample_history: Sequence[Sequence[np.ndarray]],
    theta_true,
) -> RunSummary:
    """Aggregate per-iteration diagnostics and errors across a run ensemble.

    ``traces[p]`` is run ``p``'s iteration records; ``sample_history[p][l]``
    its unweighted (M, K) sample set after iteration ``l``'s resampling.
    All runs must share the same iteration count.
    """
    p_runs = len(traces)
    if p_runs == 0 or len(sample_history) != p_runs:
        raise ValueError("need one trace and one sample history per run")
    n_iter = len(traces[0])
    if any(len(t) != n_iter for t in traces) or any(
        len(h) != n_iter for h in sample_history
    ):
        raise ValueError("runs disagree on the iteration count")
    true = np.asarray(theta_true, dtype=float)
    k = true.size

    ness_std = np.array([[r.ness_standard for r in t] for t in traces])
    ness_bar = np.array([[r.ness_transformed for r in t] for t in traces])
    mses = np.empty((p_runs, n_iter, k))
    for p, history in enumerate(sample_history):
        for ell, pos in enumerate(history):
            mses[p, ell] = mse(pos, true)
    # NMSE columns stay inf/nan when a true component is zero; callers that
    # care (the kinetic benchmark) always have nonzero truth
    with np.errstate(divide="ignore", invalid="ignore"):
        nmses = mses / true**2
        mean_nmse = nmses.mean(axis=2)
        return RunSummary(
            iterations=np.arange(n_iter),
            ness_standard_mean=ness_std.mean(axis=0),
            ness_standard_std=ness_std.std(axis=0),
            ness_transformed_mean=ness_bar.mean(axis=0),
            ness_transformed_std=ness_bar.std(axis=0),
            mse_mean=mses.mean(axis=0),
            mse_std=mses.std(axis=0),
            nmse_mean=nmses.mean(axis=0),
            nmse_std=nmses.std(axis=0),
            mean_nmse_mean=mean_nmse.mean(axis=0),
            mean_nmse_std=mean_nmse.std(axis=0),
            final_ness=ness_bar[:, -1].copy(),
            final_log10_nmse=np.log10(mean_nmse[:, -1]),
        )
