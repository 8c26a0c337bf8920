"""Log-domain importance-weight arithmetic.

Every function here works on arrays of *log* weights.  This is not a
stylistic choice: a posterior built from a thousand likelihood factors
produces unnormalized weights far below the smallest positive double, so
linear-domain code silently floors the whole population to zero.  A weight
of exactly zero is encoded as ``-inf``; ``+inf`` and ``nan`` are rejected.

The three weight transformations (tempering, hard clipping via an order
statistic, soft clipping via a saturating sigmoid) reduce the dispersion of
a weight vector while preserving its ordering, which is what keeps the
effective sample size of a badly mismatched proposal from collapsing to one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "AllWeightsZeroError",
    "WeightTransform",
    "adapt_gamma",
    "clip_hard",
    "clip_soft",
    "clip_soft_log",
    "clip_threshold",
    "ess",
    "max_weight",
    "ness",
    "normalize",
    "temper",
]


class AllWeightsZeroError(ValueError):
    """Every weight in the population is zero (all log-weights are -inf).

    Signals total degeneracy: the proposal and the target have essentially
    disjoint support for this sample set.
    """


def _as_log_weights(values) -> np.ndarray:
    lw = np.asarray(values, dtype=float)
    if lw.ndim != 1 or lw.size == 0:
        raise ValueError("log-weights must be a non-empty 1-D array")
    if np.isnan(lw).any() or np.isposinf(lw).any():
        raise ValueError("log-weights must be finite or -inf")
    return lw


def _check_normalized(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty 1-D array")
    if (w < 0).any():
        raise ValueError("normalized weights must be non-negative")
    if abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("weights do not sum to 1")
    return w


def normalize(log_weights) -> tuple[np.ndarray, float]:
    """Normalize log weights; return ``(weights, log_norm_const)``.

    ``log_norm_const`` is ``log(sum(exp(lw)))`` computed with the usual
    max-subtraction, so adding a constant to every log weight leaves the
    normalized weights untouched and only shifts the returned constant.

    Raises :class:`AllWeightsZeroError` when every entry is ``-inf``.
    """
    lw = _as_log_weights(log_weights)
    m = lw.max()
    if np.isneginf(m):
        raise AllWeightsZeroError("all weights zero")
    shifted = np.exp(lw - m)
    total = shifted.sum()
    return shifted / total, float(m + np.log(total))


def ess(weights) -> float:
    """Effective sample size ``1 / sum(w_i^2)`` of normalized weights."""
    w = _check_normalized(weights)
    return float(1.0 / np.sum(w * w))


def ness(weights) -> float:
    """Normalized effective sample size, ``ess / M``, in ``(0, 1]``."""
    w = _check_normalized(weights)
    return ess(w) / w.size


def max_weight(weights) -> float:
    """Largest normalized weight; 1 means the population has degenerated."""
    return float(_check_normalized(weights).max())


def temper(log_weights, gamma: float) -> np.ndarray:
    """Raise unnormalized weights to the power ``gamma`` in ``(0, 1]``.

    In the log domain this is a scalar multiply.  ``gamma = 1`` is the
    identity; as ``gamma -> 0`` the normalized weights flatten toward
    uniform over the support.
    """
    lw = _as_log_weights(log_weights)
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    return gamma * lw


def clip_threshold(log_weights, clip_count: int) -> float:
    """Log-domain clipping threshold: the ``clip_count``-th largest entry.

    Ranked by a stable descending sort, so ties resolve deterministically.
    If fewer than ``clip_count`` entries are finite the threshold falls back
    to the smallest finite log-weight (the construction assumes at least
    ``clip_count`` nonzero weights; flattening every finite weight is the
    graceful limit of that assumption).
    """
    lw = _as_log_weights(log_weights)
    if not 1 <= clip_count < lw.size:
        raise ValueError(
            f"clip_count must be in [1, {lw.size - 1}], got {clip_count}"
        )
    order = np.argsort(-lw, kind="stable")
    t = lw[order[clip_count - 1]]
    if np.isneginf(t):
        finite = lw[np.isfinite(lw)]
        if finite.size == 0:
            raise AllWeightsZeroError("all weights zero")
        t = finite.min()
    return float(t)


def clip_hard(log_weights, clip_count: int) -> np.ndarray:
    """Cap weights at the ``clip_count``-th largest value.

    Exactly the entries strictly above the threshold change; everything at
    or below it is untouched, so the number of samples sitting at or above
    the threshold after clipping is (at least) ``clip_count``.  Equivalent
    to ``min(w, T)`` on linear-domain weights.
    """
    lw = _as_log_weights(log_weights)
    return np.minimum(lw, clip_threshold(lw, clip_count))


def clip_soft_log(log_weights, log_beta: float) -> np.ndarray:
    """Soft clipping parameterized by ``log(beta)``; saturation-safe.

    Maps ``w -> 2*beta / (1 + exp(-2w/beta)) - beta``, i.e.
    ``beta * tanh(w / beta)``: strictly increasing, ~identity for
    ``w << beta`` and bounded above by ``beta``.  Passing ``log_beta``
    instead of ``beta`` keeps the computation entirely in the log domain,
    where the ratio ``w / beta = exp(lw - log_beta)`` is the only quantity
    that ever needs to be exponentiated.
    """
    lw = _as_log_weights(log_weights)
    r = lw - log_beta
    out = np.empty_like(lw)
    # below exp(-18) ~ 1.5e-8 the relative tanh correction is < 1e-16
    small = r < -18.0
    out[small] = lw[small]
    big = ~small
    out[big] = log_beta + np.log(np.tanh(np.exp(np.minimum(r[big], 20.0))))
    return out


def clip_soft(log_weights, beta: float) -> np.ndarray:
    """Soft clipping with linear-domain saturation level ``beta > 0``."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return clip_soft_log(log_weights, float(np.log(beta)))


def adapt_gamma(
    log_weights,
    target_ess: float,
    *,
    iterations: int = 30,
    rel_tol: float = 1e-3,
    bracket: tuple[float, float] = (1e-8, 1.0),
) -> float:
    """Find a tempering exponent whose resulting ESS meets ``target_ess``.

    Bisects on ``gamma`` over ``bracket`` (ESS is non-increasing in gamma).
    Returns 1 when the untempered weights already meet the target, and the
    last gamma whose ESS is at least ``target_ess * (1 - rel_tol)``
    otherwise.  Stops early when it lands within the tolerance band.
    """
    lw = _as_log_weights(log_weights)
    m = lw.size
    if not 1.0 <= target_ess <= m:
        raise ValueError(f"target_ess must be in [1, {m}], got {target_ess}")

    def ess_at(gamma: float) -> float:
        return ess(normalize(temper(lw, gamma))[0])

    if ess_at(1.0) >= target_ess:
        return 1.0
    floor = target_ess * (1.0 - rel_tol)
    lo, hi = bracket
    if ess_at(lo) < floor:
        # target unreachable (e.g. -inf entries shrink the support);
        # maximal flattening is the best on offer
        return lo
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        e = ess_at(mid)
        if floor <= e <= target_ess * (1.0 + rel_tol):
            return mid
        if e >= floor:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class WeightTransform:
    """Declarative choice of the weight nonlinearity and its schedule.

    ``kind`` is one of ``identity``, ``temper``, ``clip_hard``,
    ``clip_soft``; only the fields relevant to the kind are consulted.
    Schedules map the iteration index to the parameter used at that
    iteration.  For soft clipping without an explicit ``beta_schedule``,
    the saturation level defaults to the hard-clip threshold implied by
    ``clip_count``, which removes the free parameter while keeping a
    comparable saturation level.
    """

    kind: str
    gamma_schedule: Optional[Callable[[int], float]] = None
    clip_count: Optional[int] = None
    beta_schedule: Optional[Callable[[int], float]] = None

    _KINDS = ("identity", "temper", "clip_hard", "clip_soft")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind == "temper" and self.gamma_schedule is None:
            raise ValueError("temper transform requires gamma_schedule")
        if self.kind == "clip_hard" and not (
            self.clip_count is not None and self.clip_count >= 1
        ):
            raise ValueError("clip_hard transform requires clip_count >= 1")
        if self.kind == "clip_soft" and (
            self.clip_count is None and self.beta_schedule is None
        ):
            raise ValueError(
                "clip_soft transform requires clip_count or beta_schedule"
            )

    @classmethod
    def identity(cls) -> "WeightTransform":
        return cls(kind="identity")

    @classmethod
    def tempered(cls, gamma_schedule: Callable[[int], float]) -> "WeightTransform":
        return cls(kind="temper", gamma_schedule=gamma_schedule)

    @classmethod
    def hard_clip(cls, clip_count: int) -> "WeightTransform":
        return cls(kind="clip_hard", clip_count=clip_count)

    @classmethod
    def soft_clip(
        cls,
        clip_count: Optional[int] = None,
        beta_schedule: Optional[Callable[[int], float]] = None,
    ) -> "WeightTransform":
        return cls(kind="clip_soft", clip_count=clip_count, beta_schedule=beta_schedule)

    def apply(self, log_weights, iteration: int) -> np.ndarray:
        """Transformed log weights for the given iteration index."""
        lw = _as_log_weights(log_weights)
        if self.kind == "identity":
            return lw.copy()
        if self.kind == "temper":
            return temper(lw, self.gamma_schedule(iteration))
        if self.kind == "clip_hard":
            return clip_hard(lw, self.clip_count)
        if self.beta_schedule is not None:
            return clip_soft(lw, self.beta_schedule(iteration))
        return clip_soft_log(lw, clip_threshold(lw, self.clip_count))
