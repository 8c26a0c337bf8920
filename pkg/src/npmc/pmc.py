"""Population Monte Carlo engines and integral estimators.

Four engines share the same skeleton: draw from a proposal, weight by
``log p(y|theta) + log p(theta) - log q(theta)``, optionally transform the
weights, normalize, record diagnostics, resample, and refit the proposal on
the resampled cloud.  Iteration 0 always proposes from the prior.

* :func:`npmc_run` applies the configured weight transform every iteration
  (an identity transform recovers the generic, untransformed algorithm).
* :func:`modified_npmc_run` applies the transform only while the standard
  effective sample size sits below a threshold.
* :func:`std_pmc_run` is the classic multi-scale random-walk baseline: each
  particle is perturbed with one of ``p`` fixed variances and the per-scale
  sample counts follow the resampling survivors, floored at a minimum
  fraction of the population.

:func:`convergence_error_curves` is an empirical harness for the large-M
behaviour of clipped-weight estimators: it tabulates how far the transformed
and bridge estimators sit from the standard self-normalized estimator and
from the exact integral as M grows.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from npmc.sampling import (
    GaussianProposal,
    ParticleSet,
    RngStream,
    fit_gaussian_proposal,
    log_mvn_density,
    multinomial_resample,
    sample_proposal,
)
from npmc.weights import (
    WeightTransform,
    clip_hard,
    ess,
    max_weight,
    ness,
    normalize,
)

__all__ = [
    "ConvergenceTable",
    "DegenerateWeightsError",
    "IterationRecord",
    "NpmcConfig",
    "RunResult",
    "StdPmcConfig",
    "TargetModel",
    "bridge_estimate",
    "convergence_error_curves",
    "estimate",
    "modified_npmc_run",
    "normal_normal_model",
    "npmc_run",
    "std_pmc_run",
]


class DegenerateWeightsError(RuntimeError):
    """Raised when every importance weight at some iteration is zero."""

    def __init__(self, iteration: int, detail: str = ""):
        self.iteration = iteration
        msg = f"all importance weights are zero at iteration {iteration}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


@dataclass
class TargetModel:
    """Bundle of prior sampler, prior log-density, and log-likelihood.

    ``log_likelihood`` may be a stochastic estimate (unbiased in the linear
    domain); it receives its own stream so repeated evaluation stays
    reproducible.  ``log_likelihood_batch``, when provided, evaluates a whole
    (M, K) array of positions in one call and is preferred by the engines;
    this is purely a vectorization hook, the contract is unchanged.
    """

    dim: int
    sample_prior: Callable[[int, RngStream], ParticleSet]
    log_prior: Callable[[np.ndarray], float]
    log_likelihood: Callable[[np.ndarray, RngStream], float]
    log_likelihood_batch: Optional[Callable[[np.ndarray, RngStream], np.ndarray]] = None


@dataclass(frozen=True)
class NpmcConfig:
    """Engine configuration: population size, iteration count, transform.

    ``l`` counts adaptation iterations; the engine runs ``l + 1`` weighting
    steps with index 0 drawing from the prior.  ``min_eff`` is the ESS
    threshold used by :func:`modified_npmc_run` (ignored by
    :func:`npmc_run`).
    """

    m: int
    l: int
    transform: WeightTransform
    min_eff: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("m must be at least 2")
        if self.l < 1:
            raise ValueError("l must be at least 1")
        if self.min_eff is not None and not 1.0 <= self.min_eff <= self.m:
            raise ValueError("min_eff must lie in [1, m]")


@dataclass(frozen=True)
class StdPmcConfig:
    """Multi-scale random-walk baseline configuration.

    One of ``p = len(scales)`` proposal variances is attached to each
    particle; the population size is ``p * samples_per_scale``.  After each
    resampling step the per-scale counts are updated to the survivor counts,
    floored at ``ceil(min_scale_fraction * M)`` samples per scale.
    """

    scales: tuple[float, ...]
    samples_per_scale: int
    l: int
    min_scale_fraction: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if len(self.scales) < 1 or any(v <= 0 for v in self.scales):
            raise ValueError("scales must be positive variances")
        if self.samples_per_scale < 2:
            raise ValueError("samples_per_scale must be at least 2")
        if self.l < 1:
            raise ValueError("l must be at least 1")
        if not 0.0 <= self.min_scale_fraction < 1.0 / len(self.scales):
            raise ValueError("min_scale_fraction must be in [0, 1/p)")

    @property
    def m(self) -> int:
        return len(self.scales) * self.samples_per_scale


@dataclass(frozen=True)
class IterationRecord:
    """Per-iteration diagnostics and moment estimates."""

    iteration: int
    ness_standard: float
    ness_transformed: float
    max_weight_standard: float
    mean_estimate: np.ndarray
    cov_estimate: np.ndarray
    log_norm_const: float
    wall_time: float
    transform_fired: bool


@dataclass(frozen=True)
class RunResult:
    """Everything an engine run produces.

    ``final_particles`` carries the last iteration's positions with their
    transformed, normalized weights.  ``resampled_history[l]`` is the
    unweighted (M, K) cloud after the resampling step of iteration ``l``;
    error metrics over unweighted samples are computed from it.
    """

    records: list[IterationRecord]
    final_particles: ParticleSet
    resampled_history: list[np.ndarray]
    scale_counts: Optional[list[np.ndarray]] = None

    @property
    def final_record(self) -> IterationRecord:
        return self.records[-1]


def _prior_log_density(model: TargetModel, positions: np.ndarray) -> np.ndarray:
    return np.array([model.log_prior(p) for p in positions], dtype=float)


def _log_likelihoods(
    model: TargetModel, positions: np.ndarray, rng: RngStream
) -> np.ndarray:
    if model.log_likelihood_batch is not None:
        ll = np.asarray(model.log_likelihood_batch(positions, rng), dtype=float)
        if ll.shape != (positions.shape[0],):
            raise ValueError("log_likelihood_batch returned a wrong-shaped array")
        return ll
    return np.array(
        [
            model.log_likelihood(positions[i], rng.substream(i))
            for i in range(positions.shape[0])
        ],
        dtype=float,
    )


def _weighted_moments(
    positions: np.ndarray, weights: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    mean = weights @ positions
    centered = positions - mean
    cov = (centered * weights[:, None]).T @ centered
    return mean, cov


def _pmc_engine(
    model: TargetModel,
    cfg: NpmcConfig,
    min_eff: Optional[float],
    rng: Optional[RngStream],
) -> RunResult:
    root = rng if rng is not None else RngStream(cfg.seed)
    records: list[IterationRecord] = []
    history: list[np.ndarray] = []
    resampled: Optional[ParticleSet] = None
    final: Optional[ParticleSet] = None

    for ell in range(cfg.l + 1):
        tic = time.perf_counter()
        it_rng = root.substream(ell)
        if ell == 0:
            positions = model.sample_prior(cfg.m, it_rng.substream(0)).positions
        else:
            proposal = fit_gaussian_proposal(resampled)
            positions = sample_proposal(proposal, cfg.m, it_rng.substream(0)).positions

        loglik = _log_likelihoods(model, positions, it_rng.substream(1))
        if ell == 0:
            # proposal is the prior: the prior terms cancel exactly
            standard_lw = loglik
        else:
            logprior = _prior_log_density(model, positions)
            logq = np.asarray(log_mvn_density(proposal, positions))
            standard_lw = loglik + logprior - logq

        if np.isneginf(standard_lw).all():
            raise DegenerateWeightsError(ell)
        w_std, log_sum = normalize(standard_lw)
        ess_std = ess(w_std)

        fired = min_eff is None or ess_std < min_eff
        if fired:
            transformed_lw = cfg.transform.apply(standard_lw, ell)
            w_bar, _ = normalize(transformed_lw)
        else:
            w_bar = w_std

        mean, cov = _weighted_moments(positions, w_bar)
        weighted = ParticleSet(positions, w_bar)
        resampled = multinomial_resample(weighted, it_rng.substream(2))
        history.append(resampled.positions.copy())
        records.append(
            IterationRecord(
                iteration=ell,
                ness_standard=ess_std / cfg.m,
                ness_transformed=ess(w_bar) / cfg.m,
                max_weight_standard=max_weight(w_std),
                mean_estimate=mean,
                cov_estimate=cov,
                log_norm_const=log_sum - math.log(cfg.m),
                wall_time=time.perf_counter() - tic,
                transform_fired=fired,
            )
        )
        final = weighted

    return RunResult(records=records, final_particles=final, resampled_history=history)


def npmc_run(
    model: TargetModel, cfg: NpmcConfig, rng: Optional[RngStream] = None
) -> RunResult:
    """Run the transformed-weight engine, applying the transform every iteration."""
    return _pmc_engine(model, cfg, min_eff=None, rng=rng)


def modified_npmc_run(
    model: TargetModel, cfg: NpmcConfig, rng: Optional[RngStream] = None
) -> RunResult:
    """Like :func:`npmc_run`, but the transform only fires while the standard
    ESS is below ``cfg.min_eff``; each record notes whether it fired."""
    if cfg.min_eff is None:
        raise ValueError("modified_npmc_run requires cfg.min_eff")
    return _pmc_engine(model, cfg, min_eff=cfg.min_eff, rng=rng)


def _floored_counts(raw: np.ndarray, total: int, floor: int) -> np.ndarray:
    """Survivor counts with a per-scale floor, re-balanced to sum to ``total``."""
    counts = np.maximum(raw.astype(int), floor)
    excess = counts.sum() - total
    while excess > 0:
        j = int(np.argmax(counts))
        take = min(excess, counts[j] - floor)
        if take <= 0:
            raise ValueError("scale floor too large for the population size")
        counts[j] -= take
        excess -= take
    return counts


def std_pmc_run(
    model: TargetModel, cfg: StdPmcConfig, rng: Optional[RngStream] = None
) -> RunResult:
    """Multi-scale random-walk baseline.

    Iteration 0 draws the whole population from the prior and weights it by
    the likelihood.  Later iterations perturb each resampled particle with
    its scale's variance, weight by
    ``p(y|theta) p(theta) / N(theta; parent, v_j I)`` (the per-particle
    kernel), resample, and update the per-scale counts to the survivors,
    floored at ``ceil(min_scale_fraction * M)``.
    """
    root = rng if rng is not None else RngStream(cfg.seed)
    p = len(cfg.scales)
    m_total = cfg.m
    floor = math.ceil(cfg.min_scale_fraction * m_total)
    counts = np.full(p, cfg.samples_per_scale, dtype=int)
    scales = np.asarray(cfg.scales, dtype=float)

    records: list[IterationRecord] = []
    history: list[np.ndarray] = []
    counts_history: list[np.ndarray] = []
    resampled = None
    final = None

    for ell in range(cfg.l + 1):
        tic = time.perf_counter()
        it_rng = root.substream(ell)
        if ell == 0:
            positions = model.sample_prior(m_total, it_rng.substream(0)).positions
            loglik = _log_likelihoods(model, positions, it_rng.substream(1))
            standard_lw = loglik
        else:
            parents = resampled.positions
            labels = np.repeat(np.arange(p), counts)
            v = scales[labels]
            gen = it_rng.substream(0).generator()
            noise = gen.standard_normal(parents.shape) * np.sqrt(v)[:, None]
            positions = parents + noise
            loglik = _log_likelihoods(model, positions, it_rng.substream(1))
            logprior = _prior_log_density(model, positions)
            k = positions.shape[1]
            sq = np.sum((positions - parents) ** 2, axis=1)
            logq = -0.5 * (k * np.log(2.0 * np.pi * v) + sq / v)
            standard_lw = loglik + logprior - logq

        if np.isneginf(standard_lw).all():
            raise DegenerateWeightsError(ell)
        w, log_sum = normalize(standard_lw)
        mean, cov = _weighted_moments(positions, w)

        gen = it_rng.substream(2).generator()
        idx = gen.choice(m_total, size=m_total, p=w)
        resampled = ParticleSet(positions[idx], None)
        history.append(resampled.positions.copy())

        if ell == 0:
            # initial per-scale allocation is uniform; survivors start counting
            # from the first perturbation iteration onwards
            counts = np.full(p, cfg.samples_per_scale, dtype=int)
        else:
            labels = np.repeat(np.arange(p), counts)
            survivors = np.bincount(labels[idx], minlength=p)
            counts = _floored_counts(survivors, m_total, floor)
        counts_history.append(counts.copy())

        n = ess(w)
        records.append(
            IterationRecord(
                iteration=ell,
                ness_standard=n / m_total,
                ness_transformed=n / m_total,
                max_weight_standard=max_weight(w),
                mean_estimate=mean,
                cov_estimate=cov,
                log_norm_const=log_sum - math.log(m_total),
                wall_time=time.perf_counter() - tic,
                transform_fired=False,
            )
        )
        final = ParticleSet(positions, w)

    return RunResult(
        records=records,
        final_particles=final,
        resampled_history=history,
        scale_counts=counts_history,
    )


def estimate(f: Callable[[np.ndarray], float], particles: ParticleSet) -> float:
    """Self-normalized estimate ``sum_i w_i f(theta_i)`` over a weighted set."""
    if not particles.is_weighted:
        raise ValueError(
            "estimate requires a weighted particle set; "
            "take a plain mean over unweighted samples instead"
        )
    values = np.array([f(x) for x in particles.positions], dtype=float)
    return float(values @ particles.weights)


def bridge_estimate(
    f: Callable[[np.ndarray], float],
    positions: np.ndarray,
    standard_lw,
    transformed_lw,
) -> float:
    """Transformed-numerator / standard-normalizer estimate.

    Computes ``sum_i f(theta_i) phi(w_i*) / sum_j w_j*`` stably in the log
    domain.  With an identity transform it coincides with the standard
    self-normalized estimate.
    """
    slw = np.asarray(standard_lw, dtype=float)
    tlw = np.asarray(transformed_lw, dtype=float)
    if slw.shape != tlw.shape:
        raise ValueError("weight vectors must have matching shapes")
    b = slw.max()
    if np.isneginf(b):
        raise ValueError("standard weights are all zero")
    a = tlw.max()
    values = np.array([f(x) for x in np.atleast_2d(positions)], dtype=float)
    if np.isneginf(a):
        return 0.0
    num = float(values @ np.exp(tlw - a))
    den = float(np.sum(np.exp(slw - b)))
    diff = a - b
    if diff > 700.0:
        # the transform inflated the total weight beyond double range
        return math.copysign(math.inf, num) if num != 0.0 else 0.0
    return num / den * math.exp(diff)


@dataclass(frozen=True)
class ConvergenceTable:
    """Empirical error-decay table produced by :func:`convergence_error_curves`.

    ``rows`` holds per-M averages over repetitions and test functions; the
    ``per_rep_*`` arrays have shape (n_m, repetitions, n_functions) so that
    per-repetition relations (e.g. the triangle bound of the transformed-vs-
    standard error by the two bridge-split terms) can be checked exactly.
    """

    rows: list[dict]
    per_rep_bar_std: np.ndarray
    per_rep_bar_bridge: np.ndarray
    per_rep_bridge_std: np.ndarray
    per_rep_bar_truth: np.ndarray
    per_rep_std_truth: np.ndarray


def default_clip_rule(m: int) -> int:
    """Clip count growing like sqrt(M), so the clipped fraction vanishes."""
    return math.ceil(math.sqrt(m))


def convergence_error_curves(
    model: TargetModel,
    f_set: Sequence[Callable[[np.ndarray], float]],
    truths: Sequence[float],
    m_grid: Sequence[int],
    mt_rule: Optional[Callable[[int], Optional[int]]] = None,
    repetitions: int = 50,
    rng: Optional[RngStream] = None,
) -> ConvergenceTable:
    """Tabulate estimator discrepancies as the sample size grows.

    For each M, draws ``repetitions`` independent populations from the
    model's prior (which doubles as the proposal, so the standard log-weight
    is exactly the log-likelihood), hard-clips at ``mt_rule(M)``, and records
    the absolute differences between the transformed, bridge, and standard
    estimators and the exact values in ``truths``.  ``mt_rule`` returning
    ``None`` disables the transform (identity), for which the transformed
    and standard estimators coincide.
    """
    if len(truths) != len(f_set):
        raise ValueError("need one exact value per test function")
    rule = mt_rule if mt_rule is not None else default_clip_rule
    root = rng if rng is not None else RngStream(0)
    n_m, n_f = len(m_grid), len(f_set)
    shape = (n_m, repetitions, n_f)
    bar_std = np.zeros(shape)
    bar_bridge = np.zeros(shape)
    bridge_std = np.zeros(shape)
    bar_truth = np.zeros(shape)
    std_truth = np.zeros(shape)

    rows = []
    for mi, m in enumerate(m_grid):
        m_t = rule(m)
        for rep in range(repetitions):
            stream = root.substream(mi).substream(rep)
            positions = model.sample_prior(m, stream.substream(0)).positions
            slw = _log_likelihoods(model, positions, stream.substream(1))
            tlw = slw if m_t is None else clip_hard(slw, m_t)
            w_std, _ = normalize(slw)
            w_bar, _ = normalize(tlw)
            for fi, f in enumerate(f_set):
                values = np.array([f(x) for x in positions], dtype=float)
                est_std = float(values @ w_std)
                est_bar = float(values @ w_bar)
                est_bridge = bridge_estimate(f, positions, slw, tlw)
                bar_std[mi, rep, fi] = abs(est_bar - est_std)
                bar_bridge[mi, rep, fi] = abs(est_bar - est_bridge)
                bridge_std[mi, rep, fi] = abs(est_bridge - est_std)
                bar_truth[mi, rep, fi] = abs(est_bar - truths[fi])
                std_truth[mi, rep, fi] = abs(est_std - truths[fi])
        rows.append(
            {
                "m": m,
                "m_t": 0 if m_t is None else m_t,
                "err_bar_std": float(bar_std[mi].mean()),
                "err_bar_bridge": float(bar_bridge[mi].mean()),
                "err_bridge_std": float(bridge_std[mi].mean()),
                "err_bar_truth": float(bar_truth[mi].mean()),
                "err_std_truth": float(std_truth[mi].mean()),
            }
        )
    return ConvergenceTable(rows, bar_std, bar_bridge, bridge_std, bar_truth, std_truth)


def normal_normal_model(
    observations,
    prior_mean: float = 0.0,
    prior_var: float = 1.0,
    noise_var: float = 1.0,
) -> TargetModel:
    """One-dimensional conjugate normal target, handy as a reference model.

    Prior ``N(prior_mean, prior_var)`` on the location, i.i.d. observations
    ``N(theta, noise_var)``.  The exact posterior is available in closed
    form, which makes this the standard correctness check for the engines
    and the convergence harness.
    """
    y = np.atleast_1d(np.asarray(observations, dtype=float))
    sp_std = math.sqrt(prior_var)

    def sample_prior(m: int, rng: RngStream) -> ParticleSet:
        gen = rng.generator()
        return ParticleSet(prior_mean + sp_std * gen.standard_normal((m, 1)), None)

    def log_prior(theta: np.ndarray) -> float:
        d = float(theta[0]) - prior_mean
        return -0.5 * (math.log(2.0 * math.pi * prior_var) + d * d / prior_var)

    def log_likelihood(theta: np.ndarray, rng: RngStream) -> float:
        d = y - float(theta[0])
        return float(
            -0.5 * (y.size * math.log(2.0 * math.pi * noise_var) + d @ d / noise_var)
        )

    def log_likelihood_batch(positions: np.ndarray, rng: RngStream) -> np.ndarray:
        d = y[None, :] - positions[:, :1]
        return -0.5 * (
            y.size * math.log(2.0 * math.pi * noise_var)
            + np.sum(d * d, axis=1) / noise_var
        )

    return TargetModel(
        dim=1,
        sample_prior=sample_prior,
        log_prior=log_prior,
        log_likelihood=log_likelihood,
        log_likelihood_batch=log_likelihood_batch,
    )
