"""Experiment runner: degeneracy study, algorithm comparison, rate inference,
and the error-decay harness, each emitting schema-versioned CSV tables.

Subcommands
-----------
``degeneracy``    max-weight / ESS of plain importance sampling vs (N, M)
``gmm``           transformed-weight engines vs the multi-scale baseline on
                  the Gaussian-mixture posterior, with a quadrature oracle
``skm``           rate inference for the predator-prey model with the
                  particle-filter likelihood, including the doubling retry
                  protocol for runs whose final NESS misses the gate
``convergence``   estimator error decay with hard clipping at ceil(sqrt(M))

Configuration is a flat ``key=value`` file plus ``--key value`` command-line
overrides; ``--seed``, ``--threads``, and ``--out`` are ordinary keys with
dedicated flags.  Every CSV starts with ``# schema=v1`` and a header row,
and numbers are written in shortest round-trip form so reloads are exact.
Runs with a fixed seed produce byte-identical CSVs for any thread count.

Exit codes: 0 success, 2 configuration error, 3 runtime degeneracy abort.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from npmc.gmm import (
    GmmSpec,
    degeneracy_study,
    gmm_generate,
    gmm_target_model,
    zoomed_posterior_oracle,
)
from npmc.metrics import RunSummary, nmse, summarize_runs
from npmc.pmc import (
    DegenerateWeightsError,
    NpmcConfig,
    StdPmcConfig,
    convergence_error_curves,
    default_clip_rule,
    modified_npmc_run,
    normal_normal_model,
    npmc_run,
    std_pmc_run,
)
from npmc.sampling import RngStream
from npmc.skm import (
    SkmObservations,
    SkmTrajectory,
    gillespie_simulate,
    observe,
    prior_from_spec,
    skm_npmc_run,
)
from npmc.weights import AllWeightsZeroError, WeightTransform

__all__ = [
    "ConfigError",
    "ConvergenceConfig",
    "DegeneracyConfig",
    "GmmComparisonConfig",
    "SkmConfig",
    "main",
    "read_trajectory_csv",
    "run_convergence",
    "run_degeneracy",
    "run_gmm_comparison",
    "run_skm",
]

SCHEMA = "v1"


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


# ---------------------------------------------------------------------------
# experiment configurations


@dataclass
class DegeneracyConfig:
    n_grid: tuple = (1, 10, 100, 1000)
    m_grid: tuple = (1, 10, 100, 1000)
    runs: int = 100
    seed: int = 1234
    threads: int = 1
    out: str = "results"

    def validate(self):
        if not self.n_grid or any(n < 0 for n in self.n_grid):
            raise ConfigError("n_grid: needs non-negative observation counts")
        if not self.m_grid or any(m < 1 for m in self.m_grid):
            raise ConfigError("m_grid: needs positive sample counts")
        if self.runs < 1:
            raise ConfigError("runs: must be at least 1")
        if self.threads < 1:
            raise ConfigError("threads: must be at least 1")


@dataclass
class GmmComparisonConfig:
    m: int = 200
    l: int = 20
    clip_count: int = 50
    min_eff: float = 100.0
    gamma_midpoint: float = 5.0
    n_obs: int = 1000
    runs: int = 100
    scales: tuple = (5.0, 2.0, 0.1, 0.05, 0.01)
    samples_per_scale: int = 40
    min_scale_fraction: float = 0.01
    oracle: bool = True
    oracle_resolution: int = 500
    seed: int = 1234
    threads: int = 1
    out: str = "results"

    def validate(self):
        if self.m < 2:
            raise ConfigError("m: must be at least 2")
        if self.l < 1:
            raise ConfigError("l: must be at least 1")
        if not 1 <= self.clip_count < self.m:
            raise ConfigError("clip_count: must lie in [1, m)")
        if not 1.0 <= self.min_eff <= self.m:
            raise ConfigError("min_eff: must lie in [1, m]")
        if self.n_obs < 1:
            raise ConfigError("n_obs: must be at least 1")
        if self.runs < 1:
            raise ConfigError("runs: must be at least 1")
        if not self.scales or any(v <= 0 for v in self.scales):
            raise ConfigError("scales: must be positive variances")
        if self.samples_per_scale < 2:
            raise ConfigError("samples_per_scale: must be at least 2")
        if len(self.scales) * self.samples_per_scale != self.m:
            raise ConfigError("samples_per_scale: scales * samples_per_scale != m")
        if self.oracle_resolution < 400:
            raise ConfigError("oracle_resolution: must be at least 400")
        if self.threads < 1:
            raise ConfigError("threads: must be at least 1")


@dataclass
class SkmConfig:
    m: int = 500
    l: int = 10
    clip_count: int = 100
    runs: int = 10
    j_particles: int = 100
    theta_true: tuple = (0.5, 0.0025, 0.3)
    x0: tuple = (71, 79)
    horizon: float = 40.0
    delta: float = 1.0
    sigma2: float = 100.0
    prior_std: tuple = (1.25, 0.0065, 0.77)
    retries: int = 2
    ness_gate: float = 0.3
    max_events: int = 20_000
    seed: int = 1234
    threads: int = 1
    out: str = "results"

    def validate(self):
        if self.m < 2:
            raise ConfigError("m: must be at least 2")
        if self.l < 1:
            raise ConfigError("l: must be at least 1")
        if not 1 <= self.clip_count < self.m:
            raise ConfigError("clip_count: must lie in [1, m)")
        if self.runs < 1:
            raise ConfigError("runs: must be at least 1")
        if self.j_particles < 1:
            raise ConfigError("j_particles: must be at least 1")
        if len(self.theta_true) != 3 or any(t <= 0 for t in self.theta_true):
            raise ConfigError("theta_true: needs three positive rates")
        if len(self.x0) != 2 or any(v < 0 for v in self.x0):
            raise ConfigError("x0: needs two non-negative populations")
        if self.horizon <= 0:
            raise ConfigError("horizon: must be positive")
        if self.delta <= 0 or self.delta > self.horizon:
            raise ConfigError("delta: must lie in (0, horizon]")
        if self.sigma2 <= 0:
            raise ConfigError("sigma2: must be positive")
        if len(self.prior_std) != 3 or any(s <= 0 for s in self.prior_std):
            raise ConfigError("prior_std: needs three positive spreads")
        if self.retries < 0:
            raise ConfigError("retries: must be non-negative")
        if not 0.0 < self.ness_gate < 1.0:
            raise ConfigError("ness_gate: must lie in (0, 1)")
        if self.max_events < 1:
            raise ConfigError("max_events: must be at least 1")
        if self.threads < 1:
            raise ConfigError("threads: must be at least 1")


@dataclass
class ConvergenceConfig:
    m_grid: tuple = (100, 1000, 10_000, 100_000)
    repetitions: int = 50
    observations: tuple = (1.2, 0.8, 1.5, 0.3, 1.1)
    prior_mean: float = 0.0
    prior_var: float = 1.0
    noise_var: float = 1.0
    seed: int = 1234
    threads: int = 1
    out: str = "results"

    def validate(self):
        if not self.m_grid or any(m < 4 for m in self.m_grid):
            raise ConfigError("m_grid: sample sizes must be at least 4")
        if self.repetitions < 1:
            raise ConfigError("repetitions: must be at least 1")
        if not self.observations:
            raise ConfigError("observations: needs at least one value")
        if self.prior_var <= 0 or self.noise_var <= 0:
            raise ConfigError("prior_var: variances must be positive")
        if self.threads < 1:
            raise ConfigError("threads: must be at least 1")


# ---------------------------------------------------------------------------
# config file / override plumbing


def _coerce(name: str, raw: str, annotation) -> object:
    raw = raw.strip()
    try:
        if annotation is int:
            return int(raw)
        if annotation is float:
            return float(raw)
        if annotation is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if annotation is tuple:
            parts = [p for p in raw.split(",") if p.strip()]
            values = []
            for p in parts:
                v = float(p)
                values.append(int(v) if v == int(v) else v)
            return tuple(values)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from exc


def parse_config_file(path: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {stripped!r}")
        key, value = stripped.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def build_config(cfg_cls, sources: Sequence[dict[str, str]]):
    fields = {f.name: f for f in dataclasses.fields(cfg_cls)}
    kwargs = {}
    for source in sources:
        for key, raw in source.items():
            if key not in fields:
                raise ConfigError(f"{key}: unknown configuration key")
            annotation = fields[key].type
            if isinstance(annotation, str):
                annotation = {"int": int, "float": float, "bool": bool,
                              "str": str, "tuple": tuple}.get(annotation, str)
            kwargs[key] = _coerce(key, raw, annotation)
    cfg = cfg_cls(**kwargs)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# CSV output


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows, meta: Sequence[tuple] = ()):
    lines = [f"# schema={SCHEMA}"]
    lines += [f"# {k}={_fmt(v)}" for k, v in meta]
    lines.append(",".join(header))
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def _read_csv(path: Path) -> tuple[dict[str, str], list[str], list[list[str]]]:
    meta: dict[str, str] = {}
    header: list[str] = []
    rows: list[list[str]] = []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                k, v = body.split("=", 1)
                meta[k.strip()] = v.strip()
            continue
        if not header:
            header = line.split(",")
        elif line:
            rows.append(line.split(","))
    return meta, header, rows


def write_trajectory_csv(path: Path, traj: SkmTrajectory):
    rows = [(0.0, int(traj.initial_state[0]), int(traj.initial_state[1]), 0)]
    rows += [
        (float(t), int(s[0]), int(s[1]), int(k))
        for t, s, k in zip(traj.times, traj.states, traj.reaction_types)
    ]
    meta = [
        ("horizon", traj.horizon),
        ("integrated_hazards", ",".join(repr(float(v)) for v in traj.integrated_hazards)),
    ]
    write_csv(path, ["time", "x1", "x2", "reaction_type"], rows, meta)


def read_trajectory_csv(path: Path) -> SkmTrajectory:
    meta, header, rows = _read_csv(Path(path))
    if header != ["time", "x1", "x2", "reaction_type"]:
        raise ValueError(f"unexpected trajectory header {header}")
    horizon = float(meta["horizon"])
    hazards = np.array([float(v) for v in meta["integrated_hazards"].split(",")])
    data = np.array([[float(c) for c in row] for row in rows])
    events = data[1:]
    kinds = events[:, 3].astype(np.int64)
    return SkmTrajectory(
        times=events[:, 0],
        states=events[:, 1:3].astype(np.int64),
        reaction_types=kinds,
        initial_state=data[0, 1:3].astype(np.int64),
        horizon=horizon,
        reaction_counts=np.array([(kinds == r).sum() for r in (1, 2, 3)]),
        integrated_hazards=hazards,
    )


def _parallel_map(fn, items, threads: int):
    if threads <= 1:
        return [fn(item) for item in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# degeneracy


def run_degeneracy(cfg: DegeneracyConfig) -> list[dict]:
    """Tabulate mean max-weight and mean ESS per (N, M) cell; write CSV."""
    cfg.validate()
    spec = GmmSpec()
    root = RngStream(cfg.seed)
    cells = [(ni, n, mi, m) for ni, n in enumerate(cfg.n_grid) for mi, m in enumerate(cfg.m_grid)]

    def one_cell(cell):
        ni, n, mi, m = cell
        # delegate to the study routine with this cell's own stream layout
        rows = degeneracy_study(spec, [n], [m], cfg.runs, rng=root.substream(ni).substream(mi))
        return rows[0]

    rows = _parallel_map(one_cell, cells, cfg.threads)
    out = Path(cfg.out)
    write_csv(
        out / "degeneracy.csv",
        ["N", "M", "mean_max_weight", "mean_ess"],
        [
            (r["n_observations"], r["m_samples"], r["mean_max_weight"], r["mean_ess"])
            for r in rows
        ],
        meta=[("runs", cfg.runs), ("seed", cfg.seed)],
    )
    return rows


# ---------------------------------------------------------------------------
# gmm comparison


GMM_ALGORITHMS = ("pmc", "npmc_temper", "npmc_clip")


def _gmm_one_run(cfg: GmmComparisonConfig, spec: GmmSpec, p: int) -> dict:
    stream = RngStream(cfg.seed).substream(p)
    data = gmm_generate(spec, cfg.n_obs, stream.substream(0))
    model = gmm_target_model(data, spec)

    mid = cfg.gamma_midpoint
    temper_tr = WeightTransform.tempered(lambda ell: 1.0 / (1.0 + math.exp(-(ell - mid))))
    clip_tr = WeightTransform.hard_clip(cfg.clip_count)

    results = {
        "pmc": std_pmc_run(
            model,
            StdPmcConfig(
                scales=cfg.scales,
                samples_per_scale=cfg.samples_per_scale,
                l=cfg.l,
                min_scale_fraction=cfg.min_scale_fraction,
            ),
            rng=stream.substream(1),
        ),
        "npmc_temper": npmc_run(
            model,
            NpmcConfig(m=cfg.m, l=cfg.l, transform=temper_tr),
            rng=stream.substream(2),
        ),
        "npmc_clip": modified_npmc_run(
            model,
            NpmcConfig(m=cfg.m, l=cfg.l, transform=clip_tr, min_eff=cfg.min_eff),
            rng=stream.substream(3),
        ),
    }
    oracle = (
        zoomed_posterior_oracle(data, spec, resolution=cfg.oracle_resolution)
        if cfg.oracle
        else None
    )
    return {"results": results, "oracle": oracle}


def run_gmm_comparison(cfg: GmmComparisonConfig) -> dict:
    """Compare the three engines on shared per-run datasets; write CSVs.

    Returns the per-algorithm :class:`RunSummary` objects, the per-run
    oracle MSE floors (when enabled), and the per-run transform firing
    pattern of the threshold-gated clip engine.
    """
    cfg.validate()
    spec = GmmSpec()
    per_run = _parallel_map(
        lambda p: _gmm_one_run(cfg, spec, p), range(cfg.runs), cfg.threads
    )

    summaries: dict[str, RunSummary] = {}
    for name in GMM_ALGORITHMS:
        traces = [r["results"][name].records for r in per_run]
        histories = [r["results"][name].resampled_history for r in per_run]
        summaries[name] = summarize_runs(traces, histories, spec.theta_true)

    oracle_mse = (
        np.array([r["oracle"].min_mse for r in per_run]) if cfg.oracle else None
    )
    fired = np.array(
        [
            [rec.transform_fired for rec in r["results"]["npmc_clip"].records]
            for r in per_run
        ]
    )

    out = Path(cfg.out)
    summary_rows = []
    for name in GMM_ALGORITHMS:
        s = summaries[name]
        for ell in range(len(s.iterations)):
            summary_rows.append(
                (
                    name,
                    int(s.iterations[ell]),
                    s.ness_transformed_mean[ell],
                    s.ness_transformed_std[ell],
                    s.ness_standard_mean[ell],
                    s.ness_standard_std[ell],
                    s.mse_mean[ell, 0],
                    s.mse_std[ell, 0],
                    s.mse_mean[ell, 1],
                    s.mse_std[ell, 1],
                )
            )
    write_csv(
        out / "gmm_summary.csv",
        [
            "algorithm",
            "iteration",
            "mean_ness",
            "std_ness",
            "mean_ness_standard",
            "std_ness_standard",
            "mean_mse1",
            "std_mse1",
            "mean_mse2",
            "std_mse2",
        ],
        summary_rows,
        meta=[("runs", cfg.runs), ("seed", cfg.seed)],
    )

    final_rows = []
    for name in GMM_ALGORITHMS:
        s = summaries[name]
        final_rows.append(
            (
                name,
                s.ness_transformed_mean[-1],
                s.ness_transformed_std[-1],
                s.mse_mean[-1, 0],
                s.mse_mean[-1, 1],
                s.mse_std[-1, 0],
                s.mse_std[-1, 1],
            )
        )
    if oracle_mse is not None:
        final_rows.append(
            (
                "true_posterior",
                math.nan,
                math.nan,
                oracle_mse[:, 0].mean(),
                oracle_mse[:, 1].mean(),
                oracle_mse[:, 0].std(),
                oracle_mse[:, 1].std(),
            )
        )
    write_csv(
        out / "gmm_final.csv",
        [
            "algorithm",
            "mean_ness",
            "std_ness",
            "mean_mse1",
            "mean_mse2",
            "std_mse1",
            "std_mse2",
        ],
        final_rows,
        meta=[("runs", cfg.runs), ("seed", cfg.seed)],
    )
    return {"summaries": summaries, "oracle_mse": oracle_mse, "clip_fired": fired}


# ---------------------------------------------------------------------------
# skm inference


def _skm_one_run(cfg: SkmConfig, p: int) -> dict:
    stream = RngStream(cfg.seed).substream(p)
    theta_true = np.asarray(cfg.theta_true, dtype=float)
    x0 = np.asarray(cfg.x0, dtype=np.int64)
    prior = prior_from_spec(theta_true, cfg.prior_std)
    traj = gillespie_simulate(
        theta_true, x0, cfg.horizon, stream.substream(0), max_events=10**7
    )
    obs = observe(traj, cfg.delta, cfg.sigma2, stream.substream(1))

    stages = []
    m_stage, clip_stage = cfg.m, cfg.clip_count
    for stage in range(cfg.retries + 1):
        run_cfg = NpmcConfig(
            m=m_stage, l=cfg.l, transform=WeightTransform.hard_clip(clip_stage)
        )
        result = skm_npmc_run(
            prior,
            obs,
            x0,
            run_cfg,
            j_particles=cfg.j_particles,
            max_events=cfg.max_events,
            rng=stream.substream(2 + stage),
        )
        final_ness = result.records[-1].ness_transformed
        _, mean_nmse = nmse(result.resampled_history[-1], theta_true)
        stages.append(
            {
                "stage": stage,
                "m": m_stage,
                "final_ness": final_ness,
                "mean_nmse": mean_nmse,
                "converged": final_ness > cfg.ness_gate,
                "result": result,
            }
        )
        if final_ness > cfg.ness_gate:
            break
        m_stage *= 2
        clip_stage *= 2
    return {"trajectory": traj, "observations": obs, "stages": stages}


def run_skm(cfg: SkmConfig) -> dict:
    """Infer the reaction rates per run, retrying failed runs with doubled M.

    A run whose final NESS stays at or below the gate is rerun with twice
    the samples (and clip count), up to ``retries`` times.  Failed runs are
    recorded, not fatal.  Writes the representative run-0 trajectory and
    observations, the stage-1 per-iteration summary, and the final
    (NESS, log10 NMSE) scatter across runs and stages.
    """
    cfg.validate()
    per_run = _parallel_map(
        lambda p: _skm_one_run(cfg, p), range(cfg.runs), cfg.threads
    )
    theta_true = np.asarray(cfg.theta_true, dtype=float)

    out = Path(cfg.out)
    write_trajectory_csv(out / "skm_trajectory.csv", per_run[0]["trajectory"])
    obs0: SkmObservations = per_run[0]["observations"]
    write_csv(
        out / "skm_observations.csv",
        ["n", "y1", "y2"],
        [(i + 1, obs0.y[i, 0], obs0.y[i, 1]) for i in range(obs0.n)],
        meta=[("delta", obs0.delta), ("sigma2", obs0.sigma2)],
    )

    stage1 = [r["stages"][0] for r in per_run]
    summary = summarize_runs(
        [s["result"].records for s in stage1],
        [s["result"].resampled_history for s in stage1],
        theta_true,
    )
    write_csv(
        out / "skm_summary.csv",
        [
            "iteration",
            "mean_ness",
            "std_ness",
            "mean_ness_standard",
            "std_ness_standard",
            "mean_nmse",
            "std_nmse",
        ],
        [
            (
                int(summary.iterations[ell]),
                summary.ness_transformed_mean[ell],
                summary.ness_transformed_std[ell],
                summary.ness_standard_mean[ell],
                summary.ness_standard_std[ell],
                summary.mean_nmse_mean[ell],
                summary.mean_nmse_std[ell],
            )
            for ell in range(len(summary.iterations))
        ],
        meta=[("runs", cfg.runs), ("seed", cfg.seed), ("m", cfg.m), ("j", cfg.j_particles)],
    )

    scatter_rows = []
    for p, r in enumerate(per_run):
        for s in r["stages"]:
            scatter_rows.append(
                (
                    p,
                    s["stage"],
                    s["m"],
                    s["final_ness"],
                    math.log10(s["mean_nmse"]),
                    s["converged"],
                )
            )
    write_csv(
        out / "skm_scatter.csv",
        ["run", "stage", "m", "final_ness", "final_log10_nmse", "converged"],
        scatter_rows,
        meta=[("runs", cfg.runs), ("seed", cfg.seed)],
    )
    return {"per_run": per_run, "stage1_summary": summary}


# ---------------------------------------------------------------------------
# convergence


def run_convergence(cfg: ConvergenceConfig) -> dict:
    """Error-decay table for clipped-weight estimators on a 1-D target."""
    cfg.validate()
    model = normal_normal_model(
        cfg.observations,
        prior_mean=cfg.prior_mean,
        prior_var=cfg.prior_var,
        noise_var=cfg.noise_var,
    )
    # quadrature reference for the exact posterior integrals
    y = np.asarray(cfg.observations, dtype=float)
    span = 10.0 * math.sqrt(cfg.prior_var) + np.abs(y).max()
    grid = np.linspace(cfg.prior_mean - span, cfg.prior_mean + span, 400_001)
    log_post = -0.5 * (grid - cfg.prior_mean) ** 2 / cfg.prior_var
    for obs in y:
        log_post += -0.5 * (obs - grid) ** 2 / cfg.noise_var
    dens = np.exp(log_post - log_post.max())
    dens /= np.trapezoid(dens, grid)
    split = float(np.trapezoid(grid * dens, grid))
    fs = [
        lambda x: 1.0 if x[0] <= split else 0.0,
        lambda x: float(np.exp(-((x[0] - split) ** 2))),
    ]
    truths = [
        float(np.trapezoid((grid <= split) * dens, grid)),
        float(np.trapezoid(np.exp(-((grid - split) ** 2)) * dens, grid)),
    ]
    table = convergence_error_curves(
        model,
        fs,
        truths,
        m_grid=cfg.m_grid,
        mt_rule=default_clip_rule,
        repetitions=cfg.repetitions,
        rng=RngStream(cfg.seed),
    )
    write_csv(
        Path(cfg.out) / "convergence.csv",
        [
            "m",
            "m_t",
            "err_bar_std",
            "err_bar_bridge",
            "err_bridge_std",
            "err_bar_truth",
            "err_std_truth",
        ],
        [
            (
                row["m"],
                row["m_t"],
                row["err_bar_std"],
                row["err_bar_bridge"],
                row["err_bridge_std"],
                row["err_bar_truth"],
                row["err_std_truth"],
            )
            for row in table.rows
        ],
        meta=[("repetitions", cfg.repetitions), ("seed", cfg.seed)],
    )
    return {"table": table, "truths": truths}


# ---------------------------------------------------------------------------
# command line


_COMMANDS = {
    "degeneracy": (DegeneracyConfig, run_degeneracy),
    "gmm": (GmmComparisonConfig, run_gmm_comparison),
    "skm": (SkmConfig, run_skm),
    "convergence": (ConvergenceConfig, run_convergence),
}


def _overrides_from_tokens(tokens: list[str]) -> dict[str, str]:
    pairs: dict[str, str] = {}
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--") or i + 1 >= len(tokens):
            raise ConfigError(f"{token}: expected --key value override pairs")
        pairs[token[2:].replace("-", "_")] = tokens[i + 1]
        i += 2
    return pairs


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="npmc",
        description="population Monte Carlo with transformed weights: experiment runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", type=str, default=None, help="key=value file")
        p.add_argument("--seed", type=str, default=None, help="master seed")
        p.add_argument("--threads", type=str, default=None, help="parallel runs")
        p.add_argument("--out", type=str, default=None, help="output directory")

    args, leftover = parser.parse_known_args(argv)
    cfg_cls, runner = _COMMANDS[args.command]
    try:
        sources = []
        if args.config:
            sources.append(parse_config_file(args.config))
        flags = {
            k: v
            for k, v in (("seed", args.seed), ("threads", args.threads), ("out", args.out))
            if v is not None
        }
        sources.append(flags)
        sources.append(_overrides_from_tokens(list(leftover)))
        cfg = build_config(cfg_cls, sources)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        runner(cfg)
    except (DegenerateWeightsError, AllWeightsZeroError) as exc:
        print(f"degeneracy abort: {exc}", file=sys.stderr)
        return 3
    print(f"{args.command}: wrote tables to {cfg.out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
