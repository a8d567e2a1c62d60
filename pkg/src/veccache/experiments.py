"""Seeded experiment orchestration, sweeps and metric aggregation.

Every (scheme, sweep value, seed) combination is one independent run that
writes its own per-episode metrics CSV; a manifest plus one aggregate CSV
per sweep make the outputs self-describing for the report tooling.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .config import SimConfig
from .env import TRACE_COLUMNS, VecCacheEnv
from .trainer import SCHEMES, EpisodeMetrics, train, write_metrics_csv
from .world import ConfigError

SWEEP_VARIABLES = ("vu_count", "rsu_count", "content_types")
MANIFEST_NAME = "runs_manifest.csv"
CONVERGED_WINDOW_FRAC = 0.1


@dataclass(frozen=True)
class ExperimentSpec:
    config: SimConfig
    schemes: tuple[str, ...] = ("mgarl",)
    sweep_var: str | None = None
    sweep_values: tuple = ()
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        for scheme in self.schemes:
            if scheme not in SCHEMES:
                raise ConfigError(f"unknown scheme {scheme!r}")
        if self.sweep_var is not None:
            if self.sweep_var not in SWEEP_VARIABLES:
                raise ConfigError(f"unknown sweep variable {self.sweep_var!r}")
            if not self.sweep_values:
                raise ConfigError("sweep variable given without values")
            if any(v <= 0 for v in self.sweep_values):
                raise ConfigError("sweep values must be positive")


def apply_sweep(cfg: SimConfig, var: str, value) -> SimConfig:
    """Return a config with exactly one swept key changed."""
    if var == "vu_count":
        return dataclasses.replace(cfg, grid=dataclasses.replace(cfg.grid, vu_count=int(value)))
    if var == "rsu_count":
        return dataclasses.replace(cfg, grid=dataclasses.replace(cfg.grid, rsu_count=int(value)))
    if var == "content_types":
        return dataclasses.replace(cfg, tasks=dataclasses.replace(cfg.tasks, content_types=int(value)))
    raise ConfigError(f"unknown sweep variable {var!r}")


def build_env(cfg: SimConfig, seed: int) -> VecCacheEnv:
    return VecCacheEnv(cfg.grid, cfg.channel, cfg.tasks, cfg.env,
                       seed=np.random.SeedSequence([int(seed), 0]))


def converged_value(series) -> float:
    """Mean over the final window (last 10 percent, at least one episode)."""
    values = np.asarray(series, dtype=float)
    if values.size == 0:
        raise ValueError("empty metric series has no converged value")
    window = max(1, int(np.ceil(values.size * CONVERGED_WINDOW_FRAC)))
    return float(values[-window:].mean())


@dataclass
class RunSummary:
    scheme: str
    sweep_var: str | None
    sweep_value: object
    seed: int
    metrics: list[EpisodeMetrics]
    csv_path: Path | None = None

    @property
    def converged_reward(self) -> float:
        return converged_value([m.cumulative_reward for m in self.metrics])

    @property
    def converged_hit_ratio(self) -> float:
        return converged_value([m.hit_ratio for m in self.metrics])

    @property
    def converged_latency(self) -> float:
        return converged_value([m.total_latency_s for m in self.metrics])


def run_one(cfg: SimConfig, scheme: str, seed: int,
            sweep_var: str | None = None, sweep_value=None) -> RunSummary:
    env = build_env(cfg, seed)
    metrics, _ = train(env, cfg.train, scheme=scheme, seed=seed)
    return RunSummary(scheme=scheme, sweep_var=sweep_var, sweep_value=sweep_value,
                      seed=seed, metrics=metrics)


def _run_filename(scheme: str, sweep_var, sweep_value, seed: int) -> str:
    if sweep_var is None:
        return f"{scheme}__seed-{seed}.csv"
    return f"{scheme}__{sweep_var}-{sweep_value}__seed-{seed}.csv"


def run(spec: ExperimentSpec, out_dir) -> list[RunSummary]:
    """Execute the full grid and write per-run, manifest and aggregate CSVs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    values = list(spec.sweep_values) if spec.sweep_var else [None]
    summaries: list[RunSummary] = []
    manifest_rows = []
    for scheme in spec.schemes:
        for value in values:
            cfg = spec.config if value is None else apply_sweep(spec.config, spec.sweep_var, value)
            for seed in spec.seeds:
                summary = run_one(cfg, scheme, seed, spec.sweep_var, value)
                path = out_dir / _run_filename(scheme, spec.sweep_var, value, seed)
                write_metrics_csv(path, summary.metrics)
                summary.csv_path = path
                summaries.append(summary)
                manifest_rows.append({
                    "scheme": scheme,
                    "sweep_var": spec.sweep_var or "none",
                    "sweep_value": value if value is not None else "default",
                    "seed": seed,
                    "vu_count": cfg.grid.vu_count,
                    "rsu_count": cfg.grid.rsu_count,
                    "content_types": cfg.tasks.content_types,
                    "path": path.name,
                })
    pd.DataFrame(manifest_rows).to_csv(out_dir / MANIFEST_NAME, index=False)
    aggregate(summaries).to_csv(out_dir / "aggregate.csv", index=False)
    return summaries


def aggregate(summaries: list[RunSummary]) -> pd.DataFrame:
    """Across-seed mean and standard deviation of the converged metrics."""
    rows = []
    for s in summaries:
        rows.append({
            "scheme": s.scheme,
            "sweep_var": s.sweep_var or "none",
            "sweep_value": s.sweep_value if s.sweep_value is not None else "default",
            "seed": s.seed,
            "converged_reward": s.converged_reward,
            "converged_hit_ratio": s.converged_hit_ratio,
            "converged_latency": s.converged_latency,
        })
    df = pd.DataFrame(rows)
    grouped = df.groupby(["scheme", "sweep_var", "sweep_value"], sort=True)
    out = grouped.agg(
        n_seeds=("seed", "count"),
        reward_mean=("converged_reward", "mean"),
        reward_std=("converged_reward", "std"),
        hit_ratio_mean=("converged_hit_ratio", "mean"),
        hit_ratio_std=("converged_hit_ratio", "std"),
        latency_mean=("converged_latency", "mean"),
        latency_std=("converged_latency", "std"),
    ).reset_index()
    return out.fillna(0.0)


# --- trace-level metrics ------------------------------------------------

_E_COL = TRACE_COLUMNS.index("e_m")
_T_COL = TRACE_COLUMNS.index("T_m")


def hit_ratio(trace) -> float:
    """Fraction of request events served from a cache."""
    rows = list(trace)
    if not rows:
        raise ValueError("empty trace has no hit ratio")
    hits = sum(int(r[_E_COL]) for r in rows)
    return hits / len(rows)


def total_latency(trace) -> float:
    """Sum of per-slot task latencies over every agent, in seconds."""
    return float(sum(r[_T_COL] for r in trace))
