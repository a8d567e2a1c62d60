"""Report figures rendered next to the tidy CSVs the CLI emits."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .experiments import MANIFEST_NAME, converged_value

SCHEME_LABELS = {
    "mgarl": "graph attention",
    "no_attention": "uniform pooling",
    "iddqn": "independent DDQN",
    "random": "random caching",
}

FIGURES = ("convergence", "hit", "latency")


def _load_runs(run_dir: Path) -> pd.DataFrame:
    manifest = run_dir / MANIFEST_NAME
    if not manifest.exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {run_dir}; run `veccache run` first")
    return pd.read_csv(manifest)


def _read_metrics(run_dir: Path, name: str) -> pd.DataFrame:
    return pd.read_csv(run_dir / name)


def convergence_table(run_dir: Path) -> pd.DataFrame:
    """Across-seed mean/std of cumulative reward per episode per scheme."""
    manifest = _load_runs(run_dir)
    frames = []
    for (scheme,), group in manifest.groupby(["scheme"]):
        per_seed = [_read_metrics(run_dir, p)["cumulative_reward"].to_numpy()
                    for p in group["path"]]
        stacked = np.stack(per_seed)
        frames.append(pd.DataFrame({
            "scheme": scheme,
            "episode": np.arange(stacked.shape[1]),
            "reward_mean": stacked.mean(axis=0),
            "reward_std": stacked.std(axis=0),
        }))
    return pd.concat(frames, ignore_index=True)


def _converged_table(run_dir: Path, metric: str) -> pd.DataFrame:
    manifest = _load_runs(run_dir)
    rows = []
    for _, r in manifest.iterrows():
        series = _read_metrics(run_dir, r["path"])[metric]
        rows.append({**r.to_dict(), "converged": converged_value(series)})
    return pd.DataFrame(rows)


def hit_table(run_dir: Path) -> pd.DataFrame:
    """Converged hit ratio versus vehicle count, split by catalog size."""
    df = _converged_table(run_dir, "hit_ratio")
    grouped = df.groupby(["scheme", "content_types", "vu_count"])
    return grouped["converged"].agg(["mean", "std"]).reset_index().rename(
        columns={"mean": "hit_ratio_mean", "std": "hit_ratio_std"}).fillna(0.0)


def latency_table(run_dir: Path) -> pd.DataFrame:
    """Converged total latency versus RSU count per scheme."""
    df = _converged_table(run_dir, "total_latency_s")
    grouped = df.groupby(["scheme", "rsu_count"])
    return grouped["converged"].agg(["mean", "std"]).reset_index().rename(
        columns={"mean": "latency_mean", "std": "latency_std"}).fillna(0.0)


def render_convergence(table: pd.DataFrame, path: Path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for scheme, group in table.groupby("scheme"):
        label = SCHEME_LABELS.get(scheme, scheme)
        ax.plot(group["episode"], group["reward_mean"], label=label)
        ax.fill_between(group["episode"],
                        group["reward_mean"] - group["reward_std"],
                        group["reward_mean"] + group["reward_std"], alpha=0.2)
    ax.set_xlabel("episode")
    ax.set_ylabel("cumulative reward")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_hit(table: pd.DataFrame, path: Path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for (scheme, cts), group in table.groupby(["scheme", "content_types"]):
        group = group.sort_values("vu_count")
        label = f"{SCHEME_LABELS.get(scheme, scheme)}, {cts} contents"
        ax.errorbar(group["vu_count"], group["hit_ratio_mean"],
                    yerr=group["hit_ratio_std"], marker="o", capsize=3, label=label)
    ax.set_xlabel("number of vehicles")
    ax.set_ylabel("converged content hit ratio")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_latency(table: pd.DataFrame, path: Path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for scheme, group in table.groupby("scheme"):
        group = group.sort_values("rsu_count")
        ax.errorbar(group["rsu_count"], group["latency_mean"],
                    yerr=group["latency_std"], marker="s", capsize=3,
                    label=SCHEME_LABELS.get(scheme, scheme))
    ax.set_xlabel("number of RSUs")
    ax.set_ylabel("converged total system latency [s]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def emit_figure(run_dir, figure: str, out_dir=None) -> tuple[Path, Path]:
    """Write the tidy CSV and the rendered PNG for one figure kind."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir is not None else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    if figure == "convergence":
        table, renderer = convergence_table(run_dir), render_convergence
    elif figure == "hit":
        table, renderer = hit_table(run_dir), render_hit
    elif figure == "latency":
        table, renderer = latency_table(run_dir), render_latency
    else:
        raise ValueError(f"unknown figure {figure!r}; expected one of {FIGURES}")
    csv_path = out_dir / f"{figure}.csv"
    png_path = out_dir / f"{figure}.png"
    table.to_csv(csv_path, index=False)
    renderer(table, png_path)
    return csv_path, png_path
