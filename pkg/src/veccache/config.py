"""Config file loading and the default parameter sets.

The config file is YAML with one section per subsystem; every key maps
one-to-one onto a field of the corresponding config dataclass. Validation
errors always name the offending ``section.key``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import yaml

from .env import EnvConfig
from .taskcache import TaskConfig
from .trainer import TrainConfig
from .world import ChannelParams, ConfigError, GridConfig

KMH_TO_MS = 1.0 / 3.6


@dataclass(frozen=True)
class SimConfig:
    grid: GridConfig
    channel: ChannelParams
    tasks: TaskConfig
    env: EnvConfig
    train: TrainConfig
    seed: int = 0


def default_config_dict() -> dict:
    """Full-scale defaults (20 vehicles, 16 RSUs, 10 MHz, Zipf 0.5, ...)."""
    return {
        "world": {
            "road_length_m": 1000.0,
            "lanes_per_direction": 1,
            "rsu_count": 16,
            "vu_count": 20,
            "turn_prob": 0.4,
            "v_mean_kmh_range": [36.0, 54.0],
            "v_max_kmh": 72.0,
            "ranges_m": {"rsu": 400.0, "v2v": 300.0},
            "bandwidth_hz": 10e6,
            "noise_dbm_per_hz": -174.0,
            "tx_power_dbm_vu": 23.0,
            "tx_power_dbm_rsu": 40.0,
            "pathloss_alpha": 3.0,
            "pathloss_ref_gain": 1e-3,
            "fading_enabled": True,
            "mean_reversion": 0.5,
            "velocity_noise_ms": 1.0,
            "ts_duration_s": 1.0,
        },
        "tasks": {
            "content_types": 10,
            "d_range_mb": [50.0, 80.0],
            "b_range_mb": [6.0, 16.0],
            "s_megacycles": 50.0,
            "zipf_delta": 0.5,
            "refresh_period": 50,
            "cache_capacity_mb": {"rsu": 100.0, "vu": 50.0},
            "compute_ghz": {"rsu": 1.0, "vu": 0.8},
        },
        "env": {
            "hit_bonus": 2.0,
            "cache_penalty": -0.5,
            "episode_ts": 100,
            "offload_policy": "random",
            "p_offload": 0.5,
            "b_max": 8,
        },
        "train": {
            "gamma": 0.9,
            "batch_size": 128,
            "lr": 0.001,
            "buffer_capacity": 2000,
            "lambda_kl": 0.03,
            "target_sync_period": 200,
            "eps_start": 1.0,
            "eps_end": 0.05,
            "eps_decay_frac": 0.6,
            "episodes": 500,
            "feature_dim": 128,
            "heads": 8,
            "encoder_hidden": 128,
            "q_hidden": 128,
            "conv_layers": 2,
            "shared_weights": True,
        },
        "seed": 0,
    }


def desk_config_dict() -> dict:
    """Small everything: the CPU-budget profile used by the trend suites."""
    cfg = default_config_dict()
    cfg["world"].update({"rsu_count": 4, "vu_count": 6})
    cfg["tasks"].update({"content_types": 10})
    cfg["train"].update({
        "feature_dim": 32, "heads": 4, "encoder_hidden": 64, "q_hidden": 64,
        "batch_size": 32, "episodes": 500,
    })
    return cfg


def _take(section: dict, section_name: str, key: str, default=None, required=False):
    if key in section:
        return section.pop(key)
    if required:
        raise ConfigError(f"missing config key {section_name}.{key}")
    return default


def _reject_unknown(section: dict, section_name: str):
    if section:
        raise ConfigError(f"unknown config key {section_name}.{sorted(section)[0]}")


def parse_config(data: dict) -> SimConfig:
    data = {k: (dict(v) if isinstance(v, dict) else v) for k, v in dict(data).items()}
    world = data.pop("world", {})
    tasks = data.pop("tasks", {})
    env = data.pop("env", {})
    train = data.pop("train", {})
    seed = data.pop("seed", 0)
    _reject_unknown(data, "top-level")

    defaults = default_config_dict()

    def w(key, required=False):
        return _take(world, "world", key, defaults["world"].get(key), required)

    v_mean_kmh = w("v_mean_kmh_range")
    ranges = w("ranges_m")
    try:
        grid = GridConfig(
            road_length_m=float(w("road_length_m")),
            lanes_per_direction=int(w("lanes_per_direction")),
            rsu_count=int(w("rsu_count")),
            vu_count=int(w("vu_count")),
            turn_prob=float(w("turn_prob")),
            v_mean_range_ms=(v_mean_kmh[0] * KMH_TO_MS, v_mean_kmh[1] * KMH_TO_MS),
            v_max_ms=float(w("v_max_kmh")) * KMH_TO_MS,
            comm_range_rsu_m=float(ranges["rsu"]),
            comm_range_v2v_m=float(ranges["v2v"]),
            mean_reversion=float(w("mean_reversion")),
            velocity_noise_ms=float(w("velocity_noise_ms")),
            ts_duration_s=float(w("ts_duration_s")),
        )
        channel = ChannelParams.from_dbm(
            bandwidth_hz=float(w("bandwidth_hz")),
            noise_dbm_per_hz=float(w("noise_dbm_per_hz")),
            tx_power_dbm_vu=float(w("tx_power_dbm_vu")),
            tx_power_dbm_rsu=float(w("tx_power_dbm_rsu")),
            pathloss_exponent=float(w("pathloss_alpha")),
            pathloss_ref_gain=float(w("pathloss_ref_gain")),
            fading_enabled=bool(w("fading_enabled")),
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise ConfigError(f"malformed world config: {exc}") from exc
    _reject_unknown(world, "world")

    def t(key):
        return _take(tasks, "tasks", key, defaults["tasks"].get(key))

    caps = t("cache_capacity_mb")
    ghz = t("compute_ghz")
    try:
        task_cfg = TaskConfig(
            content_types=int(t("content_types")),
            input_mb_range=tuple(t("d_range_mb")),
            content_mb_range=tuple(t("b_range_mb")),
            megacycles=float(t("s_megacycles")),
            zipf_delta=float(t("zipf_delta")),
            refresh_period_ts=int(t("refresh_period")),
            rsu_cache_mb=float(caps["rsu"]),
            vu_cache_mb=float(caps["vu"]),
            rsu_cpu_ghz=float(ghz["rsu"]),
            vu_cpu_ghz=float(ghz["vu"]),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed tasks config: {exc}") from exc
    _reject_unknown(tasks, "tasks")

    def e(key):
        return _take(env, "env", key, defaults["env"].get(key))

    env_cfg = EnvConfig(
        hit_bonus=float(e("hit_bonus")),
        cache_penalty=float(e("cache_penalty")),
        episode_ts=int(e("episode_ts")),
        offload_policy=str(e("offload_policy")),
        p_offload=float(e("p_offload")),
        b_max=int(e("b_max")),
    )
    _reject_unknown(env, "env")

    def tr(key):
        return _take(train, "train", key, defaults["train"].get(key))

    try:
        train_cfg = TrainConfig(
            gamma=float(tr("gamma")),
            batch_size=int(tr("batch_size")),
            lr=float(tr("lr")),
            buffer_capacity=int(tr("buffer_capacity")),
            lambda_kl=float(tr("lambda_kl")),
            target_sync_period=int(tr("target_sync_period")),
            eps_start=float(tr("eps_start")),
            eps_end=float(tr("eps_end")),
            eps_decay_frac=float(tr("eps_decay_frac")),
            episodes=int(tr("episodes")),
            feature_dim=int(tr("feature_dim")),
            heads=int(tr("heads")),
            encoder_hidden=int(tr("encoder_hidden")),
            q_hidden=int(tr("q_hidden")),
            conv_layers=int(tr("conv_layers")),
            shared_weights=bool(tr("shared_weights")),
        )
    except ValueError as exc:
        raise ConfigError(f"malformed train config: {exc}") from exc
    _reject_unknown(train, "train")

    return SimConfig(grid=grid, channel=channel, tasks=task_cfg, env=env_cfg,
                     train=train_cfg, seed=int(seed))


def load_config(path) -> SimConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a mapping")
    return parse_config(data)


def default_config() -> SimConfig:
    return parse_config(default_config_dict())


def desk_config() -> SimConfig:
    return parse_config(desk_config_dict())


def write_default_config(path, desk: bool = False):
    data = desk_config_dict() if desk else default_config_dict()
    with open(path, "w") as fh:
        yaml.safe_dump(data, fh, sort_keys=False)
