import dataclasses

import numpy as np
import pytest

from veccache.config import desk_config, parse_config, desk_config_dict
from veccache.env import EnvConfig, VecCacheEnv
from veccache.taskcache import TaskConfig
from veccache.world import ChannelParams, GridConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_grid(**overrides) -> GridConfig:
    base = dict(road_length_m=1000.0, rsu_count=4, vu_count=6, turn_prob=0.4)
    base.update(overrides)
    return GridConfig(**base)


def no_fading_channel(**overrides) -> ChannelParams:
    return ChannelParams.from_dbm(fading_enabled=False, **overrides)


def small_env(seed=0, fading=True, **env_overrides) -> VecCacheEnv:
    grid = small_grid()
    channel = ChannelParams.from_dbm(fading_enabled=fading)
    tasks = TaskConfig(content_types=8)
    env_cfg = EnvConfig(**env_overrides)
    return VecCacheEnv(grid, channel, tasks, env_cfg, seed=seed)
