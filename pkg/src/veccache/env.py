"""Decentralized cache-placement environment over the road-grid world.

Each time slot every vehicle requests one task. Requests served out of an
in-range cache only pay the content fetch; everything else is computed
locally or offloaded (some requests must be offloaded when a service node
is reachable), after which the vehicle may push the fresh result content to
a service node of its choice. Rewards combine a hit bonus, the realized
latency and a penalty for infeasible cache placements.

Requests and hit checks for the *next* slot are resolved eagerly at the end
of each step, so policies can read ``hit_mask`` before choosing actions.
Vehicles whose request hits produce no new content, so their cache action
has no effect and incurs no penalty that slot; it is still recorded as
submitted. Rewriting it to "do nothing" instead would correlate action 0
with the hit bonus in the replay data and poison the learned values.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import graph, taskcache
from .world import ChannelParams, ConfigError, GridConfig, World

NO_CACHE = 0  # action 0: do not cache; action n in 1..N targets SN n-1


@dataclass(frozen=True)
class EnvConfig:
    hit_bonus: float = 2.0
    cache_penalty: float = -0.5
    episode_ts: int = 100
    offload_policy: str = "random"   # "random": per-request coin flip; "greedy": offload iff faster
    p_offload: float = 0.5
    b_max: int = 8

    def __post_init__(self):
        if self.offload_policy not in ("random", "greedy"):
            raise ConfigError(f"unknown offload_policy {self.offload_policy!r}")
        if not 0.0 <= self.p_offload <= 1.0:
            raise ConfigError("p_offload must lie in [0, 1]")
        if self.episode_ts < 1:
            raise ConfigError("episode_ts must be >= 1")


@dataclass
class Observation:
    """One agent's view: raw values for logging, normalized for learning."""

    raw: np.ndarray
    normalized: np.ndarray


@dataclass
class EnvView:
    """Everything a policy needs at the start of a slot."""

    obs_raw: np.ndarray      # (M, 2 + K + N)
    obs_norm: np.ndarray
    idx: np.ndarray          # (M, b_max + 1) padded local-region indices
    mask: np.ndarray         # (M, b_max + 1)
    hit_mask: np.ndarray     # (M,) True where the pending request will hit
    requests: np.ndarray     # (M,) pending task indices


@dataclass
class StepOutcome:
    rewards: np.ndarray
    latencies: np.ndarray
    hits: np.ndarray
    offloaded: np.ndarray
    penalties: np.ndarray
    actions: np.ndarray      # effective actions after hit masking
    system_reward: float


TRACE_COLUMNS = ("t", "m", "k", "e_m", "w_m", "T_m", "action", "pl", "r_m")


class VecCacheEnv:
    """Simulation instance owning the world, the catalog and the caches."""

    def __init__(self, grid_cfg: GridConfig, channel: ChannelParams,
                 task_cfg: taskcache.TaskConfig, env_cfg: EnvConfig, seed: int):
        self.grid_cfg = grid_cfg
        self.task_cfg = task_cfg
        self.env_cfg = env_cfg
        if isinstance(seed, np.random.SeedSequence):
            ss = seed
        else:
            ss = np.random.SeedSequence([int(seed), 0])
        world_seed, task_seed, env_seed = ss.spawn(3)
        self.world = World(grid_cfg, channel, np.random.default_rng(world_seed))
        self.task_rng = np.random.default_rng(task_seed)
        self.env_rng = np.random.default_rng(env_seed)

        self.catalog = taskcache.make_catalog(task_cfg, self.task_rng)
        self.popularity = taskcache.PopularityModel.fresh(
            task_cfg.content_types, task_cfg.zipf_delta,
            task_cfg.refresh_period_ts, self.task_rng)
        content_bits = np.array([t.content_bits for t in self.catalog])
        caps = taskcache.sn_capacities_bits(self.world.n_rsus, self.world.n_vus, task_cfg)
        self.cache = taskcache.CacheState(caps, content_bits)
        self.cpu_hz = taskcache.sn_cpu_hz(self.world.n_rsus, self.world.n_vus, task_cfg)
        self.vu_cpu_hz = task_cfg.vu_cpu_ghz * 1e9

        self.t = 0
        self.trace: list[tuple] = []
        self._pending = None

    # --- dimensions ----------------------------------------------------

    @property
    def n_agents(self) -> int:
        return self.world.n_vus

    @property
    def n_sns(self) -> int:
        return self.world.n_sns

    @property
    def n_actions(self) -> int:
        return self.n_sns + 1

    @property
    def n_tasks(self) -> int:
        return len(self.catalog)

    @property
    def obs_dim(self) -> int:
        return 2 + self.n_tasks + self.n_sns

    # --- observation ---------------------------------------------------

    def observe(self, m: int) -> Observation:
        """Layout: [x, y, own cache flags (K), remaining SN capacities (N)]."""
        v = self.world.vehicles[m]
        own = self.world.sn_of_vehicle(m)
        raw = np.concatenate((
            [v.x, v.y],
            self.cache.cached[own].astype(float),
            self.cache.free_bits,
        ))
        norm = np.concatenate((
            [v.x / self.grid_cfg.road_length_m, v.y / self.grid_cfg.road_length_m],
            self.cache.cached[own].astype(float),
            self.cache.free_bits / self.cache.capacity_bits,
        ))
        return Observation(raw=raw, normalized=norm)

    def _observe_all(self) -> tuple[np.ndarray, np.ndarray]:
        obs = [self.observe(m) for m in range(self.n_agents)]
        return (np.stack([o.raw for o in obs]),
                np.stack([o.normalized for o in obs]))

    def _build_view(self) -> EnvView:
        obs_raw, obs_norm = self._observe_all()
        # no point padding beyond the largest possible neighborhood
        b_eff = min(self.env_cfg.b_max, self.n_agents - 1)
        idx, mask = graph.build_local_index(
            self.world.v2v_neighbor_sets(), self.world.vu_positions(), b_eff)
        requests, hits, serving = self._pending
        return EnvView(obs_raw=obs_raw, obs_norm=obs_norm, idx=idx, mask=mask,
                       hit_mask=hits, requests=requests)

    def _presample_requests(self):
        """Draw next-slot requests and resolve their hit status now.

        Positions and caches cannot change before the next step consumes
        these, so resolving early is equivalent and lets policies mask the
        agents that will take no caching action.
        """
        m_count = self.n_agents
        requests = np.array([taskcache.sample_request(self.popularity, self.task_rng)
                             for _ in range(m_count)])
        hits = np.zeros(m_count, dtype=bool)
        serving = np.full(m_count, -1)
        for m in range(m_count):
            sn = taskcache.find_content(m, int(requests[m]), self.world, self.cache)
            if sn is not None:
                hits[m] = True
                serving[m] = sn
        self._pending = (requests, hits, serving)

    # --- episode flow ---------------------------------------------------

    def reset(self) -> EnvView:
        self.t = 0
        self.trace = []
        self.cache.flush()
        self._presample_requests()
        return self._build_view()

    def _decide_offload(self, m: int, task: taskcache.TaskSpec) -> tuple[bool, int]:
        """Whether the miss is offloaded and to which SN (the nearest)."""
        own = self.world.sn_of_vehicle(m)
        reachable = self.world.in_range[m].copy()
        reachable[own] = False
        if not reachable.any():
            return False, -1
        dist = np.where(reachable, self.world.dist_vu_sn[m], np.inf)
        nearest = int(np.argmin(dist))
        if self.env_cfg.offload_policy == "random":
            return bool(self.env_rng.random() < self.env_cfg.p_offload), nearest
        offload_s = taskcache.offload_latency(
            task, self.world.uplink_rate(m, nearest), self.cpu_hz[nearest],
            self.world.downlink_rate(nearest, m))
        return offload_s < taskcache.local_latency(task, self.vu_cpu_hz), nearest

    def apply_action(self, m: int, action: int, task_idx: int) -> float:
        """Execute one cache placement; returns the penalty incurred."""
        if not 0 <= action <= self.n_sns:
            raise ValueError(f"action {action} outside 0..{self.n_sns}")
        if action == NO_CACHE:
            return 0.0
        sn = action - 1
        if not self.world.in_range[m, sn]:
            return self.env_cfg.cache_penalty
        if self.cache.cached[sn, task_idx]:
            return 0.0  # already present: same as not caching
        result = self.cache.try_cache(sn, task_idx)
        if result is taskcache.CacheResult.REJECTED_CAPACITY:
            return self.env_cfg.cache_penalty
        return 0.0

    def reward(self, hit: bool, latency_s: float, penalty: float) -> float:
        return float(hit) * self.env_cfg.hit_bonus - latency_s + penalty

    def step(self, actions: np.ndarray) -> tuple[StepOutcome, EnvView]:
        """Advance one slot. See the module docstring for the phase order."""
        actions = np.asarray(actions, dtype=int)
        if actions.shape != (self.n_agents,):
            raise ValueError(f"expected {self.n_agents} actions, got {actions.shape}")
        if actions.min() < 0 or actions.max() > self.n_sns:
            raise ValueError("action outside the SN range")

        requests, hits, serving = self._pending
        m_count = self.n_agents
        latencies = np.zeros(m_count)
        offloaded = np.zeros(m_count, dtype=bool)

        for m in range(m_count):
            task = self.catalog[int(requests[m])]
            if hits[m]:
                sn = int(serving[m])
                if sn == self.world.sn_of_vehicle(m):
                    latencies[m] = 0.0  # served from the local cache
                else:
                    latencies[m] = taskcache.fetch_latency(
                        task, self.world.downlink_rate(sn, m))
            else:
                do_offload, nearest = self._decide_offload(m, task)
                offloaded[m] = do_offload
                if do_offload:
                    latencies[m] = taskcache.offload_latency(
                        task, self.world.uplink_rate(m, nearest),
                        self.cpu_hz[nearest], self.world.downlink_rate(nearest, m))
                else:
                    latencies[m] = taskcache.local_latency(task, self.vu_cpu_hz)

        penalties = np.zeros(m_count)
        for m in range(m_count):
            if not hits[m]:
                penalties[m] = self.apply_action(m, int(actions[m]), int(requests[m]))

        rewards = hits * self.env_cfg.hit_bonus - latencies + penalties
        outcome = StepOutcome(
            rewards=rewards, latencies=latencies, hits=hits.copy(),
            offloaded=offloaded, penalties=penalties, actions=actions.copy(),
            system_reward=float(rewards.sum()),
        )

        for m in range(m_count):
            self.trace.append((self.t, m, int(requests[m]), int(hits[m]),
                               int(offloaded[m]), latencies[m], int(actions[m]),
                               penalties[m], rewards[m]))

        self.t += 1
        if self.t % self.task_cfg.refresh_period_ts == 0:
            self.popularity.refresh(self.task_rng)
            self.cache.flush()

        self.world.step()
        self._presample_requests()
        return outcome, self._build_view()

    # --- logging ---------------------------------------------------------

    def write_trace(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            writer.writerows(self.trace)
