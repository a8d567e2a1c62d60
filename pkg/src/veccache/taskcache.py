"""Task catalog with Zipf popularity, cache bookkeeping and latency formulas.

Sizes are kept in bits and compute demands in CPU cycles; one megabyte is
8e6 bits (decimal convention, matching how capacities like "100 MB" are
usually quoted in link budgets).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .world import World

BITS_PER_MB = 8e6
CYCLES_PER_MEGACYCLE = 1e6


class CatalogError(ValueError):
    """Raised for an empty or inconsistent task catalog."""


@dataclass(frozen=True)
class TaskSpec:
    """One task type: input payload, compute demand, and result-content size."""

    input_bits: float
    cpu_cycles: float
    content_bits: float

    def __post_init__(self):
        if self.input_bits <= 0 or self.content_bits <= 0 or self.cpu_cycles < 0:
            raise CatalogError("task sizes must be positive (cycles may be zero)")


@dataclass(frozen=True)
class TaskConfig:
    """Catalog generator settings."""

    content_types: int = 10
    input_mb_range: tuple[float, float] = (50.0, 80.0)
    content_mb_range: tuple[float, float] = (6.0, 16.0)
    megacycles: float = 50.0
    zipf_delta: float = 0.5
    refresh_period_ts: int = 50
    rsu_cache_mb: float = 100.0
    vu_cache_mb: float = 50.0
    rsu_cpu_ghz: float = 1.0
    vu_cpu_ghz: float = 0.8

    def __post_init__(self):
        if self.content_types < 1:
            raise CatalogError("content_types must be >= 1")
        if self.zipf_delta < 0:
            raise CatalogError("zipf_delta must be >= 0")
        if self.refresh_period_ts < 1:
            raise CatalogError("refresh_period_ts must be >= 1")


def make_catalog(cfg: TaskConfig, rng: np.random.Generator) -> list[TaskSpec]:
    tasks = []
    for _ in range(cfg.content_types):
        tasks.append(TaskSpec(
            input_bits=float(rng.uniform(*cfg.input_mb_range)) * BITS_PER_MB,
            cpu_cycles=cfg.megacycles * CYCLES_PER_MEGACYCLE,
            content_bits=float(rng.uniform(*cfg.content_mb_range)) * BITS_PER_MB,
        ))
    return tasks


def zipf_probs(ranking: np.ndarray, delta: float) -> np.ndarray:
    """Request probabilities q_z proportional to rank^-delta, normalized.

    ``ranking[z]`` is the 1-based popularity rank of task z.
    """
    ranking = np.asarray(ranking)
    if ranking.size == 0:
        raise CatalogError("empty catalog has no popularity distribution")
    if sorted(ranking.tolist()) != list(range(1, ranking.size + 1)):
        raise CatalogError("ranking must be a permutation of 1..K")
    if delta < 0:
        raise CatalogError("zipf exponent must be >= 0")
    weights = ranking.astype(float) ** (-delta)
    return weights / weights.sum()


@dataclass
class PopularityModel:
    """Zipf popularity over the task catalog with periodic re-ranking."""

    ranking: np.ndarray
    delta: float
    refresh_period_ts: int
    _probs: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def fresh(cls, n_tasks: int, delta: float, refresh_period_ts: int,
              rng: np.random.Generator) -> "PopularityModel":
        ranking = rng.permutation(n_tasks) + 1
        return cls(ranking=ranking, delta=delta, refresh_period_ts=refresh_period_ts)

    def probs(self) -> np.ndarray:
        if self._probs is None:
            self._probs = zipf_probs(self.ranking, self.delta)
        return self._probs

    def refresh(self, rng: np.random.Generator):
        self.ranking = rng.permutation(len(self.ranking)) + 1
        self._probs = None


def sample_request(pop: PopularityModel, rng: np.random.Generator) -> int:
    """Draw the task index a vehicle requests this slot."""
    return int(rng.choice(len(pop.ranking), p=pop.probs()))


class CacheResult(enum.Enum):
    STORED = "stored"
    REJECTED_CAPACITY = "rejected_capacity"


class CacheState:
    """Which contents each SN holds, with hard per-SN capacity accounting.

    Invariant maintained by every operation: for each SN, the bits of its
    cached contents never exceed its total capacity, and ``free_bits``
    always equals capacity minus the cached total.
    """

    def __init__(self, capacity_bits: np.ndarray, content_bits: np.ndarray):
        self.capacity_bits = np.asarray(capacity_bits, dtype=float).copy()
        self.content_bits = np.asarray(content_bits, dtype=float).copy()
        self.cached = np.zeros((len(self.capacity_bits), len(self.content_bits)), dtype=bool)
        self.free_bits = self.capacity_bits.copy()

    @property
    def n_sns(self) -> int:
        return len(self.capacity_bits)

    @property
    def n_tasks(self) -> int:
        return len(self.content_bits)

    def try_cache(self, sn: int, task: int) -> CacheResult:
        """Insert content ``task`` at SN ``sn`` if it fits; duplicates are no-ops."""
        if self.cached[sn, task]:
            return CacheResult.STORED
        size = self.content_bits[task]
        if size > self.free_bits[sn]:
            return CacheResult.REJECTED_CAPACITY
        self.cached[sn, task] = True
        self.free_bits[sn] -= size
        return CacheResult.STORED

    def flush(self):
        """Drop every cached content (catalog turnover)."""
        self.cached[:] = False
        self.free_bits = self.capacity_bits.copy()

    def reset_content_sizes(self, content_bits: np.ndarray):
        self.content_bits = np.asarray(content_bits, dtype=float).copy()
        self.flush()


def sn_capacities_bits(n_rsus: int, n_vus: int, cfg: TaskConfig) -> np.ndarray:
    caps = np.empty(n_rsus + n_vus)
    caps[:n_rsus] = cfg.rsu_cache_mb * BITS_PER_MB
    caps[n_rsus:] = cfg.vu_cache_mb * BITS_PER_MB
    return caps


def sn_cpu_hz(n_rsus: int, n_vus: int, cfg: TaskConfig) -> np.ndarray:
    cpus = np.empty(n_rsus + n_vus)
    cpus[:n_rsus] = cfg.rsu_cpu_ghz * 1e9
    cpus[n_rsus:] = cfg.vu_cpu_ghz * 1e9
    return cpus


def find_content(m: int, task: int, world: World, cache: CacheState) -> int | None:
    """Locate the requested content on an in-range SN.

    Returns the serving SN index (the nearest one holding the content, ties
    to the lower index) or None on a miss. The vehicle's own cache always
    counts: its own SN is at distance zero.
    """
    candidates = world.in_range[m] & cache.cached[:, task]
    if not candidates.any():
        return None
    dist = np.where(candidates, world.dist_vu_sn[m], np.inf)
    return int(np.argmin(dist))


def local_latency(task: TaskSpec, cpu_hz: float) -> float:
    """Seconds to compute the task on the requesting vehicle."""
    if cpu_hz <= 0:
        raise ValueError("cpu_hz must be positive")
    return task.cpu_cycles / cpu_hz


def offload_latency(task: TaskSpec, uplink_bps: float, cpu_hz: float,
                    downlink_bps: float) -> float:
    """Upload + remote compute + result fetch, in seconds."""
    return (task.input_bits / uplink_bps
            + task.cpu_cycles / cpu_hz
            + task.content_bits / downlink_bps)


def fetch_latency(task: TaskSpec, downlink_bps: float) -> float:
    return task.content_bits / downlink_bps


def total_latency(hit: bool, offloaded: bool, local_s: float, offload_s: float,
                  fetch_s: float) -> float:
    """Per-slot task latency: fetch on a hit, otherwise local or offload path."""
    if hit:
        return fetch_s
    return offload_s if offloaded else local_s
