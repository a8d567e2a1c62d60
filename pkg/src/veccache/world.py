"""Manhattan road grid, vehicle mobility and the wireless links between nodes.

Units are SI throughout: meters, seconds, watts, Hz, bit/s. The road network
is a square torus (vehicles leaving one edge re-enter on the opposite one),
which keeps the vehicle density constant over arbitrarily long runs.

Service nodes (SNs) are indexed 0..N-1 with the L roadside units first and
the M vehicles after them, so SN ``L + m`` is vehicle ``m`` itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

HEADINGS = ("E", "W", "N", "S")
_HEADING_SIGN = {"E": 1.0, "W": -1.0, "N": 1.0, "S": -1.0}
_HORIZONTAL = ("E", "W")
_PERPENDICULAR = {"E": ("N", "S"), "W": ("N", "S"), "N": ("E", "W"), "S": ("E", "W")}

#: Distances below this are clamped before evaluating path loss, so the
#: gain never diverges for co-located nodes.
MIN_GAIN_DISTANCE_M = 1.0


class ConfigError(ValueError):
    """A configuration value is outside its legal domain."""


class UnreachableLinkError(RuntimeError):
    """A link rate was requested for a pair outside communication range."""


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def noise_power_watt(noise_dbm_per_hz: float, bandwidth_hz: float) -> float:
    """Total thermal noise power over a channel of the given bandwidth."""
    return dbm_to_watt(noise_dbm_per_hz) * bandwidth_hz


@dataclass(frozen=True)
class GridConfig:
    """Static description of the road grid and the node population."""

    road_length_m: float = 1000.0
    lanes_per_direction: int = 1
    rsu_count: int = 16
    vu_count: int = 20
    turn_prob: float = 0.4
    v_mean_range_ms: tuple[float, float] = (10.0, 15.0)
    v_max_ms: float = 20.0
    comm_range_rsu_m: float = 400.0
    comm_range_v2v_m: float = 300.0
    mean_reversion: float = 0.5     # pull of the velocity process toward its mean
    velocity_noise_ms: float = 1.0  # std-dev of the per-step velocity perturbation
    ts_duration_s: float = 1.0

    def __post_init__(self):
        if self.road_length_m <= 0:
            raise ConfigError("road_length_m must be positive")
        if self.rsu_count < 1:
            raise ConfigError("rsu_count must be >= 1")
        if self.vu_count < 1:
            raise ConfigError("vu_count must be >= 1")
        if not 0.0 <= self.turn_prob <= 1.0:
            raise ConfigError("turn_prob must lie in [0, 1]")
        lo, hi = self.v_mean_range_ms
        if lo <= 0 or hi < lo:
            raise ConfigError("v_mean_range_ms must be positive and ordered")
        if self.comm_range_rsu_m <= 0 or self.comm_range_v2v_m <= 0:
            raise ConfigError("communication ranges must be positive")
        if not 0.0 < self.mean_reversion <= 1.0:
            raise ConfigError("mean_reversion must lie in (0, 1]")


@dataclass(frozen=True)
class ChannelParams:
    """Link-budget constants shared by all nodes."""

    bandwidth_hz: float = 10e6
    noise_w: float = noise_power_watt(-174.0, 10e6)
    tx_power_vu_w: float = dbm_to_watt(23.0)
    tx_power_rsu_w: float = dbm_to_watt(40.0)
    pathloss_exponent: float = 3.0
    pathloss_ref_gain: float = 1e-3  # gain at 1 m
    fading_enabled: bool = True

    def __post_init__(self):
        if self.bandwidth_hz <= 0 or self.noise_w <= 0:
            raise ConfigError("bandwidth and noise power must be positive")
        if self.tx_power_vu_w <= 0 or self.tx_power_rsu_w <= 0:
            raise ConfigError("transmit powers must be positive")
        if self.pathloss_exponent < 2.0:
            raise ConfigError("pathloss_exponent must be >= 2")

    @classmethod
    def from_dbm(cls, bandwidth_hz=10e6, noise_dbm_per_hz=-174.0,
                 tx_power_dbm_vu=23.0, tx_power_dbm_rsu=40.0,
                 pathloss_exponent=3.0, pathloss_ref_gain=1e-3,
                 fading_enabled=True) -> "ChannelParams":
        return cls(
            bandwidth_hz=bandwidth_hz,
            noise_w=noise_power_watt(noise_dbm_per_hz, bandwidth_hz),
            tx_power_vu_w=dbm_to_watt(tx_power_dbm_vu),
            tx_power_rsu_w=dbm_to_watt(tx_power_dbm_rsu),
            pathloss_exponent=pathloss_exponent,
            pathloss_ref_gain=pathloss_ref_gain,
            fading_enabled=fading_enabled,
        )


@dataclass
class VehicleState:
    """One vehicle: position on the road graph plus its velocity process."""

    x: float
    y: float
    velocity: float
    heading: str
    mean_velocity: float


def _grid_dims(count: int) -> tuple[int, int]:
    """Most-square rows x cols factorisation with rows <= cols."""
    rows = int(math.isqrt(count))
    while count % rows:
        rows -= 1
    return rows, count // rows


def place_rsus(cfg: GridConfig) -> np.ndarray:
    """Uniform RSU grid over the square road network.

    A perfect-square count gives the classic sqrt(L) x sqrt(L) layout with
    pitch ``road/sqrt(L)`` and half-pitch offset; other counts fall back to
    the most-square rows x cols arrangement so RSU sweeps stay uniform.
    Returns an (L, 2) array ordered row-major (y outer, x inner).
    """
    rows, cols = _grid_dims(cfg.rsu_count)
    pitch_x = cfg.road_length_m / cols
    pitch_y = cfg.road_length_m / rows
    xs = pitch_x * (np.arange(cols) + 0.5)
    ys = pitch_y * (np.arange(rows) + 0.5)
    grid = [(x, y) for y in ys for x in xs]
    return np.array(grid, dtype=float)


@dataclass(frozen=True)
class RoadGrid:
    """Coordinates of the vertical / horizontal roads; RSUs sit on every crossing."""

    xs: np.ndarray
    ys: np.ndarray
    length_m: float

    @classmethod
    def from_config(cls, cfg: GridConfig) -> "RoadGrid":
        positions = place_rsus(cfg)
        return cls(
            xs=np.unique(positions[:, 0]),
            ys=np.unique(positions[:, 1]),
            length_m=cfg.road_length_m,
        )

    def contains(self, x: float, y: float, tol: float = 1e-6) -> bool:
        on_vertical = np.any(np.abs(self.xs - x) < tol)
        on_horizontal = np.any(np.abs(self.ys - y) < tol)
        return bool(on_vertical or on_horizontal)


def init_vehicle(cfg: GridConfig, grid: RoadGrid, rng: np.random.Generator) -> VehicleState:
    """Spawn a vehicle at a uniform position on a uniformly chosen road."""
    n_h, n_v = len(grid.ys), len(grid.xs)
    road = int(rng.integers(n_h + n_v))
    offset = float(rng.uniform(0.0, grid.length_m))
    if road < n_h:
        y = float(grid.ys[road])
        heading = "E" if rng.random() < 0.5 else "W"
        x = offset
    else:
        x = float(grid.xs[road - n_h])
        heading = "N" if rng.random() < 0.5 else "S"
        y = offset
    v_mean = float(rng.uniform(*cfg.v_mean_range_ms))
    return VehicleState(x=x, y=y, velocity=v_mean, heading=heading, mean_velocity=v_mean)


def step_mobility(state: VehicleState, grid: RoadGrid, cfg: GridConfig,
                  rng: np.random.Generator) -> VehicleState:
    """Advance one time slot of the velocity process and grid motion.

    Velocity follows v' = v + k*(v_mean - v) + sigma*xi clipped to
    [0, v_max]. The vehicle then travels v'*dt along its heading; each
    crossing reached on the way triggers a turn onto a perpendicular road
    with probability ``turn_prob``. Positions wrap on the torus.
    """
    noise = cfg.velocity_noise_ms * rng.standard_normal() if cfg.velocity_noise_ms > 0 else 0.0
    v_new = state.velocity + cfg.mean_reversion * (state.mean_velocity - state.velocity) + noise
    v_new = float(np.clip(v_new, 0.0, cfg.v_max_ms))

    length = grid.length_m
    x, y, heading = state.x, state.y, state.heading
    remaining = v_new * cfg.ts_duration_s
    while remaining > 1e-12:
        horizontal = heading in _HORIZONTAL
        crossings = grid.xs if horizontal else grid.ys
        pos = x if horizontal else y
        sign = _HEADING_SIGN[heading]
        ahead = np.mod((crossings - pos) * sign, length)
        ahead[ahead < 1e-9] = length  # a crossing we are standing on is a full lap away
        gap = float(ahead.min())
        if gap > remaining:
            pos = (pos + sign * remaining) % length
            if horizontal:
                x = pos
            else:
                y = pos
            break
        pos = (pos + sign * gap) % length
        if horizontal:
            x = pos
        else:
            y = pos
        remaining -= gap
        if rng.random() < cfg.turn_prob:
            heading = _PERPENDICULAR[heading][int(rng.integers(2))]
    return VehicleState(x=x, y=y, velocity=v_new, heading=heading,
                        mean_velocity=state.mean_velocity)


def channel_gain(distance_m: float, params: ChannelParams,
                 rng: np.random.Generator | None = None) -> float:
    """Link power gain: reference-gain path loss times optional Rayleigh fading."""
    d = max(distance_m, MIN_GAIN_DISTANCE_M)
    gain = params.pathloss_ref_gain * d ** (-params.pathloss_exponent)
    if params.fading_enabled:
        if rng is None:
            raise ValueError("fading draws require an rng")
        gain *= float(rng.exponential(1.0))
    return gain


def shannon_rate(bandwidth_hz: float, tx_power_w: float, gain: float, noise_w: float) -> float:
    """Achievable rate in bit/s of an AWGN link."""
    return bandwidth_hz * math.log2(1.0 + tx_power_w * gain / noise_w)


def neighbors_in_range(positions: np.ndarray, range_m: float) -> list[np.ndarray]:
    """Symmetric within-range neighbor sets; no node is its own neighbor."""
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    within = (dist <= range_m) & ~np.eye(len(positions), dtype=bool)
    return [np.flatnonzero(row) for row in within]


class World:
    """Mutable simulation state: vehicle fleet, RSU grid and per-TS channel draws.

    A single World instance is owned by one environment; all randomness comes
    from the instance rng, so equal seeds give equal trajectories.
    """

    def __init__(self, cfg: GridConfig, channel: ChannelParams, rng: np.random.Generator):
        self.cfg = cfg
        self.channel = channel
        self.rng = rng
        self.rsu_positions = place_rsus(cfg)
        self.grid = RoadGrid(
            xs=np.unique(self.rsu_positions[:, 0]),
            ys=np.unique(self.rsu_positions[:, 1]),
            length_m=cfg.road_length_m,
        )
        self.vehicles = [init_vehicle(cfg, self.grid, rng) for _ in range(cfg.vu_count)]
        self.n_rsus = len(self.rsu_positions)
        self.n_vus = cfg.vu_count
        self.n_sns = self.n_rsus + self.n_vus
        self._fading_up = None
        self._fading_down = None
        self._draw_fading()
        self._refresh_geometry()

    # --- geometry -----------------------------------------------------

    def vu_positions(self) -> np.ndarray:
        return np.array([[v.x, v.y] for v in self.vehicles])

    def sn_positions(self) -> np.ndarray:
        return np.vstack([self.rsu_positions, self.vu_positions()])

    def sn_is_rsu(self, sn: int) -> bool:
        return sn < self.n_rsus

    def sn_of_vehicle(self, m: int) -> int:
        return self.n_rsus + m

    def _refresh_geometry(self):
        vu = self.vu_positions()
        sn = np.vstack([self.rsu_positions, vu])
        diff = vu[:, None, :] - sn[None, :, :]
        self.dist_vu_sn = np.hypot(diff[..., 0], diff[..., 1])  # (M, N)
        ranges = np.where(
            np.arange(self.n_sns) < self.n_rsus,
            self.cfg.comm_range_rsu_m,
            self.cfg.comm_range_v2v_m,
        )
        self.in_range = self.dist_vu_sn <= ranges[None, :]  # (M, N)

    def v2v_neighbor_sets(self) -> list[np.ndarray]:
        return neighbors_in_range(self.vu_positions(), self.cfg.comm_range_v2v_m)

    # --- channel ------------------------------------------------------

    def _draw_fading(self):
        if self.channel.fading_enabled:
            shape = (self.n_vus, self.n_sns)
            self._fading_up = self.rng.exponential(1.0, size=shape)
            self._fading_down = self.rng.exponential(1.0, size=shape)
        else:
            self._fading_up = None
            self._fading_down = None

    def _gain(self, m: int, n: int, up: bool) -> float:
        d = max(self.dist_vu_sn[m, n], MIN_GAIN_DISTANCE_M)
        gain = self.channel.pathloss_ref_gain * d ** (-self.channel.pathloss_exponent)
        if self.channel.fading_enabled:
            fade = self._fading_up if up else self._fading_down
            gain *= fade[m, n]
        return gain

    def uplink_rate(self, m: int, n: int) -> float:
        """Rate of vehicle m transmitting to SN n this slot, in bit/s."""
        if not self.in_range[m, n]:
            raise UnreachableLinkError(f"SN {n} out of range of vehicle {m}")
        return shannon_rate(self.channel.bandwidth_hz, self.channel.tx_power_vu_w,
                            self._gain(m, n, up=True), self.channel.noise_w)

    def downlink_rate(self, n: int, m: int) -> float:
        """Rate of SN n transmitting to vehicle m this slot, in bit/s."""
        if not self.in_range[m, n]:
            raise UnreachableLinkError(f"SN {n} out of range of vehicle {m}")
        tx = self.channel.tx_power_rsu_w if self.sn_is_rsu(n) else self.channel.tx_power_vu_w
        return shannon_rate(self.channel.bandwidth_hz, tx,
                            self._gain(m, n, up=False), self.channel.noise_w)

    # --- evolution ----------------------------------------------------

    def step(self):
        """One time slot: move every vehicle, then redraw small-scale fading."""
        self.vehicles = [step_mobility(v, self.grid, self.cfg, self.rng) for v in self.vehicles]
        self._draw_fading()
        self._refresh_geometry()

    def snapshot(self) -> dict:
        """State fingerprint used by determinism checks."""
        return {
            "positions": self.vu_positions(),
            "velocities": np.array([v.velocity for v in self.vehicles]),
            "headings": [v.heading for v in self.vehicles],
            "fading_up": None if self._fading_up is None else self._fading_up.copy(),
        }
