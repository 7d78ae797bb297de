"""Gridded geometry, entities and demand generation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Set, Tuple

import numpy as np

from .config import ConfigError, SimConfig

Cell = Tuple[int, int]


@dataclass
class LeaderState:
    """A leader UAV.

    ``cell`` is the large-grid index ``(ix, iy)``. While the leader is at
    the depot (``eps_return``) the cell keeps its last airborne value and
    stays reserved so the leader can re-enter there.
    """

    id: int
    cell: Cell
    E_remain: float
    apps: frozenset
    eps_return: bool = False
    step: float = 0.0


@dataclass
class FollowerState:
    """A follower UAV sitting on small-grid ``cell``."""

    id: int
    cell: Cell
    leader_id: int
    apps: frozenset
    prev_leader_id: int
    delegations: frozenset = frozenset()
    step: float = 0.0
    recluster_leg: float = 0.0


@dataclass(frozen=True)
class IoTDevice:
    id: int
    position: Tuple[float, float]
    p_I: float


@dataclass
class DemandMatrix:
    """Per-slot requests; ``req_type[k]`` is the requested type or -1."""

    t: int
    req_type: np.ndarray
    C: int

    @property
    def matrix(self) -> np.ndarray:
        K = len(self.req_type)
        out = np.zeros((K, self.C), dtype=np.uint8)
        active = self.req_type >= 0
        out[np.nonzero(active)[0], self.req_type[active]] = 1
        return out

    @property
    def active(self) -> np.ndarray:
        return np.nonzero(self.req_type >= 0)[0]


@dataclass
class World:
    config: SimConfig
    device_xy: np.ndarray
    device_cell: np.ndarray
    leaders: List[LeaderState]
    followers: List[FollowerState]
    t: int = 0
    devices_by_cell: dict = field(default_factory=dict, repr=False)

    @property
    def devices(self) -> List[IoTDevice]:
        p = self.config.p_I
        return [IoTDevice(k, (float(x), float(y)), p) for k, (x, y) in enumerate(self.device_xy)]

    def snapshot(self) -> tuple:
        """Hashable summary of all mutable entity state."""
        return (
            self.t,
            tuple((L.cell, L.E_remain, tuple(sorted(L.apps)), L.eps_return) for L in self.leaders),
            tuple((F.cell, F.leader_id, tuple(sorted(F.apps)), tuple(sorted(F.delegations)))
                  for F in self.followers),
        )


# ---- geometry --------------------------------------------------------------

def large_center(cfg: SimConfig, cell: Cell) -> Tuple[float, float]:
    return ((cell[0] + 0.5) * cfg.l, (cell[1] + 0.5) * cfg.l)


def small_center(cfg: SimConfig, cell: Cell) -> Tuple[float, float]:
    return ((cell[0] + 0.5) * cfg.q, (cell[1] + 0.5) * cfg.q)


def large_of_small(cfg: SimConfig, cell: Cell) -> Cell:
    r = cfg.ratio
    return (cell[0] // r, cell[1] // r)


def small_cells_in(cfg: SimConfig, large: Cell) -> List[Cell]:
    r = cfg.ratio
    return [(large[0] * r + a, large[1] * r + b) for a in range(r) for b in range(r)]


def small_index(cfg: SimConfig, cell: Cell) -> int:
    return cell[0] * cfg.n_small + cell[1]


def distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Euclidean distance between two 3-D points."""
    return math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2)


def depot_point(cfg: SimConfig) -> Tuple[float, float, float]:
    x, y = cfg.depot
    return (x, y, 0.0)


def leader_point(world: World, m: int, *, airborne: Optional[bool] = None) -> Tuple[float, float, float]:
    """3-D position of leader ``m``; the depot when it has returned.

    ``airborne=True`` forces the (last) grid-cell position regardless of
    the return flag.
    """
    cfg = world.config
    L = world.leaders[m]
    at_depot = L.eps_return if airborne is None else not airborne
    if at_depot:
        return depot_point(cfg)
    x, y = large_center(cfg, L.cell)
    return (x, y, cfg.H_L)


def follower_point(world: World, n: int) -> Tuple[float, float, float]:
    cfg = world.config
    x, y = small_center(cfg, world.followers[n].cell)
    return (x, y, cfg.H_F)


def d_mn(world: World, m: int, n: int) -> float:
    return distance(leader_point(world, m), follower_point(world, n))


def d_ret(world: World, m: int) -> float:
    """Distance from leader ``m``'s grid position to the depot."""
    return distance(leader_point(world, m, airborne=True), depot_point(world.config))


def coverage_set(world: World, n: int) -> Set[int]:
    """Devices inside follower ``n``'s small grid."""
    idx = small_index(world.config, world.followers[n].cell)
    return set(world.devices_by_cell.get(idx, ()))


def coverage_owner(world: World) -> np.ndarray:
    """Serving follower per device, -1 for uncovered devices."""
    cfg = world.config
    lut = np.full(cfg.n_small * cfg.n_small, -1, dtype=np.int64)
    for F in world.followers:
        lut[small_index(cfg, F.cell)] = F.id
    return lut[world.device_cell]


# ---- construction ----------------------------------------------------------

def build_world(config: SimConfig, seed: int, device_seed: Optional[int] = None) -> World:
    """Scatter devices and place both UAV tiers; deterministic in ``seed``.

    The UAV layout and the devices use separate streams. ``device_seed``
    replaces the device stream only, so episodes can share one fleet
    layout while re-scattering the ground devices.
    """
    cfg = config.validate()
    layout_ss, device_ss = np.random.SeedSequence(seed).spawn(2)
    if device_seed is not None:
        device_ss = np.random.SeedSequence(device_seed)
    rng = np.random.default_rng(layout_ss)
    dev_rng = np.random.default_rng(device_ss)
    R = cfg.region_side

    per_swarm = -(-cfg.N // cfg.M)
    if per_swarm > cfg.ratio ** 2:
        raise ConfigError(
            f"cannot place {cfg.N} followers: {per_swarm} per swarm exceeds "
            f"{cfg.ratio ** 2} small grids per large grid")
    if cfg.M > cfg.n_large ** 2:
        raise ConfigError(f"cannot place {cfg.M} leaders on {cfg.n_large ** 2} large grids")

    device_xy = dev_rng.uniform(0.0, R, size=(cfg.K, 2))
    cells = np.minimum((device_xy // cfg.q).astype(np.int64), cfg.n_small - 1)
    device_cell = cells[:, 0] * cfg.n_small + cells[:, 1]

    n_large = cfg.n_large
    picks = rng.choice(n_large * n_large, size=cfg.M, replace=False)
    leader_cells = [(int(p) // n_large, int(p) % n_large) for p in picks]

    leader_apps = _round_robin_apps(rng.permutation(cfg.C), cfg.M, cfg.S_L)
    follower_apps = _round_robin_apps(rng.permutation(cfg.C), cfg.N, cfg.S_F)

    leaders = [LeaderState(m, leader_cells[m], cfg.E_cap, leader_apps[m]) for m in range(cfg.M)]
    followers: List[FollowerState] = []
    slots = {m: small_cells_in(cfg, leader_cells[m]) for m in range(cfg.M)}
    for m in range(cfg.M):
        members = list(range(m, cfg.N, cfg.M))
        chosen = rng.choice(len(slots[m]), size=len(members), replace=False)
        for n, c in zip(members, chosen):
            followers.append(FollowerState(n, slots[m][int(c)], m, follower_apps[n], prev_leader_id=m))
    followers.sort(key=lambda F: F.id)

    by_cell: dict = {}
    for k, c in enumerate(device_cell.tolist()):
        by_cell.setdefault(c, []).append(k)
    return World(cfg, device_xy, device_cell, leaders, followers, 0, by_cell)


def _round_robin_apps(perm: np.ndarray, n_agents: int, size: int) -> List[frozenset]:
    C = len(perm)
    return [frozenset(int(perm[(i * size + j) % C]) for j in range(size)) for i in range(n_agents)]


def generate_demand(world: World, t: int, rng: np.random.Generator) -> DemandMatrix:
    """Each device requests one uniformly drawn task type w.p. ``demand_prob``."""
    cfg = world.config
    active = rng.random(cfg.K) < cfg.demand_prob
    types = rng.integers(0, cfg.C, size=cfg.K)
    return DemandMatrix(t, np.where(active, types, -1), cfg.C)
