"""The six coupled games: state encoders, action sets, masks and rewards.

Leaders play energy replenishment (ER), application placement (AP) and
leader trajectory (LT); followers play dynamic clustering (DC), follower
trajectory (FT) and task delegation (TD).
"""

from __future__ import annotations

import itertools
import math
from array import array
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

from .config import SimConfig
from .dynamics import SlotLedger
from .world import Cell, World, large_of_small

StateKey = bytes

ER, AP, LT, DC, FT, TD = "ERSG", "APSG", "LTSG", "DCSG", "FTSG", "TDSG"
GAME_IDS = (ER, AP, LT, DC, FT, TD)

STAY, RETURN = 0, 1
DELEGATE, LOCAL = 0, 1
# forward, backward, left, right
MOVES: Tuple[Cell, ...] = ((0, 1), (0, -1), (-1, 0), (1, 0))
COVERAGE_PENALTY = -10.0
_DEPOT = 0xFFFF


# ---- encoding helpers -------------------------------------------------------

def _mask_bits(apps: Iterable[int]) -> int:
    bits = 0
    for c in apps:
        bits |= 1 << c
    return bits


def _apps_bytes(apps: Iterable[int], C: int) -> bytes:
    return _mask_bits(apps).to_bytes((C + 7) // 8, "little")


def _delta(world: World) -> List[int]:
    return [F.leader_id for F in world.followers]


def _leader_cells(world: World) -> List[int]:
    n = world.config.n_large
    return [_DEPOT if L.eps_return else L.cell[0] * n + L.cell[1] for L in world.leaders]


# ---- ERSG ---------------------------------------------------------------------

def energy_level(E_remain: float, E_unit: float) -> int:
    return int(math.ceil(E_remain / E_unit - 1e-12))


def ersg_state(world: World) -> StateKey:
    u = world.config.E_unit
    return array("H", [energy_level(L.E_remain, u) for L in world.leaders]).tobytes()


def ersg_actions(cfg: SimConfig | None = None) -> List[int]:
    return [STAY, RETURN]


def coverage_ok(world: World, strict: Optional[bool] = None) -> bool:
    """Whether every task type is installed on at least one airborne leader.

    ``strict`` evaluates the printed indicator form instead, i.e. counts
    only the leaders that returned this slot.
    """
    cfg = world.config
    strict = cfg.strict_coverage if strict is None else strict
    union = set()
    for L in world.leaders:
        if L.eps_return == strict:
            union |= L.apps
    return len(union) == cfg.C


def ersg_reward(world: World, m: int, covered: Optional[bool] = None) -> float:
    covered = coverage_ok(world) if covered is None else covered
    if not covered:
        return COVERAGE_PENALTY
    return float(world.leaders[m].eps_return)


# ---- APSG ---------------------------------------------------------------------

@lru_cache(maxsize=None)
def app_combinations(C: int, S_L: int) -> Tuple[frozenset, ...]:
    return tuple(frozenset(c) for c in itertools.combinations(range(C), S_L))


def apsg_state(world: World) -> StateKey:
    C = world.config.C
    return b"".join(_apps_bytes(L.apps, C) for L in world.leaders)


def apsg_actions(cfg: SimConfig) -> List[int]:
    return list(range(len(app_combinations(cfg.C, cfg.S_L))))


# Like clustering, placement actions are offsets from the leader's current
# application set in the fixed enumeration of S_L-subsets; action 0 keeps it.

def apsg_target(world: World, m: int, action: int) -> frozenset:
    cfg = world.config
    combos = app_combinations(cfg.C, cfg.S_L)
    return combos[(_combo_index(cfg.C, cfg.S_L, world.leaders[m].apps) + action) % len(combos)]


@lru_cache(maxsize=None)
def _combo_lookup(C: int, S_L: int) -> dict:
    return {c: i for i, c in enumerate(app_combinations(C, S_L))}


def _combo_index(C: int, S_L: int, apps: frozenset) -> int:
    return _combo_lookup(C, S_L).get(frozenset(apps), 0)


def apsg_reward(cumulative_bits: Sequence[float], m: int) -> float:
    """Bits computed by leader ``m`` so far in the episode."""
    return float(cumulative_bits[m])


# ---- LTSG ---------------------------------------------------------------------

def ltsg_state(world: World) -> StateKey:
    return array("H", _leader_cells(world) + _delta(world)).tobytes()


def ltsg_actions(cfg: SimConfig | None = None) -> List[int]:
    return list(range(len(MOVES)))


def ltsg_mask(world: World, m: int, blocked: Optional[set] = None) -> List[int]:
    """Moves that stay on the region and avoid ``blocked`` large grids.

    By default every other leader's grid (including the reserved grid of a
    leader at the depot) is blocked.
    """
    n = world.config.n_large
    if blocked is None:
        blocked = {L.cell for L in world.leaders if L.id != m}
    x, y = world.leaders[m].cell
    legal = []
    for a, (dx, dy) in enumerate(MOVES):
        c = (x + dx, y + dy)
        if 0 <= c[0] < n and 0 <= c[1] < n and c not in blocked:
            legal.append(a)
    return legal


def ltsg_reward(world: World, ledger: SlotLedger, m: int, energy_spent: float) -> float:
    swarm_bits = ledger.task_L[m] + sum(ledger.task_F[F.id] for F in world.followers
                                        if F.leader_id == m)
    if swarm_bits == 0 or energy_spent <= 0:
        return 0.0
    return float(swarm_bits / energy_spent)


# ---- DCSG ---------------------------------------------------------------------
# Actions are offsets relative to the current leader: action a selects leader
# (current + a) mod M, so action 0 keeps the present swarm. Given the state,
# which contains the current assignment, this is a relabelling of leader ids.

def dcsg_state(world: World) -> StateKey:
    return array("H", _leader_cells(world) + _delta(world)).tobytes()


def dcsg_actions(cfg: SimConfig) -> List[int]:
    return list(range(cfg.M))


def dcsg_target(world: World, n: int, action: int) -> int:
    return (world.followers[n].leader_id + action) % world.config.M


def dcsg_action_for(world: World, n: int, leader: int) -> int:
    return (leader - world.followers[n].leader_id) % world.config.M


def swarm_capacity(cfg: SimConfig) -> int:
    return cfg.ratio ** 2


def reach_distance(cfg: SimConfig) -> float:
    """Longest re-clustering flight that still leaves time for a grid step."""
    return cfg.v * cfg.slot_duration - cfg.q


def grid_gap(cfg: SimConfig, origin: Cell, large: Cell) -> float:
    """Horizontal distance from small grid ``origin`` to the nearest small-grid
    center of large grid ``large``."""
    x, y = ((origin[0] + 0.5) * cfg.q, (origin[1] + 0.5) * cfg.q)
    lo_x, lo_y = large[0] * cfg.l + cfg.q / 2, large[1] * cfg.l + cfg.q / 2
    hi_x, hi_y = lo_x + cfg.l - cfg.q, lo_y + cfg.l - cfg.q
    dx = max(lo_x - x, 0.0, x - hi_x)
    dy = max(lo_y - y, 0.0, y - hi_y)
    return math.hypot(dx, dy)


def dcsg_mask(world: World, n: int, origin: Optional[Cell] = None) -> List[int]:
    """Leaders follower ``n`` may join.

    Excludes leaders at the depot, full swarms, swarms farther than one
    slot of flight from ``origin`` (the follower's start-of-slot grid), and
    leaving a swarm of which ``n`` is the only member. Falls back to keeping
    the current leader.
    """
    cfg = world.config
    F = world.followers[n]
    origin = F.cell if origin is None else origin
    reach = reach_distance(cfg)
    counts = [0] * cfg.M
    for G in world.followers:
        counts[G.leader_id] += 1
    cur = world.leaders[F.leader_id]
    if not cur.eps_return and counts[F.leader_id] == 1:
        return [0]
    cap = swarm_capacity(cfg)
    legal = []
    for a in range(cfg.M):
        m = (F.leader_id + a) % cfg.M
        if world.leaders[m].eps_return:
            continue
        if a != 0 and (counts[m] >= cap
                       or grid_gap(cfg, origin, world.leaders[m].cell) > reach + 1e-9):
            continue
        legal.append(a)
    return legal or [0]


def dcsg_reward(ledger: SlotLedger) -> float:
    return float(ledger.effi)


# ---- FTSG ---------------------------------------------------------------------

def ftsg_state(world: World) -> StateKey:
    n = world.config.n_small
    cells = [F.cell[0] * n + F.cell[1] for F in world.followers]
    return array("H", cells + _delta(world)).tobytes()


def ftsg_actions(cfg: SimConfig | None = None) -> List[int]:
    return list(range(len(MOVES)))


def ftsg_mask(world: World, n: int, blocked: Optional[set] = None,
              contain: bool = True) -> List[int]:
    """Moves inside the region, inside the swarm's large grid when ``contain``,
    and off every ``blocked`` small grid (default: other followers' grids)."""
    cfg = world.config
    F = world.followers[n]
    if blocked is None:
        blocked = {G.cell for G in world.followers if G.id != n}
    size = cfg.n_small
    if contain:
        r = cfg.ratio
        hx, hy = world.leaders[F.leader_id].cell
        lo_x, lo_y, hi_x, hi_y = hx * r, hy * r, hx * r + r, hy * r + r
    else:
        lo_x, lo_y, hi_x, hi_y = 0, 0, size, size
    x, y = F.cell
    legal = []
    for a, (dx, dy) in enumerate(MOVES):
        cx, cy = x + dx, y + dy
        if lo_x <= cx < hi_x and lo_y <= cy < hi_y and (cx, cy) not in blocked:
            legal.append(a)
    return legal


def ftsg_reward(world: World, ledger: SlotLedger, n: int) -> float:
    task = ledger.task_F[n]
    if task == 0:
        return 0.0
    den = ledger.E_dele_F[n] + ledger.E_comp_F[n] + ledger.E_pro_F[n]
    return float(task / den)


# ---- TDSG ---------------------------------------------------------------------

def tdsg_state(world: World, n: int) -> StateKey:
    C = world.config.C
    F = world.followers[n]
    L = world.leaders[F.leader_id]
    return (_apps_bytes(L.apps, C) + _apps_bytes(F.apps, C)
            + array("H", _delta(world)).tobytes())


def tdsg_actions(cfg: SimConfig | None = None) -> List[int]:
    return [DELEGATE, LOCAL]


def delegation_set(world: World, n: int, action: int) -> frozenset:
    """Task types forwarded to the leader: all types not installed locally."""
    if action != DELEGATE:
        return frozenset()
    F = world.followers[n]
    return frozenset(range(world.config.C)) - F.apps


def tdsg_reward(world: World, ledger: SlotLedger, n: int) -> float:
    """Swarm bits per joule of delegation plus computing, summed over the
    active (leader, type) delegation pairs; with no active pair the single
    compute-only ratio of the follower and its leader."""
    cfg = world.config
    F = world.followers[n]
    m = F.leader_id
    tf, tl = ledger.task_F[n], ledger.task_L[m]
    num = tf + tl
    comp = cfg.xi * cfg.f_F ** 2 * tf + cfg.xi * cfg.f_L ** 2 * tl
    active = [t for t in ledger.T_dele[n].values() if t > 0]
    if not active:
        return float(num / comp) if comp > 0 else 0.0
    return float(sum(num / (cfg.p_F * t + comp) for t in active))


# ---- registry -----------------------------------------------------------------

@dataclass(frozen=True)
class GameSpec:
    game_id: str
    agents: str  # "leaders" or "followers"
    actions: Callable[[SimConfig], List[int]]
    state: Callable


GAMES = {
    ER: GameSpec(ER, "leaders", ersg_actions, ersg_state),
    AP: GameSpec(AP, "leaders", apsg_actions, apsg_state),
    LT: GameSpec(LT, "leaders", ltsg_actions, ltsg_state),
    DC: GameSpec(DC, "followers", dcsg_actions, dcsg_state),
    FT: GameSpec(FT, "followers", ftsg_actions, ftsg_state),
    TD: GameSpec(TD, "followers", tdsg_actions, tdsg_state),
}
