"""Slot-by-slot coordination of the six learners, plus the two baselines.

Within a slot the decision order is: energy replenishment, then application
placement (leaders at the depot) or leader trajectory (airborne leaders),
then clustering, follower trajectory and delegation. Each game's state is
encoded after the earlier games' decisions have been applied.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import games as G
from .channel import ChannelParams
from .config import SimConfig
from .dynamics import SlotLedger, battery_step, evaluate_slot, propulsion_power
from .qlearn import QTable, greedy_policy, select_action, update
from .world import (Cell, World, build_world, d_ret, generate_demand, large_center,
                    large_of_small, small_cells_in, small_center)

log = logging.getLogger(__name__)

MODES = ("rldc", "fixed_swarm", "no_swarm")
MODE_ALIASES = {"fixed": "fixed_swarm", "noswarm": "no_swarm", "no-swarm": "no_swarm",
                "fixed-swarm": "fixed_swarm"}

Tables = Dict[str, List[QTable]]


def canonical_mode(mode: str) -> str:
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    return mode


def make_tables(cfg: SimConfig) -> Tables:
    return {g: [QTable() for _ in range(cfg.M if spec.agents == "leaders" else cfg.N)]
            for g, spec in G.GAMES.items()}


@dataclass
class SlotDecisions:
    """Executed (post-repair) decisions of one slot. ``None`` moves are no-ops."""

    eps: List[bool]
    forced_return: List[bool]
    apps: List[Optional[frozenset]]
    lt_moves: List[Optional[int]]
    leaders_of: List[int]
    ft_moves: List[Optional[int]]
    delegate: List[bool]
    repairs: int = 0


@dataclass
class EpisodeMetrics:
    effi: List[float] = field(default_factory=list)
    requested_bits: List[float] = field(default_factory=list)
    served_bits: List[float] = field(default_factory=list)
    dropped_bits: List[float] = field(default_factory=list)
    energy: List[float] = field(default_factory=list)
    E_comp: float = 0.0
    E_pro: float = 0.0
    E_ret: float = 0.0
    rewards: Dict[str, float] = field(default_factory=lambda: {g: 0.0 for g in G.GAME_IDS})
    depot_visits: int = 0
    forced_returns: int = 0
    repairs: int = 0
    coverage_violations: int = 0
    violations: List[str] = field(default_factory=list)
    min_battery: float = math.inf
    bad_recharges: int = 0

    @property
    def total_effi(self) -> float:
        return float(sum(self.effi))

    @property
    def mean_effi(self) -> float:
        return self.total_effi / len(self.effi) if self.effi else 0.0


@dataclass
class EpisodeState:
    """Everything a slot needs besides the world and the Q-tables."""

    mode: str
    epsilon: float = 0.0
    learn: bool = True
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    demand_rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(1))
    check: bool = False
    cumulative_L: Optional[np.ndarray] = None
    pending: Dict[Tuple[str, int], Tuple[bytes, int, float]] = field(default_factory=dict)
    metrics: EpisodeMetrics = field(default_factory=EpisodeMetrics)
    channel: Optional[ChannelParams] = None
    trace: Optional[list] = None
    _streams: Dict[Tuple[str, int], np.random.Generator] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self._base = int(self.rng.integers(1 << 62))

    def stream(self, game: str, agent: int) -> np.random.Generator:
        """Exploration draws of one agent in one game.

        Separate streams keep the draws of, say, the energy learners
        identical across modes even though other games consume a
        different number of draws (common random numbers).
        """
        g = self._streams.get((game, agent))
        if g is None:
            g = np.random.default_rng([self._base, G.GAME_IDS.index(game), agent])
            self._streams[(game, agent)] = g
        return g


# ---- helpers -------------------------------------------------------------------

def return_threshold(world: World, m: int) -> float:
    """Energy a leader must keep to survive one more slot and still get home."""
    cfg = world.config
    pv = propulsion_power(cfg.v, cfg.propulsion)
    p0 = propulsion_power(0.0, cfg.propulsion)
    worst_slot = pv * cfg.l / cfg.v + p0 * cfg.slot_duration + cfg.xi * cfg.f_L ** 3 * cfg.slot_duration
    return worst_slot + pv * (d_ret(world, m) + cfg.l) / cfg.v


def _observe(state: EpisodeState, tables: Tables, game: str, agent: int,
             key: bytes, legal: Sequence[int], beta: float, sigma: float) -> None:
    if not state.learn:
        return
    prev = state.pending.pop((game, agent), None)
    if prev is not None:
        s, a, r = prev
        update(tables[game][agent], s, a, r, key, legal, beta, sigma)


def flush_pending(state: EpisodeState, tables: Tables, beta: float, sigma: float) -> None:
    """Apply outstanding updates as terminal transitions."""
    if state.learn:
        for (game, agent), (s, a, r) in sorted(state.pending.items()):
            update(tables[game][agent], s, a, r, None, None, beta, sigma)
    state.pending.clear()


def _move(cell: Cell, action: int) -> Cell:
    dx, dy = G.MOVES[action]
    return (cell[0] + dx, cell[1] + dy)


def resolve_conflicts(world: World, game: str, proposals: Sequence[Optional[int]],
                      tables: Optional[Tables] = None, key: Optional[bytes] = None,
                      contain: bool = True, origins: Optional[Sequence[Cell]] = None
                      ) -> Tuple[List[Optional[int]], int]:
    """Repair simultaneous proposals so the joint outcome is feasible.

    Agents are served in ascending id. A proposal clashing with what is
    already committed is replaced by the best remaining legal action under
    the agent's Q-values, or by a no-op when nothing is left. Returns the
    repaired list and the number of repairs.

    For ``LTSG``/``FTSG`` proposals are move indices (``None`` for agents
    that do not move); for ``DCSG`` they are leader ids, and ``origins``
    (start-of-slot follower grids) bound the reachable swarms.
    """
    if game == G.DC:
        return _resolve_clustering(world, proposals, tables, key, origins)
    if game == G.LT:
        agents = world.leaders
        current = [L.cell for L in agents]
        active = [not L.eps_return for L in agents]
        mask = lambda i, blocked: G.ltsg_mask(world, i, blocked)
    elif game == G.FT:
        agents = world.followers
        current = [F.cell for F in agents]
        active = [True] * len(agents)
        mask = lambda i, blocked: G.ftsg_mask(world, i, blocked, contain)
    else:
        raise ValueError(f"no conflict resolution for {game}")

    out: List[Optional[int]] = [None] * len(agents)
    repairs = 0
    # inactive agents (leaders at the depot) keep their reserved cells
    committed = {current[i] for i in range(len(agents)) if not active[i]}
    for i in range(len(agents)):
        if not active[i]:
            continue
        blocked = committed | {current[j] for j in range(i + 1, len(agents)) if active[j]}
        legal = mask(i, blocked)
        prop = proposals[i]
        if prop is not None and prop in legal:
            choice = prop
        elif legal:
            choice = (greedy_policy(tables[game][i], key, legal) if tables is not None
                      else legal[0])
            repairs += 1
        else:
            choice = None
            repairs += prop is not None
        out[i] = choice
        committed.add(current[i] if choice is None else _move(current[i], choice))
    return out, repairs


def _resolve_clustering(world: World, proposals: Sequence[int], tables: Optional[Tables],
                        key: Optional[bytes], origins: Optional[Sequence[Cell]] = None
                        ) -> Tuple[List[int], int]:
    cfg = world.config
    cap = G.swarm_capacity(cfg)
    counts = [0] * cfg.M
    out = [0] * cfg.N
    repairs = 0
    ok = lambda m: not world.leaders[m].eps_return and counts[m] < cap
    for n in range(cfg.N):
        target = proposals[n]
        if not ok(target):
            origin = origins[n] if origins is not None else None
            alts = [a for a in G.dcsg_mask(world, n, origin) if ok(G.dcsg_target(world, n, a))]
            if alts:
                a = greedy_policy(tables[G.DC][n], key, alts) if tables is not None else alts[0]
                target = G.dcsg_target(world, n, a)
            else:
                target = world.followers[n].leader_id
            repairs += 1
        out[n] = target
        counts[target] += 1
    # every airborne leader keeps at least one follower
    for m in range(cfg.M):
        if world.leaders[m].eps_return or counts[m] > 0:
            continue
        donors = [n for n in range(cfg.N)
                  if world.leaders[out[n]].eps_return or counts[out[n]] >= 2]
        if not donors:
            continue
        n = min(donors, key=lambda i: (world.followers[i].leader_id != m, i))
        counts[out[n]] -= 1
        out[n] = m
        counts[m] += 1
        repairs += 1
    return out, repairs


def _relocate(world: World, n: int, origin: Cell) -> float:
    """Move a re-clustered follower to the free small grid of its new swarm
    nearest to where it started; returns the flight length."""
    cfg = world.config
    F = world.followers[n]
    occupied = {G_.cell for G_ in world.followers if G_.id != n}
    ox, oy = small_center(cfg, origin)
    best, best_d = None, math.inf
    for c in small_cells_in(cfg, world.leaders[F.leader_id].cell):
        if c in occupied:
            continue
        x, y = small_center(cfg, c)
        d = math.hypot(x - ox, y - oy)
        if d < best_d - 1e-9:
            best, best_d = c, d
    if best is None:
        raise RuntimeError(f"no free small grid for follower {n}")
    F.cell = best
    return best_d


# ---- constraint checker ----------------------------------------------------------

def constraint_violations(world: World, mode: str, start_leaders: Sequence[Cell],
                          start_followers: Sequence[Cell], decisions: SlotDecisions) -> List[str]:
    """Violations of the implemented constraint forms for the slot just decided.

    Movement constraints accept a single grid step, or no step when the
    decision was a recorded no-op. Application coverage is a soft
    constraint (penalised in the replenishment reward) and is not checked.
    """
    cfg = world.config
    out: List[str] = []
    formation = mode != "no_swarm"
    counts = [0] * cfg.M
    for F in world.followers:
        if not 0 <= F.leader_id < cfg.M:
            out.append(f"(9) follower {F.id} has no valid leader")
            continue
        counts[F.leader_id] += 1
    for L in world.leaders:
        if not L.eps_return and counts[L.id] < 1:
            out.append(f"(10) airborne leader {L.id} has no follower")
    for L in world.leaders:
        s = start_leaders[L.id]
        if not (0 <= L.cell[0] < cfg.n_large and 0 <= L.cell[1] < cfg.n_large):
            out.append(f"(13) leader {L.id} off the grid")
        step = abs(L.cell[0] - s[0]) + abs(L.cell[1] - s[1])
        expected = 0 if (L.eps_return or decisions.lt_moves[L.id] is None) else 1
        if step != expected:
            out.append(f"(13) leader {L.id} moved {step} grids")
    for F in world.followers:
        s = start_followers[F.id]
        if not (0 <= F.cell[0] < cfg.n_small and 0 <= F.cell[1] < cfg.n_small):
            out.append(f"(12) follower {F.id} off the grid")
        if F.leader_id != F.prev_leader_id:
            continue
        dx, dy = F.cell[0] - s[0], F.cell[1] - s[1]
        L = world.leaders[F.leader_id]
        if formation:
            ls = start_leaders[L.id]
            dx -= (L.cell[0] - ls[0]) * cfg.ratio
            dy -= (L.cell[1] - ls[1]) * cfg.ratio
        expected = 0 if decisions.ft_moves[F.id] is None else 1
        if abs(dx) + abs(dy) != expected:
            out.append(f"(12) follower {F.id} moved {abs(dx) + abs(dy)} grids")
    cells = [F.cell for F in world.followers]
    if len(set(cells)) != len(cells):
        out.append("(14) two followers share a small grid")
    lcells = [L.cell for L in world.leaders]
    if len(set(lcells)) != len(lcells):
        out.append("(15) two leaders share a large grid")
    if formation:
        half = (cfg.l - cfg.q) / 2.0
        for F in world.followers:
            L = world.leaders[F.leader_id]
            if L.eps_return:
                continue
            lx, ly = large_center(cfg, L.cell)
            fx, fy = small_center(cfg, F.cell)
            if abs(lx - fx) > half + 1e-9:
                out.append(f"(16) follower {F.id} outside swarm {L.id} in x")
            if abs(ly - fy) > half + 1e-9:
                out.append(f"(17) follower {F.id} outside swarm {L.id} in y")
    return out


# ---- the slot --------------------------------------------------------------------

def run_slot(world: World, tables: Tables, state: EpisodeState) -> Tuple[SlotDecisions, SlotLedger]:
    cfg = world.config
    lp = cfg.learner
    beta, sigma = lp.beta, lp.sigma
    eps_x = state.epsilon
    mode = state.mode
    M, N = cfg.M, cfg.N
    if state.cumulative_L is None:
        state.cumulative_L = np.zeros(M)

    start_leaders = [L.cell for L in world.leaders]
    start_followers = [F.cell for F in world.followers]
    for L in world.leaders:
        L.step = 0.0
    for F in world.followers:
        F.step = 0.0
        F.recluster_leg = 0.0
        F.prev_leader_id = F.leader_id

    dec = SlotDecisions([False] * M, [False] * M, [None] * M, [None] * M,
                        [F.leader_id for F in world.followers], [None] * N, [False] * N)
    taken: List[Tuple[str, int, bytes, int]] = []

    def choose(game: str, agent: int, key: bytes, legal: Sequence[int]) -> int:
        _observe(state, tables, game, agent, key, legal, beta, sigma)
        return select_action(tables[game][agent], key, legal, eps_x, state.stream(game, agent))

    # (1) energy replenishment
    k_er = G.ersg_state(world)
    er_legal = G.ersg_actions(cfg)
    for L in world.leaders:
        a = choose(G.ER, L.id, k_er, er_legal)
        if world.leaders[L.id].E_remain < return_threshold(world, L.id):
            dec.forced_return[L.id] = a != G.RETURN
            a = G.RETURN
        dec.eps[L.id] = a == G.RETURN
        taken.append((G.ER, L.id, k_er, a))
    for L in world.leaders:
        L.eps_return = dec.eps[L.id]

    # (2a) application placement at the depot
    k_ap = G.apsg_state(world)
    ap_legal = G.apsg_actions(cfg)
    for L in world.leaders:
        if L.eps_return:
            a = choose(G.AP, L.id, k_ap, ap_legal)
            dec.apps[L.id] = G.apsg_target(world, L.id, a)
            taken.append((G.AP, L.id, k_ap, a))

    # (2b) trajectories of airborne leaders
    k_lt = G.ltsg_state(world)
    proposals: List[Optional[int]] = [None] * M
    for L in world.leaders:
        if L.eps_return:
            continue
        legal = G.ltsg_mask(world, L.id)
        if legal:
            proposals[L.id] = choose(G.LT, L.id, k_lt, legal)
        else:
            _observe(state, tables, G.LT, L.id, k_lt, legal, beta, sigma)
    moves, rep = resolve_conflicts(world, G.LT, proposals, tables, k_lt)
    dec.repairs += rep
    formation = mode != "no_swarm"
    for L in world.leaders:
        a = moves[L.id]
        dec.lt_moves[L.id] = a
        if a is None:
            continue
        dx, dy = G.MOVES[a]
        L.cell = (L.cell[0] + dx, L.cell[1] + dy)
        L.step = cfg.l
        taken.append((G.LT, L.id, k_lt, a))
        if formation:
            r = cfg.ratio
            for F in world.followers:
                if F.leader_id == L.id:
                    F.cell = (F.cell[0] + dx * r, F.cell[1] + dy * r)

    # (3) dynamic clustering
    if mode == "rldc":
        k_dc = G.dcsg_state(world)
        props = []
        for F in world.followers:
            legal = G.dcsg_mask(world, F.id, start_followers[F.id])
            a = choose(G.DC, F.id, k_dc, legal)
            props.append(G.dcsg_target(world, F.id, a))
        assigned, rep = resolve_conflicts(world, G.DC, props, tables, k_dc,
                                          origins=start_followers)
        dec.repairs += rep
        for F in world.followers:
            taken.append((G.DC, F.id, k_dc, G.dcsg_action_for(world, F.id, assigned[F.id])))
        for F in world.followers:
            if assigned[F.id] != F.leader_id:
                F.leader_id = assigned[F.id]
                F.recluster_leg = _relocate(world, F.id, start_followers[F.id])
        dec.leaders_of = list(assigned)

    # (4) follower trajectories
    k_ft = G.ftsg_state(world)
    proposals = [None] * N
    for F in world.followers:
        legal = G.ftsg_mask(world, F.id, contain=formation)
        if legal:
            proposals[F.id] = choose(G.FT, F.id, k_ft, legal)
        else:
            _observe(state, tables, G.FT, F.id, k_ft, legal, beta, sigma)
    moves, rep = resolve_conflicts(world, G.FT, proposals, tables, k_ft, contain=formation)
    dec.repairs += rep
    for F in world.followers:
        a = moves[F.id]
        dec.ft_moves[F.id] = a
        if a is None:
            continue
        F.cell = _move(F.cell, a)
        F.step = cfg.q
        taken.append((G.FT, F.id, k_ft, a))

    # (5) task delegation
    td_legal = G.tdsg_actions(cfg)
    for F in world.followers:
        if mode == "no_swarm":
            F.delegations = frozenset()
            continue
        key = G.tdsg_state(world, F.id)
        a = choose(G.TD, F.id, key, td_legal)
        F.delegations = G.delegation_set(world, F.id, a)
        dec.delegate[F.id] = a == G.DELEGATE
        taken.append((G.TD, F.id, key, a))

    violations = []
    if state.check:
        violations = constraint_violations(world, mode, start_leaders, start_followers, dec)

    # (6) environment step
    demand = generate_demand(world, world.t, state.demand_rng)
    if state.channel is None:
        state.channel = ChannelParams.from_config(cfg)
    ledger = evaluate_slot(world, demand, state.channel)
    covered = G.coverage_ok(world)
    before = battery_step(world, ledger)
    state.cumulative_L += ledger.task_L

    rewards: Dict[Tuple[str, int], float] = {}
    for game, i, key, a in taken:
        if game == G.ER:
            r = G.ersg_reward(world, i, covered)
        elif game == G.AP:
            r = G.apsg_reward(state.cumulative_L, i)
        elif game == G.LT:
            r = G.ltsg_reward(world, ledger, i, before[i] - world.leaders[i].E_remain)
        elif game == G.DC:
            r = G.dcsg_reward(ledger)
        elif game == G.FT:
            r = G.ftsg_reward(world, ledger, i)
        else:
            r = G.tdsg_reward(world, ledger, i)
        rewards[(game, i)] = r
        if state.learn:
            state.pending[(game, i)] = (key, a, r)

    _record(state.metrics, world, ledger, dec, rewards, covered, violations)
    if state.trace is not None:
        state.trace.append(trace_line(world, dec, ledger))

    # depot visits end with recharge (done in battery_step), new apps and re-entry
    for L in world.leaders:
        if L.eps_return:
            if dec.apps[L.id] is not None:
                L.apps = dec.apps[L.id]
            L.eps_return = False
    world.t += 1
    return dec, ledger


def _record(met: EpisodeMetrics, world: World, led: SlotLedger, dec: SlotDecisions,
            rewards: dict, covered: bool, violations: List[str]) -> None:
    cfg = world.config
    met.effi.append(led.effi)
    met.requested_bits.append(led.requested_bits)
    met.served_bits.append(led.served_bits)
    met.dropped_bits.append(led.dropped_bits)
    met.energy.append(led.energy_total)
    met.E_comp += float(led.E_comp_F.sum() + led.E_comp_L.sum())
    met.E_pro += float(led.E_pro_F.sum() + led.E_pro_L.sum())
    met.E_ret += float(led.E_ret_L.sum())
    for (game, _), r in rewards.items():
        met.rewards[game] += r
    met.depot_visits += sum(dec.eps)
    met.forced_returns += sum(dec.forced_return)
    met.repairs += dec.repairs
    met.coverage_violations += not covered
    met.violations.extend(f"t={world.t}: {v}" for v in violations)
    for L in world.leaders:
        met.min_battery = min(met.min_battery, L.E_remain)
        if L.eps_return and L.E_remain != cfg.E_cap:
            met.bad_recharges += 1


def trace_line(world: World, dec: SlotDecisions, led: SlotLedger) -> str:
    """One line per slot: slot, return flags, swarm sizes, served bits, efficiency."""
    sizes = [dec.leaders_of.count(m) for m in range(world.config.M)]
    eps = "".join("R" if e else "." for e in dec.eps)
    return (f"t={world.t}\teps={eps}\tswarms={','.join(map(str, sizes))}"
            f"\tserved={led.served_bits:.0f}\tenergy={led.energy_total:.3f}\teffi={led.effi:.6f}")


# ---- episodes and training -------------------------------------------------------

def _streams(seed: int, episode: int, phase: int) -> Tuple[int, np.random.Generator, np.random.Generator]:
    ss = np.random.SeedSequence([seed, phase, episode])
    world_ss, demand_ss, policy_ss = ss.spawn(3)
    world_seed = int(world_ss.generate_state(1)[0])
    return world_seed, np.random.default_rng(demand_ss), np.random.default_rng(policy_ss)


def run_episode(cfg: SimConfig, mode: str, tables: Tables, seed: int, episode: int, *,
                epsilon: float, learn: bool, phase: int = 0, check: bool = False,
                trace: Optional[list] = None) -> EpisodeMetrics:
    """One episode of ``cfg.T_horizon`` slots.

    The fleet starts from the same layout every episode (fixed by ``seed``);
    devices and demand depend only on ``(seed, phase, episode)``, so every
    mode faces the same devices and requests.
    """
    mode = canonical_mode(mode)
    device_seed, demand_rng, policy_rng = _streams(seed, episode, phase)
    world = build_world(cfg, seed, device_seed=device_seed)
    state = EpisodeState(mode, epsilon, learn, policy_rng, demand_rng, check,
                         channel=ChannelParams.from_config(cfg), trace=trace)
    for _ in range(cfg.T_horizon):
        run_slot(world, tables, state)
    flush_pending(state, tables, cfg.learner.beta, cfg.learner.sigma)
    return state.metrics


@dataclass
class TrainingResult:
    mode: str
    sum_over_loop: float
    train: List[EpisodeMetrics]
    evaluation: List[EpisodeMetrics]
    tables: Tables

    @property
    def mean_effi(self) -> float:
        """Mean per-slot efficiency of the greedy policy after training
        (falls back to the training episodes when no evaluation ran)."""
        runs = self.evaluation or self.train
        slots = [e for m in runs for e in m.effi]
        return float(np.mean(slots)) if slots else 0.0

    @property
    def episodes(self) -> List[EpisodeMetrics]:
        return self.train + self.evaluation

    @property
    def bits_served(self) -> float:
        return float(sum(sum(m.served_bits) for m in self.evaluation or self.train))

    @property
    def joules_total(self) -> float:
        return float(sum(sum(m.energy) for m in self.evaluation or self.train))

    @property
    def violations(self) -> List[str]:
        return [v for m in self.episodes for v in m.violations]


def run_training(cfg: SimConfig, mode: str = "rldc", seed: Optional[int] = None, *,
                 check: bool = False) -> TrainingResult:
    """Train for ``cfg.LOOP`` episodes, then evaluate the greedy policies.

    ``sum_over_loop`` is the training-phase average of episode-summed
    efficiency; ``mean_effi`` is the per-slot mean over the evaluation
    episodes.
    """
    cfg = cfg.validate()
    mode = canonical_mode(mode)
    seed = cfg.rng_seed if seed is None else seed
    tables = make_tables(cfg)
    train = []
    total = 0.0
    for loop in range(cfg.LOOP):
        eps = cfg.learner.epsilon(loop, cfg.LOOP)
        met = run_episode(cfg, mode, tables, seed, loop, epsilon=eps, learn=True,
                          phase=0, check=check)
        total += met.total_effi
        train.append(met)
    evaluation = [run_episode(cfg, mode, tables, seed, e, epsilon=0.0, learn=False,
                              phase=1, check=check)
                  for e in range(cfg.eval_episodes)]
    sum_over_loop = total / cfg.LOOP if cfg.LOOP else 0.0
    log.debug("mode=%s seed=%s sum/loop=%.4f", mode, seed, sum_over_loop)
    return TrainingResult(mode, sum_over_loop, train, evaluation, tables)
