"""Per-slot throughput, energy accounting and the efficiency objective."""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .channel import ChannelParams, path_loss_db, transfer_time
from .config import PropulsionParams, SimConfig
from .world import (DemandMatrix, World, coverage_owner, d_ret, follower_point,
                    leader_point)


class BatteryError(RuntimeError):
    """A leader battery would drop below zero."""


@lru_cache(maxsize=256)
def propulsion_power(v: float, params: PropulsionParams) -> float:
    """Rotary-wing propulsion power in watts at horizontal speed ``v``."""
    if v < 0:
        raise ValueError("speed must be nonnegative")
    p = params
    blade = p.P0 * (1.0 + 3.0 * v * v / (p.U_tip * p.U_tip))
    r = v * v / (2.0 * p.v0 * p.v0)
    # algebraically sqrt(1 + r^2) - r; this form avoids cancellation at high v
    induced = p.Pi * math.sqrt(1.0 / (math.sqrt(1.0 + r * r) + r))
    parasite = 0.5 * p.d0 * p.rho * p.s_rotor * p.A * v ** 3
    return blade + induced + parasite


@dataclass
class SlotLedger:
    """Every per-UAV quantity evaluated for one slot."""

    T_Fhov: np.ndarray
    T_Lhov: np.ndarray
    offloads: List[List[Tuple[int, int, float]]] = field(default_factory=list)
    T_dele: List[Dict[int, float]] = field(default_factory=list)
    retained_bits: np.ndarray = None
    delegated_bits: np.ndarray = None
    task_F: np.ndarray = None
    task_L: np.ndarray = None
    E_comp_F: np.ndarray = None
    E_comp_L: np.ndarray = None
    E_pro_F: np.ndarray = None
    E_pro_L: np.ndarray = None
    E_ret_L: np.ndarray = None
    E_dele_F: np.ndarray = None
    requested_bits: float = 0.0
    effi: float = 0.0

    @property
    def served_bits(self) -> float:
        return float(self.task_F.sum() + self.task_L.sum())

    @property
    def dropped_bits(self) -> float:
        return self.requested_bits - self.served_bits

    @property
    def leader_energy(self) -> np.ndarray:
        return self.E_comp_L + self.E_pro_L + self.E_ret_L

    @property
    def follower_energy(self) -> np.ndarray:
        return self.E_comp_F + self.E_pro_F

    @property
    def energy_total(self) -> float:
        return float(self.leader_energy.sum() + self.follower_energy.sum())


def hover_times(world: World) -> Tuple[np.ndarray, np.ndarray]:
    """Hover seconds left after this slot's flights, clamped at zero."""
    cfg = world.config
    TF = np.array([max(0.0, cfg.slot_duration - (F.step + F.recluster_leg) / cfg.v)
                   for F in world.followers])
    TL = np.array([0.0 if L.eps_return else max(0.0, cfg.slot_duration - L.step / cfg.v)
                   for L in world.leaders])
    return TF, TL


def _bound(times, mode: str) -> float:
    if not times:
        return 0.0
    return min(times) if mode == "min" else max(times)


def follower_throughput(world: World, n: int, demand: DemandMatrix, ledger: SlotLedger) -> float:
    """Bits processed locally by follower ``n`` (demand arm vs capacity arm)."""
    cfg = world.config
    times = [t for _, _, t in ledger.offloads[n]]
    capacity = cfg.f_F * max(0.0, ledger.T_Fhov[n] - _bound(times, cfg.offload_bound))
    return min(float(ledger.retained_bits[n]), capacity)


def leader_throughput(world: World, m: int, demand: DemandMatrix, ledger: SlotLedger) -> float:
    """Bits processed by leader ``m`` out of its swarm's delegations."""
    cfg = world.config
    if world.leaders[m].eps_return:
        return 0.0
    swarm = [F.id for F in world.followers if F.leader_id == m]
    if not swarm:
        return 0.0
    times = [t for n in swarm for t in ledger.T_dele[n].values() if t > 0]
    t_ref = max(ledger.T_Fhov[n] for n in swarm)
    capacity = cfg.f_L * max(0.0, t_ref - _bound(times, cfg.offload_bound))
    return min(float(ledger.delegated_bits[m]), capacity)


def leader_propulsion_energy(world: World, m: int, ledger: SlotLedger) -> float:
    cfg = world.config
    L = world.leaders[m]
    if L.eps_return:
        return 0.0
    pv = propulsion_power(cfg.v, cfg.propulsion)
    p0 = propulsion_power(0.0, cfg.propulsion)
    return pv * L.step / cfg.v + p0 * ledger.T_Lhov[m]


def follower_propulsion_energy(world: World, n: int, ledger: SlotLedger) -> float:
    cfg = world.config
    F = world.followers[n]
    pv = propulsion_power(cfg.v, cfg.propulsion)
    p0 = propulsion_power(0.0, cfg.propulsion)
    leg = F.recluster_leg if F.prev_leader_id != F.leader_id else 0.0
    return pv * (leg + F.step) / cfg.v + p0 * ledger.T_Fhov[n]


def return_energy(world: World, m: int) -> float:
    cfg = world.config
    if not world.leaders[m].eps_return:
        return 0.0
    return propulsion_power(cfg.v, cfg.propulsion) * d_ret(world, m) / cfg.v


def compute_energy(xi: float, f: float, task_bits: float, at_depot: bool = False) -> float:
    """Dynamic CPU energy for ``task_bits`` at rate ``f``."""
    if at_depot:
        return 0.0
    return xi * f * f * task_bits


def energy_efficiency(ledger: SlotLedger) -> float:
    total = ledger.energy_total
    if total <= 0.0:
        return 0.0
    return ledger.served_bits / total


def _offloads(world: World, demand: DemandMatrix, T_Fhov: np.ndarray,
              params: ChannelParams) -> List[List[Tuple[int, int, float]]]:
    cfg = world.config
    out: List[List[Tuple[int, int, float]]] = [[] for _ in world.followers]
    act = demand.active
    if len(act) == 0:
        return out
    owner = coverage_owner(world)[act]
    keep = owner >= 0
    act, owner = act[keep], owner[keep]
    if len(act) == 0:
        return out
    fxy = np.array([follower_point(world, n)[:2] for n in range(cfg.N)])
    delta = world.device_xy[act] - fxy[owner]
    d = np.sqrt(delta[:, 0] ** 2 + delta[:, 1] ** 2 + cfg.H_F ** 2)
    loss = params.pathloss_ref_db + 10.0 * params.pathloss_exponent * np.log10(d)
    signal = cfg.p_I * 10.0 ** (-loss / 10.0)
    total = np.bincount(owner, weights=signal, minlength=cfg.N)
    gamma = signal / (total[owner] - signal + params.noise_power)
    types = demand.req_type[act]
    t_off = cfg.kappa_c[types] / (cfg.B * np.log2(1.0 + gamma))
    for k, n, c, t in zip(act.tolist(), owner.tolist(), types.tolist(), t_off.tolist()):
        if t < T_Fhov[n]:
            out[n].append((k, c, t))
    return out


def evaluate_slot(world: World, demand: DemandMatrix,
                  params: ChannelParams | None = None) -> SlotLedger:
    """Build the full ledger for the slot decisions currently set on ``world``."""
    cfg = world.config
    params = params or ChannelParams.from_config(cfg)
    kappa = cfg.kappa_c
    M, N = cfg.M, cfg.N
    TF, TL = hover_times(world)
    led = SlotLedger(TF, TL)
    led.requested_bits = float(kappa[demand.req_type[demand.req_type >= 0]].sum())
    led.offloads = _offloads(world, demand, TF, params)

    led.retained_bits = np.zeros(N)
    led.delegated_bits = np.zeros(M)
    led.T_dele = [dict() for _ in range(N)]
    led.E_dele_F = np.zeros(N)
    for F in world.followers:
        n, m = F.id, F.leader_id
        L = world.leaders[m]
        for _, c, _ in led.offloads[n]:
            if c in F.apps and c not in F.delegations:
                led.retained_bits[n] += kappa[c]
            elif c in F.delegations and not L.eps_return and c in L.apps:
                led.delegated_bits[m] += kappa[c]
        if F.delegations and not L.eps_return:
            loss = path_loss_db(follower_point(world, n), leader_point(world, m), params)
            gamma = cfg.p_F * 10.0 ** (-loss / 10.0) / params.noise_power
            for c in F.delegations:
                led.T_dele[n][c] = transfer_time(float(kappa[c]), cfg.B, gamma)
            led.E_dele_F[n] = cfg.p_F * sum(led.T_dele[n].values())

    # one pass over plain floats; the per-UAV functions above are the reference
    bound = min if cfg.offload_bound == "min" else max
    pv = propulsion_power(cfg.v, cfg.propulsion)
    p0 = propulsion_power(0.0, cfg.propulsion)
    tF = [0.0] * N
    for n in range(N):
        times = [t for _, _, t in led.offloads[n]]
        cap = cfg.f_F * max(0.0, TF[n] - (bound(times) if times else 0.0))
        tF[n] = min(float(led.retained_bits[n]), cap)
    swarms: List[List[int]] = [[] for _ in range(M)]
    for F in world.followers:
        swarms[F.leader_id].append(F.id)
    tL = [0.0] * M
    E_pro_L, E_ret = [0.0] * M, [0.0] * M
    for L in world.leaders:
        m = L.id
        if L.eps_return:
            E_ret[m] = pv * d_ret(world, m) / cfg.v
            continue
        E_pro_L[m] = pv * L.step / cfg.v + p0 * TL[m]
        if swarms[m]:
            times = [t for n in swarms[m] for t in led.T_dele[n].values() if t > 0]
            t_ref = max(TF[n] for n in swarms[m])
            cap = cfg.f_L * max(0.0, t_ref - (bound(times) if times else 0.0))
            tL[m] = min(float(led.delegated_bits[m]), cap)
    E_pro_F = [0.0] * N
    for F in world.followers:
        leg = F.recluster_leg if F.prev_leader_id != F.leader_id else 0.0
        E_pro_F[F.id] = pv * (leg + F.step) / cfg.v + p0 * TF[F.id]
    led.task_F = np.array(tF)
    led.task_L = np.array(tL)
    led.E_comp_F = cfg.xi * cfg.f_F * cfg.f_F * led.task_F
    led.E_comp_L = cfg.xi * cfg.f_L * cfg.f_L * led.task_L
    led.E_pro_F = np.array(E_pro_F)
    led.E_pro_L = np.array(E_pro_L)
    led.E_ret_L = np.array(E_ret)
    led.effi = energy_efficiency(led)
    return led


def battery_step(world: World, ledger: SlotLedger) -> np.ndarray:
    """Drain each leader by its slot energy; depot visits recharge to capacity.

    Returns the remaining energies before the step.
    """
    cfg = world.config
    before = np.array([L.E_remain for L in world.leaders])
    for L in world.leaders:
        spent = ledger.leader_energy[L.id]
        if L.E_remain - spent < -1e-9:
            raise BatteryError(f"leader {L.id} battery would reach {L.E_remain - spent:.1f} J")
        L.E_remain = cfg.E_cap if L.eps_return else max(0.0, L.E_remain - spent)
    return before
