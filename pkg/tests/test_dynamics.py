import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracle import ledger as oracle_ledger, prop_power
from conftest import random_slot
from swarmmec import PropulsionParams, SimConfig, build_world
from swarmmec.dynamics import (BatteryError, SlotLedger, battery_step, compute_energy,
                               energy_efficiency, evaluate_slot, follower_propulsion_energy,
                               follower_throughput, hover_times, leader_propulsion_energy,
                               leader_throughput, propulsion_power, return_energy)
from swarmmec.world import DemandMatrix, d_ret

PP = PropulsionParams()


def _single_swarm(cfg=None):
    cfg = cfg or SimConfig(M=1, N=1, K=0)
    w = build_world(cfg, 0)
    return w, DemandMatrix(0, np.zeros(0, dtype=np.int64), cfg.C)


# ---- hover -------------------------------------------------------------------

def test_hover_example():
    w, _ = _single_swarm()
    w.followers[0].step = 100.0
    w.leaders[0].step = 500.0
    TF, TL = hover_times(w)
    assert TF[0] == pytest.approx(25.0)
    assert TL[0] == pytest.approx(5.0)


def test_hover_limits():
    w, _ = _single_swarm(SimConfig(M=1, N=1, K=0, v=1e12))
    w.followers[0].step = 100.0
    assert hover_times(w)[0][0] == pytest.approx(30.0)
    w, _ = _single_swarm(SimConfig(M=1, N=1, K=0, v=2.0))
    w.followers[0].step = 100.0
    assert hover_times(w)[0][0] == 0.0
    w.leaders[0].eps_return = True
    assert hover_times(w)[1][0] == 0.0


# ---- throughput ---------------------------------------------------------------

def _ledger(TF, offloads, retained, delegated=None, T_dele=None, N=1, M=1):
    led = SlotLedger(np.array(TF, dtype=float), np.zeros(M))
    led.offloads = offloads
    led.retained_bits = np.array(retained, dtype=float)
    led.delegated_bits = np.array(delegated if delegated is not None else [0.0] * M)
    led.T_dele = T_dele if T_dele is not None else [dict() for _ in range(N)]
    return led


def test_follower_throughput_examples():
    w, d = _single_swarm()
    assert follower_throughput(w, 0, d, _ledger([25.0], [[]], [0.0])) == 0.0
    led = _ledger([25.0], [[(0, 0, 0.5)]], [15e6])
    assert follower_throughput(w, 0, d, led) == pytest.approx(15e6)
    led = _ledger([25.0], [[(0, 0, 0.5), (1, 1, 0.9)]], [100e6])
    assert follower_throughput(w, 0, d, led) == pytest.approx(49e6)


def test_follower_throughput_max_bound():
    w, d = _single_swarm(SimConfig(M=1, N=1, K=0, offload_bound="max"))
    led = _ledger([25.0], [[(0, 0, 0.5), (1, 1, 5.0)]], [100e6])
    assert follower_throughput(w, 0, d, led) == pytest.approx(2e6 * 20.0)


def test_leader_throughput_examples():
    w, d = _single_swarm()
    led = _ledger([25.0], [[]], [0.0], [20e6], [{3: 0.25}])
    assert leader_throughput(w, 0, d, led) == pytest.approx(20e6)
    led = _ledger([25.0], [[]], [0.0], [80e6], [{3: 0.25}])
    assert leader_throughput(w, 0, d, led) == pytest.approx(49.5e6)
    w.leaders[0].eps_return = True
    assert leader_throughput(w, 0, d, led) == 0.0


def test_delegated_type_missing_on_leader_contributes_nothing():
    cfg = SimConfig(M=1, N=1, K=1, demand_prob=1.0)
    w = build_world(cfg, 0)
    F, L = w.followers[0], w.leaders[0]
    lacking = sorted(set(range(cfg.C)) - F.apps - L.apps)
    if not lacking:
        L.apps = frozenset(sorted(L.apps)[:-1])
        lacking = sorted(set(range(cfg.C)) - F.apps - L.apps)
    c = lacking[0]
    F.delegations = frozenset(set(range(cfg.C)) - F.apps)
    w.device_xy[0] = ((F.cell[0] + 0.5) * cfg.q, (F.cell[1] + 0.5) * cfg.q)
    w.device_cell[0] = F.cell[0] * cfg.n_small + F.cell[1]
    w.devices_by_cell = {int(w.device_cell[0]): [0]}
    led = evaluate_slot(w, DemandMatrix(0, np.array([c]), cfg.C))
    assert led.delegated_bits[0] == 0.0 and led.task_L[0] == 0.0


# ---- propulsion ----------------------------------------------------------------

def test_hover_power():
    assert propulsion_power(0.0, PP) == pytest.approx(168.49, abs=1e-9)


def test_propulsion_asymptotics_and_scan():
    cubic = lambda v: 0.5 * PP.d0 * PP.rho * PP.s_rotor * PP.A * v ** 3
    assert propulsion_power(1e4, PP) / cubic(1e4) == pytest.approx(1.0, rel=1e-3)
    vs = np.linspace(0, 60, 6001)
    ps = np.array([propulsion_power(v, PP) for v in vs])
    assert np.all(ps > 0) and np.all(np.isfinite(ps))
    assert np.max(np.abs(np.diff(ps))) < 1.5  # slope stays near 100 W per m/s at most
    for v in (0.0, 3.0, 10.0, 20.0, 35.0):
        assert propulsion_power(v, PP) == pytest.approx(prop_power(v), rel=1e-12)
    with pytest.raises(ValueError):
        propulsion_power(-1.0, PP)


def test_leader_propulsion_example():
    w, _ = _single_swarm()
    L = w.leaders[0]
    L.step = 500.0
    led = SlotLedger(*hover_times(w))
    expected = 25 * propulsion_power(20.0, PP) + 5 * propulsion_power(0.0, PP)
    assert leader_propulsion_energy(w, 0, led) == pytest.approx(expected)
    L.eps_return = True
    led = SlotLedger(*hover_times(w))
    assert leader_propulsion_energy(w, 0, led) == 0.0
    assert return_energy(w, 0) == pytest.approx(propulsion_power(20.0, PP) * d_ret(w, 0) / 20.0)
    L.eps_return = False
    assert return_energy(w, 0) == 0.0


def test_follower_propulsion_leg_gate():
    w, _ = _single_swarm(SimConfig(M=2, N=2, K=0))
    F = w.followers[0]
    F.step, F.recluster_leg = 100.0, 300.0
    led = SlotLedger(*hover_times(w))
    pv, p0 = propulsion_power(20.0, PP), propulsion_power(0.0, PP)
    # unchanged swarm: the leg does not count as re-clustering
    assert follower_propulsion_energy(w, 0, led) == pytest.approx(pv * 100 / 20 + p0 * led.T_Fhov[0])
    F.leader_id = 1
    assert follower_propulsion_energy(w, 0, led) == pytest.approx(pv * 400 / 20 + p0 * led.T_Fhov[0])


def test_compute_energy_examples():
    assert compute_energy(1e-18, 2e6, 1e7) == pytest.approx(40.0)
    assert compute_energy(1e-18, 2e6, 0.0) == 0.0
    assert compute_energy(1e-18, 4e6, 1e7) == pytest.approx(4 * 40.0)
    assert compute_energy(1e-18, 2e6, 1e7, at_depot=True) == 0.0


def test_efficiency_examples():
    led = SlotLedger(np.zeros(1), np.zeros(1))
    led.task_F, led.task_L = np.array([2e7]), np.array([0.0])
    led.E_comp_F, led.E_pro_F = np.array([80.0]), np.array([4220.0])
    led.E_comp_L, led.E_pro_L, led.E_ret_L = np.zeros(1), np.zeros(1), np.array([100.0])
    assert energy_efficiency(led) == pytest.approx(2e7 / 4400)
    assert energy_efficiency(led) == pytest.approx(4545.45, rel=1e-5)
    led.task_F = np.zeros(1)
    assert energy_efficiency(led) == 0.0
    for a in (led.E_comp_F, led.E_pro_F, led.E_ret_L):
        a[:] = 0
    assert energy_efficiency(led) == 0.0


def test_scaling_kappa_and_rate():
    w, d = _single_swarm()
    led = _ledger([25.0], [[(0, 0, 0.5)]], [60e6])
    base = follower_throughput(w, 0, d, led)
    w2, _ = _single_swarm(SimConfig(M=1, N=1, K=0, f_F=6e6))
    led2 = _ledger([25.0], [[(0, 0, 0.5)]], [180e6])
    assert follower_throughput(w2, 0, d, led2) == pytest.approx(3 * base)


# ---- whole-ledger oracle -------------------------------------------------------

LEDGER_FIELDS = [("task_F", "task_F"), ("task_L", "task_L"), ("E_comp_F", "E_comp_F"),
                 ("E_comp_L", "E_comp_L"), ("E_pro_F", "E_pro_F"), ("E_pro_L", "E_pro_L"),
                 ("E_ret_L", "E_ret"), ("T_Fhov", "TF"), ("T_Lhov", "TL")]


def assert_matches_oracle(led, ref, rel=1e-9):
    for ours, theirs in LEDGER_FIELDS:
        np.testing.assert_allclose(getattr(led, ours), ref[theirs], rtol=rel, atol=0, err_msg=ours)
    for n, dele in enumerate(ref["T_dele"]):
        assert led.T_dele[n].keys() == dele.keys()
        for c, t in dele.items():
            assert led.T_dele[n][c] == pytest.approx(t, rel=rel)
    for n, times in enumerate(ref["T_off"]):
        assert sorted(t for _, _, t in led.offloads[n]) == pytest.approx(sorted(times), rel=rel)
    assert led.effi == pytest.approx(ref["effi"], rel=rel, abs=0)


def test_end_to_end_single_request_trace():
    cfg = SimConfig(M=1, N=1, K=1, demand_prob=1.0)
    w = build_world(cfg, 4)
    F, L = w.followers[0], w.leaders[0]
    F.step, L.step = cfg.q, cfg.l
    c = sorted(F.apps)[0]
    w.device_xy[0] = ((F.cell[0] + 0.3) * cfg.q, (F.cell[1] + 0.6) * cfg.q)
    w.device_cell[0] = F.cell[0] * cfg.n_small + F.cell[1]
    w.devices_by_cell = {int(w.device_cell[0]): [0]}
    led = evaluate_slot(w, DemandMatrix(0, np.array([c]), cfg.C))
    # by hand: SINR -> upload time -> throughput -> energy -> efficiency
    dx = (0.3 - 0.5) * cfg.q
    dy = (0.6 - 0.5) * cfg.q
    dist = math.sqrt(dx * dx + dy * dy + cfg.H_F ** 2)
    loss = 20 * math.log10(4 * math.pi * 3e9 / 299_792_458.0) + 22 * math.log10(dist)
    gamma = 0.1 * 10 ** (-loss / 10) / (10 ** (-20.4) * 1e7)
    t_off = 1e7 / (1e7 * math.log2(1 + gamma))
    task = min(1e7, 2e6 * (25.0 - t_off))
    e_f = 1e-18 * 4e12 * task + prop_power(20) * 5 + prop_power(0) * 25
    e_l = prop_power(20) * 25 + prop_power(0) * 5
    assert led.task_F[0] == pytest.approx(1e7)
    assert led.effi == pytest.approx(task / (e_f + e_l), rel=1e-12)


def test_random_slots_match_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        w, d = random_slot(rng)
        assert_matches_oracle(evaluate_slot(w, d), oracle_ledger(w, d))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_ledger_invariants(seed):
    w, d = random_slot(np.random.default_rng(seed))
    led = evaluate_slot(w, d)
    cfg = w.config
    for name, _ in LEDGER_FIELDS:
        assert np.all(getattr(led, name) >= 0), name
    assert led.served_bits + led.dropped_bits == pytest.approx(led.requested_bits)
    assert led.dropped_bits >= -1e-6
    for n in range(cfg.N):
        assert led.task_F[n] <= led.retained_bits[n] + 1e-6
        times = [t for _, _, t in led.offloads[n]]
        bound = (min(times) if cfg.offload_bound == "min" else max(times)) if times else 0.0
        assert led.task_F[n] <= cfg.f_F * max(0.0, led.T_Fhov[n] - bound) + 1e-6
    for m, L in enumerate(w.leaders):
        assert led.task_L[m] <= led.delegated_bits[m] + 1e-6
        assert (led.E_ret_L[m] > 0) == (L.eps_return and d_ret(w, m) > 0)


# ---- batteries -------------------------------------------------------------------

def test_battery_step():
    w, d = _single_swarm(SimConfig(M=2, N=2, K=0))
    w.leaders[0].E_remain = 100e3
    w.leaders[1].E_remain = 100e3
    w.leaders[1].eps_return = True
    led = evaluate_slot(w, d)
    before = battery_step(w, led)
    assert before.tolist() == [100e3, 100e3]
    assert w.leaders[0].E_remain == pytest.approx(100e3 - led.leader_energy[0])
    assert w.leaders[1].E_remain == w.config.E_cap
    w.leaders[0].E_remain = 1.0
    with pytest.raises(BatteryError):
        battery_step(w, led)
