import numpy as np
import pytest

from swarmmec import SimConfig, build_world
from swarmmec.world import generate_demand, small_cells_in


def random_slot(rng: np.random.Generator):
    """A world with arbitrary (not necessarily feasible) slot decisions and a demand draw."""
    M = int(rng.integers(1, 4))
    N = int(rng.integers(M, M + 6))
    C = int(rng.integers(2, 8))
    kappa = tuple(float(x) for x in rng.uniform(1e6, 2e7, size=C)) if rng.random() < 0.5 else float(rng.uniform(1e6, 2e7))
    cfg = SimConfig(M=M, N=N, K=int(rng.integers(0, 400)), C=C,
                    S_L=int(rng.integers(1, C + 1)), S_F=int(rng.integers(1, C + 1)),
                    v=float(rng.uniform(5, 30)), kappa=kappa,
                    demand_prob=float(rng.uniform(0.2, 1.0)),
                    region_side=1000.0, l=500.0, q=100.0,
                    offload_bound="min" if rng.random() < 0.7 else "max")
    world = build_world(cfg, int(rng.integers(1 << 30)))
    for L in world.leaders:
        L.eps_return = bool(rng.random() < 0.3)
        L.step = 0.0 if L.eps_return or rng.random() < 0.2 else cfg.l
        L.apps = frozenset(int(c) for c in rng.choice(C, size=cfg.S_L, replace=False))
    taken = set()
    for F in world.followers:
        F.prev_leader_id = F.leader_id
        F.leader_id = int(rng.integers(M))
        cells = [c for c in small_cells_in(cfg, world.leaders[F.leader_id].cell) if c not in taken]
        F.cell = cells[int(rng.integers(len(cells)))]
        taken.add(F.cell)
        F.step = cfg.q if rng.random() < 0.8 else 0.0
        F.recluster_leg = float(rng.uniform(0, 700)) if F.leader_id != F.prev_leader_id else 0.0
        F.delegations = frozenset(c for c in range(C) if c not in F.apps and rng.random() < 0.7)
    # devices land in followers' grids often enough to exercise the channel
    for k in range(cfg.K):
        if rng.random() < 0.5 and world.followers:
            F = world.followers[int(rng.integers(N))]
            world.device_xy[k] = (np.array(F.cell) + rng.uniform(0, 1, 2)) * cfg.q
    cells = np.minimum((world.device_xy // cfg.q).astype(np.int64), cfg.n_small - 1)
    world.device_cell = cells[:, 0] * cfg.n_small + cells[:, 1]
    world.devices_by_cell = {}
    for k, c in enumerate(world.device_cell.tolist()):
        world.devices_by_cell.setdefault(c, []).append(k)
    demand = generate_demand(world, 0, rng)
    return world, demand


@pytest.fixture
def default_world():
    return build_world(SimConfig(), 7)
