"""Simulation configuration and its validation."""

from __future__ import annotations

import dataclasses
import math
from functools import cached_property
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np


class ConfigError(ValueError):
    """Raised when a configuration violates one of its invariants."""


@dataclass(frozen=True)
class PropulsionParams:
    """Rotary-wing propulsion constants (blade profile, induced, parasite)."""

    P0: float = 79.86
    Pi: float = 88.63
    U_tip: float = 120.0
    v0: float = 4.03
    d0: float = 0.6
    rho: float = 1.225
    s_rotor: float = 0.05
    A: float = 0.503

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            if not getattr(self, f.name) > 0:
                raise ConfigError(f"propulsion parameter {f.name} must be > 0")


@dataclass(frozen=True)
class LearnerParams:
    beta: float = 0.1
    sigma: float = 0.9
    eps_start: float = 0.5
    eps_end: float = 0.05

    def epsilon(self, episode: int, n_episodes: int) -> float:
        """Linearly decayed exploration probability for ``episode``."""
        if n_episodes <= 1:
            return self.eps_end
        frac = min(max(episode / (n_episodes - 1), 0.0), 1.0)
        return self.eps_start + (self.eps_end - self.eps_start) * frac

    def validate(self) -> None:
        if not 0.0 < self.beta <= 1.0:
            raise ConfigError("learning rate beta must lie in (0, 1]")
        if not 0.0 <= self.sigma <= 1.0:
            raise ConfigError("discount sigma must lie in [0, 1]")
        for name in ("eps_start", "eps_end"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class SimConfig:
    """All parameters of one simulated system.

    Defaults reproduce the published parameter table where it speaks;
    the remaining values (large-grid side, device power, battery sizing,
    demand rate, propulsion constants, learner settings) are artifact
    defaults and may be overridden.
    """

    M: int = 3
    N: int = 9
    K: int = 500
    C: int = 10
    region_side: float = 2500.0
    l: float = 500.0
    q: float = 100.0
    H_L: float = 150.0
    H_F: float = 120.0
    v: float = 20.0
    slot_duration: float = 30.0
    B: float = 10e6
    carrier_f: float = 3e9
    p_I: float = 0.1
    p_F: float = 0.2
    p_L: float = 2.0
    noise_psd: float = -174.0
    f_F: float = 2e6
    f_L: float = 2e6
    xi: float = 1e-18
    kappa: Union[float, Tuple[float, ...]] = 10e6
    S_L: int = 6
    S_F: int = 4
    E_cap: float = 500e3
    E_unit: float = 25e3
    demand_prob: float = 0.5
    depot_position: Optional[Tuple[float, float]] = None
    T_horizon: int = 100
    LOOP: int = 500
    rng_seed: int = 0
    pathloss_exponent: float = 2.2
    eval_episodes: int = 10
    strict_coverage: bool = False
    offload_bound: str = "min"
    propulsion: PropulsionParams = field(default_factory=PropulsionParams)
    learner: LearnerParams = field(default_factory=LearnerParams)

    # ---- derived geometry -------------------------------------------------
    @cached_property
    def n_large(self) -> int:
        """Large grids per region side."""
        return int(round(self.region_side / self.l))

    @cached_property
    def n_small(self) -> int:
        """Small grids per region side."""
        return int(round(self.region_side / self.q))

    @cached_property
    def ratio(self) -> int:
        """Small grids per large-grid side."""
        return int(round(self.l / self.q))

    @cached_property
    def depot(self) -> Tuple[float, float]:
        if self.depot_position is None:
            return (self.region_side / 2.0, 0.0)
        return tuple(self.depot_position)

    @cached_property
    def kappa_c(self) -> np.ndarray:
        """Task size per task type, bits."""
        if isinstance(self.kappa, (tuple, list)):
            return np.asarray(self.kappa, dtype=float)
        return np.full(self.C, float(self.kappa))

    @cached_property
    def noise_power(self) -> float:
        """Noise power over the whole band, watts."""
        return 10.0 ** ((self.noise_psd - 30.0) / 10.0) * self.B

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def validate(self) -> "SimConfig":
        if self.M < 1:
            raise ConfigError("invariant M >= 1 violated")
        if self.N < self.M:
            raise ConfigError("invariant N >= M violated (every leader needs a follower)")
        if self.K < 0:
            raise ConfigError("invariant K >= 0 violated")
        if not self.C >= self.S_L >= 1:
            raise ConfigError("invariant C >= S_L >= 1 violated")
        if not self.C >= self.S_F >= 1:
            raise ConfigError("invariant C >= S_F >= 1 violated")
        if not _is_multiple(self.l, self.q):
            raise ConfigError("invariant l is an integer multiple of q violated")
        if not _is_multiple(self.region_side, self.l):
            raise ConfigError("invariant region_side is an integer multiple of l violated")
        for name in ("region_side", "l", "q", "H_L", "H_F", "v", "slot_duration",
                     "B", "carrier_f", "p_I", "p_F", "p_L", "f_F", "f_L", "xi",
                     "E_cap", "E_unit"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"invariant {name} > 0 violated")
        kappa = self.kappa_c
        if kappa.shape != (self.C,) or not np.all(kappa > 0):
            raise ConfigError("invariant kappa > 0 for each of the C task types violated")
        if not 0.0 <= self.demand_prob <= 1.0:
            raise ConfigError("invariant demand_prob in [0, 1] violated")
        if self.pathloss_exponent < 2.0:
            raise ConfigError("invariant pathloss_exponent >= 2 violated")
        if self.T_horizon < 1 or self.LOOP < 0 or self.eval_episodes < 0:
            raise ConfigError("invariant T_horizon >= 1, LOOP >= 0, eval_episodes >= 0 violated")
        if self.offload_bound not in ("min", "max"):
            raise ConfigError("offload_bound must be 'min' or 'max'")
        x, y = self.depot
        R = self.region_side
        on_edge = (math.isclose(x, 0) or math.isclose(x, R) or math.isclose(y, 0)
                   or math.isclose(y, R))
        if not (0 <= x <= R and 0 <= y <= R and on_edge):
            raise ConfigError("invariant depot_position on the region edge violated")
        self.propulsion.validate()
        self.learner.validate()
        return self


def _is_multiple(a: float, b: float) -> bool:
    r = a / b
    return abs(r - round(r)) < 1e-9 and round(r) >= 1
