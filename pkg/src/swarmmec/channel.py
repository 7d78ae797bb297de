"""Path loss, SINR and transfer times."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SimConfig
from .world import (DemandMatrix, World, coverage_set, distance, follower_point,
                    leader_point)

SPEED_OF_LIGHT = 299_792_458.0


def free_space_ref_db(carrier_f: float) -> float:
    """Free-space path loss at 1 m for ``carrier_f`` Hz."""
    return 20.0 * math.log10(4.0 * math.pi * carrier_f / SPEED_OF_LIGHT)


@dataclass(frozen=True)
class ChannelParams:
    pathloss_exponent: float
    pathloss_ref_db: float
    noise_psd: float
    B: float

    @classmethod
    def from_config(cls, cfg: SimConfig) -> "ChannelParams":
        return cls(cfg.pathloss_exponent, free_space_ref_db(cfg.carrier_f), cfg.noise_psd, cfg.B)

    @property
    def noise_power(self) -> float:
        # noise_psd is a density in dBm/Hz; integrate over the band
        return 10.0 ** ((self.noise_psd - 30.0) / 10.0) * self.B


def path_loss_db(tx, rx, params: ChannelParams) -> float:
    """Log-distance path loss in dB between two 3-D points."""
    d = distance(tx, rx)
    if d <= 0.0:
        raise ValueError("path loss undefined at zero distance")
    return params.pathloss_ref_db + 10.0 * params.pathloss_exponent * math.log10(d)


def path_loss_db_array(d: np.ndarray, params: ChannelParams) -> np.ndarray:
    return params.pathloss_ref_db + 10.0 * params.pathloss_exponent * np.log10(d)


def _received(p: float, loss_db):
    return p * 10.0 ** (-np.asarray(loss_db) / 10.0)


def _device_point(world: World, k: int):
    x, y = world.device_xy[k]
    return (float(x), float(y), 0.0)


def sinr_device_uplink(world: World, n: int, k: int, demand: DemandMatrix,
                       params: ChannelParams | None = None) -> float:
    """Uplink SINR of device ``k`` at its serving follower ``n``.

    Only devices of the same small grid that request a task this slot
    interfere.
    """
    params = params or ChannelParams.from_config(world.config)
    covered = coverage_set(world, n)
    if k not in covered:
        raise ValueError(f"device {k} is not covered by follower {n}")
    rx = follower_point(world, n)
    p = world.config.p_I
    signal = float(_received(p, path_loss_db(_device_point(world, k), rx, params)))
    interference = 0.0
    for i in covered:
        if i != k and demand.req_type[i] >= 0:
            interference += float(_received(p, path_loss_db(_device_point(world, i), rx, params)))
    return signal / (interference + params.noise_power)


def sinr_delegation(world: World, m: int, n: int, params: ChannelParams | None = None) -> float:
    """Interference-free SINR of follower ``n``'s link to leader ``m``."""
    params = params or ChannelParams.from_config(world.config)
    if world.leaders[m].eps_return:
        raise ValueError(f"leader {m} is at the depot")
    loss = path_loss_db(follower_point(world, n), leader_point(world, m), params)
    return float(_received(world.config.p_F, loss)) / params.noise_power


def transfer_time(bits: float, B: float, sinr: float) -> float:
    if bits == 0:
        return 0.0
    return bits / (B * math.log2(1.0 + sinr))


def offload_time(world: World, k: int, c: int, n: int, demand: DemandMatrix,
                 params: ChannelParams | None = None) -> float:
    """Seconds for device ``k`` to upload its type-``c`` task to follower ``n``."""
    if demand.req_type[k] != c:
        if k not in coverage_set(world, n):
            raise ValueError(f"device {k} is not covered by follower {n}")
        return 0.0
    gamma = sinr_device_uplink(world, n, k, demand, params)
    return transfer_time(float(world.config.kappa_c[c]), world.config.B, gamma)


def delegation_time(world: World, m: int, n: int, c: int,
                    params: ChannelParams | None = None) -> float:
    """Seconds for follower ``n`` to forward one type-``c`` task to leader ``m``."""
    F = world.followers[n]
    if world.leaders[m].eps_return or F.leader_id != m or c not in F.delegations:
        return 0.0
    gamma = sinr_delegation(world, m, n, params)
    return transfer_time(float(world.config.kappa_c[c]), world.config.B, gamma)
