"""Simulated radio link: path-loss models gated by a sensitivity threshold.

The link budget is purely additive:

    P_rx = tx_power + g_tx + g_rx - cable_loss - path_loss - shadowing

with path loss from either free space or a flat-earth two-ray phasor
sum, and shadowing an optional zero-mean Gaussian in dB drawn from a
seeded generator. Reception is a hard threshold: received iff
P_rx >= sensitivity (inclusive). No MAC contention, no interference;
the field trials this mirrors involve a single transmitter.
"""

from __future__ import annotations

import cmath
import math
import random
from dataclasses import dataclass

from .core import SPEED_OF_LIGHT_MPS, free_space_loss_db


@dataclass(frozen=True)
class LinkBudgetConfig:
    sensitivity_dbm: float
    tx_power_dbm: float = 26.0
    tx_antenna_gain_dbi: float = 3.9
    rx_antenna_gain_dbi: float = 3.9
    cable_loss_db: float = 0.0
    fc_hz: float = 5.9e9
    shadowing_sigma_db: float = 0.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not math.isfinite(self.sensitivity_dbm):
            raise ValueError("sensitivity_dbm must be finite")
        if self.shadowing_sigma_db < 0:
            raise ValueError("shadowing sigma must be >= 0")
        if self.fc_hz <= 0:
            raise ValueError("fc_hz must be > 0")


@dataclass(frozen=True)
class FreeSpace:
    """Free-space propagation; loss depends only on distance and fc."""


@dataclass(frozen=True)
class TwoRay:
    """Flat-earth two-ray model: direct path plus one ground reflection."""

    h_tx_m: float
    h_rx_m: float
    reflection_coeff: float = -1.0

    def __post_init__(self) -> None:
        if self.h_tx_m <= 0 or self.h_rx_m <= 0:
            raise ValueError("antenna heights must be > 0")


PropagationModel = FreeSpace | TwoRay


def two_ray_loss_db(d_m: float, h_tx_m: float, h_rx_m: float,
                    fc_hz: float, gamma: float = -1.0) -> float:
    """Two-ray path loss in dB via the exact two-path phasor sum.

    loss = -20 log10( (lambda / (4 pi d_los)) * |1 + gamma e^{j dphi}| )

    where d_los and d_refl are the direct and ground-reflected path
    lengths and dphi their phase difference. At an exact null the loss
    is +inf.
    """
    if d_m <= 0:
        raise ValueError(f"distance must be > 0: {d_m}")
    if h_tx_m <= 0 or h_rx_m <= 0:
        raise ValueError("antenna heights must be > 0")
    lam = SPEED_OF_LIGHT_MPS / fc_hz
    d_los = math.hypot(d_m, h_tx_m - h_rx_m)
    d_refl = math.hypot(d_m, h_tx_m + h_rx_m)
    dphi = 2.0 * math.pi * (d_refl - d_los) / lam
    amplitude = abs(1.0 + gamma * cmath.exp(1j * dphi))
    field = (lam / (4.0 * math.pi * d_los)) * amplitude
    if field == 0.0:
        return math.inf
    return -20.0 * math.log10(field)


def two_ray_asymptote_db(d_m: float, h_tx_m: float, h_rx_m: float) -> float:
    """Far-field 40 log10(d) - 20 log10(h_t h_r) approximation."""
    return 40.0 * math.log10(d_m) - 20.0 * math.log10(h_tx_m * h_rx_m)


def path_loss_db(d_m: float, fc_hz: float, model: PropagationModel) -> float:
    """Dispatch to the configured propagation model."""
    if isinstance(model, FreeSpace):
        return free_space_loss_db(d_m, fc_hz)
    if isinstance(model, TwoRay):
        return two_ray_loss_db(d_m, model.h_tx_m, model.h_rx_m, fc_hz,
                               model.reflection_coeff)
    raise TypeError(f"unknown propagation model: {model!r}")


def received_power_dbm(d_m: float, cfg: LinkBudgetConfig,
                       model: PropagationModel,
                       shadowing_db: float = 0.0) -> float:
    """Link budget at distance d with an explicit shadowing term."""
    loss = path_loss_db(d_m, cfg.fc_hz, model)
    return (cfg.tx_power_dbm + cfg.tx_antenna_gain_dbi
            + cfg.rx_antenna_gain_dbi - cfg.cable_loss_db
            - loss - shadowing_db)


def is_received(p_rx_dbm: float, cfg: LinkBudgetConfig) -> bool:
    """Hard threshold, boundary inclusive."""
    return p_rx_dbm >= cfg.sensitivity_dbm


class Link:
    """A link budget bound to one seeded shadowing sequence.

    Every call to received_power() consumes one Gaussian draw when
    sigma > 0, so equal seeds give identical event sequences.
    """

    def __init__(self, cfg: LinkBudgetConfig,
                 model: PropagationModel) -> None:
        self.cfg = cfg
        self.model = model
        self._rng = random.Random(cfg.rng_seed)

    def received_power(self, d_m: float,
                       tx_power_dbm: float | None = None) -> float:
        shadow = 0.0
        if self.cfg.shadowing_sigma_db > 0:
            shadow = self._rng.gauss(0.0, self.cfg.shadowing_sigma_db)
        p_rx = received_power_dbm(d_m, self.cfg, self.model, shadow)
        if tx_power_dbm is not None:
            p_rx += tx_power_dbm - self.cfg.tx_power_dbm
        return p_rx

    def try_receive(self, d_m: float,
                    tx_power_dbm: float | None = None) -> tuple[bool, float]:
        p_rx = self.received_power(d_m, tx_power_dbm)
        return is_received(p_rx, self.cfg), p_rx


def calibrate_sensitivity_dbm(cfg: LinkBudgetConfig,
                              model: PropagationModel,
                              range_m: float) -> float:
    """Sensitivity that puts the sigma=0 reception crossover at range_m.

    The receiver sensitivity of the real radio is unknown; scenarios pin
    it to a target range instead of hard-coding a datasheet number.
    """
    return received_power_dbm(range_m, cfg, model, 0.0)


def crossover_distance_m(cfg: LinkBudgetConfig, model: PropagationModel,
                         lo_m: float = 0.1, hi_m: float = 1e6,
                         tol_m: float = 1e-3) -> float:
    """Largest distance still received under sigma=0 free-space style
    monotone loss, by bisection. Caller must ensure the model is
    monotone over [lo, hi] (true for free space, not for two-ray)."""
    if not is_received(received_power_dbm(lo_m, cfg, model), cfg):
        raise ValueError(f"not even received at {lo_m} m")
    if is_received(received_power_dbm(hi_m, cfg, model), cfg):
        return hi_m
    while hi_m - lo_m > tol_m:
        mid = 0.5 * (lo_m + hi_m)
        if is_received(received_power_dbm(mid, cfg, model), cfg):
            lo_m = mid
        else:
            hi_m = mid
    return lo_m
