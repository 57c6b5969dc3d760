"""Site energy consumption per slot and energy-buffer dynamics."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np


class ConfigError(ValueError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


@dataclass(frozen=True)
class SiteConfig:
    """Physical and policy constants of one off-grid BS + MEC site.

    Powers are in W, energies in kJ, loads in MB.  Defaults are the values of
    the reference scenario (ProLiant DL380 server at 1600 MHz, 27 VMs).
    """

    theta0: float = 10.6
    theta_bh: float = 50.0
    theta_idle: float = 30.0
    theta_dyn_max: float = 472.3
    theta_tx_max: float = 1128.0
    epsilon: float = 0.3
    m_vms: int = 27
    b_min_vms: int = 3
    beta_max: float = 490.0
    beta_low: float = 147.0
    l_max: float = 15.0
    l_low: float = 4.0
    f_mhz: float = 1600.0
    slot_seconds: float = 3600.0
    sleep_scales_tx: bool = True
    raw_cost_units: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError("epsilon", "must lie in (0, 1)")
        if not 1 <= self.b_min_vms <= self.m_vms:
            raise ConfigError("b_min_vms", "need 1 <= b_min_vms <= m_vms")
        if not 0.0 < self.beta_low < self.beta_max:
            raise ConfigError("beta_low", "need 0 < beta_low < beta_max")
        if not 0.0 < self.l_low < self.l_max:
            raise ConfigError("l_low", "need 0 < l_low < l_max")
        for name in ("theta0", "theta_bh", "theta_idle", "theta_dyn_max", "theta_tx_max"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "power must be non-negative")
        if self.slot_seconds <= 0:
            raise ConfigError("slot_seconds", "must be positive")

    @property
    def kj_per_w(self) -> float:
        return self.slot_seconds / 1000.0

    @classmethod
    def from_dict(cls, data: dict) -> "SiteConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown site config field")
        kwargs = {}
        for key, value in data.items():
            ftype = known[key].type
            try:
                if ftype == "bool":
                    if not isinstance(value, bool):
                        raise TypeError
                    kwargs[key] = value
                elif ftype == "int":
                    if isinstance(value, bool) or int(value) != value:
                        raise TypeError
                    kwargs[key] = int(value)
                else:
                    kwargs[key] = float(value)
            except (TypeError, ValueError):
                raise ConfigError(key, f"expected {ftype}, got {value!r}") from None
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class Mode(Enum):
    SAVING = "saving"
    ACTIVE = "active"

    def zeta(self, cfg: SiteConfig) -> float:
        return 1.0 if self is Mode.ACTIVE else cfg.epsilon


@dataclass(frozen=True)
class ControlAction:
    mode: Mode
    gamma: float

    def __post_init__(self) -> None:
        if not isinstance(self.mode, Mode):
            raise ValueError("mode must be Mode.ACTIVE or Mode.SAVING")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")


@dataclass(frozen=True)
class SystemState:
    vms: int
    buffer_kj: float


def vm_count(gamma: float, m: int) -> int:
    """Active VMs for utilization ``gamma``: half-up rounding of gamma*m, at least one."""
    return min(m, max(1, math.floor(gamma * m + 0.5)))


@lru_cache(maxsize=64)
def gamma_min(cfg: SiteConfig) -> float:
    """Smallest float gamma whose VM count reaches the minimum ``b``."""
    g = (cfg.b_min_vms - 0.5) / cfg.m_vms
    while vm_count(g, cfg.m_vms) < cfg.b_min_vms:
        g = float(np.nextafter(g, 2.0))
    while g > 0 and vm_count(float(np.nextafter(g, -1.0)), cfg.m_vms) >= cfg.b_min_vms:
        g = float(np.nextafter(g, -1.0))
    return g


def tx_power(phi: float, cfg: SiteConfig) -> float:
    """Load-proportional downlink transmit power in W."""
    return cfg.theta_tx_max * phi


def mec_energy(gamma: float, cfg: SiteConfig) -> float:
    return (cfg.theta_idle + gamma * cfg.theta_dyn_max) * cfg.kj_per_w


def site_energy(action: ControlAction, phi: float, cfg: SiteConfig) -> float:
    """Energy drained by BS radio, backhaul and MEC server over one slot, kJ."""
    zeta = action.mode.zeta(cfg)
    tx = tx_power(phi, cfg)
    if cfg.sleep_scales_tx:
        tx *= zeta
    return (zeta * cfg.theta0 + tx + cfg.theta_bh) * cfg.kj_per_w + mec_energy(action.gamma, cfg)


@lru_cache(maxsize=64)
def max_site_energy(cfg: SiteConfig) -> float:
    """Drain at full load with everything on; the no-management ceiling."""
    return site_energy(ControlAction(Mode.ACTIVE, 1.0), 1.0, cfg)


def step_buffer(beta: float, harvested: float, drained: float, cfg: SiteConfig) -> tuple[float, float, float]:
    """Advance the energy buffer one slot.

    Returns ``(beta_next, deficit, spill)``: the level clamped to
    ``[0, beta_max]``, the unmet drain, and the harvest that did not fit.
    """
    raw = beta + harvested - drained
    if raw < 0.0:
        return 0.0, -raw, 0.0
    if raw > cfg.beta_max:
        return cfg.beta_max, 0.0, raw - cfg.beta_max
    return raw, 0.0, 0.0
