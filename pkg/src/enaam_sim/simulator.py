"""Closed-loop simulation of the site under a control policy."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .controller import (
    DEFAULT_GRID_POINTS,
    DEFAULT_HORIZON,
    CostWeights,
    cost_j,
    deta_r_decide,
    enaam_decide,
    no_management_decide,
)
from .forecaster import LstmForecaster, SeasonalNaiveForecaster, train_lstm
from .power_model import ControlAction, SiteConfig, SystemState, site_energy, step_buffer, vm_count
from .traces import TraceBundle, normalize_load

POLICIES = ("enaam", "deta-r", "no-management")


class SimulationError(ValueError):
    pass


class Forecaster(Protocol):
    def forecast(self, history: Sequence[float], k: int) -> list[float]: ...


@dataclass(frozen=True)
class PolicySpec:
    name: str
    alpha: float = 0.0
    horizon: int = DEFAULT_HORIZON
    grid_points: int = DEFAULT_GRID_POINTS
    seed: int = 0

    def __post_init__(self) -> None:
        if self.name not in POLICIES:
            raise ValueError(f"unknown policy {self.name!r}; expected one of {POLICIES}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.grid_points < 2:
            raise ValueError("grid_points must be >= 2")

    @property
    def label(self) -> str:
        return f"{self.name}_a{self.alpha:g}_s{self.seed}"


@dataclass(frozen=True)
class SlotRecord:
    slot: int
    state_before: SystemState
    action: ControlAction
    vms: int
    phi: float
    gamma_served: float
    remote_share: float
    drained_kj: float
    harvested_kj: float
    buffer_after: float
    deficit_kj: float
    spill_kj: float
    cost_j_realized: float
    forecast_load: float
    true_load: float

    def row(self, cfg: SiteConfig) -> dict:
        d = asdict(self)
        del d["state_before"], d["action"]
        return {
            "slot": self.slot,
            "state_before.vms": self.state_before.vms,
            "state_before.buffer_kj": self.state_before.buffer_kj,
            "action.mode": self.action.mode.value,
            "action.zeta": self.action.mode.zeta(cfg),
            "action.gamma": self.action.gamma,
            **{k: v for k, v in d.items() if k != "slot"},
        }


CSV_COLUMNS = (
    "slot", "state_before.vms", "state_before.buffer_kj", "action.mode", "action.zeta", "action.gamma",
    "vms", "phi", "gamma_served", "remote_share", "drained_kj", "harvested_kj", "buffer_after",
    "deficit_kj", "spill_kj", "cost_j_realized", "forecast_load", "true_load",
)


@dataclass
class RunMetrics:
    mean_utilization_pct: float
    utilization_min: float
    utilization_max: float
    outage_slots: int
    total_drained_kj: float
    total_harvested_kj: float
    total_spill_kj: float
    total_deficit_kj: float
    initial_beta_kj: float
    final_beta_kj: float
    forecast_rmse_load: float
    mean_savings_pct: float | None = None

    def ledger_residual(self) -> float:
        """Drained - harvested minus (buffer drop + deficit - spill); zero up to rounding."""
        lhs = self.total_drained_kj - self.total_harvested_kj
        rhs = self.initial_beta_kj - self.final_beta_kj + self.total_deficit_kj - self.total_spill_kj
        return lhs - rhs


@dataclass
class RunResult:
    policy: PolicySpec
    records: list[SlotRecord]
    metrics: RunMetrics
    cfg: SiteConfig = field(repr=False, default_factory=SiteConfig)

    def drained(self) -> np.ndarray:
        return np.array([r.drained_kj for r in self.records])

    def gammas(self) -> np.ndarray:
        return np.array([r.action.gamma for r in self.records])


def make_forecasters(bundle: TraceBundle, kind: str = "lstm", epochs: int = 100, seed: int = 0,
                     lookback: int = 24, period: int = 24) -> tuple[Forecaster, Forecaster]:
    """Load and harvest forecasters for a bundle.

    ``lstm`` fits one network per series on its leading 67%.
    """
    if kind == "seasonal-naive":
        return SeasonalNaiveForecaster(period), SeasonalNaiveForecaster(period)
    if kind != "lstm":
        raise ValueError(f"unknown forecaster kind {kind!r}")
    out = []
    for i, trace in enumerate((bundle.load, bundle.harvested)):
        model, _ = train_lstm(trace, epochs=epochs, seed=seed + i, lookback=lookback)
        out.append(LstmForecaster(model, warmup=period))
    return out[0], out[1]


def run(bundle: TraceBundle, policy: PolicySpec, cfg: SiteConfig,
        forecasters: tuple[Forecaster, Forecaster] | None = None,
        initial_beta: float | None = None) -> RunResult:
    """Simulate every slot of ``bundle`` under ``policy``.

    At the start of slot t the controller sees the buffer level, the traces up
    to t-1 and forecasts for t..t+T-1; the true load and harvest of slot t
    then drive the energy accounting.
    """
    if len(bundle) == 0:
        raise SimulationError("empty trace bundle")
    if bundle.slot_duration != cfg.slot_seconds:
        raise SimulationError(
            f"trace slot duration {bundle.slot_duration} s differs from config slot_seconds {cfg.slot_seconds} s")
    beta = cfg.beta_max / 2.0 if initial_beta is None else float(initial_beta)
    if not 0.0 <= beta <= cfg.beta_max:
        raise SimulationError("initial_beta must lie in [0, beta_max]")
    load_fc, harvest_fc = forecasters or (SeasonalNaiveForecaster(), SeasonalNaiveForecaster())

    load = bundle.load.values
    harvest = bundle.harvested.values
    phis = normalize_load(bundle.load, cfg.l_max)
    weights = CostWeights(policy.alpha)
    rng = np.random.default_rng(policy.seed)
    k = max(policy.horizon, 2)

    beta0 = beta
    vms = cfg.m_vms
    records = []
    for t in range(len(bundle)):
        state = SystemState(vms, beta)
        l_hat = [min(v, cfg.l_max) for v in load_fc.forecast(load[:t], k)]
        if policy.name == "enaam":
            h_hat = harvest_fc.forecast(harvest[:t], k)
            action = enaam_decide(state, policy.horizon, weights, cfg, l_hat, h_hat, policy.grid_points).action
        elif policy.name == "deta-r":
            action = deta_r_decide(l_hat[0], l_hat[1], rng, cfg, beta)
        else:
            action = no_management_decide()

        phi = float(phis[t])
        drained = site_energy(action, phi, cfg)
        beta_next, deficit, spill = step_buffer(beta, float(harvest[t]), drained, cfg)
        if not math.isfinite(beta_next) or not math.isfinite(drained):
            raise SimulationError(f"non-finite energy at slot {t}")
        vms = vm_count(action.gamma, cfg.m_vms)
        records.append(SlotRecord(
            slot=t,
            state_before=state,
            action=action,
            vms=vms,
            phi=phi,
            gamma_served=action.gamma,
            remote_share=max(0.0, phi - action.gamma),
            drained_kj=drained,
            harvested_kj=float(harvest[t]),
            buffer_after=beta_next,
            deficit_kj=deficit,
            spill_kj=spill,
            cost_j_realized=cost_j(action, phi, weights, cfg),
            forecast_load=float(l_hat[0]),
            true_load=float(load[t]),
        ))
        beta = beta_next

    return RunResult(policy, records, summarize(records, beta0), cfg)


def summarize(records: Sequence[SlotRecord], initial_beta: float) -> RunMetrics:
    gam = np.array([r.action.gamma for r in records])
    fc_err = np.array([r.forecast_load - r.true_load for r in records])
    return RunMetrics(
        mean_utilization_pct=float(gam.mean()),
        utilization_min=float(gam.min()),
        utilization_max=float(gam.max()),
        outage_slots=sum(1 for r in records if r.deficit_kj > 0),
        total_drained_kj=float(sum(r.drained_kj for r in records)),
        total_harvested_kj=float(sum(r.harvested_kj for r in records)),
        total_spill_kj=float(sum(r.spill_kj for r in records)),
        total_deficit_kj=float(sum(r.deficit_kj for r in records)),
        initial_beta_kj=float(initial_beta),
        final_beta_kj=float(records[-1].buffer_after),
        forecast_rmse_load=float(np.sqrt(np.mean(fc_err**2))),
    )


def compare_savings(test: RunResult | Sequence[float], baseline: RunResult | Sequence[float]) -> tuple[np.ndarray, float]:
    """Per-slot savings ``1 - drained_test / drained_baseline`` and their mean."""
    a = test.drained() if isinstance(test, RunResult) else np.asarray(test, dtype=float)
    b = baseline.drained() if isinstance(baseline, RunResult) else np.asarray(baseline, dtype=float)
    if a.shape != b.shape:
        raise SimulationError(f"run lengths differ: {a.size} vs {b.size}")
    if np.any(b <= 0):
        raise SimulationError("baseline drained energy is zero in some slot")
    per_slot = 1.0 - a / b
    mean = float(per_slot.mean())
    if isinstance(test, RunResult):
        test.metrics.mean_savings_pct = mean
    return per_slot, mean


def hourly_profile(values: Sequence[float], slot_seconds: float = 3600.0) -> np.ndarray:
    """Mean of ``values`` per hour of day (24 entries, NaN for unseen hours)."""
    v = np.asarray(values, dtype=float)
    hours = (np.arange(v.size) * slot_seconds / 3600.0).astype(int) % 24
    out = np.full(24, np.nan)
    for h in range(24):
        sel = v[hours == h]
        if sel.size:
            out[h] = sel.mean()
    return out


def write_records_csv(result: RunResult, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in result.records:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.row(result.cfg).items()})


def read_records_csv(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
