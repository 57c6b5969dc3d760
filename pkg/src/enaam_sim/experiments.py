"""Experiment orchestration: policy comparisons, alpha sweeps, trace generation."""

from __future__ import annotations

import csv
import json
import logging
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .controller import DEFAULT_GRID_POINTS, DEFAULT_HORIZON
from .power_model import ConfigError, SiteConfig
from .simulator import (
    POLICIES,
    PolicySpec,
    RunResult,
    compare_savings,
    hourly_profile,
    make_forecasters,
    run,
    write_records_csv,
)
from .traces import (
    DEFAULT_EDGE_SHARE,
    DEFAULT_SLOT_SECONDS,
    TraceBundle,
    load_csv_trace,
    synth_bundle,
    write_csv_trace,
)

log = logging.getLogger(__name__)


@dataclass
class TraceSource:
    days: int = 30
    l_max_mb: float | None = None
    edge_share: float = DEFAULT_EDGE_SHARE
    slot_seconds: float = DEFAULT_SLOT_SECONDS
    noise_sd: float | None = None
    harvest_multiple: float = 1.0
    load_csv: str | None = None
    harvest_csv: str | None = None
    load_column: str | None = None
    harvest_column: str | None = None
    # CSV load columns hold aggregate traffic; the edge share is applied on read
    csv_is_aggregate: bool = True

    def bundle(self, site: SiteConfig, seed: int) -> TraceBundle:
        if self.load_csv or self.harvest_csv:
            if not (self.load_csv and self.harvest_csv):
                raise ConfigError("traces", "load_csv and harvest_csv must be given together")
            scale = self.edge_share if self.csv_is_aggregate else 1.0
            load = load_csv_trace(self.load_csv, self.load_column, self.slot_seconds, scale)
            harvest = load_csv_trace(self.harvest_csv, self.harvest_column, self.slot_seconds)
            return TraceBundle(load, harvest, self.edge_share)
        if self.slot_seconds != DEFAULT_SLOT_SECONDS:
            raise ConfigError("slot_seconds", "synthetic traces are hourly; use CSV traces for other slot lengths")
        l_max = self.l_max_mb if self.l_max_mb is not None else site.l_max
        return synth_bundle(self.days, l_max, site.beta_max, seed, self.noise_sd, self.edge_share,
                            self.harvest_multiple)


@dataclass
class ExperimentSpec:
    site: SiteConfig = field(default_factory=SiteConfig)
    traces: TraceSource = field(default_factory=TraceSource)
    policies: list[str] = field(default_factory=lambda: list(POLICIES))
    alphas: list[float] = field(default_factory=lambda: [0.0, 0.5])
    seeds: list[int] = field(default_factory=lambda: [0])
    horizon_t: int = DEFAULT_HORIZON
    gamma_grid_points: int = DEFAULT_GRID_POINTS
    forecaster: str = "lstm"
    epochs: int = 100
    lookback: int = 24
    initial_beta_kj: float | None = None
    output_dir: str = "results"
    jobs: int = 1

    def __post_init__(self) -> None:
        if not self.policies:
            raise ConfigError("policies", "at least one policy is required")
        for p in self.policies:
            if p not in POLICIES:
                raise ConfigError("policies", f"unknown policy {p!r}; expected one of {POLICIES}")
        if not self.alphas:
            raise ConfigError("alphas", "at least one alpha is required")
        for a in self.alphas:
            if not 0.0 <= a <= 1.0:
                raise ConfigError("alphas", f"alpha {a} outside [0, 1]")
        if not self.seeds:
            raise ConfigError("seeds", "at least one seed is required")
        if self.horizon_t < 1:
            raise ConfigError("horizon_t", "must be >= 1")
        if self.gamma_grid_points < 2:
            raise ConfigError("gamma_grid_points", "must be >= 2")
        if self.forecaster not in ("lstm", "seasonal-naive"):
            raise ConfigError("forecaster", "expected 'lstm' or 'seasonal-naive'")
        if self.traces.days < 1:
            raise ConfigError("traces.days", "must be >= 1")

    def policy(self, name: str, alpha: float, seed: int) -> PolicySpec:
        return PolicySpec(name, alpha, self.horizon_t, self.gamma_grid_points, seed)


_TOP_LEVEL = {"policies", "alphas", "seeds", "horizon_t", "gamma_grid_points", "forecaster", "epochs",
              "lookback", "initial_beta_kj", "output_dir", "jobs"}


def spec_from_dict(doc: dict | None) -> ExperimentSpec:
    doc = dict(doc or {})
    site = SiteConfig.from_dict(doc.pop("site", None) or {})
    tdoc = doc.pop("traces", None) or {}
    known = set(TraceSource.__dataclass_fields__)
    for k in tdoc:
        if k not in known:
            raise ConfigError(f"traces.{k}", "unknown trace field")
    traces = TraceSource(**tdoc)
    for k in doc:
        if k not in _TOP_LEVEL:
            raise ConfigError(k, "unknown experiment field")
    if "policies" in doc:
        doc["policies"] = [p["name"] if isinstance(p, dict) else str(p) for p in doc["policies"]]
    if "alphas" in doc:
        doc["alphas"] = [float(a) for a in doc["alphas"]]
    if "seeds" in doc:
        doc["seeds"] = [int(s) for s in doc["seeds"]]
    return ExperimentSpec(site=site, traces=traces, **doc)


def load_spec(path: str | Path | None, overrides: dict | None = None) -> ExperimentSpec:
    doc = {}
    if path is not None:
        doc = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(doc, dict):
            raise ConfigError(str(path), "config must be a mapping")
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.rpartition(".")
        target = doc.setdefault(section, {}) if section else doc
        target[key] = value
    return spec_from_dict(doc)


# ---------------------------------------------------------------------------


def _seed_runs(spec: ExperimentSpec, seed: int, jobs: list[tuple[str, float]]) -> tuple[list[RunResult], RunResult]:
    bundle = spec.traces.bundle(spec.site, seed)
    fc = make_forecasters(bundle, spec.forecaster, spec.epochs, seed, spec.lookback)
    results = [run(bundle, spec.policy(name, alpha, seed), spec.site, fc, spec.initial_beta_kj)
               for name, alpha in jobs]
    baseline = next((r for r in results if r.policy.name == "no-management"), None)
    if baseline is None:
        baseline = run(bundle, spec.policy("no-management", 0.0, seed), spec.site, fc, spec.initial_beta_kj)
    for r in results:
        compare_savings(r, baseline)
    return results, baseline


def _fan_out(spec: ExperimentSpec, jobs: list[tuple[str, float]]) -> dict[int, tuple[list[RunResult], RunResult]]:
    if spec.jobs > 1 and len(spec.seeds) > 1:
        with ProcessPoolExecutor(spec.jobs) as pool:
            futures = {s: pool.submit(_seed_runs, spec, s, jobs) for s in spec.seeds}
            return {s: f.result() for s, f in futures.items()}
    return {s: _seed_runs(spec, s, jobs) for s in spec.seeds}


class _Staging:
    """Write into a scratch directory; publish into ``output_dir`` only on success."""

    def __init__(self, output_dir: str | Path):
        self.output_dir = Path(output_dir)

    def __enter__(self) -> Path:
        self.output_dir.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.output_dir.parent))
        return self.tmp

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            for item in sorted(self.tmp.rglob("*")):
                dest = self.output_dir / item.relative_to(self.tmp)
                if item.is_dir():
                    dest.mkdir(parents=True, exist_ok=True)
                else:
                    dest.parent.mkdir(parents=True, exist_ok=True)
                    shutil.move(str(item), dest)
        shutil.rmtree(self.tmp, ignore_errors=True)


def _metrics_row(r: RunResult) -> dict:
    m = r.metrics
    return {
        "policy": r.policy.name,
        "alpha": r.policy.alpha,
        "seed": r.policy.seed,
        "mean_savings": m.mean_savings_pct,
        "mean_utilization": m.mean_utilization_pct,
        "utilization_min": m.utilization_min,
        "utilization_max": m.utilization_max,
        "outage_slots": m.outage_slots,
        "total_drained_kj": m.total_drained_kj,
        "forecast_rmse_load": m.forecast_rmse_load,
        "ledger_residual_kj": m.ledger_residual(),
    }


def _write_table(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def cmd_simulate(spec: ExperimentSpec) -> dict:
    """Run every (policy, alpha, seed) and write slot CSVs, hourly savings and a summary."""
    alphas = _dedup(spec.alphas)
    jobs = [(p, a) for p in spec.policies for a in alphas]
    per_seed = _fan_out(spec, jobs)

    summary = {"site": spec.site.to_dict(), "runs": [], "means": []}
    with _Staging(spec.output_dir) as out:
        (out / "runs").mkdir()
        for seed in spec.seeds:
            for r in per_seed[seed][0]:
                write_records_csv(r, out / "runs" / f"{r.policy.label}.csv")
                summary["runs"].append(_metrics_row(r))

        for name, alpha in jobs:
            runs = [next(r for r in per_seed[s][0] if (r.policy.name, r.policy.alpha) == (name, alpha))
                    for s in spec.seeds]
            base = {s: per_seed[s][1] for s in spec.seeds}
            savings = {r.policy.seed: compare_savings(r, base[r.policy.seed])[0] for r in runs}
            rows = []
            for h in range(24):
                row = {"hour": h}
                for s in spec.seeds:
                    row[f"savings_s{s}"] = float(hourly_profile(savings[s], spec.site.slot_seconds)[h])
                row["savings_mean"] = float(np.mean([row[f"savings_s{s}"] for s in spec.seeds]))
                row["utilization_mean"] = float(np.mean(
                    [hourly_profile(r.gammas(), spec.site.slot_seconds)[h] for r in runs]))
                rows.append(row)
            _write_table(out / f"savings_{name}_a{alpha:g}.csv", rows)
            summary["means"].append({
                "policy": name,
                "alpha": alpha,
                "mean_savings": float(np.mean([r.metrics.mean_savings_pct for r in runs])),
                "mean_utilization": float(np.mean([r.metrics.mean_utilization_pct for r in runs])),
                "seeds": list(spec.seeds),
            })
        _write_table(out / "summary.csv", summary["runs"])
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary


def _dedup(alphas: list[float]) -> list[float]:
    seen = []
    for a in alphas:
        if a in seen:
            log.warning("duplicate alpha %g ignored", a)
        else:
            seen.append(a)
    return seen


def kendall_tau(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    s, n = 0.0, 0
    for i in range(len(x)):
        for j in range(i + 1, len(x)):
            s += np.sign(x[j] - x[i]) * np.sign(y[j] - y[i])
            n += 1
    return s / n if n else float("nan")


def cmd_sweep_alpha(spec: ExperimentSpec) -> dict:
    """ENAAM savings and utilization against alpha, averaged over seeds."""
    alphas = _dedup(spec.alphas)
    if len(alphas) < 2:
        raise ConfigError("alphas", "sweep needs at least two distinct values")
    jobs = [("enaam", a) for a in alphas]
    per_seed = _fan_out(spec, jobs)
    rows = []
    for a in alphas:
        runs = [next(r for r in per_seed[s][0] if r.policy.alpha == a) for s in spec.seeds]
        rows.append({
            "alpha": a,
            "mean_savings": float(np.mean([r.metrics.mean_savings_pct for r in runs])),
            "mean_utilization": float(np.mean([r.metrics.mean_utilization_pct for r in runs])),
            "n_seeds": len(runs),
        })
    sav = [r["mean_savings"] for r in rows]
    trend = {
        "kendall_tau": kendall_tau(alphas, sav),
        "max_step_increase": float(max(np.diff(sav))),
    }
    with _Staging(spec.output_dir) as out:
        _write_table(out / "sweep_alpha.csv", rows)
        (out / "sweep_alpha.json").write_text(json.dumps({"rows": rows, "trend": trend}, indent=2))
    return {"rows": rows, "trend": trend}


def cmd_gen_traces(days: int, seed: int, output_dir: str | Path, site: SiteConfig | None = None,
                   noise_sd: float | None = None, harvest_multiple: float = 1.0) -> tuple[Path, Path]:
    site = site or SiteConfig()
    src = TraceSource(days=days, noise_sd=noise_sd, harvest_multiple=harvest_multiple)
    if days < 1:
        raise ConfigError("days", "must be >= 1")
    bundle = src.bundle(site, seed)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = out / f"load_s{seed}.csv", out / f"harvest_s{seed}.csv"
    write_csv_trace(bundle.load, paths[0], "load_mb")
    write_csv_trace(bundle.harvested, paths[1], "harvest_kj")
    return paths


def with_seed(spec: ExperimentSpec, seed: int) -> ExperimentSpec:
    return replace(spec, seeds=[seed])
