"""Command line entry point: ``enaam-sim <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import yaml

from .experiments import cmd_gen_traces, cmd_simulate, cmd_sweep_alpha, load_spec, with_seed
from .forecaster import ForecastError, train_lstm
from .power_model import ConfigError, SiteConfig
from .traces import TraceError, load_csv_trace


def _overrides(pairs: list[str]) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(item, "override must look like key=value")
        if "." not in key and key in SiteConfig.__dataclass_fields__:
            key = f"site.{key}"
        out[key] = yaml.safe_load(value)
    return out


def _spec(args):
    spec = load_spec(args.config, _overrides(args.set))
    if args.seed is not None:
        spec = with_seed(spec, args.seed)
    if args.output_dir:
        spec.output_dir = args.output_dir
    return spec


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="enaam-sim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_ in (("simulate", "compare policies on one or more trace bundles"),
                        ("sweep-alpha", "ENAAM energy savings against the cost weight alpha")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="YAML experiment file")
        p.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
        p.add_argument("--output-dir")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field, e.g. theta0=11 or traces.days=7")

    g = sub.add_parser("gen-traces", help="write synthetic load and harvest CSVs")
    g.add_argument("--days", type=int, default=30)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise-sd", type=float)
    g.add_argument("--output-dir", default="traces")

    f = sub.add_parser("forecast-train", help="fit the LSTM on a CSV series and save it")
    f.add_argument("--series", required=True)
    f.add_argument("--column")
    f.add_argument("--epochs", type=int, default=100)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--lookback", type=int, default=24)
    f.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            summary = cmd_simulate(_spec(args))
            for m in summary["means"]:
                print(f"{m['policy']:>14} alpha={m['alpha']:<5g} savings={m['mean_savings']:.3f} "
                      f"utilization={m['mean_utilization']:.3f}")
        elif args.command == "sweep-alpha":
            res = cmd_sweep_alpha(_spec(args))
            for row in res["rows"]:
                print(f"alpha={row['alpha']:<5g} savings={row['mean_savings']:.3f} "
                      f"utilization={row['mean_utilization']:.3f}")
            print(f"kendall_tau={res['trend']['kendall_tau']:.3f}")
        elif args.command == "gen-traces":
            paths = cmd_gen_traces(args.days, args.seed, args.output_dir, noise_sd=args.noise_sd)
            print("\n".join(str(p) for p in paths))
        elif args.command == "forecast-train":
            series = load_csv_trace(args.series, args.column)
            model, report = train_lstm(series, epochs=args.epochs, seed=args.seed, lookback=args.lookback)
            model.save(args.out)
            print(json.dumps({k: v for k, v in vars(report).items() if k != "loss_history"}))
    except (ConfigError, TraceError, ForecastError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
