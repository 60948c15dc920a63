"""Command line entry point: ``indicator-rl {train,ablate,flip-study,verify,curves}``.

Exit codes: 0 success, 1 configuration error, 2 property violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness
from .curves import SchemaMismatchError, emit_curves
from .verify import verify_theory

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION = 0, 1, 2


def _parse_overrides(pairs):
    overrides = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise harness.ConfigError(f"override {pair!r} is not key=value")
        key, raw = pair.split("=", 1)
        try:
            overrides[key] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key] = raw
    return overrides


def _config(args) -> harness.ExperimentConfig:
    overrides = _parse_overrides(args.set)
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    if args.config:
        return harness.load_config(args.config, overrides)
    try:
        data = {}
        for key, value in overrides.items():
            target = data
            *parents, leaf = key.split(".")
            for p in parents:
                target = target.setdefault(p, {})
            target[leaf] = value
        return harness.ExperimentConfig.from_dict(data)
    except TypeError as err:
        raise harness.ConfigError(str(err)) from None


def cmd_train(args) -> int:
    paths = harness.run_experiment(_config(args))
    for key, path in paths.items():
        print(f"{key}: {path}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    variants = args.variants or harness.ABLATION_VARIANTS
    for v in variants:
        if v not in harness.VARIANTS:
            raise harness.ConfigError(f"unknown variant {v!r}")
    harness.run_ablation(cfg, variants)
    print(harness.resolve_output(cfg.output_dir) / "ablation_summary.csv")
    return EXIT_OK


def cmd_flip_study(args) -> int:
    cfg = _config(args)
    path = harness.run_flip_study(cfg, args.rates or harness.FLIP_RATES)
    print(path)
    return EXIT_OK


def cmd_verify(args) -> int:
    report = verify_theory(grid_sizes=args.grid_sizes, radii=args.radii, seeds=args.seeds,
                           n_instances=args.instances, bound_grid=args.bound_grid,
                           gamma_error=0.01 if args.self_test else 0.0)
    print(report.summary())
    if args.output_dir:
        report.write(harness.resolve_output(args.output_dir))
    if args.self_test:
        # the injected discount error must be caught
        return EXIT_VIOLATION if not report.ok else EXIT_OK
    return EXIT_OK if report.ok else EXIT_VIOLATION


def cmd_curves(args) -> int:
    out = emit_curves(args.csv, args.output, metric=args.metric, labels=args.labels, title=args.title)
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="indicator-rl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (dotted for nesting, JSON values); wins over the file")
        p.add_argument("--output-dir")

    p = sub.add_parser("train", help="train one experiment config")
    add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="run the variant matrix on one environment")
    add_config_args(p)
    p.add_argument("--variants", nargs="+")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("flip-study", help="false-positive vs false-negative reward flipping")
    add_config_args(p)
    p.add_argument("--rates", nargs="+", type=float)
    p.set_defaults(func=cmd_flip_study)

    p = sub.add_parser("verify", help="exact tabular theory checks")
    p.add_argument("--grid-sizes", nargs="+", type=int, default=[6, 8])
    p.add_argument("--radii", nargs="+", type=int, default=[1, 2, 3])
    p.add_argument("--seeds", nargs="+", type=int, default=[0])
    p.add_argument("--instances", type=int, default=200)
    p.add_argument("--bound-grid", type=int, default=10)
    p.add_argument("--self-test", action="store_true", help="inject a wrong discount; expect exit 2")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("curves", help="plot metrics CSVs as SVG")
    p.add_argument("csv", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--metric", default="final_distance")
    p.add_argument("--labels", nargs="+")
    p.add_argument("--title")
    p.set_defaults(func=cmd_curves)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (harness.ConfigError, SchemaMismatchError, KeyError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
