"""Command line entry point: ``cachelab {run,calibrate,sweep,curves,masks,schema}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import config, harness
from .errors import CacheLabError


def _overrides(args) -> dict:
    return dict(config.parse_override(s) for s in (args.set or []))


def _load(args) -> config.ExperimentConfig:
    cfg = config.load(args.config, _overrides(args))
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    summary = harness.run(cfg, out_dir=args.out, figures=not args.no_figures)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_calibrate(args) -> int:
    cfg = _load(args)
    prep = harness.calibrate_experiment(cfg, out_dir=args.out, figures=not args.no_figures)
    c = prep.controller
    print(f"schedule   {prep.schedule.letters}")
    print(f"r          {prep.r}")
    print(f"delta_warn {c.delta_warn!r}  delta_crit {c.delta_crit!r}  delta_blk {c.delta_blk!r}  rho_tok {c.rho_tok!r}")
    return 0


def cmd_sweep(args) -> int:
    spec = config.load_sweep(args.spec, _overrides(args))
    rows = harness.sweep(spec, out_dir=args.out, figures=not args.no_figures)
    for row in rows:
        if row["seed"] == "mean":
            print(f"{spec.axis}={row['value']}: speedup {row['speedup']:.3f}  rel-L1 {row['rel_l1']:.5f}  "
                  f"F/R/S {row['n_full']:.1f}/{row['n_refresh']:.1f}/{row['n_skip']:.1f}")
    return 0


def cmd_curves(args) -> int:
    cfg = _load(args)
    curves = harness.write_curves(cfg, out_dir=args.out, figures=not args.no_figures)
    for seed, c in curves.items():
        print(f"seed {seed}: " + " ".join(f"{v:.3f}" for v in c.increments))
    return 0


def cmd_masks(args) -> int:
    cfg = _load(args)
    for p in harness.masks(cfg, out_dir=args.out):
        print(p)
    return 0


def cmd_schema(args) -> int:
    schema = config.SWEEP_SCHEMA if args.sweep else config.EXPERIMENT_SCHEMA
    print(json.dumps(schema, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cachelab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, target="config"):
        sp.add_argument(target)
        sp.add_argument("--out", help="output directory (default: output_dir from the config)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key by dotted path, e.g. controller.delta_crit=0.8")
        sp.add_argument("--no-figures", action="store_true")

    for name, fn, target in (
        ("run", cmd_run, "config"),
        ("calibrate", cmd_calibrate, "config"),
        ("sweep", cmd_sweep, "spec"),
        ("curves", cmd_curves, "config"),
        ("masks", cmd_masks, "config"),
    ):
        sp = sub.add_parser(name)
        common(sp, target)
        sp.set_defaults(func=fn)
    sp = sub.add_parser("schema", help="print the config JSON schema")
    sp.add_argument("--sweep", action="store_true", help="print the sweep-spec schema instead")
    sp.set_defaults(func=cmd_schema)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CacheLabError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: IoError: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
