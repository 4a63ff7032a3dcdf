"""Command line entry point: ``fixscreen <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import runner
from .scenario import DefectSpec
from .signature import AMPLITUDE, PHASE
from .solver import SolverError


def _config(args) -> runner.RunConfig:
    cfg = runner.load_config(args.config) if args.config else runner.RunConfig()
    if getattr(args, "freq_stride", None) is not None:
        cfg = replace(cfg, freq_stride=args.freq_stride, frequencies=None)
    if getattr(args, "grid_h", None) is not None:
        cfg = replace(cfg, grid_h=args.grid_h)
    if getattr(args, "method", None):
        cfg = replace(cfg, solver=replace(cfg.solver, method=args.method))
    return cfg


def cmd_sweep(args) -> int:
    cfg = _config(args)
    res = runner.sweep(cfg, args.out, jobs=args.jobs, scenarios=args.scenarios)
    print(f"solved {len(res.solved)}, skipped {len(res.skipped)} (already done), "
          f"failed {len(res.failed)}, signatures {len(res.signatures)}")
    for name, msg in sorted(res.failed.items()):
        print(f"  {name}: {msg}", file=sys.stderr)
    return 1 if res.failed else 0


def cmd_analyze(args) -> int:
    summary = runner.analyze_run(args.run)
    loo = summary["loo_nn_accuracy"]
    print(f"configs analyzed: {summary['configs']}")
    print(f"rule-based accuracy: {summary['rule_accuracy']}")
    print(f"nearest-neighbor leave-one-out accuracy: {loo}")
    print(f"reports written to {Path(args.run) / 'reports'}")
    return 0


def cmd_render(args) -> int:
    channels = (AMPLITUDE, PHASE) if args.channel == "both" else (args.channel,)
    snapshot = None
    if args.snapshot:
        config, freq, actuator = args.snapshot
        snapshot = (config, float(freq), int(actuator))
    for path in runner.render_run(args.target, channels, args.normalization, args.format,
                                  snapshot):
        print(path)
    return 0


def cmd_phantom_debug(args) -> int:
    cfg = _config(args)
    defect = None
    if args.defect:
        d = json.loads(args.defect)
        if "angle_deg" in d:
            d["angle"] = math.radians(d.pop("angle_deg"))
        defect = DefectSpec.from_dict(d)
    print(runner.phantom_debug(cfg, args.out, defect))
    return 0


def cmd_verify(args) -> int:
    bad = runner.verify_run(args.run)
    for rel in bad:
        print(f"MISMATCH {rel}")
    print("ok" if not bad else f"{len(bad)} file(s) do not match the manifest")
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fixscreen",
                                description="Acoustic screening of implant fixation defects.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def config_args(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--freq-stride", type=int, help="keep every Nth kHz step")
        sp.add_argument("--grid-h", type=float, help="cell size in meters")

    sp = sub.add_parser("sweep", help="solve the scenario grid and write signatures")
    config_args(sp)
    sp.add_argument("--out", required=True, help="run directory")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--scenarios", help="subset, e.g. '1-4,30,crack'; healthy is always run")
    sp.add_argument("--method", choices=("lowrank", "direct"))
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("analyze", help="reports and summary for a run directory")
    sp.add_argument("run")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("render", help="grayscale images of signatures")
    sp.add_argument("target", help="run directory or a signature CSV")
    sp.add_argument("--channel", choices=(AMPLITUDE, PHASE, "both"), default="both")
    sp.add_argument("--normalization", choices=("per-run", "global"), default="per-run")
    sp.add_argument("--format", choices=("pgm", "png"), default="pgm")
    sp.add_argument("--snapshot", nargs=3, metavar=("CONFIG", "FREQ_HZ", "ACTUATOR"),
                    help="also render one pressure field")
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("phantom-debug", help="write the material map as an image")
    config_args(sp)
    sp.add_argument("--out", required=True, help="output .pgm or .png")
    sp.add_argument("--defect", help='JSON, e.g. \'{"kind": "crack", "angle_deg": 90, '
                                     '"diameter": 0.002}\'')
    sp.set_defaults(func=cmd_phantom_debug)

    sp = sub.add_parser("verify", help="check run files against manifest hashes")
    sp.add_argument("run")
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, SolverError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
