"""Command line: ``oam run`` simulates a scenario, ``oam report`` plots a run directory."""

from __future__ import annotations

import argparse
import logging
import sys

from oam.errors import RunFailed


def _run(args: argparse.Namespace) -> int:
    from oam.config import load_config
    from oam.sim.runner import run_scenario

    cfg = load_config(args.config)
    try:
        result = run_scenario(
            args.scenario,
            cfg,
            seed=args.seed,
            out_dir=args.out,
            controller=args.controller,
            collision_constraints=not args.disable_collision_constraints,
            raise_on_failure=True,
            duration=args.duration,
        )
    except RunFailed as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 2
    m = result.metrics
    print(f"{result.scenario} [{result.controller}] {result.status}: pos rms {m.pos_rms_cm:.3f} cm, ori rms {m.ori_rms_deg:.3f} deg")
    if args.report:
        from oam.report import render

        render(args.out)
    return 0


def _report(args: argparse.Namespace) -> int:
    from oam.report import load_run, render, summary

    for run_dir in args.run_dirs:
        paths = render(run_dir, args.dest)
        _, metrics, _ = load_run(run_dir)
        print(summary(metrics))
        print("wrote " + ", ".join(str(p) for p in paths))
    return 0


def build_parser() -> argparse.ArgumentParser:
    from oam.sim.scenarios import SCENARIOS

    p = argparse.ArgumentParser(prog="oam", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one scenario and write telemetry, plans and metrics")
    r.add_argument("--scenario", required=True, choices=sorted(SCENARIOS))
    r.add_argument("--config", default=None, help="JSON file merged over the defaults")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--controller", default="grite", choices=("grite", "gpid", "grise"))
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--disable-collision-constraints", action="store_true")
    r.add_argument("--duration", type=float, default=None, help="override the simulated duration [s]")
    r.add_argument("--report", action="store_true", help="also render figures into --out")
    r.set_defaults(func=_run)

    rep = sub.add_parser("report", help="render figures and a summary for run directories")
    rep.add_argument("run_dirs", nargs="+")
    rep.add_argument("--dest", default=None, help="figure directory (default: the run directory)")
    rep.set_defaults(func=_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
