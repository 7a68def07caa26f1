"""Command-line entry point: ``twinbeam {analytic,correlation,sigma-scan,image}``."""

from __future__ import annotations

import argparse
import logging
import sys

from .harness import COMMANDS, Scenario, paper_scale, run


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twinbeam", description="Twin-beam differential imaging simulator")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", metavar="PATH", help="INI scenario file")
        s.add_argument("--seed", type=int, help="master seed (overrides the config)")
        s.add_argument("--trajectories", type=int, help="trajectories per gain level")
        s.add_argument("--out", metavar="DIR", help="output directory")
        s.add_argument("--paper-scale", action="store_true",
                       help="128x128x64 grid and >= 1000 trajectories; slow")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        sc = Scenario.from_ini(args.config, seed=args.seed, trajectories=args.trajectories,
                               out_dir=args.out, paper_scale=args.paper_scale or None)
        if args.paper_scale:
            sc = paper_scale(sc)
            sc.check_scale()
        rec = run(args.command, sc)
    except (ValueError, FileNotFoundError) as exc:
        print(f"twinbeam: error: {exc}", file=sys.stderr)
        return 2
    print(f"{rec.command}: {len(rec.rows)} rows, scenario {rec.scenario_hash}, "
          f"{rec.wall_s:.1f} s -> {sc.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
