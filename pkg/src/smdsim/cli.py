"""Command-line entry point.

Exit status: 0 on a clean run, 1 when any invariant fault was detected
(timing or protocol violation, refresh pending-counter overflow, DRP oracle
miss), 2 on configuration or input errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .experiment import SWEEP_AXES, emit_report, load_config, run, sweep
from .frontend import TraceError
from .maintenance import MaintenanceFault
from .timing import ConfigError

EXIT_OK, EXIT_FAULT, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="smdsim", description="Self-managing DRAM simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="INI experiment file")
        p.add_argument("--trace", action="append", default=None,
                       help="trace file or gen:<name>[:k=v...] spec, one per core (repeatable)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--mode", default=None, help="override [experiment] mode")
        p.add_argument("--out", default=".", help="output directory for report files")

    r = sub.add_parser("run", help="run one experiment")
    common(r)
    r.add_argument("--dump-commands", default=None, help="write the command log here")

    s = sub.add_parser("sweep", help="run a one-parameter sweep")
    common(s)
    s.add_argument("--axis", required=True, choices=SWEEP_AXES)
    s.add_argument("--values", required=True, help="comma-separated sweep values")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    overrides = {"seed": args.seed, "mode": args.mode}
    try:
        cfg = load_config(args.config, overrides)
        if args.trace:
            cfg = replace(cfg, traces=tuple(args.trace)).validate()
        if args.command == "run":
            reports = [run(cfg, dump_commands=args.dump_commands)]
            files = emit_report(reports, args.out, formats=("csv",), stem=cfg.name)
        else:
            values = [v for v in args.values.split(",") if v.strip()]
            reports = sweep(cfg, args.axis, values)
            files = emit_report(reports, args.out, stem=f"{cfg.name}-{args.axis}")
    except (ConfigError, TraceError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MaintenanceFault as e:
        print(f"invariant fault: {e}", file=sys.stderr)
        return EXIT_FAULT
    for f in files:
        print(f"wrote {Path(f)}")
    status = EXIT_OK
    for rep in reports:
        line = f"{rep.experiment} {rep.mode}: ipc={rep.ipc_total:.4f} energy={rep.energy_pj} pJ cycles={rep.cycles}"
        print(line)
        for fault in rep.faults:
            print(f"invariant fault: {fault}", file=sys.stderr)
            status = EXIT_FAULT
    return status


if __name__ == "__main__":
    sys.exit(main())
