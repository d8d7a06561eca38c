"""Command line entry point ``mfgcap``.

Exit codes: 0 success, 2 invalid input, 3 no convergence, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import tempfile
import time
from pathlib import Path

from .errors import (ConvergenceError, DomainError, GridError, MfgCapError, PreconditionError,
                     SchemeFault, ValidationError)
from .scenarios import emit_plotdata, load_config, reproduce, run_scenario

EXIT_OK, EXIT_INVALID, EXIT_CONVERGENCE, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("mfgcap")


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ConvergenceError, SchemeFault)):
        return EXIT_CONVERGENCE
    if isinstance(exc, (ValidationError, PreconditionError, GridError, DomainError)):
        return EXIT_INVALID
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, MfgCapError):
        return EXIT_CONVERGENCE
    raise exc


def _solve(args) -> int:
    cfg = load_config(args.config)
    if args.method:
        cfg = cfg.with_method(args.method)
    out = Path(args.out) if args.out else None
    man = run_scenario(cfg, out)
    if not man.converged:
        log.error("%s: %s", cfg.name, man.error)
        return EXIT_CONVERGENCE
    summary = man.summary
    print(f"{cfg.name}: t_star = {summary['t_star']:.6g} ({man.wall_seconds:.2f} s)")
    for row in summary.get("targets", []):
        mark = "PASS" if row["pass"] else "FAIL"
        print(f"  {mark} {row['metric']}: {row['value']:.6g} (target {row['target']})")
    return EXIT_OK


def _reproduce(args) -> int:
    start = time.perf_counter()
    if args.out:
        rows = reproduce(args.out, args.filter)
    else:
        with tempfile.TemporaryDirectory(prefix="mfgcap-") as tmp:
            rows = reproduce(tmp, args.filter)
    if not rows:
        log.error("no bundled scenario matches %r", args.filter)
        return EXIT_INVALID
    failed = sum(not r["pass"] for r in rows)
    print(f"{len(rows) - failed}/{len(rows)} rows pass in {time.perf_counter() - start:.1f} s")
    if failed == 0:
        return EXIT_OK
    if any(r.get("status") for r in rows):
        return EXIT_CONVERGENCE
    return 1


def _plotdata(args) -> int:
    for path in emit_plotdata(args.run):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mfgcap", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run one scenario file")
    s.add_argument("--config", required=True, help="scenario JSON file")
    s.add_argument("--method", choices=["shooting", "semi_explicit", "ansatz", "fd"],
                   help="override the scenario's method")
    s.add_argument("--out", help="output directory (default: outputs.dir or runs/<name>)")
    s.set_defaults(func=_solve)

    r = sub.add_parser("reproduce", help="run the bundled scenario suite")
    r.add_argument("--filter", help="only scenarios whose name contains this text")
    r.add_argument("--out", help="keep run outputs here (default: a temporary directory)")
    r.set_defaults(func=_reproduce)

    e = sub.add_parser("emit-plotdata", help="write plot-ready series for a finished run")
    e.add_argument("--run", required=True, help="run directory")
    e.set_defaults(func=_plotdata)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (MfgCapError, OSError) as exc:
        code = exit_code_for(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
