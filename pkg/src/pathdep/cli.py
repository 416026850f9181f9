"""``pathdep`` command line: simulate, verify, report.

Exit codes: 0 all checks pass, 1 a statistical check failed, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .config import SUITES, ConfigError, config_hash, load_config
from .path_core import CadlagPath, GridError, write_path_csv
from .reporting import ReportError, write_json, write_summary
from .suites import build_experiment, event_banks, run_suite

log = logging.getLogger("pathdep")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _setup_logging():
    level = os.environ.get("PATHDEP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pathdep", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"pathdep {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--out", type=Path, default=None, help="output directory (overrides output.directory)")
        sp.add_argument("--seed", type=_u64, default=None, help="root seed override")
        sp.add_argument("--workers", type=_positive, default=os.cpu_count() or 1)

    common(sub.add_parser("simulate", help="simulate an ensemble and write path CSVs"))
    v = sub.add_parser("verify", help="run verification suites and write JSON reports")
    common(v)
    v.add_argument("--suite", action="append", choices=SUITES, default=None,
                   help="suite to run (repeatable); default: verify.suites from the config")
    v.add_argument("--dump-events", action="store_true", help="write the event banks to events.json")
    v.add_argument("--sabotage", action="store_true", help=argparse.SUPPRESS)
    r = sub.add_parser("report", help="summarize the suite reports in a run directory")
    r.add_argument("run_dir", type=Path)
    return p


def _load(args):
    cfg, base = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"run": cfg.run.model_copy(update={"seed": args.seed})})
    out = args.out if args.out is not None else base / cfg.output.directory
    return cfg, base, out


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_simulate(args) -> int:
    cfg, base, out = _load(args)
    ex = build_experiment(cfg, base, workers=args.workers)
    t0 = time.perf_counter()
    paths_dir = out / "paths"
    paths_dir.mkdir(parents=True, exist_ok=True)
    width = max(5, len(str(cfg.run.n_paths - 1)))
    files = []
    for b in ex.engine.ensemble(ex.init, cfg.run.n_paths, ex.seed).batches():
        for i, values in enumerate(b.values):
            name = f"path_{b.offset + i:0{width}d}.csv"
            write_path_csv(CadlagPath(ex.grid, values), paths_dir / name)
            files.append({"file": f"paths/{name}", "sha256": _sha(paths_dir / name)})
    manifest = {
        "command": "simulate",
        "config_hash": config_hash(cfg, base),
        "seed": ex.seed,
        "tool_version": __version__,
        "n_paths": cfg.run.n_paths,
        "grid": ex.grid.to_dict(),
        "s": cfg.run.s,
        "files": files,
    }
    write_json(out / "manifest.json", manifest)
    log.info("wrote %d paths to %s in %.2fs", len(files), paths_dir, time.perf_counter() - t0)
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg, base, out = _load(args)
    suites = args.suite or list(cfg.verify.suites)
    ex = build_experiment(cfg, base, workers=args.workers)
    chash = config_hash(cfg, base)
    out.mkdir(parents=True, exist_ok=True)
    if args.dump_events:
        write_json(out / "events.json", event_banks(ex))
    summary, timings = {}, {}
    for name in suites:
        t0 = time.perf_counter()
        report = run_suite(name, ex, sabotage=args.sabotage)
        timings[name] = round(time.perf_counter() - t0, 3)
        report["config_hash"] = chash
        report["tool_version"] = __version__
        write_json(out / f"report_{name}.json", report)
        summary[name] = bool(report["pass"])
        status = "PASS" if report["pass"] else "FAIL"
        print(f"{status} {name}")
        if not report["pass"]:
            for row in report.get("rows", []):
                if row.get("pass") is False:
                    print(f"  failing: {row.get('test_id', row.get('condition'))}")
    write_json(out / "manifest.json", {
        "command": "verify",
        "config_hash": chash,
        "seed": ex.seed,
        "tool_version": __version__,
        "workers": args.workers,
        "suites": summary,
        "timings_s": timings,
    })
    return EXIT_OK if all(summary.values()) else EXIT_FAIL


def cmd_report(args) -> int:
    written = write_summary(args.run_dir)
    sys.stdout.write((args.run_dir / "summary.txt").read_text())
    log.info("wrote %s", ", ".join(str(p) for p in written))
    return EXIT_OK


def main(argv=None) -> int:
    _setup_logging()
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "verify":
            return cmd_verify(args)
        return cmd_report(args)
    except (ConfigError, ReportError, GridError, UsageError) as exc:
        print(f"pathdep: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, TypeError) as exc:
        # bad preset names or parameters surface here
        print(f"pathdep: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
