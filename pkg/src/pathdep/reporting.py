"""Deterministic report files: sorted-key JSON, LF-terminated CSV, run summaries."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

__all__ = [
    "ReportError",
    "to_jsonable",
    "dumps",
    "write_json",
    "write_csv",
    "load_reports",
    "summarize",
    "write_summary",
]

REPORT_PREFIX = "report_"


class ReportError(ValueError):
    """A run directory has nothing to report on."""


def to_jsonable(obj):
    """Plain JSON types; non-finite floats become the strings ``inf``, ``-inf``, ``nan``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps(obj))
    return path


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def load_reports(run_dir) -> dict:
    """Suite name -> report dict for every ``report_<suite>.json`` in ``run_dir``."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise ReportError(f"{run_dir} is not a directory")
    out = {}
    for p in sorted(run_dir.glob(f"{REPORT_PREFIX}*.json")):
        out[p.stem[len(REPORT_PREFIX):]] = json.loads(p.read_text())
    if not out:
        raise ReportError(f"no suite reports in {run_dir}")
    return out


def _cells(report: dict) -> list:
    if report.get("suite") == "tightness":
        # search rows are steps, not verdicts; judge one cell per condition
        alphas = report.get("theta_per_alpha", {})
        cells = [{"test_id": "compact_containment", "pass": report.get("K") is not None}]
        cells += [{"test_id": f"cadlag_modulus/alpha={a}", "pass": th is not None} for a, th in sorted(alphas.items())]
        return cells
    rows = list(report.get("rows", []))
    for sub in ("pinning", "composition", "flow"):
        if isinstance(report.get(sub), dict):
            rows.extend(report[sub].get("rows", []))
    return rows


def summarize(reports: dict) -> list:
    """One row per suite, failures first, then by suite name."""
    rows = []
    for suite, rep in reports.items():
        cells = _cells(rep)
        judged = [c for c in cells if c.get("pass") is not None]
        failing = [c.get("test_id", c.get("condition", "?")) for c in judged if not c["pass"]]
        rows.append({
            "suite": suite,
            "pass": bool(rep.get("pass")),
            "cells": len(judged),
            "failing": len(failing),
            "failing_cells": failing,
        })
    rows.sort(key=lambda r: (r["pass"], r["suite"]))
    return rows


def _table(rows) -> str:
    lines = [f"{'status':<6}  {'suite':<11}  {'cells':>6}  {'failing':>7}"]
    for r in rows:
        status = "PASS" if r["pass"] else "FAIL"
        lines.append(f"{status:<6}  {r['suite']:<11}  {r['cells']:>6}  {r['failing']:>7}")
        for cell in r["failing_cells"][:20]:
            lines.append(f"        - {cell}")
        if len(r["failing_cells"]) > 20:
            lines.append(f"        ... {len(r['failing_cells']) - 20} more")
    return "\n".join(lines) + "\n"


def write_summary(run_dir) -> list:
    """Write ``summary.txt``, ``summary.json`` and plot-data CSVs; return written paths."""
    run_dir = Path(run_dir)
    reports = load_reports(run_dir)
    rows = summarize(reports)
    written = [write_json(run_dir / "summary.json", {"suites": rows})]
    with open(run_dir / "summary.txt", "w", newline="\n") as fh:
        fh.write(_table(rows))
    written.append(run_dir / "summary.txt")
    maf = reports.get("maf")
    if maf and maf.get("qv_levels"):
        levels = sorted(maf["qv_levels"], key=lambda r: -float(r["mesh"]))
        written.append(write_csv(run_dir / "qv_convergence.csv", ["level", "mesh", "value", "stderr"],
                                 [[r["level"], r["mesh"], r["value"], r["stderr"]] for r in levels]))
    cont = reports.get("continuity")
    if cont and cont.get("rows"):
        written.append(write_csv(
            run_dir / "continuity_convergence.csv",
            ["g", "level", "distance", "estimate", "stderr", "expected"],
            [[r["g"], r["level"], r["distance"], r["estimate"], r["stderr"],
              "" if r.get("expected") is None else r["expected"]] for r in cont["rows"]],
        ))
    tight = reports.get("tightness")
    if tight and tight.get("rows"):
        written.append(write_csv(
            run_dir / "tightness_search.csv",
            ["condition", "parameter", "frequency", "stderr", "pass"],
            [[r["condition"], json.dumps(r["parameter"], sort_keys=True), r["frequency"], r["stderr"],
              int(bool(r["pass"]))] for r in tight["rows"]],
        ))
    return written
