"""Batch front end: ``iogames <task> --instance file.json``."""

from __future__ import annotations

import argparse
import csv
import io as _stdio
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .freesets import FreeSetError, membership
from .games import GameError, canonicalize, free_max_payoff, game_from_witness, payoff, verify_theorem1
from .io import (
    InstanceFile,
    ReportFile,
    SchemaError,
    build_free_set,
    build_object,
    dumps,
    encode_matrix,
    game_payload,
    load_instance,
    witness_payload,
)
from .objects import InvalidObjectError
from .robustness import WitnessError, robustness
from .solver import SolverError

log = logging.getLogger("iogames")

EXIT_OK = 0
EXIT_SCHEMA = 3
EXIT_SOLVER = 4
EXIT_VERIFY = 5

STATUS_CODES = {
    "ok": EXIT_OK,
    "schema_error": EXIT_SCHEMA,
    "solver_failure": EXIT_SOLVER,
    "verification_failure": EXIT_VERIFY,
}

TASKS = ("robustness", "membership", "game", "verify", "scan")
CSV_HEADER = ("param", "robustness", "gap", "status")

EPILOG = """\
exit codes:
  0  success
  2  bad command line (argparse)
  3  schema error: unreadable or malformed instance, unknown tag or parameter,
     object that fails construction; no solve is attempted
  4  solver failure: a conic solve did not reach an optimal certificate
  5  verification failure: a certificate or equality check exceeded its tolerance

scan writes CSV with header param,robustness,gap,status; failed points are
recorded in their row and the scan continues.  IOGAMES_FIXTURES overrides the
fixture directory.
"""


class _Failure(Exception):
    def __init__(self, status: str, message: str):
        super().__init__(message)
        self.status = status


def _robustness_values(rep) -> tuple[dict, dict]:
    values = {"robustness": rep.robustness, "primal": rep.value, "dual": rep.dual_value}
    residuals = {"gap": rep.gap, **rep.residuals}
    if rep.witness is not None:
        residuals["witness_free_max"] = rep.witness.free_max
        residuals["witness_min_eig"] = rep.witness.min_eig
    return values, residuals


def _task(inst: InstanceFile, task: str, tol: float | None, emit_witness: bool, emit_game: bool,
          report: dict) -> None:
    """Fill ``report`` in place so partial results survive a failure."""
    t0 = time.perf_counter()
    obj = build_object(inst.object)
    f = build_free_set(inst.free_set, obj)
    report["flags"].update(f.flags)
    report["timing"]["build"] = time.perf_counter() - t0
    tols = inst.tolerances

    t0 = time.perf_counter()
    if task == "membership":
        cert = membership(obj, f, tol if tol is not None else tols.membership)
        report["values"]["verdict"] = cert.verdict
        report["residuals"]["shortfall" if cert.member else "witness_value"] = cert.value
        report["residuals"]["linear"] = cert.residual
        report["diagnostics"]["feasibility_status"] = cert.status
        if not cert.member:
            report["residuals"]["witness_free_max"] = cert.free_max
            if emit_witness and cert.witness is not None:
                report["witness"] = {"blocks": [encode_matrix(y) for y in cert.witness], "value": cert.value,
                                     "free_max": cert.free_max}
        report["timing"]["solve"] = time.perf_counter() - t0
        if not cert.member and not (cert.value > 1 + 1e-9 and cert.free_max <= 1 + 1e-6):
            raise _Failure("verification_failure", "separating witness did not verify")
        return

    if task == "verify":
        rep = verify_theorem1(obj, f, tol if tol is not None else tols.equality)
        report["values"].update({k: rep.summary()[k] for k in ("payoff", "free_max", "ratio", "robustness_bound")})
        report["values"]["robustness"] = rep.robustness_bound - 1.0
        report["residuals"]["equality_residual"] = rep.equality_residual
        report["residuals"].update(rep.residuals)
        report["flags"].update(rep.flags)
        if emit_witness:
            report["witness"] = witness_payload(rep.robustness.witness)
        if emit_game:
            report["game"] = game_payload(rep.game)
        report["timing"]["solve"] = time.perf_counter() - t0
        if not rep.passed:
            raise _Failure("verification_failure",
                           f"equality residual {rep.equality_residual:.3e} exceeds {rep.tol:.1e}")
        return

    rep = robustness(obj, f)
    values, residuals = _robustness_values(rep)
    report["values"].update(values)
    report["residuals"].update(residuals)
    report["flags"].update(rep.flags)
    report["diagnostics"].update({"status": rep.status, "iterations": rep.iterations,
                                  "slater_checked": rep.slater_checked})
    if emit_witness and rep.witness is not None:
        report["witness"] = witness_payload(rep.witness)
    report["timing"]["solve"] = time.perf_counter() - t0
    if rep.status != "optimal":
        raise _Failure("solver_failure", f"robustness solve ended with status {rep.status}")
    if not rep.certified:
        raise _Failure("verification_failure", "robustness certificate did not verify")
    if task == "game":
        t0 = time.perf_counter()
        raw = game_from_witness(rep.witness, f.dims)
        g = canonicalize(raw)
        p, fmax = payoff(g, obj), free_max_payoff(g, f)
        report["values"].update({"payoff": p, "free_max": fmax, "ratio": p / fmax})
        report["residuals"]["game_exactness"] = abs(payoff(raw, obj) - rep.witness.value)
        report["game"] = game_payload(g)  # the game is this task's deliverable
        report["timing"]["game"] = time.perf_counter() - t0


def run(inst: InstanceFile, task: str | None = None, tol: float | None = None,
        emit_witness: bool = False, emit_game: bool = False) -> ReportFile:
    """Run one task on a parsed instance; never raises for numerical failures."""
    task = task or inst.task
    if task == "scan":
        raise SchemaError("scan instances go through scan()")
    report = {"values": {}, "residuals": {}, "flags": {}, "diagnostics": {}, "timing": {}}
    status, message = "ok", ""
    t0 = time.perf_counter()
    try:
        _task(inst, task, tol, emit_witness, emit_game, report)
    except _Failure as e:
        status, message = e.status, str(e)
    except (SchemaError, InvalidObjectError, FreeSetError) as e:
        status, message = "schema_error", str(e)
    except (SolverError, WitnessError) as e:
        status, message = "solver_failure", f"{type(e).__name__}: {e}"
    except GameError as e:
        status, message = "verification_failure", f"{type(e).__name__}: {e}"
    report["timing"]["total"] = time.perf_counter() - t0
    return ReportFile(
        instance=inst.model_dump(mode="json", exclude_none=True),
        task=task,
        status=status,
        exit_code=STATUS_CODES[status],
        message=message,
        **report,
    )


# --- scans ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScanRow:
    param: float
    robustness: float
    gap: float
    status: str


def scan_values(inst: InstanceFile) -> np.ndarray:
    s = inst.scan
    return np.linspace(s.start, s.stop, s.steps)


def _scan_point(inst: InstanceFile, value: float) -> ScanRow:
    try:
        obj = build_object(inst.object, {inst.scan.param: float(value)})
        f = build_free_set(inst.free_set, obj)
        rep = robustness(obj, f, verify=False)
        return ScanRow(float(value), rep.robustness, rep.gap, rep.status)
    except Exception as e:  # noqa: BLE001 - recorded in the row, the scan continues
        return ScanRow(float(value), math.nan, math.nan, f"error: {type(e).__name__}: {e}")


def scan(inst: InstanceFile, jobs: int = 1) -> list[ScanRow]:
    """One robustness solve per parameter value; rows follow parameter order."""
    if inst.scan is None or inst.object.family is None:
        raise SchemaError("scan needs a 'scan' section and a 'family' object")
    values = scan_values(inst)
    if jobs <= 1:
        return [_scan_point(inst, v) for v in values]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda v: _scan_point(inst, v), values))


def rows_to_csv(rows: list[ScanRow]) -> str:
    buf = _stdio.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([repr(r.param), repr(r.robustness), repr(r.gap), r.status])
    return buf.getvalue()


def crossings(rows: list[ScanRow], zero: float = 1e-6) -> list[tuple[float, float]]:
    """Parameter intervals where R switches between zero and nonzero."""
    out = []
    for a, b in zip(rows, rows[1:]):
        if (a.robustness > zero) != (b.robustness > zero):
            out.append((a.param, b.param))
    return out


def bisect_threshold(is_free, lo: float, hi: float, xtol: float = 1e-4, max_iter: int = 60) -> float:
    """Boundary of a one-parameter family, given ``is_free(lo) != is_free(hi)``."""
    flo = is_free(lo)
    if flo == is_free(hi):
        raise ValueError("bracket does not straddle the boundary")
    for _ in range(max_iter):
        if hi - lo <= xtol:
            break
        mid = 0.5 * (lo + hi)
        if is_free(mid) == flo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --- command line -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="iogames",
        description="Robustness, membership, witness games and equality checks for JSON instances.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="task", required=True)
    for task in TASKS:
        s = sub.add_parser(task, epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
        s.add_argument("--instance", required=True, help="instance JSON file")
        s.add_argument("--out", help="report JSON (CSV for scan); stdout if omitted")
        s.add_argument("--tol", type=float, help="override the task tolerance")
        s.add_argument("--jobs", type=int, default=1, help="concurrent scan points")
        s.add_argument("--emit-witness", action="store_true", help="include witness blocks in the report")
        s.add_argument("--emit-game", action="store_true", help="include the constructed game in the report")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        inst = load_instance(args.instance)
    except SchemaError as e:
        log.error("%s", e)
        report = ReportFile(instance={}, task=args.task, status="schema_error", exit_code=EXIT_SCHEMA,
                            message=str(e))
        _write(dumps(report), args.out)
        return EXIT_SCHEMA

    if args.task == "scan":
        try:
            rows = scan(inst, max(1, args.jobs))
        except SchemaError as e:
            log.error("%s", e)
            return EXIT_SCHEMA
        _write(rows_to_csv(rows), args.out)
        failed = [r for r in rows if r.status != "optimal"]
        for r in failed:
            log.warning("scan point %r: %s", r.param, r.status)
        return EXIT_SOLVER if failed else EXIT_OK

    report = run(inst, args.task, args.tol, args.emit_witness, args.emit_game)
    if report.status != "ok":
        log.error("%s: %s", report.status, report.message)
    _write(dumps(report), args.out)
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
