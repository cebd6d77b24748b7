"""Command-line front end.

Subcommands: ``run``, ``verify``, ``compare``, ``sweep`` and ``oracle``. Exit
codes are 0 success, 1 validation error, 2 runtime failure, 3 certification
failure and 4 inconclusive.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis
from .netmodel import ModelError
from .oracle import InfeasibleError, check_uniqueness_conditions, solve_pbo
from .sim.integrate import IntegrationError, integrate
from .sim.io import write_trajectory
from .sim.scenario import (ScenarioError, apply_overrides, parse_override_value,
                           read_scenario_dict, resolve_scenario_path, scenario_from_dict)

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_CERTIFICATION, EXIT_INCONCLUSIVE = 0, 1, 2, 3, 4

log = logging.getLogger("freqctl")


class _Outputs:
    """Collect output files in a scratch directory and publish them all at once.

    Nothing appears in the target directory unless every file was written.
    """

    def __init__(self, target):
        self.target = Path(target) if target is not None else None
        self._tmp = None

    def __enter__(self):
        if self.target is not None:
            parent = self.target.resolve().parent
            parent.mkdir(parents=True, exist_ok=True)
            self._tmp = Path(tempfile.mkdtemp(prefix=".freqctl-", dir=parent))
        return self

    def path(self, name):
        return None if self._tmp is None else self._tmp / name

    def __exit__(self, exc_type, exc, tb):
        if self._tmp is None:
            return False
        try:
            if exc_type is None:
                self.target.mkdir(parents=True, exist_ok=True)
                for f in self._tmp.iterdir():
                    os.replace(f, self.target / f.name)
        finally:
            shutil.rmtree(self._tmp, ignore_errors=True)
        return False


def _write_json(path, obj):
    if path is not None:
        Path(path).write_text(json.dumps(obj, indent=2, allow_nan=True) + "\n", encoding="utf-8")


def _overrides(args) -> dict:
    ov = {}
    for flag, key in (("h", "integrator.h"), ("horizon", "integrator.horizon"),
                      ("sample", "integrator.sample"), ("mode", "mode"),
                      ("formulation", "formulation"), ("gains", "gains")):
        value = getattr(args, flag, None)
        if value is not None:
            ov[key] = value
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ScenarioError(item, "override must be key=value")
        key, text = item.split("=", 1)
        ov[key.strip()] = parse_override_value(text.strip())
    return ov


def _load(args, extra=None):
    data = read_scenario_dict(resolve_scenario_path(args.scenario))
    ov = _overrides(args)
    if extra:
        ov.update(extra)
    return data, scenario_from_dict(apply_overrides(data, ov) if ov else data), ov


def _summary(sc, rec) -> dict:
    n = sc.network.node_count
    final = rec.final_state()
    out = {
        "scenario": sc.name, "mode": sc.mode, "formulation": sc.formulation,
        "h": sc.h, "horizon": sc.horizon, "samples": len(rec),
        "prescribed_gains": rec.prescribed_gains,
        "final": {k: v.tolist() for k, v in final.items()},
        "final_pg_actual": (final["pg"] + sc.initial_pg_actual).tolist(),
        "final_pl_actual": (final["pl"] + sc.initial_pl_actual).tolist(),
        "max_abs_omega_final": float(np.max(np.abs(final["omega"]))) if n else 0.0,
        "max_abs_flow_final": float(np.max(np.abs(final["flows"]), initial=0.0)),
        "max_overshoot_rel": rec.max_overshoot,
        "overshoot_warnings": rec.overshoot_warnings,
        "max_excursion_mw": float(np.max(rec.excursion)),
        "formulation_gap": rec.formulation_gap,
    }
    if rec.mu is not None:
        out["mu_omega_gap"] = float(np.max(np.abs(rec.mu - rec.omega)))
    return out


# subcommands --------------------------------------------------------------

def cmd_run(args) -> int:
    _, sc, _ = _load(args)
    rec = integrate(sc)
    summary = _summary(sc, rec)
    with _Outputs(args.output) as out:
        if out.target is not None:
            write_trajectory(rec, out.path("trajectory.csv"), actual=args.actual)
            _write_json(out.path("summary.json"), summary)
    if args.output is None:
        print(json.dumps(summary, indent=2))
    if sc.saturated and summary["max_excursion_mw"] > 0:
        print("internal consistency failure: saturated run left the capacity box", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _verify_report(args):
    data, sc, ov = _load(args)
    rec = integrate(sc)
    lyap_rec = lyap_net = None
    if not sc.network.prescribed_gains and sc.saturated:
        # the descent certificate holds at gamma = 1/T; check it on that run
        companion = scenario_from_dict(apply_overrides(data, {**ov, "gains": "prescribed",
                                                              "formulation": "physical"}))
        lyap_rec, lyap_net = integrate(companion), companion.network
    report = analysis.certify(rec, sc.network, tol_mw=args.tol_mw, reference=sc.reference,
                              lyapunov_record=lyap_rec, lyapunov_net=lyap_net)
    return sc, rec, report


def cmd_verify(args) -> int:
    sc, rec, report = _verify_report(args)
    doc = {"scenario": sc.name, **report.as_dict()}
    with _Outputs(args.output) as out:
        if out.target is not None:
            _write_json(out.path("verification.json"), doc)
            write_trajectory(rec, out.path("trajectory.csv"), actual=args.actual)
    _print_verify(doc)
    status = report.status
    if status == analysis.INCONCLUSIVE:
        return EXIT_INCONCLUSIVE
    return EXIT_OK if status == analysis.PASS else EXIT_CERTIFICATION


def _print_verify(doc):
    eq = doc["equilibrium"]
    print(f"status: {doc['status']}")
    print(f"equilibrium: {eq['status']} (residual {eq['residual']:.3e}, drift {eq['drift']:.3e})")
    opt = doc.get("optimality")
    if opt:
        print(f"oracle gap: Pg {opt['gap_pg_mw']:.3e} MW, Pl {opt['gap_pl_mw']:.3e} MW, "
              f"lambda {opt['gap_lambda_mw']:.3e}; KKT {opt['kkt_max_residual']:.3e}")
        print(f"restoration: max|omega| {opt['omega_max']:.3e} rad/s, "
              f"max|flow| {opt['flow_max']:.3e} MW")
    ref = doc.get("reference")
    if ref:
        print("Pg actual: " + ", ".join(f"{x:.2f}" for x in ref["pg_actual"]))
        print("Pl actual: " + ", ".join(f"{x:.2f}" for x in ref["pl_actual"]))
        print(f"reference gap: {ref['gap_mw']:.3f} MW (tolerance {ref['tolerance_mw']} MW)")
    ly = doc.get("lyapunov")
    if ly:
        print(f"V1 descent ({ly['source']}): {ly['violations']} violations, "
              f"{ly['dissipation_violations']} dissipation-bound violations")
    for note in doc.get("notes", []):
        print(f"note: {note}")


def cmd_compare(args) -> int:
    _, sc, _ = _load(args)
    sat_mode = sc.mode if sc.saturated else "measured"
    sc_sat = sc.with_overrides(mode=sat_mode, formulation="physical")
    sc_uns = sc.with_overrides(mode="unsaturated", formulation="physical")
    r_sat, r_uns = integrate(sc_sat), integrate(sc_uns)
    sec = analysis.compare_saturation(r_sat, r_uns, sc.network)
    doc = {"scenario": sc.name, **sec.as_dict()}
    with _Outputs(args.output) as out:
        if out.target is not None:
            _write_json(out.path("compare.json"), doc)
            write_trajectory(r_sat, out.path("saturated.csv"), actual=args.actual)
            write_trajectory(r_uns, out.path("unsaturated.csv"), actual=args.actual)
    print(f"saturated excursion: {sec.saturated_excursion:.3e} MW "
          f"(max pre-clamp overshoot {sec.saturated_overshoot:.3e} of box width)")
    print(f"unsaturated excursion: {sec.unsaturated_excursion:.3f} MW")
    print(f"endpoint gap: {sec.endpoint_gap:.3e} MW")
    return EXIT_OK if sec.passed else EXIT_CERTIFICATION


def _sweep_point(data, ov):
    sc = scenario_from_dict(apply_overrides(data, ov))
    rec = integrate(sc, with_v1=False)
    final = rec.final_state()
    row = {"max_abs_omega": float(np.max(np.abs(final["omega"]))),
           "max_abs_flow": float(np.max(np.abs(final["flows"]), initial=0.0)),
           "max_overshoot_rel": rec.max_overshoot,
           "max_excursion_mw": float(np.max(rec.excursion))}
    try:
        sol = solve_pbo(sc.network, sc.final_disturbance())
        row["pg_gap_mw"] = float(np.max(np.abs(final["pg"] - sol.pg)))
        row["pl_gap_mw"] = float(np.max(np.abs(final["pl"] - sol.pl)))
    except InfeasibleError:
        row["pg_gap_mw"] = row["pl_gap_mw"] = float("nan")
    endpoint = np.concatenate([final[k] for k in ("theta_tilde", "omega", "pg", "pl", "lam")])
    return row, endpoint


def cmd_sweep(args) -> int:
    data, _, ov = _load(args)
    values = [parse_override_value(v.strip()) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ScenarioError("--values", "no grid values given")
    points = [{**ov, args.key: v} for v in values]
    for pt in points:  # validate every grid point before spending time integrating
        scenario_from_dict(apply_overrides(data, pt))
    if args.jobs > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_point, [data] * len(points), points))
    else:
        results = [_sweep_point(data, pt) for pt in points]
    ref = results[-1][1]
    rows = []
    for v, (row, end) in zip(values, results):
        rows.append({"value": v, **row,
                     "endpoint_diff_vs_last": float(np.max(np.abs(end - ref)))})
    if args.key == "integrator.h":
        for a, b in zip(rows, rows[1:]):
            ea, eb = a["endpoint_diff_vs_last"], b["endpoint_diff_vs_last"]
            ha, hb = float(a["value"]), float(b["value"])
            a["observed_order"] = (float(np.log(ea / eb) / np.log(ha / hb))
                                   if ea > 0 and eb > 0 and ha != hb else float("nan"))
        rows[-1]["observed_order"] = float("nan")
    cols = list(rows[0].keys())
    lines = [",".join(cols)] + [",".join(repr(r.get(c)) if not isinstance(r.get(c), str)
                                         else r.get(c) for c in cols) for r in rows]
    with _Outputs(args.output) as out:
        if out.target is not None:
            Path(out.path("sweep.csv")).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return EXIT_OK


def cmd_oracle(args) -> int:
    _, sc, _ = _load(args)
    p = sc.final_disturbance()
    sol = solve_pbo(sc.network, p)
    pg_act, pl_act = sol.actual(sc.initial_pg_actual, sc.initial_pl_actual)
    doc = {"scenario": sc.name, "p": p.tolist(), **sol.as_dict(),
           "pg_actual": pg_act.tolist(), "pl_actual": pl_act.tolist(),
           "uniqueness": check_uniqueness_conditions(sc.network, p).as_dict()}
    if sc.reference is not None:
        gap = max(np.max(np.abs(pg_act - np.array(sc.reference.pg_actual))),
                  np.max(np.abs(pl_act - np.array(sc.reference.pl_actual))))
        doc["reference_gap_mw"] = float(gap)
    with _Outputs(args.output) as out:
        if out.target is not None:
            _write_json(out.path("oracle.json"), doc)
    print(json.dumps(doc, indent=2))
    return EXIT_OK


# parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freqctl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, outputs=True):
        p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
        p.add_argument("-q", "--quiet", action="store_true", default=argparse.SUPPRESS)
        p.add_argument("scenario", help="scenario file (bundled names such as kundur4.scenario work too)")
        if outputs:
            p.add_argument("-o", "--output", help="output directory")
            p.add_argument("--actual", action="store_true",
                           help="shift power columns by the initial operating point")
        p.add_argument("--h", type=float, help="integrator step (s)")
        p.add_argument("--horizon", type=float, help="simulation horizon (s)")
        p.add_argument("--sample", type=float, help="output sampling period (s)")
        p.add_argument("--mode", choices=("ideal", "measured", "unsaturated"))
        p.add_argument("--formulation", choices=("physical", "projected", "both"))
        p.add_argument("--gains", type=parse_override_value,
                       help="'prescribed' (1/T) or a multiplier c giving c/T")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="schema override, e.g. areas.*.M=0.05 (repeatable)")

    p = sub.add_parser("run", help="integrate a scenario and export the trajectory")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="integrate and certify the equilibrium")
    common(p)
    p.add_argument("--tol-mw", type=float, default=1e-3,
                   help="tolerance against the oracle optimum (MW)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("compare", help="saturated versus unsaturated controller")
    common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="grid over one override key")
    common(p)
    p.add_argument("--key", required=True, help="override key, e.g. integrator.h")
    p.add_argument("--values", required=True, help="comma-separated grid values")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="solve the balance problem directly")
    common(p, outputs=False)
    p.add_argument("-o", "--output", help="output directory")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.ERROR if args.quiet else (logging.INFO if args.verbose else logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, ModelError, InfeasibleError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (IntegrationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
