"""Command-line front end: inspect, identities, simulate, bounds, counterexample and replay.

Every report is JSON with an embedded manifest; exit status 0 means all checks
passed, 1 means at least one check failed, 2 means a usage or input error.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import (KDEHeatKernel, c2_upper_bound, c_nq, estimate_Cp, moment_diagnostics, part_b_bound_check,
                     provider_for)
from .curvature import (conditions_report, counterexample_table, identity_suite, psi_map, psi_restricted_to_h,
                        COUNTEREXAMPLE_LABELS)
from .diffusion import (DEFAULT_PATHS, DEFAULT_STEP, RepresentationInapplicableError, RNGSpec, TestFunction,
                        _adjoint_data, agree, estimate_Ptf, finite_difference_gradient, frame_differential, gradient_bound_check,
                        gradient_rep_adjoint, gradient_rep_adjoint_action, gradient_rep_carnot,
                        gradient_rep_polygrowth, shipped_suite, simulate_paths, variance_bound_check)
from .frames import PROFILES, to_float_array
from .geometry import PreconditionError
from .lie_core import homogeneous_dimension, validate_algebra, verify_stratification
from .specfile import GroupSpec, SpecParseError, load_spec

EXIT_OK, EXIT_CHECKS_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# Output helpers -------------------------------------------------------------------------

def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def manifest(command: str, settings: dict, spec: GroupSpec | None = None, spec_path: str | None = None) -> dict:
    return {"command": command, "tool": "subriem", "version": __version__,
            "spec_path": spec_path, "spec_sha256": spec.sha256 if spec is not None else None,
            "seed": settings.get("seed"), "settings": settings,
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}


def _emit(report: dict, args) -> None:
    text = json.dumps(_jsonable(report), indent=2, sort_keys=False)
    if getattr(args, "out", None):
        Path(args.out).write_text(text + "\n")
    else:
        print(text)


def _write_csv(path: str | None, header: list[str], rows: list[list]) -> None:
    if not path:
        return
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


def _floats(text: str, name: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"--{name} expects comma-separated numbers, got {text!r}") from None


def _load(args):
    spec = load_spec(args.spec)
    try:
        return spec, spec.structure()
    except (ValueError, KeyError) as exc:
        raise SpecParseError(str(exc), 0, 0, args.spec) from None


def _vector(text: str | None, dim: int, name: str, default) -> np.ndarray:
    if text is None:
        return np.asarray(default, dtype=float)
    values = _floats(text, name)
    if len(values) != dim:
        raise UsageError(f"--{name} needs {dim} components, got {len(values)}")
    return np.asarray(values)


# Commands -------------------------------------------------------------------------------

def cmd_inspect(args) -> tuple[dict, int]:
    spec, srs = _load(args)
    settings = {"tolerance": args.tol}
    summary: dict = {"dim": srs.dim, "rank": srs.n, "names": list(srs.names)}
    checks: dict[str, bool] = {}
    if srs.is_lie:
        alg = srs.algebra
        violations = validate_algebra(alg)
        summary["algebra_violations"] = [str(v) for v in violations]
        checks["algebra_valid"] = not violations
        summary["nilpotent_step"] = alg.step
        if alg.stratification is not None:
            strat_violations = verify_stratification(alg, alg.stratification)
            summary["stratification_violations"] = [str(v) for v in strat_violations]
            checks["stratification_valid"] = not strat_violations
            summary["homogeneous_dimension"] = homogeneous_dimension(alg.stratification)
        summary["psi"] = to_float_array(psi_map(srs)).tolist()
        summary["psi_on_first_layer_zero"] = bool(np.abs(to_float_array(psi_restricted_to_h(srs))).max() == 0)
        summary["vertical"] = srs.vertical
    report = conditions_report(srs, spec.grid_points(), args.tol)
    conditions = report.to_dict()
    conditions["cocurvature_nonzero"] = report.cocurvature_norm > args.tol
    conditions["C_zero"] = report.c_residual <= args.tol
    checks.update(report.per_check)
    out = {"manifest": manifest("inspect", settings, spec, args.spec), "structure": summary,
           "conditions": conditions, "checks": checks, "pass": all(checks.values())}
    return out, EXIT_OK if out["pass"] else EXIT_CHECKS_FAILED


def cmd_identities(args) -> tuple[dict, int]:
    spec, srs = _load(args)
    if not srs.is_lie:
        raise PreconditionError("identities need a Lie algebra spec")
    if args.trials <= 0 or args.degree < 0:
        raise UsageError("--trials must be positive and --degree nonnegative")
    settings = {"trials": args.trials, "degree": args.degree, "seed": args.seed,
                "negative_control": args.incompatible}
    results = identity_suite(srs, args.trials, args.degree, args.seed, negative_control=args.incompatible)
    rows = [r.to_dict() for r in results]
    _write_csv(args.csv, ["identity", "connection", "trials", "max_residual", "exact_zero"],
               [[r.identity, r.connection or "", r.trials, r.max_residual, r.exact_zero] for r in results])
    passed = all(r.exact_zero for r in results)
    out = {"manifest": manifest("identities", settings, spec, args.spec), "results": rows, "pass": passed}
    return out, EXIT_OK if passed else EXIT_CHECKS_FAILED


def _estimate_dict(est) -> dict:
    return {"value": float(est.value), "stderr": float(est.stderr)}


def cmd_simulate(args) -> tuple[dict, int]:
    spec, srs = _load(args)
    if not srs.is_lie:
        raise PreconditionError("simulation needs a Lie algebra spec")
    try:
        f = TestFunction.from_expression(args.f, srs.algebra.basis_names)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    x = _vector(args.x, srs.dim, "x", np.zeros(srs.dim))
    default_v = np.eye(srs.dim)[0]
    v = _vector(args.v, srs.dim, "v", default_v)
    settings = {"f": args.f, "x": x.tolist(), "v": v.tolist(), "t": args.t, "step": args.step,
                "paths": args.paths, "seed": args.seed, "eps": args.eps}
    degenerate = args.t == 0
    left = srs.vertical == "left"
    transport = left
    if transport:
        try:
            _adjoint_data(srs)
        except RepresentationInapplicableError:
            transport = False
    batch = simulate_paths(srs, x, args.t, args.step, args.paths, RNGSpec(args.seed),
                           transport=transport, polygrowth=left)
    estimates: dict = {}
    notes: dict = {}
    estimates["P_t_f"] = _estimate_dict(estimate_Ptf(f, batch))
    reps = {}
    for name, call in (("carnot", lambda: gradient_rep_carnot(f, x, v, batch=batch)),
                       ("polygrowth", lambda: gradient_rep_polygrowth(f, x, v, batch=batch)),
                       ("adjoint", lambda: gradient_rep_adjoint(srs, f, x, v, batch=batch)),
                       ("adjoint_action", lambda: gradient_rep_adjoint_action(f, x, v, batch=batch))):
        try:
            reps[name] = call()
        except (RepresentationInapplicableError, ValueError, PreconditionError) as exc:
            notes[name] = str(exc)
    if not left:
        notes["polygrowth"] = notes["adjoint"] = "needs a left-invariant vertical complement"
    if degenerate:
        exact = float(frame_differential(srs, f, x[None, :])[0] @ v)
        estimates["exact_gradient"] = exact
        notes["finite_difference"] = "skipped at t = 0; exact differential reported instead"
    else:
        reps["finite_difference"] = finite_difference_gradient(f, x, v, batch=batch, eps=args.eps)
    estimates["gradient"] = {name: _estimate_dict(est) for name, est in reps.items()}
    names = sorted(reps)
    agreement = {f"{a}~{b}": agree(reps[a], reps[b]) for i, a in enumerate(names) for b in names[i + 1:]}
    if degenerate:
        agreement.update({f"{name}~exact": abs(float(est.value) - estimates["exact_gradient"]) <= 1e-12
                          for name, est in reps.items()})
    out = {"manifest": manifest("simulate", settings, spec, args.spec), "batch": batch.summary(),
           "estimates": estimates, "notes": notes, "agreement": agreement, "pass": all(agreement.values())}
    return out, EXIT_OK if out["pass"] else EXIT_CHECKS_FAILED


def cmd_bounds(args) -> tuple[dict, int]:
    spec, srs = _load(args)
    if not srs.is_lie or srs.algebra.stratification is None:
        raise PreconditionError("bounds need a Carnot spec with a stratification")
    if np.abs(to_float_array(psi_restricted_to_h(srs))).max() > 0:
        raise PreconditionError("bounds need ψ to vanish on the first layer")
    ps = _floats(args.p, "p")
    times = _floats(args.times, "times")
    if any(p <= 1 for p in ps):
        raise UsageError("every p must exceed 1")
    settings = {"p": ps, "times": times, "paths": args.paths, "step": args.step, "seed": args.seed,
                "kde_samples": args.kde_samples}
    strat = srs.algebra.stratification
    n, big_q = srs.n, homogeneous_dimension(strat)
    try:
        provider = provider_for(srs, 1.0)
        constant_paths = args.paths
    except PreconditionError:
        if args.kde_samples <= 0:
            raise PreconditionError("no closed-form heat kernel for this group; pass --kde-samples N") from None
        fit = simulate_paths(srs, None, 1.0, args.step, args.kde_samples, RNGSpec(args.seed + 2))
        provider = KDEHeatKernel(srs, fit.path_end, 1.0)
        constant_paths = min(args.paths, args.kde_samples)
    batch = simulate_paths(srs, None, 1.0, args.step, constant_paths, RNGSpec(args.seed))
    constants = {}
    rows = []
    checks: dict[str, bool] = {}
    estimates = {}
    for p in ps:
        est = estimate_Cp(provider, p, batch)
        estimates[p] = est
        entry = {"C_p": est.to_dict(), "at_least_n": est.value + 3 * est.stderr >= n}
        checks[f"C_{p:g}>=n"] = entry["at_least_n"]
        if p == 2:
            upper = c2_upper_bound(provider, strat, batch)
            entry["upper_bound"] = upper.to_dict()
            entry["within_upper_bound"] = est.value <= upper.value + 3 * math.hypot(est.stderr, upper.stderr)
            checks["C_2<=upper"] = entry["within_upper_bound"]
        if 2 < p < math.inf:
            q = 2 * p / (p - 2)
            entry["part_b"] = {"q": q, "c_nq": c_nq(n, q), "constant": n + c_nq(n, q) * math.sqrt(big_q)}
        constants[f"{p:g}"] = entry
    moments = moment_diagnostics(n, 2, batch, provider, strat).to_dict()
    energy_ok = abs(moments["log_gradient_energy"] - big_q) <= 3 * moments["log_gradient_energy_stderr"]
    checks["log_gradient_energy=Q"] = energy_ok
    checks["projection_moment=n"] = moments["matches_gaussian"]
    suite = shipped_suite(srs.algebra.basis_names)
    for t in times:
        run = simulate_paths(srs, None, t, args.step, args.paths, RNGSpec(args.seed + 1))
        x = np.zeros(srs.dim)
        for f in suite:
            for p in ps:
                check = gradient_bound_check(srs, f, x, t, p, estimates[p].value, run)
                rows.append(["gradient", t, p, str(f), check.lhs, check.lhs_stderr, check.constant * check.rhs,
                             check.passed])
                checks[f"gradient t={t:g} p={p:g} {f}"] = check.passed
                if 2 < p < math.inf:
                    part_b = part_b_bound_check(srs, f, p, run)
                    rows.append(["part_b", t, p, str(f), part_b.lhs, part_b.lhs_stderr,
                                 part_b.constant * part_b.rhs, part_b.passed])
                    checks[f"part_b t={t:g} p={p:g} {f}"] = part_b.passed
            if 2 in estimates:
                var = variance_bound_check(srs, f, x, t, estimates[2].value, run)
                rows.append(["variance", t, 2, str(f), var.lhs, var.lhs_stderr, var.constant * var.rhs, var.passed])
                checks[f"variance t={t:g} {f}"] = var.passed
    header = ["check", "t", "p", "function", "lhs", "lhs_stderr", "bound", "pass"]
    _write_csv(args.csv, header, rows)
    out = {"manifest": manifest("bounds", settings, spec, args.spec),
           "provider": provider.provenance, "n": n, "homogeneous_dimension": big_q,
           "constants": constants, "moments": moments,
           "checks_table": [dict(zip(header, row)) for row in rows],
           "checks": checks, "pass": all(checks.values())}
    return out, EXIT_OK if out["pass"] else EXIT_CHECKS_FAILED


def cmd_counterexample(args) -> tuple[dict, int]:
    if args.profile not in PROFILES:
        raise UsageError(f"unknown profile {args.profile!r}; choose from {', '.join(sorted(PROFILES))}")
    values = _floats(args.c, "c")
    settings = {"c": values, "profile": args.profile, "tolerance": args.tol}
    rows = [counterexample_table(c, args.profile) for c in values]
    table = [r.to_dict() for r in rows]
    header = ["c"] + [f"{kind}_{label}" for kind in ("computed", "printed", "derived")
                      for label in COUNTEREXAMPLE_LABELS] + ["deviation_printed", "deviation_derived"]
    _write_csv(args.csv, header, [[r.c, *r.computed, *r.printed, *r.derived, r.deviation, r.derived_deviation]
                                  for r in rows])
    checks = {"printed_forms": max(r.deviation for r in rows) < args.tol,
              "derived_forms": max(r.derived_deviation for r in rows) < args.tol,
              "ricci_diagonal": max(r.off_diagonal for r in rows) < args.tol}
    ric_g = [r.computed[-1] for r in rows]
    ric_min = [min(r.computed[:4]) for r in rows]
    out = {"manifest": manifest("counterexample", settings), "rows": table,
           "max_deviation_printed": max(r.deviation for r in rows),
           "max_deviation_derived": max(r.derived_deviation for r in rows),
           "sampled_ricci_min": min(ric_min), "sampled_ricg_A2a_min": min(ric_g),
           "checks": checks, "pass": all(checks.values())}
    return out, EXIT_OK if out["pass"] else EXIT_CHECKS_FAILED


# Parser ---------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subriem", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, spec=True):
        if spec:
            p.add_argument("spec", help="group spec file")
        p.add_argument("--out", help="write the JSON report here instead of stdout")

    p = sub.add_parser("inspect", help="structural summary and condition report")
    common(p)
    p.add_argument("--tol", type=float, default=1e-12)
    p.set_defaults(handler=cmd_inspect)

    p = sub.add_parser("identities", help="exact operator identities on random polynomials")
    common(p)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--degree", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--incompatible", action="store_true", help="negative control with a non-metric connection")
    p.add_argument("--csv")
    p.set_defaults(handler=cmd_identities)

    p = sub.add_parser("simulate", help="Monte Carlo semigroup and gradient estimates")
    common(p)
    p.add_argument("--f", required=True, help="expression in the basis names, e.g. 'sin(x)+atan(z)'")
    p.add_argument("--x", help="base point in exponential coordinates")
    p.add_argument("--v", help="direction in the orthonormal working frame")
    p.add_argument("--t", type=float, default=0.5)
    p.add_argument("--step", type=float, default=DEFAULT_STEP)
    p.add_argument("--paths", type=int, default=DEFAULT_PATHS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-4)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("bounds", help="gradient-bound constants and checks on a Carnot group")
    common(p)
    p.add_argument("--p", default="2,4")
    p.add_argument("--times", default="0.25,0.5,1")
    p.add_argument("--paths", type=int, default=DEFAULT_PATHS)
    p.add_argument("--step", type=float, default=DEFAULT_STEP)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kde-samples", type=int, default=0,
                   help="fit a kernel-density heat kernel when no closed form is known")
    p.add_argument("--csv")
    p.set_defaults(handler=cmd_bounds)

    p = sub.add_parser("counterexample", help="Ricci table of the warped su(2) pair")
    common(p, spec=False)
    p.add_argument("--c", default="-2,-1,-0.5,0,0.5,1,2")
    p.add_argument("--profile", default="neg_c_arctan")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--csv")
    p.set_defaults(handler=cmd_counterexample)

    p = sub.add_parser("replay", help="re-run a saved report from its manifest and diff every number")
    p.add_argument("report", help="JSON report written by an earlier run")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(handler=cmd_replay)
    return parser


def _differences(old, new, path="") -> list[str]:
    if isinstance(old, dict) and isinstance(new, dict):
        out = []
        for key in sorted(set(old) | set(new)):
            out += _differences(old.get(key), new.get(key), f"{path}/{key}")
        return out
    if isinstance(old, list) and isinstance(new, list) and len(old) == len(new):
        return [d for i, (a, b) in enumerate(zip(old, new)) for d in _differences(a, b, f"{path}/{i}")]
    return [] if old == new else [path or "/"]


def _strip_outputs(argv: list[str]) -> list[str]:
    out, skip = [], False
    for token in argv:
        if skip:
            skip = False
        elif token in ("--out", "--csv"):
            skip = True
        elif not token.startswith(("--out=", "--csv=")):
            out.append(token)
    return out


def cmd_replay(args) -> tuple[dict, int]:
    try:
        original = json.loads(Path(args.report).read_text())
        argv = original["manifest"]["argv"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read a manifest from {args.report}: {exc}") from None
    argv = _strip_outputs(argv)
    inner = build_parser().parse_args(argv)
    if inner.command == "replay":
        raise UsageError("a replay report cannot itself be replayed")
    spec_path = original["manifest"].get("spec_path")
    if spec_path is not None:
        current = load_spec(spec_path).sha256
        if current != original["manifest"].get("spec_sha256"):
            raise UsageError(f"{spec_path} changed since the run (sha256 {current})")
    report, _ = inner.handler(inner)
    report = _jsonable(report)
    report["manifest"]["argv"] = argv
    skip = {"timestamp", "argv"}
    old = {**original, "manifest": {k: v for k, v in original["manifest"].items() if k not in skip}}
    new = {**report, "manifest": {k: v for k, v in report["manifest"].items() if k not in skip}}
    diffs = _differences(old, new)
    out = {"manifest": manifest("replay", {"report": args.report}), "replayed_argv": argv,
           "differences": diffs, "pass": not diffs}
    return out, EXIT_OK if not diffs else EXIT_CHECKS_FAILED


def run(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        report, status = args.handler(args)
        report["manifest"]["argv"] = argv
    except SpecParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, PreconditionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _emit(report, args)
    return status


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
