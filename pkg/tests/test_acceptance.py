"""Acceptance criteria, one test each; a summary line per criterion is printed at the end of the run."""
import itertools
import json
import math
import time

import numpy as np
import pytest

from subriem.bounds import (HeisenbergHeatKernel, c2_upper_bound, c_nq, estimate_Cp, moment_diagnostics)
from subriem.cli import run
from subriem.curvature import conditions_report, counterexample_table, identity_suite
from subriem.diffusion import (RNGSpec, EstimateWithError, agree, estimate_Ptf, finite_difference_gradient,
                               gradient_bound_check, gradient_rep_adjoint, gradient_rep_adjoint_action,
                               gradient_rep_carnot, gradient_rep_polygrowth, semigroup_gradient_check,
                               shipped_suite, simulate_paths, variance_bound_check, projection)
from subriem.frames import to_float_array
from subriem.geometry import canonical_connection, perturbed_connection
from subriem.curvature import ricci
from subriem.specfile import load_spec, shipped_spec_path

CRITERIA = {
    1: "exact identity suite on Heisenberg and Engel",
    2: "counter-example closed forms",
    3: "condition reports",
    4: "maximality of the canonical connection",
    5: "stochastic cross-validation",
    6: "semigroup bounds",
    7: "Carnot constants",
    8: "determinism",
}
RESULTS: dict[int, tuple[bool, str]] = {}

XYZ = ("x", "y", "z")
BASE = np.array([0.3, -0.2, 0.1])
N_PATHS = 200_000
STEP = 2.0 ** -8


def record(number, passed, detail):
    RESULTS[number] = (bool(passed), detail)
    assert passed, detail


@pytest.fixture(scope="module")
def heis_spec():
    return load_spec(shipped_spec_path("heisenberg")).structure()


@pytest.fixture(scope="module")
def unit_time_batch(heis_spec):
    return simulate_paths(heis_spec, None, 1.0, STEP, N_PATHS, RNGSpec(101))


@pytest.fixture(scope="module")
def unit_kernel():
    return HeisenbergHeatKernel(1.0)


def test_criterion_1_exact_identities():
    start = time.perf_counter()
    worst, count = 0.0, 0
    for name in ("heisenberg", "engel"):
        results = identity_suite(load_spec(shipped_spec_path(name)).structure(), trials=20, degree=4, seed=2024)
        worst = max([worst] + [r.max_residual for r in results])
        count += len(results)
        assert all(r.trials >= 20 for r in results)
        exact = all(r.exact_zero for r in results)
        if not exact:
            break
    elapsed = time.perf_counter() - start
    record(1, exact and worst == 0 and elapsed < 30,
           f"{count} identity/connection pairs, max residual {worst}, {elapsed:.1f} s")


def test_criterion_2_counterexample_closed_forms():
    rows = [counterexample_table(c) for c in (0, 0.5, -0.5, 1, -1, 2, -2)]
    origin = rows[0]
    worst = max(r.deviation for r in rows)
    worst_derived = max(r.derived_deviation for r in rows)
    origin_ok = np.allclose(origin.computed, (-2, -2, -2, -4, 1), atol=1e-9)
    record(2, worst < 1e-9 and origin_ok,
           f"max deviation from printed forms {worst:.3g}; at c = 0 computed "
           f"{tuple(round(v, 12) for v in origin.computed)}; derived forms agree to {worst_derived:.1e}")


def test_criterion_3_condition_reports(heis_spec):
    heis = conditions_report(heis_spec)
    spec = load_spec(shipped_spec_path("counterexample"))
    example = conditions_report(spec.structure(), spec.grid_points())
    heis_ok = (heis.ii_residual < 1e-12 and heis.deltaC_residual < 1e-12 and heis.psi_h_residual < 1e-12
               and heis.yang_mills)
    example_ok = example.ii_residual < 1e-12 and example.c_residual < 1e-12 and example.cocurvature_norm > 1e-12
    record(3, heis_ok and example_ok,
           f"Heisenberg II={heis.ii_residual}, δC={heis.deltaC_residual}, ψ={heis.psi_h_residual}, "
           f"yang_mills={heis.yang_mills}; example II={example.ii_residual}, C={example.c_residual}, "
           f"|R̄|={example.cocurvature_norm:.3g}")


def _min_h_ricci(conn):
    ric = to_float_array(ricci(conn))
    n = conn.rank
    return float(np.linalg.eigvalsh(0.5 * (ric + ric.T)[:n, :n]).min())


def _admissible_sample(n, dim, rng):
    lam = np.zeros((dim,) * 3)
    for j in range(n, dim):
        m = rng.normal(size=(dim, dim))
        lam[j] = m - m.T
    beta = np.zeros((dim,) * 3)
    # the admissible β are alternating 3-forms on H; for rank 2 this space is {0}
    for i, j, k in itertools.combinations(range(n), 3):
        v = rng.normal()
        for perm, sign in (((i, j, k), 1), ((j, k, i), 1), ((k, i, j), 1),
                           ((j, i, k), -1), ((i, k, j), -1), ((k, j, i), -1)):
            beta[perm] = sign * v
    return lam, beta


def test_criterion_4_maximality(heis_spec):
    from subriem.geometry import SubRiemannianStructure
    from subriem.lie_core import heisenberg5
    rng = np.random.default_rng(44)
    outcomes = {}
    for label, srs in (("heisenberg", heis_spec), ("heisenberg5", SubRiemannianStructure.from_algebra(heisenberg5()))):
        conn = canonical_connection(srs.constant_frame())
        base = _min_h_ricci(conn)
        never_exceeds, strict, with_beta = True, True, 0
        for _ in range(50):
            lam, beta = _admissible_sample(srs.n, srs.dim, rng)
            value = _min_h_ricci(perturbed_connection(conn, lam, beta))
            never_exceeds &= value <= base + 1e-12
            if np.abs(beta).max() > 0:
                with_beta += 1
                strict &= value < base - 1e-12
        outcomes[label] = (never_exceeds, strict, with_beta)
    h, h5 = outcomes["heisenberg"], outcomes["heisenberg5"]
    record(4, h[0] and h[1] and h5[0] and h5[1],
           f"Heisenberg: 50 samples never exceed, {h[2]} with β ≠ 0 (Λ³H* = 0); "
           f"heisenberg5: never exceed={h5[0]}, strict decrease in {h5[2]}/{h5[2]} β ≠ 0 samples={h5[1]}")


def test_criterion_5_stochastic_cross_validation(heis_spec, unit_time_batch):
    start = time.perf_counter()
    batch = simulate_paths(heis_spec, None, 0.5, STEP, N_PATHS, RNGSpec(55), transport=True, polygrowth=True)
    one = estimate_Ptf(lambda pts: np.ones(len(pts)), batch)
    failures, comparisons = [], 0
    for f in shipped_suite(XYZ):
        for direction in range(3):
            v = np.eye(3)[direction]
            estimates = {"carnot": gradient_rep_carnot(f, BASE, v, batch=batch),
                         "polygrowth": gradient_rep_polygrowth(f, BASE, v, batch=batch),
                         "adjoint": gradient_rep_adjoint(heis_spec, f, BASE, v, batch=batch),
                         "finite_difference": finite_difference_gradient(f, BASE, v, batch=batch)}
            for a, b in itertools.combinations(estimates, 2):
                comparisons += 1
                if not agree(estimates[a], estimates[b]):
                    failures.append(f"{f} v={direction + 1} {a}/{b}")
            if not agree(gradient_rep_adjoint_action(f, BASE, v, batch=batch), estimates["finite_difference"]):
                failures.append(f"{f} v={direction + 1} adjoint_action/finite_difference")
    radius = EstimateWithError.from_samples(np.sum(projection(heis_spec, unit_time_batch.path_end) ** 2, axis=1))
    elapsed = time.perf_counter() - start
    ok = (not failures and one.value == 1.0 and one.stderr == 0.0 and abs(radius.value - 2) <= 3 * radius.stderr
          and elapsed < 300)
    record(5, ok, f"{comparisons} pairwise comparisons, failures {failures or 'none'}; P_t1 = {one.value!r}; "
                  f"E|π(X1)|² = {radius.value:.4f} ± {radius.stderr:.4f}; {elapsed:.0f} s")


def test_criterion_6_semigroup_bounds(heis_spec, unit_time_batch, unit_kernel):
    constants = {p: estimate_Cp(unit_kernel, p, unit_time_batch).value for p in (2, 4)}
    report = conditions_report(heis_spec)
    grid = [np.array(p) for p in itertools.product((-1.0, 0.0, 1.0), repeat=3)]
    failures, checks = [], 0
    worst_ratio = 0.0
    for t in (0.25, 0.5, 1.0):
        batch = simulate_paths(heis_spec, None, t, STEP, 50_000, RNGSpec(600 + int(4 * t)), transport=True)
        for f in shipped_suite(XYZ):
            for p, c_p in constants.items():
                check = gradient_bound_check(heis_spec, f, BASE, t, p, c_p, batch)
                checks += 1
                if not check.passed:
                    failures.append(f"gradient {f} p={p} t={t}")
            variance = variance_bound_check(heis_spec, f, BASE, t, constants[2], batch)
            checks += 1
            if not variance.passed:
                failures.append(f"variance {f} t={t}")
            sup = semigroup_gradient_check(heis_spec, f, grid, batch, K=report.K)
            checks += 1
            if not sup["pass"]:
                failures.append(f"sup-norm {f} t={t}")
            if math.isfinite(sup["bound"]):
                worst_ratio = max(worst_ratio, sup["max_norm"] / sup["bound"])
    record(6, not failures, f"{checks} checks with K = {report.K}, failures {failures or 'none'}; "
                            f"largest |dP_t f| / e^(Kt)‖df‖∞ among finite bounds {worst_ratio:.3f}")


def test_criterion_7_carnot_constants(heis_spec, unit_time_batch, unit_kernel):
    hand = (16 * math.sqrt(math.pi)) ** 0.25
    c24_ok = abs(c_nq(2, 4) - hand) < 1e-12
    c2 = estimate_Cp(unit_kernel, 2, unit_time_batch)
    upper = c2_upper_bound(unit_kernel, heis_spec.algebra.stratification, unit_time_batch)
    c2_ok = (c2.value >= 2 - 3 * c2.stderr
             and c2.value <= upper.value + 3 * math.hypot(c2.stderr, upper.stderr))
    invariance = {}
    for t in (0.5, 1.0, 2.0):
        batch = unit_time_batch if t == 1.0 else simulate_paths(heis_spec, None, t, t * STEP, N_PATHS,
                                                                RNGSpec(700 + int(2 * t)))
        kernel = unit_kernel if t == 1.0 else HeisenbergHeatKernel(t)
        invariance[t] = {p: estimate_Cp(kernel, p, batch) for p in (2, 4)}
    invariant = all(abs(invariance[a][p].value - invariance[b][p].value)
                    <= 3 * math.hypot(invariance[a][p].stderr, invariance[b][p].stderr)
                    for a, b in itertools.combinations(invariance, 2) for p in (2, 4))
    diag = moment_diagnostics(2, 2, unit_time_batch, unit_kernel)
    energy = diag.log_gradient_energy
    energy_ok = abs(energy.value - 4) <= 3 * energy.stderr
    spread = {p: [round(invariance[t][p].value, 4) for t in invariance] for p in (2, 4)}
    record(7, c24_ok and c2_ok and invariant and energy_ok and diag.matches_gaussian,
           f"c_2,4 = {c_nq(2, 4):.13f}; Ĉ2 = {c2.value:.4f} ± {c2.stderr:.4f} ≤ {upper.value:.4f} "
           f"(Cov {upper.covariance:.3f}); C_p over t=0.5,1,2 {spread}; "
           f"E|∇ log ρ|² = {energy.value:.3f} ± {energy.stderr:.3f}; "
           f"E|π|² MC {diag.monte_carlo.value:.4f} vs Gaussian {diag.gaussian_value} vs prefactor "
           f"{diag.printed_value:.4f}")


def test_criterion_8_determinism(tmp_path, capsys):
    spec = str(shipped_spec_path("heisenberg"))
    runs = [["simulate", spec, "--f", "cos(z)*sin(x)", "--x", "0.3,-0.2,0.1", "--paths", "20000",
             "--step", str(2 ** -6), "--seed", "8"],
            ["bounds", spec, "--paths", "8192", "--step", str(2 ** -5), "--times", "0.5", "--seed", "8"],
            ["identities", spec, "--trials", "4", "--seed", "8"],
            ["counterexample", "--c", "0,1"]]
    identical = []
    for argv in runs:
        path = tmp_path / f"{argv[0]}.json"
        run(argv + ["--out", str(path)])
        first = json.loads(path.read_text())
        status = run(["replay", str(path)])
        replay = json.loads(capsys.readouterr().out)
        identical.append(status == 0 and replay["pass"] and first["manifest"]["argv"][0] == argv[0])
    record(8, all(identical), f"{sum(identical)}/{len(runs)} reports replayed bit-exactly from their manifests")
