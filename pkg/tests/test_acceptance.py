"""One test per acceptance criterion, each printing a single PASS/FAIL line."""

from __future__ import annotations

import time
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from scipy.linalg import expm

from renormkit.flowlab import block_error, build_scheme, verify_sweep
from renormkit.henonfactor import (
    RidgeTerm,
    convergence_table,
    factorize,
    planar_henon_eval,
    planar_henon_factors,
    ridge_decompose,
    shear_flow,
    shear_to_henon,
    theorem3_pipeline,
)
from renormkit.hetreturn import convergence_sweep
from renormkit.lemma1 import lemma1_decompose
from renormkit.mapcore import HenonLikeMap, SampleGrid, dumps_manifest, loads_manifest, ruelle_takens_chain
from renormkit.normalform import (
    conservative_tune,
    elliptic_check,
    flow_interpolate,
    flow_linear_data,
    normal_form_reduce,
)
from renormkit.polynomial import Polynomial
from renormkit.presets import decompose_map, flow_target, nonlinear_field, rotation_field, theorem3_map
from renormkit.series import TruncatedSeries


def report(capsys, number: int, title: str, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\n[acceptance {number:02d}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
    assert ok, detail


def apply_in_order(factors, x):
    for f in factors:
        x = f(x)
    return x


@pytest.fixture(scope="module")
def theorem3_result():
    start = time.perf_counter()
    result = theorem3_pipeline(theorem3_map(), N=32, degree=6)
    return result, time.perf_counter() - start


def test_01_special_decomposition(capsys):
    worst, details = 0.0, []
    ok = True
    for name in ("identity2", "shear2", "cubic2", "mixed3"):
        start = time.perf_counter()
        F = decompose_map(name)
        dec = lemma1_decompose(F)
        s = dec.summarize(SampleGrid.ball(F.dimension, 41))
        elapsed = time.perf_counter() - start
        ok &= s["decomposition"] < 1e-5 and s["det_defect"] < 1e-5 and elapsed < 120
        worst = max(worst, s["decomposition"], s["det_defect"])
        details.append(f"{name} {elapsed:.1f}s")
    report(capsys, 1, "decomposition and det residuals on 41^n grids", ok,
           f"max residual {worst:.2e}; " + ", ".join(details))


def test_02_time_bracket(capsys):
    worst = 0.0
    for k, name in enumerate(("identity2", "shear2", "cubic2", "mixed3")):
        F = decompose_map(name)
        dec = lemma1_decompose(F)
        pts = SampleGrid.random(F.dimension, 200, np.random.default_rng(k)).points
        worst = max(worst, float(np.max(np.abs(dec.phi.bracket(dec.psi1(pts)) + 1))))
    report(capsys, 2, "bracket equals -1 at 200 random points", worst < 1e-6, f"max |bracket + 1| = {worst:.2e}")


def test_03_henon_structure(capsys):
    det_err, inv_err = 0.0, 0.0
    rng = np.random.default_rng(3)
    for n in (2, 3, 4):
        for degree in range(7):
            f = HenonLikeMap(n, Polynomial.random(n - 1, degree, rng, scale=0.5))
            pts = SampleGrid.random(n, 1000, rng).points
            det_err = max(det_err, float(np.max(np.abs(np.linalg.det(f.jacobian(pts)) - 1))))
            inv_err = max(inv_err, float(np.max(np.abs(f.inverse_call(f(pts)) - pts))))
    ok = det_err < 1e-12 and inv_err < 1e-10
    report(capsys, 3, "Hénon-like det = 1 and inverse round trip", ok,
           f"det err {det_err:.2e}, inverse err {inv_err:.2e}")


def test_04_factorization_identities(capsys):
    rng = np.random.default_rng(4)
    shear_err, semi_err = 0.0, 0.0
    for n in (3, 4):
        pts = SampleGrid.random(n, 1000, rng).points
        # vertical shear (x_1, x_2 + s(x_1)) = H_s o H_0^3 on the first pair
        s = Polynomial.random(n, 4, rng).set_variable(1, 0)
        profile = s.integrate(0)
        S = shear_flow(RidgeTerm(0, 1.0, 0.0, profile), -1.0)
        want = pts.copy()
        want[:, 1] += s(pts)
        shear_err = max(shear_err, float(np.max(np.abs(apply_in_order(shear_to_henon(S), pts) - want))))
        for index in range(n - 1):
            h = Polynomial.random(n, 3, rng).set_variable(index, 0)
            got = apply_in_order(planar_henon_factors(index, h), pts)
            semi_err = max(semi_err, float(np.max(np.abs(got - planar_henon_eval(pts, index, h)))))
    ok = shear_err < 1e-12 and semi_err < 1e-12
    report(capsys, 4, "shear and embedded planar Hénon identities", ok,
           f"shear err {shear_err:.2e}, embedding err {semi_err:.2e}")


def test_05_ridge_reconstruction(capsys):
    rng = np.random.default_rng(5)
    worst = 0.0
    for degree in range(9):
        for _ in range(5):
            psi = Polynomial.random(2, degree, rng)
            worst = max(worst, ridge_decompose(psi).residual)
    report(capsys, 5, "ridge decomposition coefficient residual", worst < 1e-10, f"max residual {worst:.2e}")


def test_06_factorization_convergence(capsys):
    start = time.perf_counter()
    ratios = []
    for X, res in ((rotation_field(), 21), (nonlinear_field(0), 9)):
        rows = convergence_table(X, [8, 16, 32], SampleGrid.ball(X.dimension, res))
        ratios += [r.ratio for r in rows[1:]]
    elapsed = time.perf_counter() - start
    ok = all(1.5 <= r <= 2.5 for r in ratios) and elapsed < 60
    report(capsys, 6, "first-order convergence of the Hénon factorization", ok,
           "ratios " + ", ".join(f"{r:.3f}" for r in ratios) + f" ({elapsed:.1f}s)")


def test_07_full_pipeline(capsys, theorem3_result):
    result, elapsed = theorem3_result
    ok = result.error < 0.05 and result.N == 32 and result.max_degree <= 6
    report(capsys, 7, "polynomial diffeomorphism reproduced by Hénon factors", ok,
           f"N={result.N} d={result.max_degree} factors={result.factor_count} "
           f"C0 error {result.error:.4f} ({elapsed:.1f}s)")


def test_08_flow_parameters(capsys):
    worst, ok = 0.0, True
    for name in ("q21", "poly"):
        targets, K, _, _ = flow_target(name)
        eps = []
        for m in (6, 8, 10):
            sch = build_scheme(targets, m=m, K=K)
            worst = max(worst, max(sch.residuals().values()))
            eps.append(max(float(np.max(np.abs(e))) for e in sch.eps if e.size))
        ok &= eps[0] > eps[1] > eps[2]
    ok &= worst < 1e-9
    report(capsys, 8, "flow parameter identities and shrinking eps", ok, f"max residual {worst:.2e}")


def test_09_flow_blocks(capsys):
    start = time.perf_counter()
    targets, K, _, _ = flow_target("poly")
    ratios = {}
    for m in (6, 8, 10):
        sch = build_scheme(targets, m=m, K=K)
        for j in (1, 2):
            for s in range(1, sch.q[j - 1]):
                ratios.setdefault((j, s), []).append(block_error(sch, j, s) / sch.eta)
    blocks_ok = all(all(0.5 * np.mean(r) <= x <= 1.5 * np.mean(r) for x in r) for r in ratios.values())
    targets, K, radius, centre = flow_target("q11")
    grid = SampleGrid.ball(2, 41, radius, center=centre)
    end = [r.end_to_end for r in verify_sweep(targets, (6, 8, 10), K=K, grid=grid)]
    elapsed = time.perf_counter() - start
    ok = blocks_ok and end[0] > end[1] > end[2] and end[2] < 0.1 and elapsed < 120
    spread = max(max(r) / min(r) for r in ratios.values())
    report(capsys, 9, "block error ~ c eta and end-to-end convergence", ok,
           f"block c spread {spread:.3f}; end-to-end " + ", ".join(f"{e:.3f}" for e in end)
           + f" ({elapsed:.1f}s)")


def test_10_return_map_convergence(capsys):
    start = time.perf_counter()
    ok, parts = True, []
    for m in (1, 2):
        d = [r.distance for r in convergence_sweep(m=m)]
        ok &= d[0] > d[1] > d[2] and d[2] < 1e-2
        parts.append(f"m={m}: " + ", ".join(f"{x:.2e}" for x in d))
    elapsed = time.perf_counter() - start
    ok &= elapsed < 60
    report(capsys, 10, "rescaled return map tends to the limit map", ok, "; ".join(parts) + f" ({elapsed:.1f}s)")


def _exact_map(order, rng):
    def frac():
        return Fraction(int(rng.integers(-9, 10)), int(rng.integers(1, 10)))

    first = {(1, 0): Fraction(1), (0, 1): Fraction(1)}
    second = {(1, 0): Fraction(int(rng.integers(-3, 4)), 20), (0, 1): 1 + Fraction(int(rng.integers(-3, 4)), 20)}
    for n in range(2, order + 1):
        for i in range(n + 1):
            first[(i, n - i)] = frac()
            second[(i, n - i)] = frac()
    return TruncatedSeries(order, first), TruncatedSeries(order, second)


def test_11_normal_form_exactness(capsys):
    rng = np.random.default_rng(11)
    residual_zero = True
    for m in (2, 3, 4):
        for _ in range(3):
            F = _exact_map(m, rng)
            nf = normal_form_reduce(F)
            residual_zero &= all(c.is_zero() for c in nf.residual(F))
    # exact round trip needs eps = 0 so every coefficient stays rational
    round_trip = True
    for m in (2, 3, 4):
        F = _exact_map(m, rng)
        F = (F[0], F[1] - TruncatedSeries.u(m, F[1].coeff(1, 0)) - TruncatedSeries.v(m, F[1].coeff(0, 1) - 1))
        round_trip &= flow_interpolate(F).mismatch() == 0
    lin_err = 0.0
    eps_cases = ((Fraction(1, 10), Fraction(-1, 20)), (Fraction(-1, 7), Fraction(1, 9)), (Fraction(0), Fraction(1, 50)))
    for e1, e2 in eps_cases:
        with mpmath.workdps(30):
            a, b = flow_linear_data(e1, e2)
        M = expm(np.array([[0.0, 1.0], [float(a), float(b)]]))
        lin_err = max(lin_err, abs(np.trace(M) - 2 - float(e1)), abs(np.linalg.det(M) - 1 - float(e1 - e2)))
    ok = residual_zero and round_trip and lin_err < 1e-12
    report(capsys, 11, "exact normal form, exact interpolation, linear data", ok,
           f"zero residual {residual_zero}, exact round trip {round_trip}, linear data err {lin_err:.1e}")


def test_12_conservativity(capsys):
    ok, parts = True, []
    for m in (1, 2, 3):
        tuned = conservative_tune(m)
        rep = elliptic_check(tuned.Psi, iterations=10_000)
        ok &= rep.passed and tuned.max_residual() < 1e-10
        parts.append(f"m={m}: step {rep.step_drift:.1e}, total {rep.total_drift:.1e}, "
                     f"|mult|-1 {rep.multiplier_defect:.1e}")
    report(capsys, 12, "tuned flow conserves H and has an elliptic point", ok, "; ".join(parts))


def test_13_straight_line_baseline(capsys):
    F = theorem3_map()
    pts = SampleGrid.ball(2, 21).points
    recon, devs = 0.0, []
    for N in (8, 16, 32):
        y, dev = pts, 0.0
        for f in ruelle_takens_chain(F, N):
            z = f(y)
            dev = max(dev, float(np.max(np.abs(z - y))))
            y = z
        recon = max(recon, float(np.max(np.abs(y - F(pts)))))
        devs.append(dev)
    ratios = [devs[0] / devs[1], devs[1] / devs[2]]
    ok = recon < 1e-8 and all(1.5 <= r <= 2.5 for r in ratios)
    report(capsys, 13, "straight-line chain reconstruction and O(1/N) factors", ok,
           f"reconstruction {recon:.1e}, deviation ratios {ratios[0]:.3f}, {ratios[1]:.3f}")


def test_14_manifest_and_determinism(capsys, theorem3_result):
    result, _ = theorem3_result
    text = dumps_manifest(result.composition)
    back = loads_manifest(text)
    pts = SampleGrid.ball(2, 11).points
    bit_exact = dumps_manifest(back) == text and np.array_equal(back(pts), result.composition(pts))
    again = theorem3_pipeline(theorem3_map(), N=32, degree=6)
    deterministic = dumps_manifest(again.composition) == text
    field_runs = [dumps_manifest(factorize(nonlinear_field(7), 8)) for _ in range(2)]
    deterministic &= field_runs[0] == field_runs[1]
    ok = bit_exact and deterministic
    report(capsys, 14, "manifest round trip and reproducible runs", ok,
           f"bit exact {bit_exact}, deterministic {deterministic}, {len(text)} bytes")
