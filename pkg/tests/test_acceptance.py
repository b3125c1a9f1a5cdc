"""End-to-end acceptance checks.

Each test prints one ``PASS``/``FAIL`` line with its key numbers, then
asserts. Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines
interleaved with pytest's own output.
"""

import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import cvx_solve, quiet_matrix, spread_complement_matrix
from oracles import (
    cross_term_min,
    lp_projection_bisection,
    rip_by_svd,
    scalar_prox_bruteforce,
)
from wbpdq.analysis import (
    compute_c_pq,
    estimate_rip,
    recovery_error_bound,
    rip_implies_rnsp,
    rnsp_check,
)
from wbpdq.harness import ExperimentConfig, run_experiment
from wbpdq.model import TubeConstraint, lp_norm, make_weights, quantize, weighted_s_term_error
from wbpdq.prox import lp_ball_kkt_residual, project_lp_ball, project_tube, prox_weighted_l1
from wbpdq.solver import SolverConfig, solve_bpdq


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail, started):
        with capsys.disabled():
            status = "PASS" if ok else "FAIL"
            print(f"\n[{status}] criterion {number:>2}: {detail} ({time.time() - started:.1f} s)")
        return ok

    return emit


def test_01_prox_matches_bruteforce(report):
    t0 = time.time()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 5))
        x = rng.normal(scale=rng.uniform(0.1, 5), size=n)
        w = rng.uniform(0.05, 1.0, n)
        g = rng.uniform(0.01, 4.0)
        got = prox_weighted_l1(x, w, g)
        want = np.array([scalar_prox_bruteforce(xi, g * wi) for xi, wi in zip(x, w)])
        worst = max(worst, float(np.max(np.abs(got - want))))
    ok = worst <= 1e-8 and time.time() - t0 < 10
    assert report(1, ok, f"max |prox - brute force| = {worst:.2e} over 1000 triples", t0)


def test_02_lp_ball_projection(report):
    t0 = time.time()
    rng = np.random.default_rng(202)
    worst_kkt = worst_gap = 0.0
    for p in (2.5, 3.0, 4.0, 10.0):
        for _ in range(500):
            n = int(rng.integers(1, 65))
            x = rng.normal(scale=rng.uniform(0.5, 20), size=n)
            if lp_norm(x, p) <= 1:
                x *= rng.uniform(1.1, 5) / lp_norm(x, p)
            warm = {}
            u = project_lp_ball(x, p, warm=warm)
            res = lp_ball_kkt_residual(np.abs(x), np.abs(u), warm["lam"], p)
            worst_kkt = max(worst_kkt, float(np.linalg.norm(res)))
            worst_gap = max(worst_gap, float(np.linalg.norm(u - lp_projection_bisection(x, p))))
    ok = worst_kkt <= 1e-8 and worst_gap <= 1e-8 and time.time() - t0 < 30
    assert report(2, ok, f"max KKT residual {worst_kkt:.2e}, max oracle gap {worst_gap:.2e}", t0)


def _tube_oracle(x, phi, y, eps, p):
    import cvxpy as cp

    u = cp.Variable(x.size)
    cvx_solve(cp.Problem(cp.Minimize(cp.sum_squares(u - x)), [cp.pnorm(y - phi @ u, p) <= eps]))
    return u.value


def test_03_tube_projection(report):
    t0 = time.time()
    rng = np.random.default_rng(303)
    worst = 0.0
    for i in range(100):
        p = (2.0, 4.0)[i % 2]
        m = int(rng.integers(2, 9))
        n = int(rng.integers(m + 1, 17))
        phi = rng.standard_normal((m, n))
        x, y = rng.standard_normal(n), rng.standard_normal(m)
        eps = rng.uniform(0.05, 0.8) * lp_norm(y - phi @ x, p)
        u = project_tube(x, TubeConstraint(quiet_matrix(phi), y, eps, p))
        worst = max(worst, float(np.linalg.norm(u - _tube_oracle(x, phi, y, eps, p))))
    ok = worst <= 1e-5 and time.time() - t0 < 120
    assert report(3, ok, f"max ||P_tube - oracle||_2 = {worst:.2e} over 100 instances", t0)


def _bpdq_oracle(y, phi, w, eps):
    import cvxpy as cp

    x = cp.Variable(phi.shape[1])
    cvx_solve(cp.Problem(cp.Minimize(cp.sum(cp.multiply(w, cp.abs(x)))),
                         [cp.norm(y - phi @ x, 2) <= eps]))
    return x.value


def test_04_solver_matches_interior_point(report):
    t0 = time.time()
    rng = np.random.default_rng(404)
    worst = 0.0
    for _ in range(50):
        phi = rng.standard_normal((10, 20))
        x = np.zeros(20)
        x[rng.choice(20, 2, replace=False)] = rng.standard_normal(2) * 2
        noise = rng.uniform(-1e-2, 1e-2, 10)
        y = phi @ x + noise
        w = make_weights(rng.choice(20, 2, replace=False), 0.5, 20).weights
        eps = 1.1 * np.linalg.norm(noise)
        rep = solve_bpdq(y, phi, w, SolverConfig(epsilon=eps, gamma=0.05, max_iters=20000,
                                                 fp_tol=1e-10))
        worst = max(worst, float(np.linalg.norm(rep.x - _bpdq_oracle(y, phi, w, eps))))
    ok = worst <= 1e-4 and time.time() - t0 < 120
    assert report(4, ok, f"max ||x - x_oracle||_2 = {worst:.2e} over 50 instances", t0)


def test_05_noiseless_exact_recovery(report):
    t0 = time.time()
    base = dict(n=1024, k=16, m=256, theta=0.5, rho_prior=1.0, alpha_overlap=0.5, trials=20,
                mode="noiseless", p_list=(2.0,), record_timing=False)
    weighted = np.array([r.snr_db for r in run_experiment(ExperimentConfig(**base)).rows])
    plain = np.array([r.snr_db for r in
                      run_experiment(ExperimentConfig(weighted=False, **base)).rows])
    frac = float(np.mean(weighted > 80))
    # capped so that exact (infinite SNR) trials do not make the means degenerate
    mw, mu = np.mean(np.minimum(weighted, 300)), np.mean(np.minimum(plain, 300))
    ok = frac >= 0.9 and mw >= mu and time.time() - t0 < 600
    assert report(5, ok, f"weighted >80 dB in {frac:.0%} of trials (unweighted "
                         f"{np.mean(plain > 80):.0%}), mean SNR weighted {mw:.1f} dB vs "
                         f"unweighted {mu:.1f} dB", t0)


def test_06_quantized_trend(report):
    t0 = time.time()
    big = run_experiment(ExperimentConfig(m=256, p_list=(2.0, 10.0, math.inf), trials=20,
                                          record_timing=False))
    small = run_experiment(ExperimentConfig(m=64, p_list=(2.0, 10.0), trials=20,
                                            record_timing=False))

    def mean(table, p, m, converged_only=False):
        rows = [r for r in table.cell(p, m) if r.converged or not converged_only]
        return (float(np.mean([r.snr_db for r in rows])) if rows else math.nan), len(rows)

    p10, _ = mean(big, 10.0, 256)
    p2, _ = mean(big, 2.0, 256)
    pinf_conv, n_conv = mean(big, math.inf, 256, converged_only=True)
    pinf_all, _ = mean(big, math.inf, 256)
    s10, _ = mean(small, 10.0, 64)
    s2, _ = mean(small, 2.0, 64)
    high = p10 > p2 > pinf_conv  # False when no p=inf trial converged (nan)
    low = not s10 > s2
    ok = high and low and time.time() - t0 < 1800
    detail = (f"m=256: p10 {p10:.2f} > p2 {p2:.2f} > pinf(converged, n={n_conv}) "
              f"{pinf_conv:.2f} [{high}] (pinf over all trials {pinf_all:.2f}); "
              f"m=64: p10 {s10:.2f} <= p2 {s2:.2f} [{low}]")
    assert report(6, ok, detail, t0)


def test_07_cross_term_constant(report):
    t0 = time.time()
    rng = np.random.default_rng(707)
    worst = 0.0
    for _ in range(1000):
        d = rng.uniform(0, 0.95, 3)
        p, q = rng.uniform(2, 20, 2)
        got = compute_c_pq(*d, p, q)
        worst = max(worst, abs(got - cross_term_min(*d, p, q)))
    exact = all(compute_c_pq(dd, dd, dd, 2, 2) == 2 * dd for dd in rng.uniform(0, 0.95, 200))
    ok = worst <= 1e-9 and exact and time.time() - t0 < 5
    assert report(7, ok, f"max |C - min f| = {worst:.2e}; equal-delta p=q=2 gives 2*delta "
                         f"exactly: {exact}", t0)


def test_08_rip_exact(report):
    t0 = time.time()
    rng = np.random.default_rng(808)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(6, 21))
        m = int(rng.integers(3, n))
        s = int(rng.integers(1, 4))
        phi = rng.standard_normal((m, n)) / math.sqrt(m)
        est = estimate_rip(phi, s, method="exact_22")
        mu, delta, lo, hi = rip_by_svd(phi, s)
        worst = max(worst, abs(est.delta - delta), abs(est.mu - mu))
    ok = worst <= 1e-12 and time.time() - t0 < 30
    assert report(8, ok, f"max deviation from singular-value sweep {worst:.2e}", t0)


def _certified(rng):
    while True:
        n = int(rng.choice([24, 32, 40]))
        phi = spread_complement_matrix(n, rng)
        theta = float(rng.uniform(0.5, 1.0))
        try:
            params = rip_implies_rnsp(estimate_rip(phi, 4), theta)
        except ValueError:
            continue
        w = make_weights(rng.choice(n, int(rng.integers(1, 6)), replace=False), theta, n)
        return phi, w, params


def test_09_certification_sound(report):
    t0 = time.time()
    rng = np.random.default_rng(909)
    falsified, tight = 0, []
    for i in range(20):
        phi, w, params = _certified(rng)
        verdict = rnsp_check(phi, w, params, num_samples=10 ** 4, seed=i)
        falsified += bool(verdict)
        tight.append(verdict.tightest_rho / params.rho)
    ok = falsified == 0 and time.time() - t0 < 120
    assert report(9, ok, f"{falsified} of 20 certified matrices falsified; largest needed "
                         f"rho / certified rho = {max(tight):.3f}", t0)


def test_10_bounds_hold(report):
    t0 = time.time()
    rng = np.random.default_rng(1010)
    violations, worst_ratio, invalid = 0, 0.0, 0
    s = 2
    for i in range(100):
        phi, w, params = _certified(rng)
        n = phi.shape[1]
        rip = estimate_rip(phi, 2 * s)
        x = np.zeros(n)
        x[rng.choice(n, s, replace=False)] = rng.normal(scale=2.0, size=s)
        if i % 2:  # compressible: a small dense tail
            x += rng.normal(scale=0.02, size=n)
        noise = rng.standard_normal(phi.shape[0])
        noise *= rng.uniform(0.001, 0.1) / np.linalg.norm(noise)
        eps = float(np.linalg.norm(noise) * rng.uniform(1.0, 1.5))
        rep = solve_bpdq(phi @ x + noise, phi, w.weights,
                         SolverConfig(epsilon=eps, gamma=0.01, max_iters=20000, fp_tol=1e-10))
        h = rep.x - x
        sigma = weighted_s_term_error(x, w, s)
        checks = [(recovery_error_bound("rip_thm1", delta_2s=rip.delta, mu=rip.mu, p=2, q=2,
                                        theta=w.theta, s=s, epsilon=eps, sigma=sigma),
                   np.linalg.norm(h))]
        for r in (1.0, 2.0):
            res = recovery_error_bound("rnsp_thm2", rho=params.rho, gamma=params.gamma_nsp,
                                       theta=w.theta, s=s, r=r, q=2, epsilon=eps, sigma=sigma)
            checks.append((res, lp_norm(h, r)))
        for res, err in checks:
            if not res.valid:
                invalid += 1
                continue
            worst_ratio = max(worst_ratio, err / res.bound_value)
            violations += err > res.bound_value
    ok = violations == 0 and invalid == 0 and time.time() - t0 < 600
    assert report(10, ok, f"{violations} violations in 300 checks ({invalid} invalid); "
                          f"largest error / bound = {worst_ratio:.3f}", t0)


def test_11_quantizer_contract(report):
    t0 = time.time()
    rng = np.random.default_rng(1111)
    v = rng.uniform(-1e3, 1e3, 10 ** 6)
    # a dyadic bin width keeps every step exact in binary floating point
    alpha = 2.0 ** -3
    q = quantize(v, alpha)
    k = q / alpha - 0.5
    on_lattice = bool(np.all(k == np.floor(k)))
    within = bool(np.all(np.abs(q - v) <= alpha / 2))
    # a generic bin width, checked in units of the bin
    beta = 0.0137
    r = quantize(v, beta)
    kr = (r - beta / 2) / beta
    generic = bool(np.all(np.abs(kr - np.round(kr)) <= 1e-9)
                   and np.all(np.abs(r - v) <= beta / 2 * (1 + 1e-12) + 1e-12 * np.abs(v)))
    ok = on_lattice and within and generic and time.time() - t0 < 5
    assert report(11, ok, f"dyadic: lattice {on_lattice}, |err| <= alpha/2 {within}; "
                          f"generic alpha: {generic}", t0)


def test_12_determinism(report, tmp_path):
    t0 = time.time()
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n = 128\nk = 4\nm = 32, 48\np_list = 2, 10, inf\ntrials = 3\n"
                   "max_iters = 120\nseed = 7\nthreads = 1\nrecord_timing = false\n")
    env = dict(os.environ, OMP_NUM_THREADS="1", OPENBLAS_NUM_THREADS="1", MKL_NUM_THREADS="1")
    outputs = []
    for name in ("a", "b"):
        subprocess.run([sys.executable, "-m", "wbpdq.cli", "experiment", "--config", str(cfg),
                        "--out", str(tmp_path / name), "--quiet"], check=True, env=env)
        outputs.append((tmp_path / name / "results.csv").read_bytes())
    same = outputs[0] == outputs[1]
    rows = outputs[0].count(b"\n") - 1
    ok = same and rows == 18 and time.time() - t0 < 300
    assert report(12, ok, f"two runs byte-identical: {same} ({rows} rows)", t0)
