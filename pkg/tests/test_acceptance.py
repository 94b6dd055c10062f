"""Acceptance gate: every primary correctness criterion at its stated scale.

Each test prints a single machine-readable "PASS criterion-N" / "FAIL
criterion-N" line with the measured quantity, then asserts the stated
tolerance.  Heavy artifacts (production-resolution engines, large Monte
Carlo runs) are built once per preset and shared.
"""

import time

import numpy as np
import pytest

from habitretire import dual_boundary as db
from habitretire import fbp
from habitretire.params import ModelParams, preset
from habitretire.primal import (PolicyEngine, PrimalState, REGION_CONTINUE,
                                REGION_RETIRE, retired_policy)
from habitretire.simulate import SimConfig, simulate

PRESET_NAMES = ("gamma15", "gamma05")


@pytest.fixture()
def gate(capsys):
    """One-line PASS/FAIL verdict printer that bypasses output capture."""
    def _report(num: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion-{num}: {detail}"
        with capsys.disabled():
            print(f"\n{line}", flush=True)
        assert ok, line
    return _report


# -- shared heavy artifacts -------------------------------------------------


@pytest.fixture(scope="module", params=PRESET_NAMES)
def acc_preset(request):
    return request.param


@pytest.fixture(scope="module")
def acc_params(acc_preset):
    return preset(acc_preset)


@pytest.fixture(scope="module")
def desk(acc_params):
    """50 x 400 cross-method pair (criteria 2-4)."""
    t0 = time.time()
    sol = fbp.solve_lcp(acc_params, fbp.make_grid(acc_params, 50, 400))
    pde = fbp.extract_boundary(sol)
    ie = db.solve_boundary(acc_params, sol.grid.times)
    return {"sol": sol, "pde": pde, "ie": ie, "elapsed": time.time() - t0}


@pytest.fixture(scope="module")
def big_engine(acc_params):
    """Production-resolution engine whose time grid matches dt = 0.01."""
    sol = fbp.solve_lcp(acc_params, fbp.make_grid(acc_params, 2000, 800))
    curve = db.solve_boundary(acc_params, sol.grid.times)
    return PolicyEngine(acc_params, sol, curve)


@pytest.fixture(scope="module")
def mc_report(big_engine):
    """One large simulation shared by the identity criteria (n = 1e5)."""
    h0, w0 = 0.6, 1.0
    x0 = 0.9 * float(big_engine.critical_wealth(0.0, h0, w0))
    cfg = SimConfig(n_paths=100_000, dt=0.01, seed=2026,
                    initial=PrimalState(t=0.0, x=x0, h=h0, w=w0))
    return simulate(big_engine, cfg)


# -- criteria ---------------------------------------------------------------


def test_criterion_1_terminal_boundary(gate, acc_preset, acc_params, desk):
    p = acc_params
    closed = (-float(p.leisure_Delta(p.T1))) ** (1.0 / p.gamma_tilde) \
        / float(p.mu_T(p.T1))
    gap = abs(desk["ie"].values[-1] - closed)
    gate(1, gap < 1e-12, f"{acc_preset} |z*(T1) - closed form| = {gap:.2e}")


def test_criterion_2_cross_method(gate, acc_preset, desk):
    cells = np.abs(np.log(desk["pde"].values) - np.log(desk["ie"].values)) \
        / desk["sol"].grid.dx
    worst = float(np.max(cells))
    gate(2, worst <= 2.0,
            f"{acc_preset} max deviation {worst:.3f} z-cells on 50x400 "
            f"({desk['elapsed']:.1f}s)")


def test_criterion_3_structural_bounds(gate, acc_preset, acc_params, desk):
    rb = np.asarray(db.running_bound(acc_params, desk["ie"].grid.nodes))
    v = desk["ie"].values
    if acc_params.gamma > 1:
        ok = bool(np.all(v >= rb * (1.0 - 1e-10)))
        side = ">="
    else:
        ok = bool(np.all(v <= rb * (1.0 + 1e-10)))
        side = "<="
    gate(3, ok, f"{acc_preset} z*(t) {side} running bound at all 51 nodes")


def test_criterion_4_obstacle_invariants(gate, acc_preset, acc_params, desk):
    sol = desk["sol"]
    scale = 1.0 + float(np.max(np.abs(sol.w)))
    dom = bool(np.all(sol.w - sol.obstacle >= -1e-9 * (1 + np.abs(sol.obstacle))))
    term = bool(np.array_equal(sol.w[-1], sol.obstacle[-1]))
    convex = float(np.min(sol.w_zz[:, 2:-2])) >= -1e-8 * scale
    d = np.diff(sol.f_gap(), axis=1)[:, 10:-10]
    tol = 1e-9 * scale
    mono = bool(np.all(d <= tol) if acc_params.gamma > 1 else np.all(d >= -tol))
    jumps = [fbp.smooth_pasting_check(
        fbp.solve_lcp(acc_params, fbp.make_grid(acc_params, 50, nz)))
        for nz in (1600, 3200)]
    pasting = jumps[1] <= 0.65 * jumps[0]
    ok = dom and term and convex and mono and pasting
    gate(4, ok,
            f"{acc_preset} dominance={dom} terminal={term} convex={convex} "
            f"gap-monotone={mono} pasting {jumps[0]:.3f}->{jumps[1]:.3f}")


def test_criterion_5_derivative_oracle(gate, acc_preset, big_engine):
    eng = big_engine
    p = eng.params
    rng = np.random.default_rng(55)
    worst = {"W_y": 0.0, "W_yy": 0.0, "W_yw": 0.0}
    min_wyy = np.inf
    n_done = 0
    while n_done < 100:
        t = float(rng.uniform(0.5, p.T1 - 1.0))
        w = float(rng.uniform(0.5, 2.0))
        h = float(rng.uniform(0.2, 2.0))
        xs = float(eng.critical_wealth(t, h, w))
        x0 = float(p.habit_cost(t)) * h - float(p.wage_annuity(t)) * w
        x = x0 + float(rng.uniform(0.15, 0.85)) * (xs - x0)
        if eng.region_codes(t, x, h, w)[0] != REGION_CONTINUE:
            continue
        y = eng.dual_of_primal(PrimalState(t=t, x=x, h=h, w=w))
        W, W_y, W_yy, W_yw = eng.W_derivs(t, y, w)
        hy, hw = 1e-4 * y, 1e-4 * w
        fd_y = (eng.W_value(t, y + hy, w) - eng.W_value(t, y - hy, w)) / (2 * hy)
        fd_yy = (eng.W_value(t, y + hy, w) - 2 * W
                 + eng.W_value(t, y - hy, w)) / hy**2
        fd_yw = (eng.W_value(t, y + hy, w + hw) - eng.W_value(t, y + hy, w - hw)
                 - eng.W_value(t, y - hy, w + hw)
                 + eng.W_value(t, y - hy, w - hw)) / (4 * hy * hw)
        worst["W_y"] = max(worst["W_y"], abs(W_y - fd_y) / abs(fd_y))
        worst["W_yy"] = max(worst["W_yy"], abs(W_yy - fd_yy) / abs(fd_yy))
        # the cross derivative changes sign over the state space; where the
        # FD value sits at that zero its relative error is ill-conditioned,
        # so the error is taken relative to the field scale |W_y|/w there
        denom = max(abs(fd_yw), abs(fd_y) / w)
        worst["W_yw"] = max(worst["W_yw"], abs(W_yw - fd_yw) / denom)
        min_wyy = min(min_wyy, W_yy)
        n_done += 1
    ok = all(v < 1e-4 for v in worst.values()) and min_wyy > 0.0
    gate(5, ok,
            f"{acc_preset} max rel err W_y={worst['W_y']:.1e} "
            f"W_yy={worst['W_yy']:.1e} W_yw={worst['W_yw']:.1e}, "
            f"min W_yy={min_wyy:.3g} over 100 points")


def test_criterion_6_habit_identity(gate, acc_preset, mc_report):
    res = mc_report.habit_identity_residual
    se = max(res.se, mc_report.lhs_se)
    ok = abs(res.mean) <= 3.0 * se
    gate(6, ok,
            f"{acc_preset} identity gap {res.mean:.2e} vs 3*SE={3 * se:.2e} "
            f"(n=1e5, dt=0.01)")


def test_criterion_7_stopping_equivalence(gate, acc_preset, big_engine):
    h0, w0 = 0.6, 1.0
    x0 = 0.9 * float(big_engine.critical_wealth(0.0, h0, w0))
    cfg = SimConfig(n_paths=10_000, dt=big_engine.params.T1 / 2000, seed=7,
                    initial=PrimalState(t=0.0, x=x0, h=h0, w=w0))
    frac = simulate(big_engine, cfg).stop_time_mismatch
    gate(7, frac < 0.01,
            f"{acc_preset} crossing mismatch fraction {frac:.4f} "
            f"(n=1e4, dt=T1/2000)")


def test_criterion_8_policy_jump_signs(gate, acc_preset, big_engine):
    eng = big_engine
    p = eng.params
    rng = np.random.default_rng(8)
    above1 = p.gamma > 1.0
    bad_c = bad_pi = 0
    for _ in range(20):
        t = float(rng.uniform(0.5, p.T1 - 1.0))
        w = float(rng.uniform(0.5, 2.0))
        h = float(rng.uniform(0.2, 2.0))
        xs = float(eng.critical_wealth(t, h, w))
        eps = 1e-6 * max(1.0, abs(xs))
        cont = np.array([REGION_CONTINUE], dtype=np.int8)
        ret = np.array([REGION_RETIRE], dtype=np.int8)
        c_in, pi_in, _, _ = eng.policy_arrays(
            t, np.array([xs - eps]), np.array([h]), np.array([w]), codes=cont)
        c_out, pi_out, _, _ = eng.policy_arrays(
            t, np.array([xs + eps]), np.array([h]), np.array([w]), codes=ret)
        dc = c_out[0] - c_in[0]
        if (dc >= 0) if above1 else (dc <= 0):
            bad_c += 1
        if pi_out[0] - pi_in[0] >= 0:
            bad_pi += 1
    want = "down" if above1 else "up"
    gate(8, bad_c == 0 and bad_pi == 0,
            f"{acc_preset} consumption jumps {want}, investment jumps down "
            f"on 20/20 rays (bad_c={bad_c}, bad_pi={bad_pi})")


def test_criterion_9_merton_degeneracy(gate):
    worst_pi = worst_c = 0.0
    for gamma in (1.5, 0.5):
        p = ModelParams(gamma=gamma, alpha=0.0, eps0=0.0, validate=False)
        for t in (0.0, 5.0, 15.0):
            x = 10.0
            c, pi, _ = retired_policy(p, t, x, 0.0)
            worst_pi = max(worst_pi, abs(pi / x - p.kappa / (p.sigma * p.gamma)))
            eta = (p.rho - (1 - p.gamma)
                   * (p.r + p.kappa**2 / (2 * p.gamma))) / p.gamma
            c_ref = x * eta / -np.expm1(-eta * (p.T - t))
            worst_c = max(worst_c, abs(c - c_ref) / c_ref)
    ok = worst_pi < 1e-10 and worst_c < 1e-8
    gate(9, ok, f"|pi/x - kappa/(sigma gamma)| = {worst_pi:.1e}, "
                   f"consumption rate rel err = {worst_c:.1e}")


def test_criterion_10_habit_strength_comparative_static(gate):
    ok = True
    details = []
    for gamma in (1.5, 0.5):
        prev = None
        for alpha in (0.1, 0.2, 0.3):
            p = ModelParams(gamma=gamma, alpha=alpha, beta=0.4)
            curve = db.solve_boundary(p, db.TimeGrid(0.0, p.T1, 200))
            gt = p.gamma_tilde
            ts = np.array([0.0, 5.0, 8.0])
            gstar = gt * np.asarray(p.post_value_H(ts)) \
                * np.asarray(curve.interp(ts)) ** (-gt)
            hstar = (80.0 - gstar * 1.0) / np.asarray(p.habit_cost(ts))
            if prev is not None and not np.all(hstar < prev):
                ok = False
            prev = hstar
        details.append(f"gamma={gamma} h*(0)={prev[0]:.2f}@alpha=0.3")
    gate(10, ok, "critical habit decreases in alpha in {0.1,0.2,0.3}; "
            + " ".join(details))
