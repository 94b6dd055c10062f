"""Primal map: value derivatives, policies, boundary views, degeneracies."""

import numpy as np
import pytest

from habitretire.params import ModelParams
from habitretire.primal import (InfeasibleState, PrimalState, REGION_CONTINUE,
                                REGION_INFEASIBLE, REGION_RETIRE,
                                retired_policy)


def _sample_continuation_states(engine, rng, n=30):
    """Interior continuation states away from the boundary and the edges."""
    p = engine.params
    out = []
    while len(out) < n:
        t = float(rng.uniform(0.5, p.T1 - 1.0))
        w = float(rng.uniform(0.5, 2.0))
        h = float(rng.uniform(0.2, 2.0))
        xs = float(engine.critical_wealth(t, h, w))
        x0 = float(p.habit_cost(t)) * h - float(p.wage_annuity(t)) * w
        frac = float(rng.uniform(0.15, 0.85))
        x = x0 + frac * (xs - x0)
        codes = engine.region_codes(t, x, h, w)
        if codes[0] == REGION_CONTINUE:
            out.append(PrimalState(t=t, x=x, h=h, w=w))
    return out


def test_region_codes_partition(engine, rng):
    p = engine.params
    t, h, w = 4.0, 1.0, 1.0
    xs = float(engine.critical_wealth(t, h, w))
    x_inf = float(p.habit_cost(t)) * h - float(p.wage_annuity(t)) * w
    xs_arr = np.array([x_inf - 0.5, 0.5 * (x_inf + xs), xs + 0.5])
    codes = engine.region_codes(t, xs_arr, h, w)
    assert list(codes) == [REGION_INFEASIBLE, REGION_CONTINUE, REGION_RETIRE]
    assert engine.classify(PrimalState(t=t, x=xs + 0.5, h=h, w=w)) == "retire"
    with pytest.raises(InfeasibleState):
        engine.classify(PrimalState(t=t, x=x_inf - 0.5, h=h, w=w))


def test_mandatory_retirement_at_T1(engine):
    p = engine.params
    codes = engine.region_codes(p.T1, np.array([5.0, 50.0]), 0.5, 1.0)
    assert np.all(codes == REGION_RETIRE)


def test_g_star_positive(engine):
    t = np.linspace(0.0, engine.params.T1, 40)
    assert np.all(np.asarray(engine.G_star(t)) > 0.0)


def test_dual_primal_round_trip(engine, rng):
    for st in _sample_continuation_states(engine, rng, 25):
        y = engine.dual_of_primal(st)
        back = engine.primal_of_dual(st.t, y, st.w, st.h)
        assert back.x == pytest.approx(st.x, rel=2e-3, abs=2e-3)
    # stopped side is closed-form and therefore tighter
    p = engine.params
    st = PrimalState(t=5.0, x=float(engine.critical_wealth(5.0, 1.0, 1.0)) + 10.0,
                     h=1.0, w=1.0)
    y = engine.dual_of_primal(st)
    back = engine.primal_of_dual(st.t, y, st.w, st.h)
    assert back.x == pytest.approx(st.x, rel=1e-10)


def test_value_derivatives_fd(engine, rng):
    """Chain-rule (W_y, W_yy, W_yw) against central differences; the cross
    term is differenced on W_y (differencing W twice in y and w loses the
    signal to cancellation at this scale)."""
    states = _sample_continuation_states(engine, rng, 20)
    for st in states:
        y = engine.dual_of_primal(st)
        t, w = st.t, st.w
        W, W_y, W_yy, W_yw = engine.W_derivs(t, y, w)
        hy = 1e-5 * y
        hw = 1e-5 * w
        fd_y = (engine.W_value(t, y + hy, w) - engine.W_value(t, y - hy, w)) / (2 * hy)
        fd_yy = (engine.W_value(t, y + hy, w) - 2 * W
                 + engine.W_value(t, y - hy, w)) / hy**2
        fd_yw = (engine.W_derivs(t, y, w + hw)[1]
                 - engine.W_derivs(t, y, w - hw)[1]) / (2 * hw)
        assert W_y == pytest.approx(fd_y, rel=1e-4)
        assert W_yy == pytest.approx(fd_yy, rel=1e-3)
        assert W_yw == pytest.approx(fd_yw, rel=1e-3)
        assert W_yy > 0.0


def test_policy_scaling_invariance(engine, rng):
    """The policy is positively homogeneous of degree one in (x, h, w)."""
    lam = 2.7
    for st in _sample_continuation_states(engine, rng, 10):
        c1, pi1, _, _ = engine.policy_arrays(st.t, st.x, st.h, st.w)
        c2, pi2, _, _ = engine.policy_arrays(st.t, lam * st.x, lam * st.h,
                                             lam * st.w)
        assert c2[0] == pytest.approx(lam * c1[0], rel=1e-8)
        assert pi2[0] == pytest.approx(lam * pi1[0], rel=1e-8)


def test_policy_jump_signs(engine, rng):
    """One-sided policy limits along rays crossing the boundary plane:
    consumption drops at retirement when gamma > 1 and jumps up when
    gamma < 1 (the leisure shift K^(1/gamma) sits on that side of one);
    the risky position drops in both regimes as wage hedging ends."""
    p = engine.params
    above1 = p.gamma > 1.0
    for _ in range(20):
        t = float(rng.uniform(0.5, p.T1 - 1.0))
        w = float(rng.uniform(0.5, 2.0))
        h = float(rng.uniform(0.2, 2.0))
        xs = float(engine.critical_wealth(t, h, w))
        eps = 1e-6 * max(1.0, abs(xs))
        cont = np.array([REGION_CONTINUE], dtype=np.int8)
        ret = np.array([REGION_RETIRE], dtype=np.int8)
        c_in, pi_in, _, _ = engine.policy_arrays(
            t, np.array([xs - eps]), np.array([h]), np.array([w]), codes=cont)
        c_out, pi_out, _, _ = engine.policy_arrays(
            t, np.array([xs + eps]), np.array([h]), np.array([w]), codes=ret)
        if above1:
            assert c_out[0] < c_in[0]
        else:
            assert c_out[0] > c_in[0]
        assert pi_out[0] < pi_in[0]


def test_consumption_above_habit(engine, rng):
    for st in _sample_continuation_states(engine, rng, 15):
        out = engine.policy(st)
        assert out.c > st.h
        assert out.region == "continue"


def test_retired_policy_merton_degeneracy():
    """With no habit and no leisure shift the retirement-region rule is the
    classical constant-proportion portfolio with the finite-horizon
    consumption rate (independent closed forms)."""
    for gamma in (1.5, 0.5):
        p = ModelParams(gamma=gamma, alpha=0.0, eps0=0.0, validate=False)
        t, x = 5.0, 10.0
        c, pi, _ = retired_policy(p, t, x, 0.0)
        assert pi / x == pytest.approx(p.kappa / (p.sigma * p.gamma), abs=1e-10)
        eta = (p.rho - (1 - p.gamma) * (p.r + p.kappa**2 / (2 * p.gamma))) / p.gamma
        c_ref = x * eta / -np.expm1(-eta * (p.T - t))
        assert c == pytest.approx(c_ref, rel=1e-8)


def test_retired_policy_matches_engine(engine):
    t, h, w = 5.0, 1.0, 1.0
    x = float(engine.critical_wealth(t, h, w)) + 5.0
    c, pi, _, _ = engine.policy_arrays(t, x, h, w)
    c_ref, pi_ref, _ = retired_policy(engine.params, t, x, h)
    assert c[0] == pytest.approx(float(c_ref))
    assert pi[0] == pytest.approx(float(pi_ref))


def test_critical_curves_consistency(engine):
    p = engine.params
    t, w = 4.0, 1.3
    h = 1.1
    xs = float(engine.critical_wealth(t, h, w))
    hs = float(engine.critical_habit(t, xs, w))
    assert hs == pytest.approx(h, rel=1e-10)


def test_dual_yw_boundary_shape(engine):
    p = engine.params
    w = np.array([0.5, 1.0, 2.0])
    y = np.asarray(engine.dual_yw_boundary(3.0, w))
    zs = float(engine.curve.interp(3.0))
    assert y == pytest.approx(zs ** (1 - p.gamma) * w ** (-p.gamma), rel=1e-12)


def test_infeasible_policy_is_nan(engine):
    p = engine.params
    t, h, w = 4.0, 2.0, 1.0
    x = float(p.habit_cost(t)) * h - float(p.wage_annuity(t)) * w - 1.0
    c, pi, _, codes = engine.policy_arrays(t, x, h, w)
    assert codes[0] == REGION_INFEASIBLE
    assert np.isnan(c[0]) and np.isnan(pi[0])


def test_state_validation():
    with pytest.raises(ValueError):
        PrimalState(t=0.0, x=1.0, h=-0.1, w=1.0)
    with pytest.raises(ValueError):
        PrimalState(t=0.0, x=1.0, h=0.1, w=0.0)
