"""Primal retirement boundary and feedback policies from the dual solution.

The composite dual state is z = y^a w^b with a = 1/(1-gamma), b = gamma*a,
so the solved reduced value w~(t,z) and its space derivatives convert into
wealth, consumption and portfolio formulas by the chain rule.  Writing
S(x) = w~ at x = ln z on a time slice,

    phi  = w~ + a z w~_z          = S + a S'        (so  -W_y = w * (-phi))
    zpsi = z[(1+a) w~_z + a z w~_zz] = S' + a S''   (curvature block)

and the de facto wealth d = x - p^T(t) h satisfies d + q(t) w = -w phi(z).
On the stopped side both blocks are analytic in closed form and the investment
formula collapses to pi = (kappa / (sigma gamma)) d.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .dual_boundary import BoundaryCurve, solve_boundary
from .fbp import ObstacleSolution
from .params import ModelParams


class InfeasibleState(ValueError):
    """The state lies outside the allowed region x - p^T h + q w > 0."""


REGION_CONTINUE = 0
REGION_RETIRE = 1
REGION_INFEASIBLE = 2

_REGION_NAMES = {REGION_CONTINUE: "continue", REGION_RETIRE: "retire",
                 REGION_INFEASIBLE: "infeasible"}


def retired_policy(params: ModelParams, t, x, h):
    """Closed-form feedback rule in the retirement region: consumption,
    risky-asset position, and the dual multiplier behind them.

    Valid for any parameter set with a well-defined post-retirement value,
    including degenerate no-habit configurations (alpha = 0, eps0 = 0), where
    it reduces to the classical constant-proportion rule pi/d = kappa/(sigma
    gamma) with the finite-horizon consumption rate."""
    gt = params.gamma_tilde
    d = x - np.asarray(params.habit_cost(t)) * h
    H = float(params.post_value_H(t))
    K = float(params.leisure_K(t))
    muT = float(params.mu_T(t))
    y = (gt * H / d) ** params.gamma
    c = h + (y * muT / K) ** (-1.0 / params.gamma)
    pi = params.kappa / (params.sigma * params.gamma) * d
    return c, pi, y


@dataclass(frozen=True)
class PrimalState:
    """Time, wealth, habit level and wage rate (habit may be 0 only in the
    degenerate no-habit configuration)."""

    t: float
    x: float
    h: float
    w: float

    def __post_init__(self):
        if self.h < 0 or self.w <= 0:
            raise ValueError("need h >= 0 and w > 0")


@dataclass(frozen=True)
class PolicyOutput:
    c: float        # consumption rate
    pi: float       # currency in the risky asset
    region: str     # "continue" | "retire"
    y: float        # dual multiplier behind the feedback rule


class PolicyEngine:
    """Feedback policies and value derivatives built on one obstacle solution.

    Closed-form time functions (q, p^T, mu^T, K, H, z*) are evaluated exactly
    at the requested time; spline-based quantities (the z inversion table and
    the curvature block) come from the nearest time slice of the grid, so
    callers that need them exactly should query at slice times.
    """

    def __init__(self, params: ModelParams, sol: ObstacleSolution,
                 curve: BoundaryCurve | None = None):
        if curve is None:
            curve = solve_boundary(params, sol.grid.times)
        if curve.grid.n_steps != sol.grid.times.n_steps or \
                abs(curve.grid.t_end - sol.grid.times.t_end) > 1e-12:
            raise ValueError("boundary curve and obstacle solution grids differ")
        self.params = params
        self.sol = sol
        self.curve = curve
        g = params.gamma
        self.a = 1.0 / (1.0 - g)
        self.b = g * self.a
        self.gt = params.gamma_tilde
        self._above1 = g > 1.0
        self._nodes = sol.grid.times.nodes
        self._H_slices = np.asarray(params.post_value_H(self._nodes))
        self._build_slices()

    # -- per-slice spline tables ------------------------------------------

    def _build_slices(self):
        sol = self.sol
        x = sol.grid.x_nodes
        n_t = sol.grid.times.n_steps
        q_s = np.asarray(self.params.wage_annuity(self._nodes))
        gstar = self.gt * self._H_slices * self.curve.values ** (-self.gt)
        self._gstar_slices = gstar
        self._splines: list = [None] * (n_t + 1)
        self._g_tab: list = [None] * (n_t + 1)
        self._lnz_tab: list = [None] * (n_t + 1)
        for j in range(n_t):
            mask = sol.exercise[j]
            cont = np.where(~mask)[0]
            if cont.size < 8:
                raise ValueError("continuation block too small for splines; "
                                 "refine the grid")
            lo, hi = cont[0], cont[-1]
            if hi - lo + 1 != cont.size:
                raise ValueError("continuation block not contiguous in z")
            spl = CubicSpline(x[lo:hi + 1], sol.w[j, lo:hi + 1])
            self._splines[j] = spl
            xc = x[lo:hi + 1]
            g_nodes = -(spl(xc) + self.a * spl(xc, 1))
            lnzs = np.log(self.curve.values[j])
            g_edge = gstar[j] + q_s[j]
            if self._above1:
                g_all = np.append(g_nodes, g_edge)
                lnz_all = np.append(xc, lnzs)
            else:
                g_all = np.append(g_edge, g_nodes)[::-1]
                lnz_all = np.append(lnzs, xc)[::-1]
            # keep the longest strictly increasing run ending at the boundary
            keep = len(g_all) - 1
            while keep > 0 and g_all[keep] > g_all[keep - 1]:
                keep -= 1
            self._g_tab[j] = g_all[keep:]
            self._lnz_tab[j] = lnz_all[keep:]

    def slice_index(self, t: float) -> int:
        j = int(round((t - self._nodes[0]) / self.sol.grid.times.dt))
        return min(max(j, 0), self.sol.grid.times.n_steps)

    # -- dual-state geometry ----------------------------------------------

    def z_of_yw(self, y, w):
        return np.asarray(y, float) ** self.a * np.asarray(w, float) ** self.b

    def y_of_zw(self, z, w):
        g = self.params.gamma
        return np.asarray(z, float) ** (1.0 - g) * np.asarray(w, float) ** (-g)

    def G_star(self, t):
        """Retirement threshold on de facto wealth per unit wage,
        G*(t) = gamma_tilde H(t) z*(t)^(-gamma_tilde) > 0."""
        H = np.asarray(self.params.post_value_H(t))
        return self.gt * H * np.asarray(self.curve.interp(t)) ** (-self.gt)

    # -- region classification --------------------------------------------

    def region_codes(self, t: float, x, h, w) -> np.ndarray:
        """Vectorized region labels at one time for arrays of states."""
        x, h, w = np.broadcast_arrays(np.atleast_1d(np.asarray(x, float)),
                                      np.atleast_1d(np.asarray(h, float)),
                                      np.atleast_1d(np.asarray(w, float)))
        d = x - float(self.params.habit_cost(t)) * h
        q = float(self.params.wage_annuity(t)) if t <= self.params.T1 else 0.0
        codes = np.full(d.shape, REGION_CONTINUE, dtype=np.int8)
        codes[d >= float(self.G_star(t)) * w] = REGION_RETIRE
        codes[d + q * w <= 0.0] = REGION_INFEASIBLE
        if t >= self.params.T1 - 1e-12:
            codes[codes == REGION_CONTINUE] = REGION_RETIRE  # mandatory time
        return codes

    def classify(self, state: PrimalState) -> str:
        code = int(self.region_codes(state.t, state.x, state.h, state.w)[0])
        if code == REGION_INFEASIBLE:
            raise InfeasibleState(
                f"x - p^T h + q w <= 0 at t={state.t:.4g}: the state cannot "
                "fund subsistence consumption")
        return _REGION_NAMES[code]

    # -- inversion: de facto wealth -> dual state --------------------------

    def _invert_g(self, j: int, gval):
        """ln z on the continuation side from g = (d + q w)/w = -phi(z)."""
        return np.interp(gval, self._g_tab[j], self._lnz_tab[j])

    def dual_of_primal(self, state: PrimalState) -> float:
        """Dual multiplier y for a feasible state (continuation via the
        slice inversion table, stopped side in closed form)."""
        region = self.classify(state)
        p = self.params
        d = state.x - float(p.habit_cost(state.t)) * state.h
        if region == "retire":
            H = float(p.post_value_H(state.t))
            return (self.gt * H / d) ** p.gamma
        j = min(self.slice_index(state.t), self.sol.grid.times.n_steps - 1)
        gval = (d + float(p.wage_annuity(state.t)) * state.w) / state.w
        z = np.exp(float(self._invert_g(j, gval)))
        return float(self.y_of_zw(z, state.w))

    def primal_of_dual(self, t: float, y: float, w: float, h: float) -> PrimalState:
        """Wealth consistent with dual multiplier y at wage w and habit h."""
        p = self.params
        z = float(self.z_of_yw(y, w))
        zs = float(self.curve.interp(t))
        stopped = (t >= p.T1 - 1e-12) or ((z >= zs) if self._above1 else (z <= zs))
        q = float(p.wage_annuity(min(t, p.T1)))
        if stopped:
            H = float(p.post_value_H(t))
            d_plus_qw = w * (self.gt * H * z ** (-self.gt) + q)
        else:
            spl = self._splines[min(self.slice_index(t),
                                    self.sol.grid.times.n_steps - 1)]
            lnz = np.log(z)
            phi = float(spl(lnz) + self.a * spl(lnz, 1))
            d_plus_qw = -w * phi
        x = d_plus_qw - q * w + float(p.habit_cost(t)) * h
        return PrimalState(t=t, x=x, h=h, w=w)

    def wealth_of_dual_arrays(self, t: float, lnz, w, h) -> np.ndarray:
        """Vectorized wealth consistent with dual state ln z at wage w, habit h:
        x = p^T h - q w - w phi(z), phi from the slice spline on the
        continuation side and from the closed form on the stopped side."""
        p = self.params
        lnz = np.asarray(lnz, float)
        w = np.asarray(w, float)
        h = np.asarray(h, float)
        zs = float(self.curve.interp(t))
        z = np.exp(lnz)
        stopped = (z >= zs) if self._above1 else (z <= zs)
        if t >= p.T1 - 1e-12:
            stopped = np.ones_like(stopped)
        phi = np.empty_like(lnz)
        q = float(p.wage_annuity(min(t, p.T1)))
        if stopped.any():
            H = float(p.post_value_H(t))
            phi[stopped] = -self.gt * H * z[stopped] ** (-self.gt) - q
        cont = ~stopped
        if cont.any():
            spl = self._splines[min(self.slice_index(t),
                                    self.sol.grid.times.n_steps - 1)]
            phi[cont] = spl(lnz[cont]) + self.a * spl(lnz[cont], 1)
        return float(p.habit_cost(t)) * h - q * w - w * phi

    # -- dual value and derivatives ---------------------------------------

    def W_value(self, t: float, y: float, w: float) -> float:
        """Dual (conjugate) value W(t,y,w) = y w w~(t, z(y,w))."""
        return y * w * self._wt_blocks(t, y, w)[0]

    def W_derivs(self, t: float, y: float, w: float):
        """(W, W_y, W_yy, W_yw) by the chain rule on the slice spline
        (continuation) or the closed-form stopped value."""
        wt, phi, zpsi = self._wt_blocks(t, y, w)
        W = y * w * wt
        W_y = w * phi
        W_yy = (self.a * w / y) * zpsi
        W_yw = phi + self.b * zpsi
        return W, W_y, W_yy, W_yw

    def _wt_blocks(self, t: float, y: float, w: float):
        """(w~, phi, zpsi) at z(y,w), branch chosen against the boundary."""
        p = self.params
        z = float(self.z_of_yw(y, w))
        zs = float(self.curve.interp(t))
        stopped = (t >= p.T1 - 1e-12) or ((z >= zs) if self._above1 else (z <= zs))
        if stopped:
            H = float(p.post_value_H(t))
            q = float(p.wage_annuity(t)) if t <= p.T1 else 0.0
            pow_ = z ** (-self.gt)
            wt = H * pow_ - q
            phi = -self.gt * H * pow_ - q
            zpsi = self.gt**2 * H * pow_
            return wt, phi, zpsi
        spl = self._splines[self.slice_index(t)]
        lnz = np.log(z)
        s0, s1, s2 = float(spl(lnz)), float(spl(lnz, 1)), float(spl(lnz, 2))
        return s0, s0 + self.a * s1, s1 + self.a * s2

    # -- feedback policies -------------------------------------------------

    def policy(self, state: PrimalState) -> PolicyOutput:
        region = self.classify(state)
        c, pi, y = self._policy_values(state.t, np.asarray(state.x),
                                       np.asarray(state.h), np.asarray(state.w),
                                       region == "retire")
        return PolicyOutput(c=float(c), pi=float(pi), region=region, y=float(y))

    def policy_arrays(self, t: float, x, h, w, codes=None):
        """Vectorized (c, pi, y, codes) for arrays of states at one time.

        Infeasible states get NaN outputs; callers count them separately.
        """
        x, h, w = np.broadcast_arrays(np.atleast_1d(np.asarray(x, float)),
                                      np.atleast_1d(np.asarray(h, float)),
                                      np.atleast_1d(np.asarray(w, float)))
        if codes is None:
            codes = self.region_codes(t, x, h, w)
        c = np.full(x.shape, np.nan)
        pi = np.full(x.shape, np.nan)
        y = np.full(x.shape, np.nan)
        ret = codes == REGION_RETIRE
        if ret.any():
            c[ret], pi[ret], y[ret] = self._policy_values(
                t, x[ret], h[ret], w[ret], True)
        con = codes == REGION_CONTINUE
        if con.any():
            c[con], pi[con], y[con] = self._policy_values(
                t, x[con], h[con], w[con], False)
        return c, pi, y, codes

    def _policy_values(self, t, x, h, w, retired: bool):
        p = self.params
        kappa = p.kappa
        d = x - float(p.habit_cost(t)) * h
        muT = float(p.mu_T(t))
        if retired:
            return retired_policy(p, t, x, h)
        q = float(p.wage_annuity(t))
        j = min(self.slice_index(t), self.sol.grid.times.n_steps - 1)
        gval = (d + q * w) / w
        lnz = self._invert_g(j, gval)
        z = np.exp(lnz)
        y = self.y_of_zw(z, w)
        c = h + (y * muT) ** (-1.0 / p.gamma)
        spl = self._splines[j]
        zpsi = spl(lnz, 1) + self.a * spl(lnz, 2)
        phi = -gval
        pi = (w / p.sigma) * (kappa * self.a * zpsi
                              - p.sigma_w * (phi + self.b * zpsi) - p.sigma_w * q)
        return c, pi, y

    # -- primal boundary views --------------------------------------------

    def critical_habit(self, t, x, w):
        """h*(t,x,w): retire iff h <= h*; negative means never at this (x,w)."""
        return (np.asarray(x, float) - self.G_star(t) * np.asarray(w, float)) \
            / np.asarray(self.params.habit_cost(t))

    def critical_wealth(self, t, h, w):
        """x*(t,h,w): retire iff x >= x*."""
        return np.asarray(self.params.habit_cost(t)) * np.asarray(h, float) \
            + self.G_star(t) * np.asarray(w, float)

    def dual_yw_boundary(self, t, w):
        """y*(t,w) = z*(t)^(1-gamma) w^(-gamma): retirement threshold on y."""
        g = self.params.gamma
        return np.asarray(self.curve.interp(t)) ** (1.0 - g) \
            * np.asarray(w, float) ** (-g)
