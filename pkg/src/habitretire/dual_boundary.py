"""Dual retirement boundary z*(t) by backward recursion on its integral equation.

The reduced dual state Z is a geometric Brownian motion under the tilted
measure, so the time integrand of the boundary equation reduces to lognormal
partial moments with closed forms.  The recursion marches backward from the
known terminal value, solving one scalar root per time node by bisection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .params import ModelParams


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [t0, t_end]; the last node is the mandatory time T1."""

    t0: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1 or self.t_end <= self.t0:
            raise ValueError("need n_steps >= 1 and t_end > t0")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t0) / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.t0, self.t_end, self.n_steps + 1)


@dataclass(frozen=True)
class BoundaryCurve:
    """z*(t) sampled on a time grid."""

    grid: TimeGrid
    values: np.ndarray
    regime: str  # "gamma_above_1" | "gamma_below_1"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_steps + 1,):
            raise ValueError("values must have one entry per grid node")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("boundary values must be positive and finite")

    def lipschitz_witness(self) -> float:
        """max |z*_{i+1} - z*_i| / dt over the grid."""
        return float(np.max(np.abs(np.diff(self.values))) / self.grid.dt)

    def interp(self, t):
        """Linear interpolation of z* at times t (clamped to the grid)."""
        return np.interp(t, self.grid.nodes, self.values)


def regime_of(params: ModelParams) -> str:
    return "gamma_above_1" if params.gamma > 1.0 else "gamma_below_1"


def terminal_boundary(params: ModelParams) -> float:
    """Closed-form left limit z*(T1-) = (-Delta(T1))^(1/gamma_tilde) / mu^T(T1)."""
    d = float(params.leisure_Delta(params.T1))
    if d >= 0.0:
        raise ValueError(f"Delta(T1)={d:.6g} >= 0: no retirement region at T1")
    return (-d) ** (1.0 / params.gamma_tilde) / float(params.mu_T(params.T1))


def lognormal_partial_moment(params: ModelParams, z, t: float, u: float,
                             k, p: float, above: bool = False):
    """E~[Z(u)^p 1{Z(u) < k} | Z(t) = z] (or > k with ``above``).

    Uses the lognormal closed form; at u == t the indicator is deterministic
    with a strict inequality.
    """
    mu_z, sigma_z = params.z_coeffs()
    z = np.asarray(z, dtype=float)
    k = np.asarray(k, dtype=float)
    if u < t:
        raise ValueError("need u >= t")
    if np.any(z <= 0) or np.any(k <= 0):
        raise ValueError("need z > 0 and k > 0")
    if u == t:
        ind = (z > k) if above else (z < k)
        return np.where(ind, z**p, 0.0)
    tau = u - t
    m = (mu_z - 0.5 * sigma_z**2) * tau
    s = abs(sigma_z) * np.sqrt(tau)
    d = (np.log(k) - np.log(z) - m - p * s**2) / s
    phi = ndtr(-d) if above else ndtr(d)
    return np.exp(p * (np.log(z) + m) + 0.5 * p**2 * s**2) * phi


def running_bound(params: ModelParams, t):
    """(-Delta(t))^(1/gamma_tilde) / mu^T(t): lower bound on z* for gamma > 1,
    upper bound for gamma < 1."""
    d = np.asarray(params.leisure_Delta(t), dtype=float)
    return (-d) ** (1.0 / params.gamma_tilde) / np.asarray(params.mu_T(t))


def structural_bounds(params: ModelParams, t):
    """(running bound at t, far bound z_inf or None).

    z_inf comes from the comparison-function argument and is only available
    for gamma > 1 when its sufficient condition holds; otherwise None.
    """
    rb = running_bound(params, t)
    z_inf = None
    if params.gamma > 1.0:
        mu_z, sigma_z = params.z_coeffs()
        gt = params.gamma_tilde
        th = params.vartheta

        def Q(lam):
            return 0.5 * sigma_z**2 * lam**2 + (mu_z - 0.5 * sigma_z**2) * lam + th

        disc = (0.5 * sigma_z**2 - mu_z) ** 2 - 2.0 * sigma_z**2 * th
        lam_p = (0.5 * sigma_z**2 - mu_z + np.sqrt(disc)) / sigma_z**2
        ts = np.linspace(0.0, params.T1, 201)
        delta_small = float(np.min(-params.leisure_Delta(ts)))
        if delta_small > 0 and Q(-gt) < 0 and lam_p * gt + 2.0 * th / sigma_z**2 <= th:
            A = -delta_small / (2.0 * Q(-gt))
            z_inf = float((lam_p / (-th * A * (lam_p + gt))) ** (-1.0 / gt))
    return rb, z_inf


class _KernelContext:
    """Per-grid precomputation for the recursion's integrand evaluation."""

    def __init__(self, params: ModelParams, nodes: np.ndarray):
        self.params = params
        self.nodes = nodes
        self.gt = params.gamma_tilde
        self.above = params.gamma < 1.0  # indicator region {Z > z*}
        mu_z, sigma_z = params.z_coeffs()
        self.m_rate = mu_z - 0.5 * sigma_z**2
        self.s_rate = abs(sigma_z)
        self.delta = np.asarray(params.leisure_Delta(nodes), dtype=float)
        self.muT_pow = np.asarray(params.mu_T(nodes), dtype=float) ** (-self.gt)
        self.disc = np.exp(params.vartheta * nodes)

    def kernel_row(self, i: int, z: float, zstar: np.ndarray) -> np.ndarray:
        """Integrand values at nodes[i:] for start state Z(t_i) = z, with the
        trial z acting as the boundary at its own node (implicit node, weak
        indicator so the continuation-side limit is kept at equality)."""
        nodes = self.nodes
        tau = nodes[i + 1:] - nodes[i]
        k = zstar[i + 1:]
        m = self.m_rate * tau
        s = self.s_rate * np.sqrt(tau)
        lnr = np.log(k) - np.log(z) - m
        p = -self.gt
        d0 = lnr / s
        dp = (lnr - p * s**2) / s
        if self.above:
            prob = ndtr(-d0)
            mom = np.exp(p * (np.log(z) + m) + 0.5 * p**2 * s**2) * ndtr(-dp)
        else:
            prob = ndtr(d0)
            mom = np.exp(p * (np.log(z) + m) + 0.5 * p**2 * s**2) * ndtr(dp)
        row = np.empty(len(tau) + 1)
        row[1:] = self.disc[i + 1:] / self.disc[i] * (prob + self.delta[i + 1:]
                                                      * self.muT_pow[i + 1:] * mom)
        # zero-lag node: indicator holds weakly at the trial boundary itself
        row[0] = 1.0 + self.delta[i] * self.muT_pow[i] * z**p
        return row


def ie_kernel(params: ModelParams, t: float, z: float, u, zstar_u):
    """Discounted expectation of the boundary-equation integrand at time u,
    started from Z(t) = z, with boundary value zstar_u at u.

    For gamma > 1 the indicator region is {Z(u) < z*(u)}, for gamma < 1 it is
    {Z(u) > z*(u)}.  At zero lag the indicator is evaluated weakly so that a
    point on the boundary keeps its continuation-side limit.
    """
    gt = params.gamma_tilde
    above = params.gamma < 1.0
    scalar = np.isscalar(u) or np.ndim(u) == 0
    u_arr = np.atleast_1d(np.asarray(u, dtype=float))
    k_arr = np.broadcast_to(np.atleast_1d(np.asarray(zstar_u, dtype=float)).astype(float),
                            u_arr.shape)
    out = np.empty_like(u_arr)
    for i, (ui, ki) in enumerate(zip(u_arr, k_arr)):
        dv = float(params.leisure_Delta(ui))
        mp = float(params.mu_T(ui)) ** (-gt)
        if ui == t:
            ind = (z >= ki) if above else (z <= ki)
            out[i] = (1.0 + dv * mp * z ** (-gt)) if ind else 0.0
        else:
            prob = float(lognormal_partial_moment(params, z, t, ui, ki, 0.0, above=above))
            mom = float(lognormal_partial_moment(params, z, t, ui, ki, -gt, above=above))
            out[i] = np.exp(params.vartheta * (ui - t)) * (prob + dv * mp * mom)
    return float(out[0]) if scalar else out


def boundary_residual(params: ModelParams, curve: BoundaryCurve, i: int) -> float:
    """Discretized integral-equation residual at node i of a solved curve."""
    ctx = _KernelContext(params, curve.grid.nodes)
    return _node_residual(ctx, i, float(curve.values[i]), curve.values, curve.grid.dt)


def _node_residual(ctx: _KernelContext, i: int, z: float,
                   zstar: np.ndarray, dt: float) -> float:
    row = ctx.kernel_row(i, z, zstar)
    w = np.full(len(row), dt)
    w[0] = w[-1] = 0.5 * dt
    return float(np.dot(w, row))


def solve_boundary(params: ModelParams, grid: TimeGrid, tol: float = 1e-10,
                   max_expand: int = 60, substeps: int | None = None) -> BoundaryCurve:
    """Backward recursion for z*(t) reported on ``grid`` (must end at T1).

    The quadrature runs on an internally refined clock (``substeps`` per grid
    interval, default enough for >= 500 internal steps) so that coarse
    reporting grids keep fine-grid accuracy; only grid nodes are returned.
    """
    if abs(grid.t_end - params.T1) > 1e-12:
        raise ValueError("grid must end at T1")
    m = substeps if substeps is not None else max(1, -(-500 // grid.n_steps))
    if m < 1:
        raise ValueError("substeps must be >= 1")
    fine = TimeGrid(grid.t0, grid.t_end, grid.n_steps * m)
    curve = _solve_on_grid(params, fine, tol, max_expand)
    return BoundaryCurve(grid=grid, values=curve.values[::m].copy(),
                         regime=curve.regime)


def _solve_on_grid(params: ModelParams, grid: TimeGrid,
                   tol: float, max_expand: int) -> BoundaryCurve:
    nodes = grid.nodes
    n = grid.n_steps
    dt = grid.dt
    ctx = _KernelContext(params, nodes)
    zstar = np.empty(n + 1)
    zstar[n] = terminal_boundary(params)
    above1 = params.gamma > 1.0
    rb_all = np.asarray(running_bound(params, nodes), dtype=float)

    for i in range(n - 1, -1, -1):
        def G(z):
            return _node_residual(ctx, i, z, zstar, dt)

        rb = rb_all[i]
        guess = zstar[i + 1]
        if above1:
            lo, hi = rb, max(guess, rb * (1.0 + 1e-8))
        else:
            lo, hi = min(guess, rb * (1.0 - 1e-8)), rb
        glo, ghi = G(lo), G(hi)
        k = 0
        while glo * ghi > 0 and k < max_expand:
            if above1:
                hi = rb + 2.0 * (hi - rb) + 1e-12
                ghi = G(hi)
            else:
                lo = max(lo * 0.5, 1e-300)
                glo = G(lo)
            k += 1
        if glo * ghi > 0:
            raise SolverError(
                f"no sign change bracketing z*({nodes[i]:.4g}): "
                f"G({lo:.6g})={glo:.3e}, G({hi:.6g})={ghi:.3e}")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            gm = G(mid)
            if glo * gm <= 0:
                hi, ghi = mid, gm
            else:
                lo, glo = mid, gm
            if hi - lo < tol:
                break
        zstar[i] = 0.5 * (lo + hi)

    return BoundaryCurve(grid=grid, values=zstar, regime=regime_of(params))
