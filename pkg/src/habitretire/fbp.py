"""Obstacle-problem solver for the reduced dual value on a log-space grid.

The free boundary problem is discretized in x = ln z, where the generator of
Z has constant coefficients, and integrated backward from the mandatory
retirement slice with a theta scheme (Crank-Nicolson after an implicit-Euler
Rannacher start-up).  Each step solves the linear complementarity system by
projected SOR.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .dual_boundary import (BoundaryCurve, SolverError, TimeGrid, regime_of,
                            structural_bounds, terminal_boundary)
from .params import ModelParams


@dataclass(frozen=True)
class Grid2D:
    """Space-time grid: uniform times paired with a uniform grid in ln z."""

    times: TimeGrid
    z_min: float
    z_max: float
    n_z: int

    def __post_init__(self):
        if self.n_z < 100:
            raise ValueError("need n_z >= 100")
        if not (0.0 < self.z_min < self.z_max):
            raise ValueError("need 0 < z_min < z_max")

    @property
    def x_nodes(self) -> np.ndarray:
        return np.linspace(np.log(self.z_min), np.log(self.z_max), self.n_z)

    @property
    def z_nodes(self) -> np.ndarray:
        return np.exp(self.x_nodes)

    @property
    def dx(self) -> float:
        return (np.log(self.z_max) - np.log(self.z_min)) / (self.n_z - 1)


def make_grid(params: ModelParams, n_t: int, n_z: int, pad: float = 4.5) -> Grid2D:
    """Grid whose z range keeps every structural bound well inside the edges."""
    grid = TimeGrid(0.0, params.T1, n_t)
    rb, z_inf = structural_bounds(params, grid.nodes)
    marks = [float(np.min(rb)), float(np.max(rb)), terminal_boundary(params)]
    if z_inf is not None:
        marks.append(z_inf)
    return Grid2D(times=grid, z_min=min(marks) / pad, z_max=max(marks) * pad, n_z=n_z)


def obstacle(params: ModelParams, t, z):
    """Stopped value H(t) z^(-gamma_tilde) - q(t) (retirement payoff in z form)."""
    gt = params.gamma_tilde
    H = params.post_value_H(t)
    return H * np.asarray(z, dtype=float) ** (-gt) - params.wage_annuity(t)


def source(params: ModelParams, t, z):
    """Running reward (1/gamma_tilde) (mu^T(t) z)^(-gamma_tilde)."""
    gt = params.gamma_tilde
    return (np.asarray(params.mu_T(t)) * np.asarray(z, dtype=float)) ** (-gt) / gt


@dataclass
class ObstacleSolution:
    """Solved reduced dual value with exercise mask and space derivatives."""

    grid: Grid2D
    params: ModelParams
    w: np.ndarray          # (n_t+1, n_z)
    obstacle: np.ndarray   # (n_t+1, n_z)
    exercise: np.ndarray   # bool (n_t+1, n_z)
    w_z: np.ndarray        # (n_t+1, n_z), one-sided at the edges
    w_zz: np.ndarray
    comp_residual: float = float("nan")  # max |min(scheme residual, w - obstacle)|

    def f_gap(self) -> np.ndarray:
        """F = w - (V~ - q) = w - obstacle; zero on the stopping region."""
        return self.w - self.obstacle


@njit(cache=True)
def _psor_step(w, psi, lo, di, up, rhs, i0, i1, step, omega, tol, max_iter):
    """Projected SOR sweep for the tridiagonal system on interior nodes,
    sweeping from i0 toward i1 (exclusive) in direction ``step``."""
    n = w.shape[0]
    for it in range(max_iter):
        err = 0.0
        i = i0
        while i != i1:
            y = (rhs[i] - lo * w[i - 1] - up * w[i + 1]) / di
            y = w[i] + omega * (y - w[i])
            if y < psi[i]:
                y = psi[i]
            e = abs(y - w[i])
            if e > err:
                err = e
            w[i] = y
            i += step
        # continuation-side edge: zero curvature in x (linear extrapolation)
        if step > 0:
            y = 2.0 * w[1] - w[2]
            if y < psi[0]:
                y = psi[0]
            e = abs(y - w[0])
            if e > err:
                err = e
            w[0] = y
        else:
            y = 2.0 * w[n - 2] - w[n - 3]
            if y < psi[n - 1]:
                y = psi[n - 1]
            e = abs(y - w[n - 1])
            if e > err:
                err = e
            w[n - 1] = y
        if err < tol:
            return it + 1
    return -1


def solve_lcp(params: ModelParams, grid: Grid2D, theta: float = 0.5,
              omega: float = 1.5, tol: float = 1e-10, max_iter: int = 50000,
              rannacher: int = 2, substeps: int | None = None) -> ObstacleSolution:
    """Backward time-stepping LCP solve; returns the space-time solution
    sampled at the grid's time nodes.

    As in the integral-equation solver, stepping runs on an internally refined
    clock (``substeps`` per grid interval, default enough for >= 500 internal
    steps): the free boundary moves fast near the mandatory time and coarse
    reporting grids would otherwise carry large time-discretization error.
    """
    if not (0.5 <= theta <= 1.0):
        raise ValueError("theta must lie in [0.5, 1]")
    mu_z, sigma_z = params.z_coeffs()
    th = params.vartheta
    a = 0.5 * sigma_z**2
    b = mu_z - a
    dx = grid.dx
    n_t = grid.times.n_steps
    m = substeps if substeps is not None else max(1, -(-500 // n_t))
    if m < 1:
        raise ValueError("substeps must be >= 1")
    n_f = n_t * m
    tf = np.linspace(grid.times.t0, grid.times.t_end, n_f + 1)
    dt = tf[1] - tf[0]
    z = grid.z_nodes
    n_z = grid.n_z
    above1 = params.gamma > 1.0

    psi_f = np.empty((n_f + 1, n_z))
    src_f = np.empty((n_f + 1, n_z))
    for j, t in enumerate(tf):
        psi_f[j] = obstacle(params, t, z)
        src_f[j] = source(params, t, z)

    # L w = a w_xx + b w_x + vartheta w  (constant coefficients in x)
    c_lo = a / dx**2 - b / (2.0 * dx)
    c_di = -2.0 * a / dx**2 + th
    c_up = a / dx**2 + b / (2.0 * dx)

    w = np.empty((n_t + 1, n_z))
    w[n_t] = psi_f[n_f]
    # exercise side is high z for gamma > 1 (stop when Z >= z*), low z otherwise
    if above1:
        i0, i1, step = 1, n_z - 1, 1
        dir_edge = n_z - 1
    else:
        i0, i1, step = n_z - 2, 0, -1
        dir_edge = 0

    comp_res = 0.0
    wn = w[n_t].copy()
    for j in range(n_f - 1, -1, -1):
        th_j = 1.0 if (n_f - 1 - j) < rannacher else theta
        lo = -th_j * c_lo
        di = 1.0 / dt - th_j * c_di
        up = -th_j * c_up
        rhs = (wn / dt + (1.0 - th_j) * (c_lo * np.roll(wn, 1) + c_di * wn
                                         + c_up * np.roll(wn, -1))
               + th_j * src_f[j] + (1.0 - th_j) * src_f[j + 1])
        rhs[0] = rhs[-1] = 0.0  # edge rows handled separately
        wj = np.maximum(wn.copy(), psi_f[j])
        wj[dir_edge] = psi_f[j][dir_edge]  # clamp the exercise-side edge
        iters = _psor_step(wj, psi_f[j], lo, di, up, rhs, i0, i1, step,
                           omega, tol, max_iter)
        if iters < 0:
            raise SolverError(f"PSOR failed to converge at t={tf[j]:.4g} "
                              f"(max update above {tol:g} after {max_iter} sweeps)")
        wj[dir_edge] = psi_f[j][dir_edge]
        # complementarity of the solved step system, in value units (times dt)
        res = dt * (di * wj[1:-1] + lo * wj[:-2] + up * wj[2:] - rhs[1:-1])
        gap = (wj - psi_f[j])[1:-1]
        comp_res = max(comp_res, float(np.max(np.abs(np.minimum(res, gap)))))
        wn = wj
        if j % m == 0:
            w[j // m] = wj

    psi = psi_f[::m].copy()
    exercise = (w - psi) < 1e-9 * (1.0 + np.abs(psi))

    w_x = np.gradient(w, dx, axis=1)
    w_xx = np.empty_like(w)
    w_xx[:, 1:-1] = (w[:, 2:] - 2.0 * w[:, 1:-1] + w[:, :-2]) / dx**2
    w_xx[:, 0] = w_xx[:, 1]
    w_xx[:, -1] = w_xx[:, -2]
    w_z = w_x / z
    w_zz = (w_xx - w_x) / z**2

    return ObstacleSolution(grid=grid, params=params, w=w, obstacle=psi,
                            exercise=exercise, w_z=w_z, w_zz=w_zz,
                            comp_residual=comp_res)


def extract_boundary(sol: ObstacleSolution) -> BoundaryCurve:
    """Free boundary from the exercise mask; one-sided ray checked per slice.

    The terminal slice is all-exercise by construction, so its node takes the
    closed-form terminal value.
    """
    p = sol.params
    x = sol.grid.x_nodes
    n_t = sol.grid.times.n_steps
    above1 = p.gamma > 1.0
    zstar = np.empty(n_t + 1)
    zstar[n_t] = terminal_boundary(p)
    for j in range(n_t):
        mask = sol.exercise[j]
        if mask.all() or not mask.any():
            raise SolverError(
                f"degenerate exercise mask at t={sol.grid.times.nodes[j]:.4g}: "
                "boundary touches the grid edge (grid too narrow or coarse)")
        if above1:
            ie = int(np.argmax(mask))
            one_sided = mask[ie:].all() and not mask[:ie].any()
            lo_x, hi_x = x[ie - 1], x[ie]
        else:
            last_ex = int(len(mask) - 1 - np.argmax(mask[::-1]))
            one_sided = mask[: last_ex + 1].all() and not mask[last_ex + 1:].any()
            lo_x, hi_x = x[last_ex], x[last_ex + 1]
        if not one_sided:
            raise SolverError(
                f"exercise set not connected in z at t={sol.grid.times.nodes[j]:.4g}")
        zstar[j] = np.exp(0.5 * (lo_x + hi_x))
    return BoundaryCurve(grid=sol.grid.times, values=zstar, regime=regime_of(p))


def smooth_pasting_check(sol: ObstacleSolution) -> float:
    """Max over time slices of the one-sided jump of w_z across the boundary."""
    p = sol.params
    x = sol.grid.x_nodes
    dx = sol.grid.dx
    gt = p.gamma_tilde
    ts = sol.grid.times.nodes
    above1 = p.gamma > 1.0
    worst = 0.0
    for j in range(sol.grid.times.n_steps):
        mask = sol.exercise[j]
        wj = sol.w[j]
        if above1:
            ie = int(np.argmax(mask))
            if ie < 2:
                continue
            xs = x[ie] - 0.5 * dx
            slope_cont = (wj[ie - 1] - wj[ie - 2]) / dx
        else:
            last_ex = int(len(mask) - 1 - np.argmax(mask[::-1]))
            if last_ex > len(mask) - 3:
                continue
            xs = x[last_ex] + 0.5 * dx
            slope_cont = (wj[last_ex + 2] - wj[last_ex + 1]) / dx
        zb = np.exp(xs)
        H = p.post_value_H(ts[j])
        slope_obs = -gt * H * zb ** (-gt)  # d(obstacle)/dx = -gt H z^{-gt}
        worst = max(worst, abs(slope_cont - slope_obs) / zb)
    return worst


def complementarity_residual(sol: ObstacleSolution) -> float:
    """Max over stepped nodes of |min(scheme residual, w - obstacle)|.

    Recorded during the backward sweep on the internal stepping clock, so it
    measures complementarity of the system the solver actually solved.
    """
    return sol.comp_residual
