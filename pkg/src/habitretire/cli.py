"""Command-line interface: solve, simulate, validate, and emit CSV products.

Each figure-style data product is a CSV with a fixed column order, one header
row, and (unless suppressed) a single provenance comment line recording a hash
of the model parameters and the git description of the working tree.

Figure-to-product map (see ``--help``): the boundary curve in dual space is
``dual_boundary``; the (y,w) retirement boundary is ``yw_boundary``; the
wealth-habit-wage boundary surface at a time is ``xhw_plane@t=..``; the
(x,h) boundary slice at a wage is ``xh_slice@w=..``; critical-habit and
critical-wealth time curves are ``h_curve@x=..,w=..`` and
``x_curve@h=..,w=..``; consumption and investment surfaces are
``c_surface@t=..`` and ``pi_surface@t=..``; the reduced-value space
derivative against the stopped value is ``wz_slice@t=..``; ``validate``
runs the invariant suite.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import hashlib
import json
import logging
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import yaml

from . import dual_boundary as db
from . import fbp
from .params import PRESETS, ModelParams, preset
from .primal import REGION_RETIRE, PolicyEngine, PrimalState
from .simulate import SimConfig, simulate

log = logging.getLogger("habitretire")

FIGURE_MAP = """\
figure-to-product map:
  dual boundary z*(t) curves          -> dual_boundary
  (y,w) retirement boundary           -> yw_boundary       (w=1 column = wage-fixed curve)
  (x,h,w) boundary surface at t       -> xhw_plane@t=0  (also t=5, t=8)
  (x,h) boundary slice at w           -> xh_slice@w=1
  critical habit vs time              -> h_curve@x=80,w=1
  critical wealth vs time             -> x_curve@h=6,w=1
  consumption surface at t            -> c_surface@t=0  (also t=8)
  investment surface at t             -> pi_surface@t=0 (also t=8)
  reduced-value derivative slice at t -> wz_slice@t=8
  retirement plane coefficients       -> plane_coeffs
  invariant suite                     -> validate
"""


# ---------------------------------------------------------------------------
# configuration


@dataclasses.dataclass
class GridSettings:
    n_t: int = 400
    n_z: int = 800
    pad: float = 4.5
    boundary_n: int = 2000


@dataclasses.dataclass
class ScenarioConfig:
    model: ModelParams
    grids: GridSettings
    sim: dict | None
    outputs: list
    provenance: bool = True

    @classmethod
    def load(cls, path: str | None, preset_name: str | None,
             seed: int | None) -> "ScenarioConfig":
        raw = {}
        if path:
            with open(path) as fh:
                raw = yaml.safe_load(fh) or {}
            unknown = set(raw) - {"preset", "model", "grids", "sim",
                                  "outputs", "provenance"}
            if unknown:
                raise ValueError(f"unknown config keys: {sorted(unknown)}")
        name = preset_name or raw.get("preset")
        base = preset(name) if name else ModelParams()
        overrides = raw.get("model") or {}
        allowed = {f.name for f in dataclasses.fields(ModelParams)}
        unknown = set(overrides) - allowed
        if unknown:
            raise ValueError(f"unknown model keys: {sorted(unknown)}")
        model = base.with_(**overrides)
        graw = raw.get("grids") or {}
        unknown = set(graw) - {f.name for f in dataclasses.fields(GridSettings)}
        if unknown:
            raise ValueError(f"unknown grids keys: {sorted(unknown)}")
        grids = GridSettings(**graw)
        sim = raw.get("sim")
        if sim is not None and seed is not None:
            sim = {**sim, "seed": seed}
        return cls(model=model, grids=grids, sim=sim,
                   outputs=list(raw.get("outputs") or []),
                   provenance=bool(raw.get("provenance", True)))


# ---------------------------------------------------------------------------
# workspace: lazily solved artifacts shared by products


class Workspace:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self._curve = None
        self._sol = None
        self._engine = None

    @property
    def curve(self) -> db.BoundaryCurve:
        if self._curve is None:
            p = self.cfg.model
            grid = db.TimeGrid(0.0, p.T1, self.cfg.grids.boundary_n)
            log.info("solving integral-equation boundary (n=%d)", grid.n_steps)
            self._curve = db.solve_boundary(p, grid)
        return self._curve

    @property
    def sol(self) -> fbp.ObstacleSolution:
        if self._sol is None:
            g = fbp.make_grid(self.cfg.model, self.cfg.grids.n_t,
                              self.cfg.grids.n_z, self.cfg.grids.pad)
            log.info("solving obstacle problem (%dx%d)", g.times.n_steps, g.n_z)
            self._sol = fbp.solve_lcp(self.cfg.model, g)
        return self._sol

    @property
    def engine(self) -> PolicyEngine:
        if self._engine is None:
            p = self.cfg.model
            pde_curve = db.solve_boundary(p, self.sol.grid.times)
            self._engine = PolicyEngine(p, self.sol, pde_curve)
        return self._engine

    def sim_config(self) -> SimConfig:
        raw = dict(self.cfg.sim or {})
        init = dict(raw.pop("initial", {}))
        t0 = float(init.get("t", 0.0))
        h0 = float(init.get("h", 0.6))
        w0 = float(init.get("w", 1.0))
        if "x" in init:
            x0 = float(init["x"])
        else:
            frac = float(init.get("x_frac_of_critical", 0.9))
            x0 = frac * float(self.engine.critical_wealth(t0, h0, w0))
        state = PrimalState(t=t0, x=x0, h=h0, w=w0)
        return SimConfig(n_paths=int(raw.get("n_paths", 10000)),
                         dt=float(raw.get("dt", 0.01)),
                         seed=int(raw.get("seed", 0)), initial=state)


# ---------------------------------------------------------------------------
# CSV emission


def _provenance_line(model: ModelParams) -> str:
    blob = json.dumps(dataclasses.asdict(model), sort_keys=True).encode()
    phash = hashlib.sha256(blob).hexdigest()[:12]
    try:
        git = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10,
                             cwd=Path(__file__).parent).stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        git = "unknown"
    return f"# provenance: params_sha256={phash} git={git}"


def write_csv(path: Path, columns, rows, model: ModelParams,
              provenance: bool = True):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        if provenance:
            fh.write(_provenance_line(model) + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, (int, float, np.floating))
                              and not isinstance(v, bool) else str(v)
                              for v in row) + "\n")
    log.info("wrote %s (%d rows)", path, len(rows))


# ---------------------------------------------------------------------------
# products


def _parse_product(spec: str):
    """'name@k1=v1,k2=v2' -> (name, {k1: float, ...})"""
    if "@" not in spec:
        return spec, {}
    name, _, rest = spec.partition("@")
    kw = {}
    for part in rest.split(","):
        k, _, v = part.partition("=")
        if not _ or not k:
            raise ValueError(f"bad product argument {part!r} in {spec!r}")
        kw[k.strip()] = float(v)
    return name, kw


def product_dual_boundary(ws: Workspace):
    p = ws.cfg.model
    c = ws.curve
    t = c.grid.nodes
    rb = db.running_bound(p, t)
    cols = ["t", "z_star", "running_bound"]
    rows = list(zip(t, c.values, rb))
    return cols, rows


def product_yw_boundary(ws: Workspace):
    t = ws.curve.grid.nodes[::max(1, ws.curve.grid.n_steps // 100)]
    wgrid = np.linspace(0.25, 4.0, 16)
    eng = ws.engine
    rows = []
    for ti in t:
        ys = eng.dual_yw_boundary(ti, wgrid)
        rows.extend(zip([ti] * len(wgrid), wgrid, np.atleast_1d(ys)))
    return ["t", "w", "y_star"], rows


def product_xhw_plane(ws: Workspace, t: float = 0.0):
    eng = ws.engine
    hgrid = np.linspace(0.0, 10.0, 41)
    wgrid = np.linspace(0.05, 4.0, 40)
    rows = []
    for h in hgrid:
        xs = eng.critical_wealth(t, h, wgrid)
        rows.extend(zip([t] * len(wgrid), [h] * len(wgrid), wgrid,
                        np.atleast_1d(xs)))
    return ["t", "h", "w", "x_star"], rows


def product_xh_slice(ws: Workspace, w: float = 1.0):
    eng = ws.engine
    hgrid = np.linspace(0.0, 10.0, 101)
    rows = []
    for t in (0.0, 5.0, 8.0):
        xs = eng.critical_wealth(t, hgrid, w)
        rows.extend(zip([t] * len(hgrid), hgrid, [w] * len(hgrid),
                        np.atleast_1d(xs)))
    return ["t", "h", "w", "x_star"], rows


def product_h_curve(ws: Workspace, x: float = 80.0, w: float = 1.0):
    eng = ws.engine
    t = ws.curve.grid.nodes[::max(1, ws.curve.grid.n_steps // 400)]
    hs = np.array([float(eng.critical_habit(ti, x, w)) for ti in t])
    return ["t", "x", "w", "h_star"], list(zip(t, [x] * len(t), [w] * len(t), hs))


def product_x_curve(ws: Workspace, h: float = 6.0, w: float = 1.0):
    eng = ws.engine
    t = ws.curve.grid.nodes[::max(1, ws.curve.grid.n_steps // 400)]
    xs = np.array([float(eng.critical_wealth(ti, h, w)) for ti in t])
    return ["t", "h", "w", "x_star"], list(zip(t, [h] * len(t), [w] * len(t), xs))


def _policy_surface(ws: Workspace, t: float, want: str, h: float = 1.0):
    eng = ws.engine
    p = ws.cfg.model
    wgrid = np.linspace(0.25, 4.0, 26)
    rows = []
    for w in wgrid:
        gstar = float(eng.G_star(t))
        dgrid = np.linspace(0.05, 1.6, 40) * gstar * w
        x = dgrid + float(p.habit_cost(t)) * h
        c, pi, _, codes = eng.policy_arrays(t, x, np.full_like(x, h),
                                           np.full_like(x, w))
        region = np.where(codes == REGION_RETIRE, "retire", "continue")
        val = c if want == "c" else pi
        rows.extend(zip(dgrid, np.full_like(x, w), val, region))
    return ["defacto_wealth", "w", f"{want}_star", "region"], rows


def product_c_surface(ws: Workspace, t: float = 0.0, h: float = 1.0):
    return _policy_surface(ws, t, "c", h)


def product_pi_surface(ws: Workspace, t: float = 0.0, h: float = 1.0):
    return _policy_surface(ws, t, "pi", h)


def product_plane_coeffs(ws: Workspace):
    """Coefficients of the linear retirement plane x* = habit_cost * h
    + g_star * w, per time node; renderers draw the plane from these."""
    p = ws.cfg.model
    t = ws.curve.grid.nodes[::max(1, ws.curve.grid.n_steps // 400)]
    pT = np.asarray(p.habit_cost(t))
    gt = p.gamma_tilde
    gs = gt * np.asarray(p.post_value_H(t)) * np.asarray(ws.curve.interp(t)) ** (-gt)
    return ["t", "habit_cost", "g_star"], list(zip(t, pT, gs))


def product_wz_slice(ws: Workspace, t: float = 8.0):
    sol = ws.sol
    p = ws.cfg.model
    j = int(round(t / sol.grid.times.dt))
    z = sol.grid.z_nodes
    gt = p.gamma_tilde
    H = float(p.post_value_H(sol.grid.times.nodes[j]))
    v_z = -gt * H * z ** (-gt - 1.0)
    rows = list(zip([sol.grid.times.nodes[j]] * len(z), z, sol.w_z[j], v_z,
                    sol.exercise[j].astype(int)))
    return ["t", "z", "w_z", "stopped_value_z", "exercise"], rows


PRODUCTS = {
    "dual_boundary": product_dual_boundary,
    "yw_boundary": product_yw_boundary,
    "xhw_plane": product_xhw_plane,
    "xh_slice": product_xh_slice,
    "h_curve": product_h_curve,
    "x_curve": product_x_curve,
    "c_surface": product_c_surface,
    "pi_surface": product_pi_surface,
    "wz_slice": product_wz_slice,
    "plane_coeffs": product_plane_coeffs,
}


def emit_product(ws: Workspace, spec: str, out: Path, provenance: bool):
    name, kw = _parse_product(spec)
    if name == "validate":
        code = run_validate(ws)
        if code:
            raise RuntimeError("validate product reported failures")
        return
    if name not in PRODUCTS:
        raise ValueError(f"unknown product {name!r}; have "
                         f"{sorted(PRODUCTS) + ['validate']}")
    cols, rows = PRODUCTS[name](ws, **kw)
    fname = spec.replace("@", "_").replace("=", "").replace(",", "_") + ".csv"
    write_csv(out / fname, cols, rows, ws.cfg.model, provenance)


# ---------------------------------------------------------------------------
# validate


def run_validate(ws: Workspace) -> int:
    p = ws.cfg.model
    checks = []

    def check(name, fn):
        try:
            ok, detail = fn()
        except Exception as exc:  # surfaced per check, not aborting the suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        checks.append((name, ok, detail))
        print(f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail and not ok else ""))

    def terminal():
        c = ws.curve
        gap = abs(c.values[-1] - db.terminal_boundary(p))
        return gap < 1e-12, f"gap={gap:.2e}"

    def bounds():
        c = ws.curve
        rb = db.running_bound(p, c.grid.nodes)
        ok = np.all(c.values >= rb - 1e-12) if p.gamma > 1 \
            else np.all(c.values <= rb + 1e-12)
        return bool(ok), ""

    def dominance():
        gap = ws.sol.w - ws.sol.obstacle
        return bool(np.all(gap >= -1e-9 * (1 + np.abs(ws.sol.obstacle)))), ""

    def terminal_slice():
        g = np.max(np.abs(ws.sol.w[-1] - ws.sol.obstacle[-1]))
        return g == 0.0, f"max gap={g:.2e}"

    def f_monotone():
        F = ws.sol.f_gap()
        d = np.diff(F, axis=1)[:, 10:-10]  # skip the extrapolation edges
        tol = 1e-9 * (1.0 + np.max(np.abs(F)))
        ok = np.all(d <= tol) if p.gamma > 1 else np.all(d >= -tol)
        return bool(ok), ""

    def cross_method():
        pde = fbp.extract_boundary(ws.sol)
        ie = db.solve_boundary(p, ws.sol.grid.times)
        cells = np.abs(np.log(pde.values) - np.log(ie.values)) / ws.sol.grid.dx
        return bool(np.max(cells) <= 2.0), f"max cells={np.max(cells):.2f}"

    def gstar_pos():
        t = np.linspace(0, p.T1, 50)
        return bool(np.all(np.asarray(ws.engine.G_star(t)) > 0)), ""

    def sim_smoke():
        cfg = ws.sim_config()
        cfg = SimConfig(n_paths=min(cfg.n_paths, 500), dt=cfg.dt,
                        seed=cfg.seed, initial=cfg.initial)
        rep = simulate(ws.engine, cfg)
        v = sum(rep.constraint_violations.values())
        hid = abs(rep.habit_identity_residual.mean)
        ok = v == 0 and hid < 1e-8 and rep.stop_time_mismatch < 0.01
        return ok, (f"violations={v} habit_gap={hid:.2e} "
                    f"mismatch={rep.stop_time_mismatch:.3f}")

    check("terminal_boundary_closed_form", terminal)
    check("structural_bounds", bounds)
    check("obstacle_dominance", dominance)
    check("terminal_slice_equality", terminal_slice)
    check("value_gap_monotone_in_z", f_monotone)
    check("cross_method_boundary_agreement", cross_method)
    check("retirement_threshold_positive", gstar_pos)
    check("simulation_identities", sim_smoke)
    return 0 if all(ok for _, ok, _ in checks) else 1


# ---------------------------------------------------------------------------
# entry point


def _build_parser():
    ap = argparse.ArgumentParser(
        prog="habitretire",
        description="Retirement-timing and consumption-investment solver "
                    "with addictive habit persistence.",
        epilog=FIGURE_MAP,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", help="YAML scenario configuration")
    ap.add_argument("--preset", choices=sorted(PRESETS),
                    help="named parameter preset")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--seed", type=int, help="override simulation seed")
    ap.add_argument("--parallel", action="store_true",
                    help="emit independent products concurrently")
    ap.add_argument("--no-provenance", action="store_true",
                    help="omit the provenance comment line from CSVs")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", help="solve boundaries and emit dual_boundary")
    sp = sub.add_parser("simulate", help="run Monte Carlo validation")
    sp.add_argument("--n-paths", type=int)
    sp.add_argument("--dt", type=float)
    se = sub.add_parser("emit", help="emit the configured (or listed) products")
    se.add_argument("products", nargs="*", help="product specs, e.g. c_surface@t=8")
    sub.add_parser("validate", help="run the invariant suite (PASS/FAIL lines)")
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=os.environ.get("HABITRETIRE_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ScenarioConfig.load(args.config, args.preset, args.seed)
        if args.no_provenance:
            cfg.provenance = False
        ws = Workspace(cfg)
        out = Path(args.out)
        if args.command == "solve":
            emit_product(ws, "dual_boundary", out, cfg.provenance)
        elif args.command == "simulate":
            sim = dict(cfg.sim or {})
            if args.n_paths:
                sim["n_paths"] = args.n_paths
            if getattr(args, "dt", None):
                sim["dt"] = args.dt
            cfg.sim = sim
            rep = simulate(ws.engine, ws.sim_config())
            cols = ["statistic", "mean", "se"]
            rows = [("habit_identity_residual", rep.habit_identity_residual.mean,
                     rep.habit_identity_residual.se),
                    ("budget_gap", rep.budget_gap.mean, rep.budget_gap.se),
                    ("terminal_abs_wealth", rep.terminal_abs_wealth.mean,
                     rep.terminal_abs_wealth.se),
                    ("stop_time_mismatch", rep.stop_time_mismatch, 0.0),
                    ("euler_crossing_mismatch", rep.euler_crossing_mismatch, 0.0)]
            rows += [(f"violations_{k}", float(v), 0.0)
                     for k, v in rep.constraint_violations.items()]
            write_csv(out / "sim_report.csv", cols, rows, cfg.model,
                      cfg.provenance)
        elif args.command == "validate":
            return run_validate(ws)
        elif args.command == "emit":
            specs = list(args.products) or cfg.outputs
            if not specs:
                raise ValueError("no products requested (config 'outputs' "
                                 "empty and none listed)")
            if args.parallel:
                with concurrent.futures.ThreadPoolExecutor() as ex:
                    futs = [ex.submit(emit_product, ws, s, out, cfg.provenance)
                            for s in specs]
                    for f in futs:
                        f.result()
            else:
                for s in specs:
                    emit_product(ws, s, out, cfg.provenance)
        return 0
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
