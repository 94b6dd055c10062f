#!/usr/bin/env python3
"""Batch renderer for the solver's CSV products.

Reads the CSVs emitted by the ``habitretire`` CLI from an input directory
(one subdirectory per parameter preset, e.g. ``gamma15/dual_boundary.csv``)
and writes one PNG per figure.  Rendering is a pure function of CSV content:
the only computation performed here is evaluating the linear retirement plane
x* = habit_cost * h + g_star * w from its emitted coefficients.

Usage:  render.py --in <dir> --out <dir> [--only <kind>]
Kinds:  curve | plane3d | surface3d | overlay
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

DPI = 150
# Okabe-Ito colorblind-safe palette
PALETTE = ["#0072B2", "#D55E00", "#009E73", "#CC79A7", "#E69F00", "#56B4E9"]
PRESET_LABELS = {"gamma15": r"$\gamma = 1.5$", "gamma05": r"$\gamma = 0.5$"}


class MissingColumnError(KeyError):
    """A figure referenced a CSV column that the file does not provide."""


@dataclass(frozen=True)
class FigureSpec:
    """One figure: CSV inputs, kind, labels, and the output file."""

    name: str
    kind: str                     # curve | plane3d | surface3d | overlay
    inputs: dict                  # label -> csv path
    columns: dict                 # csv label -> required column names
    xlabel: str
    ylabel: str
    out: Path
    zlabel: str = ""
    extra: dict = field(default_factory=dict)

    def load(self) -> dict:
        frames = {}
        for label, path in self.inputs.items():
            df = pd.read_csv(path, comment="#")
            missing = set(self.columns.get(label, ())) - set(df.columns)
            if missing:
                raise MissingColumnError(
                    f"{self.name}: {path} lacks columns {sorted(missing)}")
            frames[label] = df
        return frames


def _style(ax):
    ax.grid(True, alpha=0.3)


# ---------------------------------------------------------------------------
# drawing routines, one per kind


def draw_curve(spec: FigureSpec, frames: dict):
    panels = spec.extra.get("panels")
    if panels:  # one panel per preset, shared x axis
        fig, axes = plt.subplots(1, len(panels), figsize=(5 * len(panels), 4))
        for ax, label in zip(np.atleast_1d(axes), panels):
            df = frames[label]
            ax.plot(df[spec.extra["x"]], df[spec.extra["y"]],
                    color=PALETTE[0])
            ax.set_xlabel(spec.xlabel)
            ax.set_ylabel(spec.ylabel)
            ax.set_title(PRESET_LABELS.get(label, label))
            _style(ax)
    else:
        fig, ax = plt.subplots(figsize=(6, 4))
        for i, (label, df) in enumerate(frames.items()):
            groups = spec.extra.get("group_by")
            if groups:
                wanted = spec.extra.get("group_values")
                if wanted is not None:
                    keep = np.isclose(df[groups].to_numpy()[:, None],
                                      np.asarray(wanted)[None, :]).any(axis=1)
                    df = df[keep]
                for j, (gval, sub) in enumerate(df.groupby(groups)):
                    gv = gval[0] if isinstance(gval, tuple) else gval
                    ax.plot(sub[spec.extra["x"]], sub[spec.extra["y"]],
                            color=PALETTE[j % len(PALETTE)],
                            label=f"{groups}={gv:g}")
            else:
                ax.plot(df[spec.extra["x"]], df[spec.extra["y"]],
                        color=PALETTE[i % len(PALETTE)],
                        label=PRESET_LABELS.get(label, label))
        ax.set_xlabel(spec.xlabel)
        ax.set_ylabel(spec.ylabel)
        if len(frames) > 1 or spec.extra.get("group_by"):
            ax.legend()
        _style(ax)
    fig.savefig(spec.out, dpi=DPI, bbox_inches="tight")
    plt.close(fig)


def draw_overlay(spec: FigureSpec, frames: dict):
    (label, df), = frames.items()
    fig, ax = plt.subplots(figsize=(6, 4))
    x = df[spec.extra["x"]]
    for i, (col, name) in enumerate(spec.extra["series"]):
        ax.plot(x, df[col], color=PALETTE[i], label=name)
    if "exercise" in df.columns and df["exercise"].any():
        zs = df.loc[df["exercise"] == 1, spec.extra["x"]]
        edge = zs.min() if zs.min() > x.min() else zs.max()
        ax.axvline(float(edge), color="0.4", ls="--", lw=1,
                   label="free boundary")
    ax.set_xlabel(spec.xlabel)
    ax.set_ylabel(spec.ylabel)
    ax.set_xscale(spec.extra.get("xscale", "linear"))
    ax.legend()
    _style(ax)
    fig.savefig(spec.out, dpi=DPI, bbox_inches="tight")
    plt.close(fig)


def draw_plane3d(spec: FigureSpec, frames: dict):
    """Retirement planes x* = habit_cost*h + g_star*w from coefficients."""
    (label, df), = frames.items()
    fig = plt.figure(figsize=(6, 5))
    ax = fig.add_subplot(projection="3d")
    h = np.linspace(0.0, 10.0, 12)
    w = np.linspace(0.0, 4.0, 12)
    H, W = np.meshgrid(h, w)
    for i, t in enumerate(spec.extra["times"]):
        row = df.iloc[(df["t"] - t).abs().argmin()]
        X = row["habit_cost"] * H + row["g_star"] * W
        ax.plot_surface(H, W, X, alpha=0.55, color=PALETTE[i % len(PALETTE)])
        ax.plot([], [], color=PALETTE[i % len(PALETTE)], label=f"t = {t:g}")
    ax.set_xlabel(spec.xlabel)
    ax.set_ylabel(spec.ylabel)
    ax.set_zlabel(spec.zlabel)
    ax.legend(loc="upper left")
    fig.savefig(spec.out, dpi=DPI, bbox_inches="tight")
    plt.close(fig)


def draw_surface3d(spec: FigureSpec, frames: dict):
    (label, df), = frames.items()
    xcol, ycol, zcol = spec.extra["x"], spec.extra["y"], spec.extra["z"]
    fig = plt.figure(figsize=(6, 5))
    ax = fig.add_subplot(projection="3d")
    piv = df.pivot_table(index=ycol, columns=xcol, values=zcol)
    X, Y = np.meshgrid(piv.columns.to_numpy(), piv.index.to_numpy())
    ax.plot_surface(X, Y, piv.to_numpy(), cmap="viridis",
                    linewidth=0, antialiased=True)
    ax.set_xlabel(spec.xlabel)
    ax.set_ylabel(spec.ylabel)
    ax.set_zlabel(spec.zlabel)
    fig.savefig(spec.out, dpi=DPI, bbox_inches="tight")
    plt.close(fig)


DRAWERS = {"curve": draw_curve, "overlay": draw_overlay,
           "plane3d": draw_plane3d, "surface3d": draw_surface3d}


# ---------------------------------------------------------------------------
# figure catalogue


def build_specs(in_dir: Path, out_dir: Path) -> list:
    """One FigureSpec per renderable figure, skipping those whose CSVs are
    absent.  Per-preset CSVs live in subdirectories named after the preset."""
    presets = [d.name for d in sorted(in_dir.iterdir())
               if d.is_dir() and (d / "dual_boundary.csv").exists()]
    specs = []

    def csv(preset, name):
        return in_dir / preset / f"{name}.csv"

    def have(preset, *names):
        return all(csv(preset, n).exists() for n in names)

    # dual boundary curves, one panel per preset
    if presets:
        specs.append(FigureSpec(
            name="dual_boundary_curves", kind="curve",
            inputs={p: csv(p, "dual_boundary") for p in presets},
            columns={p: ("t", "z_star") for p in presets},
            xlabel="t", ylabel=r"$z^*(t)$",
            out=out_dir / "dual_boundary_curves.png",
            extra={"panels": presets, "x": "t", "y": "z_star"}))

    for p in presets:
        gtag = p  # preset slug in file names
        if have(p, "yw_boundary"):
            specs.append(FigureSpec(
                name=f"yw_boundary_{gtag}", kind="surface3d",
                inputs={p: csv(p, "yw_boundary")},
                columns={p: ("t", "w", "y_star")},
                xlabel="t", ylabel="w", zlabel=r"$y^*$",
                out=out_dir / f"yw_boundary_{gtag}.png",
                extra={"x": "t", "y": "w", "z": "y_star"}))
            specs.append(FigureSpec(
                name=f"y_boundary_by_wage_{gtag}", kind="curve",
                inputs={p: csv(p, "yw_boundary")},
                columns={p: ("t", "w", "y_star")},
                xlabel="t", ylabel=r"$y^*(t)$",
                out=out_dir / f"y_boundary_by_wage_{gtag}.png",
                extra={"x": "t", "y": "y_star", "group_by": "w",
                       "group_values": (0.5, 1.0, 2.0)}))
        if have(p, "plane_coeffs"):
            specs.append(FigureSpec(
                name=f"retirement_plane_{gtag}", kind="plane3d",
                inputs={p: csv(p, "plane_coeffs")},
                columns={p: ("t", "habit_cost", "g_star")},
                xlabel="h", ylabel="w", zlabel=r"$x^*$",
                out=out_dir / f"retirement_plane_{gtag}.png",
                extra={"times": (0.0, 5.0, 8.0)}))
        if have(p, "xh_slice_w1"):
            specs.append(FigureSpec(
                name=f"wealth_habit_boundary_{gtag}", kind="curve",
                inputs={p: csv(p, "xh_slice_w1")},
                columns={p: ("t", "h", "x_star")},
                xlabel="h", ylabel=r"$x^*(h)$",
                out=out_dir / f"wealth_habit_boundary_{gtag}.png",
                extra={"x": "h", "y": "x_star", "group_by": "t"}))
        if have(p, "h_curve"):
            specs.append(FigureSpec(
                name=f"critical_habit_{gtag}", kind="curve",
                inputs={p: csv(p, "h_curve")},
                columns={p: ("t", "h_star")},
                xlabel="t", ylabel=r"$h^*(t)$",
                out=out_dir / f"critical_habit_{gtag}.png",
                extra={"x": "t", "y": "h_star"}))
        if have(p, "x_curve"):
            specs.append(FigureSpec(
                name=f"critical_wealth_{gtag}", kind="curve",
                inputs={p: csv(p, "x_curve")},
                columns={p: ("t", "x_star")},
                xlabel="t", ylabel=r"$x^*(t)$",
                out=out_dir / f"critical_wealth_{gtag}.png",
                extra={"x": "t", "y": "x_star"}))
        for t in (0, 8):
            if have(p, f"c_surface_t{t}"):
                specs.append(FigureSpec(
                    name=f"consumption_surface_t{t}_{gtag}", kind="surface3d",
                    inputs={p: csv(p, f"c_surface_t{t}")},
                    columns={p: ("defacto_wealth", "w", "c_star")},
                    xlabel="de facto wealth", ylabel="w", zlabel=r"$c^*$",
                    out=out_dir / f"consumption_surface_t{t}_{gtag}.png",
                    extra={"x": "defacto_wealth", "y": "w", "z": "c_star"}))
            if have(p, f"pi_surface_t{t}"):
                specs.append(FigureSpec(
                    name=f"investment_surface_t{t}_{gtag}", kind="surface3d",
                    inputs={p: csv(p, f"pi_surface_t{t}")},
                    columns={p: ("defacto_wealth", "w", "pi_star")},
                    xlabel="de facto wealth", ylabel="w", zlabel=r"$\pi^*$",
                    out=out_dir / f"investment_surface_t{t}_{gtag}.png",
                    extra={"x": "defacto_wealth", "y": "w", "z": "pi_star"}))
        if have(p, "wz_slice_t8"):
            specs.append(FigureSpec(
                name=f"value_derivative_slice_{gtag}", kind="overlay",
                inputs={p: csv(p, "wz_slice_t8")},
                columns={p: ("z", "w_z", "stopped_value_z")},
                xlabel="z", ylabel="derivative in z",
                out=out_dir / f"value_derivative_slice_{gtag}.png",
                extra={"x": "z", "xscale": "log",
                       "series": [("w_z", r"$\hat w_z$"),
                                  ("stopped_value_z", r"$\tilde V_z$")]}))
    return specs


def render(specs, only: str | None = None) -> list:
    written = []
    for spec in specs:
        if only and spec.kind != only:
            continue
        frames = spec.load()
        spec.out.parent.mkdir(parents=True, exist_ok=True)
        DRAWERS[spec.kind](spec, frames)
        written.append(spec.out)
    return written


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--in", dest="in_dir", required=True)
    ap.add_argument("--out", dest="out_dir", required=True)
    ap.add_argument("--only", choices=sorted(DRAWERS))
    args = ap.parse_args(argv)
    specs = build_specs(Path(args.in_dir), Path(args.out_dir))
    written = render(specs, args.only)
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
