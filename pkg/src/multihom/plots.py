"""Figure rendering for run artifacts.

Each report command leaves delimited output in its run directory; the
functions here turn those files into PNG figures next to them. Everything
goes through the Agg backend so runs work headless; the core pipelines never
import matplotlib unless plotting is requested.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

__all__ = ["render_run"]


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams.update({
        "figure.figsize": (5.2, 3.6),
        "figure.dpi": 130,
        "font.size": 9,
        "axes.grid": True,
        "grid.alpha": 0.35,
        "savefig.bbox": "tight",
    })
    return plt


def _read_csv(path: Path) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def _save(fig, path: Path, made: list):
    fig.savefig(path)
    made.append(path)


def render_run(run_dir) -> list[Path]:
    """Render figures for whatever artifacts are present in ``run_dir``."""
    run_dir = Path(run_dir)
    made: list[Path] = []
    plt = _pyplot()

    corr = run_dir / "corrector.csv"
    if corr.exists():
        rows = _read_csv(corr)
        vals = np.array([float(r["value"]) for r in rows])
        fig, ax = plt.subplots()
        n = len(vals)
        side = int(round(n ** 0.5))
        if side * side == n and side > 1:
            im = ax.imshow(vals.reshape(side, side).T, origin="lower",
                           extent=(0, 1, 0, 1), cmap="RdBu_r")
            fig.colorbar(im, ax=ax, label="corrector")
            ax.set_xlabel("y1")
            ax.set_ylabel("y2")
        else:
            ax.plot(np.arange(n) / n, vals, lw=1.0)
            ax.set_xlabel("y")
            ax.set_ylabel("corrector")
        ax.set_title("cell corrector")
        _save(fig, run_dir / "corrector.png", made)
        plt.close(fig)

    for name in sorted(run_dir.glob("joint_corrector_*.csv")):
        rows = _read_csv(name)
        vals = np.array([float(r["value"]) for r in rows])
        fig, ax = plt.subplots()
        ax.plot(np.arange(len(vals)) / max(len(vals), 1), vals, lw=1.0)
        ax.set_xlabel("flattened cell index")
        ax.set_ylabel("corrector")
        ax.set_title(name.stem.replace("_", " "))
        _save(fig, run_dir / (name.stem + ".png"), made)
        plt.close(fig)

    fhom = run_dir / "fhom.csv"
    if fhom.exists():
        axes, values = _load_table_csv(fhom)
        if values.ndim == 1:
            fig, ax = plt.subplots()
            ax.plot(axes[-1], values, "o-", ms=3, label="homogenized")
            ax.set_xlabel("z")
            ax.set_ylabel("density")
            ax.set_title("homogenized density")
            ax.legend()
            _save(fig, run_dir / "fhom.png", made)
            plt.close(fig)
        elif values.ndim == 2:
            fig, ax = plt.subplots()
            im = ax.pcolormesh(axes[-2], axes[-1], values.T, shading="nearest")
            fig.colorbar(im, ax=ax, label="density")
            ax.set_xlabel("z1")
            ax.set_ylabel("z2")
            ax.set_title("homogenized density")
            _save(fig, run_dir / "fhom.png", made)
            plt.close(fig)

    gamma = run_dir / "gamma.csv"
    if gamma.exists():
        rows = _read_csv(gamma)
        eps = np.array([float(r["eps"]) for r in rows])
        gaps = np.array([float(r["gap"]) for r in rows])
        energy = np.array([float(r["energy"]) for r in rows])
        ref = float(rows[0]["reference"])
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.4))
        ax1.plot(eps, energy, "o-", label="min energy")
        ax1.axhline(ref, color="k", ls="--", lw=0.8, label="homogenized")
        ax1.set_xlabel("eps")
        ax1.set_ylabel("energy")
        ax1.set_xscale("log")
        ax1.legend()
        ax2.loglog(eps, np.maximum(gaps, 1e-16), "s-")
        ax2.set_xlabel("eps")
        ax2.set_ylabel("relative gap")
        fig.suptitle("convergence of minima")
        _save(fig, run_dir / "gamma.png", made)
        plt.close(fig)

    ce = run_dir / "counterexample.csv"
    if ce.exists():
        from fractions import Fraction
        rows = _read_csv(ce)
        hs = np.array([int(r["h"]) for r in rows])
        key = "ratio" if "ratio" in rows[0] else "trajectory_integral"
        vals = np.array([float(Fraction(r[key])) for r in rows])
        fig, ax = plt.subplots()
        ax.stem(hs, vals)
        ax.set_xlabel("h")
        ax.set_ylabel(key.replace("_", " "))
        ax.set_title("trajectory energies along the oscillation index")
        _save(fig, run_dir / "counterexample.png", made)
        plt.close(fig)

    young = run_dir / "young.csv"
    if young.exists():
        with open(young, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
        meta = dict(tok.split("=") for tok in header.removeprefix("# young ").split())
        rows = _read_csv(young)
        if int(meta["n"]) == 1 and int(meta["d"]) == 1:
            yb, zb = int(meta["y_bins"]), int(meta["z_bins"])
            hist = np.zeros((yb, zb))
            for r in rows:
                hist[int(r["y0"]), int(r["z0"])] = float(r["count"])
            hist /= max(float(meta["total"]), 1.0)
            fig, ax = plt.subplots()
            zlo, zhi = float(meta["z_lo"]), float(meta["z_hi"])
            im = ax.imshow(hist, aspect="auto", origin="lower",
                           extent=(zlo, zhi, 0, 1), cmap="viridis")
            fig.colorbar(im, ax=ax, label="mass")
            ax.set_xlabel("gradient value")
            ax.set_ylabel("fast variable y1")
            ax.set_title("empirical gradient/oscillation histogram")
            _save(fig, run_dir / "young.png", made)
            plt.close(fig)

    eps_csv = run_dir / "eps.csv"
    u_csv = run_dir / "u.csv"
    if eps_csv.exists() and u_csv.exists():
        rows = _read_csv(u_csv)
        vals = np.array([float(r["value"]) for r in rows])
        fig, ax = plt.subplots()
        n = len(vals)
        side = int(round(n ** 0.5))
        if side * side == n and side > 1:
            im = ax.imshow(vals.reshape(side, side).T, origin="lower",
                           extent=(0, 1, 0, 1), cmap="viridis")
            fig.colorbar(im, ax=ax, label="u")
        else:
            x = np.arange(n) / (n - 1)
            ax.plot(x, vals, lw=0.9, label="minimizer")
            ax.plot(x, vals[0] + (vals[-1] - vals[0]) * x, "k--", lw=0.8, label="affine data")
            ax.legend()
        ax.set_title("finite-eps minimizer")
        _save(fig, run_dir / "eps.png", made)
        plt.close(fig)

    trace = run_dir / "trace.csv"
    if trace.exists():
        rows = _read_csv(trace)
        it = np.array([int(r["iteration"]) for r in rows])
        en = np.array([float(r["energy"]) for r in rows])
        gn = np.array([float(r["grad_norm"]) for r in rows])
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.4))
        ax1.plot(it, en, lw=0.9)
        ax1.set_xlabel("iteration")
        ax1.set_ylabel("energy")
        ax2.semilogy(it[1:], np.maximum(gn[1:], 1e-17), lw=0.9)
        ax2.set_xlabel("iteration")
        ax2.set_ylabel("gradient sup-norm")
        fig.suptitle("descent trace")
        _save(fig, run_dir / "trace.png", made)
        plt.close(fig)

    return made


def _load_table_csv(path: Path):
    from .hom import load_table
    t = load_table(path)
    return [*t.y_axes, *t.z_axes], t.values
