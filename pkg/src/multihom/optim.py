"""Batched first-order descent: Barzilai-Borwein steps with a backtracking
safeguard, monotone energies, and per-problem convergence bookkeeping.

One core serves every minimization in the package. A batch holds B
independent problems in lockstep; each row carries its own step size and
freezes once converged, so a problem's trajectory never depends on what else
shares its batch (results are identical under any batch split).

Energies may return +inf for trial points outside a problem's feasible box;
backtracking then shrinks the step. NaN energies abort hard.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["DescentOptions", "DescentResult", "bb_minimize"]


@dataclass(frozen=True)
class DescentOptions:
    tol_grad: float = 1e-8
    tol_energy: float = 1e-12
    max_iter: int = 20000
    step_rule: str = "bb"  # "bb" | "backtracking" | "fixed"
    stall_window: int = 20
    armijo: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 60

    def __post_init__(self):
        if self.tol_grad <= 0 or self.tol_energy <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.step_rule not in ("bb", "backtracking", "fixed"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")


@dataclass
class DescentResult:
    phi: np.ndarray          # (B, K)
    energy: np.ndarray       # (B,)
    grad_norm: np.ndarray    # (B,) sup norms
    iterations: np.ndarray   # (B,)
    converged: np.ndarray    # (B,) bool
    trace: list = field(default_factory=list)  # (iter, energy, grad_norm, step), B == 1 only


def bb_minimize(problem, phi0: np.ndarray, opts: DescentOptions,
                collect_trace: bool = False) -> DescentResult:
    """Minimize ``problem`` from ``phi0`` (B, K), one row per problem.

    ``problem`` provides:
      energy(phi, rows)   -> (b,)  may be +inf, never NaN at accepted iterates
      gradient(phi, rows) -> (b, K) in the weighted mean inner product
      project(phi, rows)  -> (b, K) gauge fixing (energy-invariant)
      weights             -> (K,) inner-product weights
      alpha0              -> float, safeguarded initial step
    """
    phi = np.array(phi0, dtype=float)
    if phi.ndim != 2:
        raise ValueError("phi0 must have shape (B, K)")
    B = phi.shape[0]
    w = np.asarray(problem.weights, dtype=float)
    alpha0 = float(problem.alpha0)
    alpha_lo, alpha_hi = 1e-10 * alpha0, 1e10 * alpha0

    all_rows = np.arange(B)
    phi[:] = problem.project(phi, all_rows)
    energy = np.asarray(problem.energy(phi, all_rows), dtype=float)
    if not np.all(np.isfinite(energy)):
        raise RuntimeError("non-finite energy at the starting point")
    grad = np.asarray(problem.gradient(phi, all_rows), dtype=float)
    gnorm = np.max(np.abs(grad), axis=1)

    iters = np.zeros(B, dtype=int)
    converged = gnorm <= opts.tol_grad
    active = ~converged
    alpha = np.full(B, alpha0)
    phi_prev = phi.copy()
    grad_prev = grad.copy()
    have_prev = np.zeros(B, dtype=bool)
    # energy values stall_window iterations ago, per row
    history: list[np.ndarray] = [energy.copy()]

    trace = []
    if collect_trace and B == 1:
        trace.append((0, float(energy[0]), float(gnorm[0]), 0.0))

    for it in range(1, opts.max_iter + 1):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        phis = phi[rows]
        grads = grad[rows]
        es = energy[rows]

        # step size proposal
        if opts.step_rule == "bb":
            a = alpha[rows].copy()
            hp = have_prev[rows]
            s = phis - phi_prev[rows]
            ydiff = grads - grad_prev[rows]
            ss = np.einsum("ij,j,ij->i", s, w, s)
            sy = np.einsum("ij,j,ij->i", s, w, ydiff)
            ok = hp & (sy > 0)
            a[ok] = ss[ok] / sy[ok]
            a[hp & ~ (sy > 0)] *= 2.0
            # degenerate curvature estimates restart from the safeguarded step
            a[(a < alpha_lo) | (a > alpha_hi) | ~np.isfinite(a)] = alpha0
        else:
            a = np.full(rows.size, alpha0)

        gg = np.einsum("ij,j,ij->i", grads, w, grads)
        phi_prev[rows] = phis
        grad_prev[rows] = grads
        have_prev[rows] = True

        if opts.step_rule == "fixed":
            new_phi = problem.project(phis - a[:, None] * grads, rows)
            new_e = np.asarray(problem.energy(new_phi, rows), dtype=float)
            if np.any(np.isnan(new_e)) or np.any(np.isinf(new_e)):
                raise RuntimeError("non-finite energy under the fixed step rule")
            accepted = np.ones(rows.size, dtype=bool)
        else:
            new_phi = phis.copy()
            new_e = es.copy()
            pending = np.ones(rows.size, dtype=bool)
            accepted = np.zeros(rows.size, dtype=bool)
            for _ in range(opts.max_backtracks):
                if not pending.any():
                    break
                idx = np.flatnonzero(pending)
                trial = phis[idx] - a[idx, None] * grads[idx]
                trial = problem.project(trial, rows[idx])
                e_t = np.asarray(problem.energy(trial, rows[idx]), dtype=float)
                if np.any(np.isnan(e_t)):
                    raise RuntimeError("energy evaluated to NaN during line search")
                good = e_t <= es[idx] - opts.armijo * a[idx] * gg[idx] + 1e-15 * (1.0 + np.abs(es[idx]))
                gi = idx[good]
                new_phi[gi] = trial[good]
                new_e[gi] = e_t[good]
                accepted[gi] = True
                pending[gi] = False
                a[idx[~good]] *= opts.shrink
            # rows whose line search exhausted cannot decrease further: stall
            stalled_out = pending

        if np.any(new_e > es + 1e-12 * (1.0 + np.abs(es))):
            raise RuntimeError("energy increased along an accepted step")

        phi[rows] = new_phi
        energy[rows] = new_e
        alpha[rows] = a
        iters[rows] = it

        new_grad = np.asarray(problem.gradient(new_phi, rows), dtype=float)
        grad[rows] = new_grad
        gn = np.max(np.abs(new_grad), axis=1)
        gnorm[rows] = gn

        # convergence: gradient tolerance, energy stall, or a dead line search
        done = gn <= opts.tol_grad
        if len(history) >= opts.stall_window:
            ref = history[-opts.stall_window][rows]
            done |= (ref - new_e) <= opts.tol_energy * (1.0 + np.abs(new_e))
        if opts.step_rule != "fixed":
            done |= stalled_out
        converged[rows[done]] = True
        active[rows[done]] = False

        history.append(energy.copy())
        if len(history) > opts.stall_window + 1:
            history.pop(0)

        if collect_trace and B == 1:
            trace.append((it, float(energy[0]), float(gnorm[0]), float(a[0])))

    return DescentResult(phi=phi, energy=energy, grad_norm=gnorm,
                         iterations=iters, converged=converged, trace=trace)
