"""Coefficient functions of the noise-free O operator.

The operator entering the evolution is expanded over the basis
(b, b^dag, a, a^dag) with kernel-averaged coefficients

    F_j(t) = int_0^t ds alpha(t, s) f_j(t, s),          j = 1..4
    F5'(t, s') = int_0^t ds alpha(t, s) f_5(t, s, s'),
    F5(t) = int_0^t ds' alpha(t, s') F5'(t, s'),

where the two-time functions satisfy, at fixed s,

    d/dt f1 =  i wm f1 + iG f3 - iG f4 + f1 F1
    d/dt f2 = -i wm f2 + iG f3 - iG f4 - f2 F1 + 2 f1 F2 - f4 F3 + f3 F4 - F5'(t, s)
    d/dt f3 = -i D  f3 + iG f1 - iG f2 + f1 F3
    d/dt f4 = +i D  f4 + iG f1 - iG f2 + f1 F4
    d/dt f5(t, s, s') = f1(t, s) F5'(t, s')

with boundary rows f1(t,t) = 1, f2(t,t) = f3(t,t) = f4(t,t) = 0,
f5(t,t,s') = 0 and f5(t,s,t) = f2(t,s).

Two solvers produce the F series: a two-time-grid march valid for any
kernel with pointwise values (the oracle), and a closed ODE system valid
for exponential kernels (the fast path).  The delta kernel bypasses
both: F1 = Gamma/2 identically, every other coefficient zero.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailure
from .kernel import KernelSpec, OUKernel, eval_kernel
from .params import LinearizedSystem
from .stepping import (
    TimeGrid,
    midpoint_derivative,
    midpoint_values,
    trapezoid_weights,
)

__all__ = [
    "OCoefficientSeries",
    "TwoTimeField",
    "solve_two_time_grid",
    "solve_ou_closed",
    "solve_ocoeff",
    "markov_series",
    "consistency_residual",
]

# boundary row values of (f1, f2, f3, f4) at s = t
_BC = np.array([1.0, 0.0, 0.0, 0.0], dtype=complex)

_SLAB_BUDGET = 2_000_000_000  # bytes


@dataclass(frozen=True)
class OCoefficientSeries:
    """F series on a uniform grid.

    F5 is None when the run was asked to skip the memory-kernel
    correction term.  ``fields`` carries the two-time solution when the
    grid solver was asked to keep it (diagnostics only).
    """

    grid: TimeGrid
    F1: np.ndarray
    F2: np.ndarray
    F3: np.ndarray
    F4: np.ndarray
    F5: np.ndarray
    provenance: str
    fields: "TwoTimeField" = None

    def stack4(self):
        return np.stack([self.F1, self.F2, self.F3, self.F4])

    def stack(self):
        rows = [self.F1, self.F2, self.F3, self.F4]
        if self.F5 is not None:
            rows.append(self.F5)
        return np.stack(rows)


@dataclass(frozen=True)
class TwoTimeField:
    """Stored two-time solution f_j(t_k, s_l), l <= k, plus F5'(t_k, s_l).

    ``f5_slab`` is the (s, s') slab at the final time.  Row k of each
    f_j array holds s-nodes 0..k; entries above the diagonal are zero.
    """

    grid: TimeGrid
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray
    f4: np.ndarray
    f5_prime: np.ndarray
    f5_slab: np.ndarray

    def boundary_residual(self):
        """Max deviation of the enforced boundary rows; zero by construction."""
        n = self.grid.n_points
        d = np.diag_indices(n)
        r = max(
            np.abs(self.f1[d] - 1.0).max(),
            np.abs(self.f2[d]).max(),
            np.abs(self.f3[d]).max(),
            np.abs(self.f4[d]).max(),
        )
        if self.f5_slab is not None:
            # last slab: row s = t vanishes, column s' = t equals f2(t, s)
            r = max(r, np.abs(self.f5_slab[-1, :]).max())
            r = max(r, np.abs(self.f5_slab[:, -1] - self.f2[-1, :]).max())
        return float(r)


def markov_series(Gamma, grid: TimeGrid, include_f5=True) -> OCoefficientSeries:
    """Delta-kernel coefficients: F1 = Gamma/2 at every node, rest zero.

    The half weight comes from the boundary convention
    int_0^t delta(t,s) f(s) ds = f(t)/2.
    """
    n = grid.n_points
    z = np.zeros(n, dtype=complex)
    f1 = np.full(n, 0.5 * Gamma, dtype=complex)
    f5 = z.copy() if include_f5 else None
    return OCoefficientSeries(grid=grid, F1=f1, F2=z.copy(), F3=z.copy(),
                              F4=z.copy(), F5=f5, provenance="markov-delta")


def _row_rhs(rows, fj, f5p, wm, delta, g):
    f1, f2, f3, f4 = rows
    F1v, F2v, F3v, F4v = fj
    c34 = 1j * g * (f3 - f4)
    c12 = 1j * g * (f1 - f2)
    d1 = 1j * wm * f1 + c34 + f1 * F1v
    d2 = -1j * wm * f2 + c34 - f2 * F1v + 2.0 * f1 * F2v - f4 * F3v + f3 * F4v
    if f5p is not None:
        d2 = d2 - f5p
    d3 = -1j * delta * f3 + c12 + f1 * F3v
    d4 = 1j * delta * f4 + c12 + f1 * F4v
    return np.stack([d1, d2, d3, d4])


def solve_two_time_grid(k: KernelSpec, sys: LinearizedSystem, grid: TimeGrid,
                        include_f5=True, store_fields=False,
                        slab_budget=_SLAB_BUDGET) -> OCoefficientSeries:
    """March the two-time system and quadrature the F series.

    Works for any kernel with pointwise values.  Each time step advances
    every s-row with a 4th-order stage scheme whose stage F values are
    re-quadratured from the stage rows (half-node kernel weights plus the
    exact boundary-node contribution).  The f5 slab is advanced by
    rank-one stage outer products.  The delta kernel short-circuits to
    the exact constant series.
    """
    if k.variant == "markov-delta":
        return markov_series(k.weight, grid, include_f5=include_f5)
    n = grid.n_points
    dt = grid.dt
    wm, delta, g = sys.omega_m, sys.Delta, sys.G
    need = 16 * n * n * (1 + (5 if store_fields else 0)) if (include_f5 or store_fields) else 0
    if need > slab_budget:
        raise NumericalFailure(
            f"two-time storage would need {need/1e9:.1f} GB, over the "
            f"{slab_budget/1e9:.1f} GB budget; coarsen the grid or drop f5"
        )
    t = grid.times()
    alpha_lag = np.asarray(eval_kernel(k, t, 0.0), dtype=complex)
    alpha_half = np.asarray(eval_kernel(k, t + 0.5 * dt, 0.0), dtype=complex)
    alpha0 = alpha_lag[0]

    Y = np.zeros((4, n), dtype=complex)
    Y[:, 0] = _BC
    F = np.zeros((5, n), dtype=complex)
    S = np.zeros((n, n), dtype=complex) if include_f5 else None
    f5p_cur = np.zeros(n, dtype=complex) if include_f5 else None
    if store_fields:
        hist = [np.zeros((n, n), dtype=complex) for _ in range(5)]
        for j in range(4):
            hist[j][0, 0] = _BC[j]
    for kk in range(n - 1):
        L = kk + 1
        w = trapezoid_weights(L, dt)
        kw2 = w.copy()
        kw2[-1] += 0.25 * dt
        kw2 = kw2 * alpha_half[kk::-1]
        kw4 = w.copy()
        kw4[-1] += 0.5 * dt
        kw4 = kw4 * alpha_lag[kk + 1:0:-1]
        bw2 = 0.25 * dt * alpha0 * _BC
        bw4 = 0.5 * dt * alpha0 * _BC

        rows = Y[:, :L]
        f1s = F[0:4, kk]
        if include_f5:
            SL = S[:L, :L]
            v1 = f5p_cur[:L].copy()
            kmat = np.vstack([kw2, kw4]) @ SL
            b_half, b_end = kmat[0], kmat[1]
        else:
            v1 = None
        u1 = rows[0].copy()

        k1 = _row_rhs(rows, f1s, v1, wm, delta, g)
        y2 = rows + (0.5 * dt) * k1
        f2s = y2 @ kw2 + bw2
        if include_f5:
            u2 = y2[0]
            v2 = b_half + (0.5 * dt) * (kw2 @ u1) * v1
        else:
            v2 = None
        k2 = _row_rhs(y2, f2s, v2, wm, delta, g)
        y3 = rows + (0.5 * dt) * k2
        f3s = y3 @ kw2 + bw2
        if include_f5:
            u3 = y3[0]
            v3 = b_half + (0.5 * dt) * (kw2 @ u2) * v2
        else:
            v3 = None
        k3 = _row_rhs(y3, f3s, v3, wm, delta, g)
        y4 = rows + dt * k3
        f4s = y4 @ kw4 + bw4
        if include_f5:
            u4 = y4[0]
            v4 = b_end + dt * (kw4 @ u3) * v3
        else:
            v4 = None
        k4 = _row_rhs(y4, f4s, v4, wm, delta, g)

        Y[:, :L] = rows + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        Y[:, L] = _BC
        Lp = L + 1
        if include_f5:
            wgt = (dt / 6.0) * np.array([1.0, 2.0, 2.0, 1.0])
            U = np.stack([u1, u2, u3, u4], axis=1) * wgt
            V = np.stack([v1, v2, v3, v4], axis=0)
            SL += U @ V
            S[:L, L] = Y[1, :L]
        kw1 = trapezoid_weights(Lp, dt) * alpha_lag[kk + 1::-1]
        F[0:4, kk + 1] = Y[:, :Lp] @ kw1
        if include_f5:
            f5p_cur[:Lp] = kw1 @ S[:Lp, :Lp]
            F[4, kk + 1] = f5p_cur[:Lp] @ kw1
        if store_fields:
            for j in range(4):
                hist[j][kk + 1, :Lp] = Y[j, :Lp]
            if include_f5:
                hist[4][kk + 1, :Lp] = f5p_cur[:Lp]
        if not np.all(np.isfinite(F[:, kk + 1])):
            raise NumericalFailure(
                f"coefficient march diverged at t={t[kk + 1]:.3f}; "
                "the grid is too coarse for these parameters"
            )
    fields = None
    if store_fields:
        fields = TwoTimeField(grid=grid, f1=hist[0], f2=hist[1], f3=hist[2],
                              f4=hist[3], f5_prime=hist[4],
                              f5_slab=S.copy() if include_f5 else None)
    return OCoefficientSeries(
        grid=grid, F1=F[0], F2=F[1], F3=F[2], F4=F[3],
        F5=F[4] if include_f5 else None,
        provenance="two-time-grid", fields=fields,
    )


def _closed_rhs(fv, a0, mu, wm, delta, g, with_f5):
    F1, F2, F3, F4 = fv[0], fv[1], fv[2], fv[3]
    c34 = 1j * g * (fv[2] - fv[3])
    c12 = 1j * g * (fv[0] - fv[1])
    out = np.empty_like(fv)
    out[0] = a0 + (1j * wm - mu + F1) * F1 + c34
    out[1] = (-1j * wm - mu + F1) * F2 + c34
    out[2] = (-1j * delta - mu + F1) * F3 + c12
    out[3] = (1j * delta - mu + F1) * F4 + c12
    if with_f5:
        F5 = fv[4]
        out[1] -= F5
        out[4] = a0 * F2 + (F1 - 2.0 * mu) * F5
    return out


def solve_ou_closed(k: OUKernel, sys: LinearizedSystem, grid: TimeGrid,
                    include_f5=True) -> OCoefficientSeries:
    """Closed ODE fast path for exponential kernels.

    Differentiating the quadrature definitions under an exponential
    kernel closes the system on (F1..F5) alone; validated against the
    grid solver.  Each step is taken twice (one full, two halves) as a
    stiffness guard, keeping the finer result.
    """
    if not isinstance(k, OUKernel):
        raise TypeError("closed path needs an exponential kernel")
    n = grid.n_points
    dt = grid.dt
    dim = 5 if include_f5 else 4
    a0 = complex(k.alpha0)
    mu = k.mu
    args = (a0, mu, sys.omega_m, sys.Delta, sys.G, include_f5)

    def rk4(y, h):
        k1 = _closed_rhs(y, *args)
        k2 = _closed_rhs(y + 0.5 * h * k1, *args)
        k3 = _closed_rhs(y + 0.5 * h * k2, *args)
        k4 = _closed_rhs(y + h * k3, *args)
        return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    F = np.zeros((dim, n), dtype=complex)
    y = np.zeros(dim, dtype=complex)
    for kk in range(n - 1):
        coarse = rk4(y, dt)
        y = rk4(rk4(y, 0.5 * dt), 0.5 * dt)
        err = np.abs(coarse - y).max()
        if not np.isfinite(err) or err > 1e-2 * max(1.0, np.abs(y).max()):
            raise NumericalFailure(
                f"closed coefficient system is stiff at t={grid.dt * (kk + 1):.3f} "
                "for this step size; refine dt"
            )
        F[:, kk + 1] = y
    return OCoefficientSeries(
        grid=grid, F1=F[0], F2=F[1], F3=F[2], F4=F[3],
        F5=F[4] if include_f5 else None, provenance="closed-ou",
    )


def solve_ocoeff(k: KernelSpec, sys: LinearizedSystem, grid: TimeGrid,
                 include_f5=True, solver="auto") -> OCoefficientSeries:
    """Dispatch to the right solver for the kernel variant."""
    if k.variant == "markov-delta":
        return markov_series(k.weight, grid, include_f5=include_f5)
    if solver == "auto":
        solver = "closed" if k.variant == "ou" else "grid"
    if solver == "closed":
        if k.variant != "ou":
            raise ValueError("closed solver needs an exponential kernel")
        return solve_ou_closed(k.ou, sys, grid, include_f5=include_f5)
    if solver == "grid":
        return solve_two_time_grid(k, sys, grid, include_f5=include_f5)
    raise ValueError(f"unknown solver {solver!r}")


def consistency_residual(series: OCoefficientSeries, fields: TwoTimeField,
                         k: KernelSpec, sys: LinearizedSystem,
                         max_columns=16) -> float:
    """Max-norm residual of the coefficient equations at off-grid midpoints.

    Columns of the stored two-time solution (fixed s, running t) are
    interpolated to panel midpoints with 4th-order stencils; the
    midpoint derivative is compared against the equation right-hand
    side.  The delta-kernel series is constant and satisfies its
    reduced equation identically.
    """
    if series.provenance == "markov-delta":
        return 0.0
    if fields is None:
        raise ValueError("residual evaluation needs stored fields")
    grid = series.grid
    n = grid.n_points
    dt = grid.dt
    wm, delta, g = sys.omega_m, sys.Delta, sys.G
    fmid = [midpoint_values(x) for x in
            (series.F1, series.F2, series.F3, series.F4)]
    stride = max(1, n // max_columns)
    worst = 0.0
    for l in range(0, n - 4, stride):
        cols = np.stack([fields.f1[l:, l], fields.f2[l:, l],
                         fields.f3[l:, l], fields.f4[l:, l]])
        mids = np.stack([midpoint_values(c) for c in cols])
        dots = np.stack([midpoint_derivative(c, dt) for c in cols])
        f5p_mid = None
        if fields.f5_prime is not None and series.F5 is not None:
            f5p_mid = midpoint_values(fields.f5_prime[l:, l])
        fj = tuple(x[l:] for x in fmid)
        rhs = _row_rhs(mids, fj, f5p_mid, wm, delta, g)
        worst = max(worst, np.abs(dots - rhs).max())
    return float(worst)
