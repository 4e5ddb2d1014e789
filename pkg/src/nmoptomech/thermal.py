"""Finite-temperature extension via the two-effective-bath mapping.

A bath at temperature T (units with k_B = hbar = 1) is traded for two
zero-temperature baths seen through the combined channel L = a + b:
an emission-like bath with kernel

    alpha1(tau) = int J(w) (nbar(w) + 1) e^{-i w tau} dw

and an absorption-like bath with kernel

    alpha2(tau) = int J(w) nbar(w) e^{+i w tau} dw.

At T = 0 the second kernel vanishes identically and the first reduces
to the bare kernel of J.  The noise-free operator for bath i is
expanded as Obar_i = X_i1 a + X_i2 a^dag + X_i3 b + X_i4 b^dag; the
coefficient rows x_ij(t, s) share one bilinear evolution matrix and the
kernel averages X_ij close on themselves for exponential kernels.  The
resulting state equation is

    drho/dt = -i[H_S, rho] + [L, rho Obar1^dag] - [L^dag, Obar1 rho]
                           + [L^dag, rho Obar2^dag] - [L, Obar2 rho].

The frequency integrals run over a positive window: the occupation
weighting diverges like T/w at w -> 0, so the infrared edge is an
explicit model choice, not a numerical knob.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailure
from .fock import FockOperators, RhoTrajectory, _run_rho, _stage_coeffs
from .kernel import KernelSpec, OUKernel, eval_kernel, spectral_density
from .params import LinearizedSystem
from .stepping import TimeGrid, trapezoid_weights

__all__ = [
    "ThermalBathSpec",
    "ThermalOCoefficients",
    "EffectiveKernels",
    "thermal_occupation",
    "effective_kernels",
    "solve_thermal_ocoeff",
    "integrate_thermal_master",
]

# boundary rows x_ij(t, t): bath 1 rides the annihilators, bath 2 the creators
_BC = np.array([[1.0, 0.0, 1.0, 0.0],
                [0.0, 1.0, 0.0, 1.0]], dtype=complex)


def thermal_occupation(omega, T):
    """Bose occupation 1/(e^{w/T} - 1) at positive frequency."""
    w = np.asarray(omega, dtype=float)
    if np.any(w <= 0.0):
        raise ValueError("occupation is defined for positive frequencies")
    if T < 0.0:
        raise ValueError("temperature must be nonnegative")
    if T == 0.0:
        out = np.zeros_like(w)
    else:
        with np.errstate(over="ignore"):
            out = 1.0 / np.expm1(w / T)
    return float(out) if out.ndim == 0 else out


def _as_kernel_spec(k):
    if isinstance(k, KernelSpec):
        return k
    if isinstance(k, OUKernel):
        return KernelSpec(variant="ou", ou=k)
    raise TypeError(f"not a kernel: {k!r}")


@dataclass(frozen=True)
class ThermalBathSpec:
    """Temperature, bare spectral density, and the two effective kernels."""

    temperature: float
    base: OUKernel
    alpha1: KernelSpec
    alpha2: KernelSpec

    def __post_init__(self):
        if self.temperature < 0.0:
            raise ValueError("temperature must be nonnegative")
        for label, spec in (("alpha1", self.alpha1), ("alpha2", self.alpha2)):
            v0 = _kernel_at_zero(spec)
            if v0 is None:
                continue
            scale = max(abs(v0), 1.0)
            if abs(v0.imag) > 1e-9 * scale or v0.real < -1e-12 * scale:
                raise ValueError(f"{label}(0) must be real and nonnegative")

    @classmethod
    def zero_temperature(cls, base: OUKernel):
        return cls(
            temperature=0.0,
            base=base,
            alpha1=KernelSpec(variant="ou", ou=base),
            alpha2=KernelSpec(variant="ou",
                              ou=OUKernel(Gamma=0.0, gamma=base.gamma,
                                          Omega=base.Omega)),
        )

    @property
    def kernels(self):
        return (self.alpha1, self.alpha2)


def _kernel_at_zero(spec: KernelSpec):
    if spec.variant == "markov-delta":
        return None
    return complex(eval_kernel(spec, 0.0, 0.0))


@dataclass(frozen=True)
class EffectiveKernels:
    """Quadrature (or fit) output; unpacks as the (alpha1, alpha2) pair."""

    alpha1: KernelSpec
    alpha2: KernelSpec
    omega_window: tuple = None
    fit_residuals: tuple = None

    def __iter__(self):
        return iter((self.alpha1, self.alpha2))


def _frequency_panels(lo, hi, gamma, tau_max):
    """Graded panel edges: geometric near the infrared edge (the 1/w
    weighting), then uniform panels narrow enough for the slowest
    oscillation e^{i w tau_max} a fixed-order rule must track."""
    width = min(0.5 * gamma, 15.0 / max(tau_max, 1e-12))
    core_lo = min(max(8.0 * lo, gamma / 8.0), hi)
    width = max(width, (hi - core_lo) / 6000.0)
    edges = [lo]
    e = lo
    while e < core_lo:
        e = min(2.0 * e, core_lo)
        edges.append(e)
    if e < hi:
        m = int(np.ceil((hi - e) / width))
        edges.extend(np.linspace(e, hi, m + 1)[1:])
    return np.asarray(edges)


def _gauss_nodes(edges, order):
    x, w = np.polynomial.legendre.leggauss(order)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _half_transforms(lags, omega, g1, g2):
    a1 = np.empty(len(lags), dtype=complex)
    a2 = np.empty(len(lags), dtype=complex)
    for lo in range(0, len(lags), 256):
        hi = lo + 256
        e = np.exp(-1j * np.multiply.outer(lags[lo:hi], omega))
        a1[lo:hi] = e @ g1
        a2[lo:hi] = e.conj() @ g2
    return a1, a2


def _fit_exponential(lags, values, t_end, fit_tol, label):
    """Weighted least squares of log alpha against a single decaying
    exponential; returns the kernel and the max relative misfit."""
    mask = (lags <= t_end) & (np.abs(values) > 0.0)
    if mask.sum() < 8:
        raise NumericalFailure(f"too few usable samples to fit {label}")
    tau = lags[mask]
    v = values[mask]
    y = np.log(np.abs(v)) + 1j * np.unwrap(np.angle(v))
    w = np.sqrt(np.abs(v))
    design = np.stack([np.ones_like(tau), tau], axis=1) * w[:, None]
    coef, *_ = np.linalg.lstsq(design, y * w, rcond=None)
    amp = float(np.exp(coef[0].real))
    mu = -coef[1]
    if mu.real <= 0.0:
        raise NumericalFailure(f"{label} does not decay on the fit window")
    fitted = OUKernel(Gamma=2.0 * amp / mu.real, gamma=mu.real, Omega=mu.imag)
    resid = float(np.abs(fitted.alpha(tau) - v).max() / max(np.abs(values[0]), 1e-300))
    if fit_tol is not None and resid > fit_tol:
        raise NumericalFailure(
            f"single-exponential fit of {label} misses by {resid:.2e} "
            f"(limit {fit_tol:.0e}); use the tabulated form instead"
        )
    return fitted, resid


def effective_kernels(J: OUKernel, T, lags=None, omega_window=None,
                      gauss_order=24, fit=False, fit_window=None,
                      fit_tol=None) -> EffectiveKernels:
    """Emission/absorption kernels of a bath at temperature T.

    Both kernels are computed by panel Gauss quadrature over a positive
    frequency window and returned tabulated; with ``fit`` they are
    least-squares-reduced to single exponentials (required by the closed
    coefficient solver) and the max relative misfits are reported.
    T = 0 bypasses the quadrature: alpha1 is the bare kernel, alpha2 is
    identically zero.
    """
    if T < 0.0:
        raise ValueError("temperature must be nonnegative")
    if T == 0.0:
        zt = ThermalBathSpec.zero_temperature(J)
        return EffectiveKernels(alpha1=zt.alpha1, alpha2=zt.alpha2)
    if omega_window is None:
        span = 60.0 * J.gamma
        lo = max(J.Omega - span, 1e-3 * max(J.gamma, abs(J.Omega), 1.0))
        omega_window = (lo, J.Omega + span)
    lo, hi = float(omega_window[0]), float(omega_window[1])
    if not 0.0 < lo < hi:
        raise ValueError("frequency window must satisfy 0 < low < high")
    if lags is None:
        tau_max = 12.0 / J.gamma
        lags = np.linspace(0.0, tau_max, 4001)
    lags = np.asarray(lags, dtype=float)

    edges = _frequency_panels(lo, hi, J.gamma, lags[-1])
    omega, wq = _gauss_nodes(edges, gauss_order)
    occ = thermal_occupation(omega, T)
    dens = spectral_density(J, omega)
    a1, a2 = _half_transforms(lags, omega, wq * dens * (occ + 1.0), wq * dens * occ)

    # re-quadrature at lower order on the same panels as a convergence probe
    om_c, wq_c = _gauss_nodes(edges, max(8, gauss_order - 8))
    occ_c = thermal_occupation(om_c, T)
    dens_c = spectral_density(J, om_c)
    probe = lags[:: max(1, len(lags) // 16)]
    b1, b2 = _half_transforms(probe, om_c, wq_c * dens_c * (occ_c + 1.0),
                              wq_c * dens_c * occ_c)
    scale = max(abs(a1[0]), 1e-300)
    drift = max(np.abs(a1[:: max(1, len(lags) // 16)] - b1).max(),
                np.abs(a2[:: max(1, len(lags) // 16)] - b2).max())
    if drift > 1e-8 * scale:
        raise NumericalFailure(
            f"frequency quadrature drifted by {drift/scale:.2e} between "
            "orders; narrow the window or raise gauss_order"
        )

    if not fit:
        return EffectiveKernels(
            alpha1=KernelSpec.tabulated(lags, a1),
            alpha2=KernelSpec.tabulated(lags, a2),
            omega_window=(lo, hi),
        )
    t_end = fit_window if fit_window is not None else 5.0 / J.gamma
    k1, r1 = _fit_exponential(lags, a1, t_end, fit_tol, "alpha1")
    if np.abs(a2).max() <= 1e-12 * scale:
        k2 = OUKernel(Gamma=0.0, gamma=J.gamma, Omega=-J.Omega)
        r2 = float(np.abs(a2).max() / scale)
    else:
        k2, r2 = _fit_exponential(lags, a2, t_end, fit_tol, "alpha2")
    return EffectiveKernels(
        alpha1=KernelSpec(variant="ou", ou=k1),
        alpha2=KernelSpec(variant="ou", ou=k2),
        omega_window=(lo, hi),
        fit_residuals=(r1, r2),
    )


@dataclass(frozen=True)
class ThermalOCoefficients:
    """Kernel-averaged coefficient series X[i, j] of both effective baths.

    Axis layout of X is (node, bath i in {1,2}, basis j in {a, a^dag,
    b, b^dag}).
    """

    grid: TimeGrid
    X: np.ndarray
    provenance: str

    @property
    def X1(self):
        return self.X[:, 0, :]

    @property
    def X2(self):
        return self.X[:, 1, :]

    def series(self, i, j):
        return self.X[:, i - 1, j - 1]


def _coupling_matrix(X, wm, delta, g):
    """Shared evolution matrix of the coefficient rows; both baths' rows
    see the same matrix, only their boundary rows differ."""
    x11, x12, x13, x14 = X[0]
    x21, x22, x23, x24 = X[1]
    ig = 1j * g
    return np.array([
        [-1j * delta + x11 + x22, -2.0 * x21,
         ig + x11 + x24, -ig - x21 - x23],
        [2.0 * x12, 1j * delta - x11 - x22,
         ig + x12 + x14, -ig - x13 - x22],
        [ig + x13 + x22, -ig - x21 - x23,
         1j * wm + x13 + x24, -2.0 * x23],
        [ig + x12 + x14, -ig - x11 - x24,
         2.0 * x14, -1j * wm - x13 - x24],
    ])


def _normalize_pair(kernels):
    if isinstance(kernels, ThermalBathSpec):
        pair = kernels.kernels
    elif isinstance(kernels, EffectiveKernels):
        pair = (kernels.alpha1, kernels.alpha2)
    else:
        pair = tuple(kernels)
        if len(pair) != 2:
            raise ValueError("expected the (alpha1, alpha2) kernel pair")
    return tuple(_as_kernel_spec(k) for k in pair)


def _solve_thermal_closed(pair, sys, grid):
    n = grid.n_points
    dt = grid.dt
    wm, delta, g = sys.omega_m, sys.Delta, sys.G
    a0 = np.zeros(2, dtype=complex)
    mu = np.zeros(2, dtype=complex)
    live = np.ones(2)
    X = np.zeros((2, 4), dtype=complex)
    for i, k in enumerate(pair):
        if k.variant == "markov-delta":
            X[i] = 0.5 * k.weight * _BC[i]
            live[i] = 0.0
        else:
            a0[i] = k.ou.alpha0
            mu[i] = k.ou.mu

    def rhs(x):
        kmat = _coupling_matrix(x, wm, delta, g)
        d = a0[:, None] * _BC - mu[:, None] * x + x @ kmat.T
        return live[:, None] * d

    def rk4(x, h):
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * h * k1)
        k3 = rhs(x + 0.5 * h * k2)
        k4 = rhs(x + h * k3)
        return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    out = np.zeros((n, 2, 4), dtype=complex)
    out[0] = X
    for kk in range(n - 1):
        coarse = rk4(X, dt)
        X = rk4(rk4(X, 0.5 * dt), 0.5 * dt)
        err = np.abs(coarse - X).max()
        if not np.isfinite(err) or err > 1e-2 * max(1.0, np.abs(X).max()):
            raise NumericalFailure(
                f"closed thermal system is stiff at t={dt * (kk + 1):.3f} "
                "for this step size; refine dt"
            )
        out[kk + 1] = X
    return ThermalOCoefficients(grid=grid, X=out,
                                provenance="closed-exponential")


def _solve_thermal_grid(pair, sys, grid):
    """Two-time march of the eight coefficient rows.

    Same stage scheme as the single-bath grid solver: each step advances
    every s-row, stage kernel averages are re-quadratured from the stage
    rows with half-node weights plus the exact boundary contribution.
    No memory slab is needed because the noise-expansion rows are
    dropped by design.
    """
    for k in pair:
        if k.variant == "markov-delta":
            raise ValueError("the grid path needs kernels with pointwise "
                             "values; use the closed solver for delta baths")
    n = grid.n_points
    dt = grid.dt
    wm, delta, g = sys.omega_m, sys.Delta, sys.G
    t = grid.times()
    lag = [np.asarray(eval_kernel(k, t, 0.0), dtype=complex) for k in pair]
    half = [np.asarray(eval_kernel(k, t + 0.5 * dt, 0.0), dtype=complex)
            for k in pair]
    a0 = np.array([lag[0][0], lag[1][0]])
    bc8 = _BC.reshape(8)

    Y = np.zeros((8, n), dtype=complex)
    Y[:, 0] = bc8
    out = np.zeros((n, 2, 4), dtype=complex)
    Xnode = np.zeros((2, 4), dtype=complex)

    def row_rhs(rows, xs):
        kmat = _coupling_matrix(xs, wm, delta, g)
        r = rows.reshape(2, 4, -1)
        return np.einsum("jk,ikl->ijl", kmat, r).reshape(8, -1)

    def quad(rows, kw, bw):
        xs = np.empty((2, 4), dtype=complex)
        blocks = rows.reshape(2, 4, -1)
        for i in range(2):
            xs[i] = blocks[i] @ kw[i] + bw * a0[i] * _BC[i]
        return xs

    for kk in range(n - 1):
        L = kk + 1
        w = trapezoid_weights(L, dt)
        w2 = w.copy()
        w2[-1] += 0.25 * dt
        kw2 = [w2 * h[kk::-1] for h in half]
        w4 = w.copy()
        w4[-1] += 0.5 * dt
        kw4 = [w4 * a[kk + 1:0:-1] for a in lag]

        rows = Y[:, :L]
        k1 = row_rhs(rows, Xnode)
        y2 = rows + (0.5 * dt) * k1
        k2 = row_rhs(y2, quad(y2, kw2, 0.25 * dt))
        y3 = rows + (0.5 * dt) * k2
        k3 = row_rhs(y3, quad(y3, kw2, 0.25 * dt))
        y4 = rows + dt * k3
        k4 = row_rhs(y4, quad(y4, kw4, 0.5 * dt))

        Y[:, :L] = rows + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        Y[:, L] = bc8
        kw1 = [trapezoid_weights(L + 1, dt) * a[kk + 1::-1] for a in lag]
        Xnode = quad(Y[:, :L + 1], kw1, 0.0)
        out[kk + 1] = Xnode
        if not np.all(np.isfinite(Xnode)):
            raise NumericalFailure(
                f"thermal coefficient march diverged at t={t[kk + 1]:.3f}; "
                "the grid is too coarse for these parameters"
            )
    return ThermalOCoefficients(grid=grid, X=out, provenance="two-time-grid")


def solve_thermal_ocoeff(kernels, sys: LinearizedSystem, grid: TimeGrid,
                         solver="auto") -> ThermalOCoefficients:
    """Kernel averages X_ij(t) for both effective baths.

    Exponential (or delta) kernel pairs close on an 8-component ODE
    system; tabulated kernels go through the two-time grid march.
    """
    pair = _normalize_pair(kernels)
    closable = all(k.variant in ("ou", "markov-delta") for k in pair)
    if solver == "auto":
        solver = "closed" if closable else "grid"
    if solver == "closed":
        if not closable:
            raise ValueError("closed solver needs exponential or delta kernels")
        if all(k.variant == "markov-delta" for k in pair):
            n = grid.n_points
            X = np.zeros((n, 2, 4), dtype=complex)
            X[:, 0, :] = 0.5 * pair[0].weight * _BC[0]
            X[:, 1, :] = 0.5 * pair[1].weight * _BC[1]
            return ThermalOCoefficients(grid=grid, X=X,
                                        provenance="markov-delta")
        return _solve_thermal_closed(pair, sys, grid)
    if solver == "grid":
        return _solve_thermal_grid(pair, sys, grid)
    raise ValueError(f"unknown solver {solver!r}")


def integrate_thermal_master(Xij: ThermalOCoefficients, ops: FockOperators,
                             rho0, grid: TimeGrid, store_every=0,
                             trace_tol=1e-6, leak_tol=1e-4) -> RhoTrajectory:
    """Integrate the two-bath state equation with channel L = a + b.

    The generator keeps the two bath contributions as separate
    commutator pairs, each Hermiticity- and trace-preserving on its own.
    """
    if not grid.matches(Xij.grid):
        raise ValueError("coefficients and integration must share one grid")
    if ops.H is None:
        raise ValueError("operators were built without a Hamiltonian")
    H = ops.H
    Lop = ops.a + ops.b
    Ld = Lop.conj().T
    basis = (ops.a, ops.ad, ops.b, ops.bd)
    dag_basis = (ops.ad, ops.a, ops.bd, ops.b)
    series = [Xij.X[:, i, j] for i in range(2) for j in range(4)]
    nodes, mids = _stage_coeffs(series, grid.n_points)

    def gen_at(vals):
        o1 = sum(c * m for c, m in zip(vals[0:4], basis))
        o1d = sum(c.conjugate() * m for c, m in zip(vals[0:4], dag_basis))
        o2 = sum(c * m for c, m in zip(vals[4:8], basis))
        o2d = sum(c.conjugate() * m for c, m in zip(vals[4:8], dag_basis))

        def gen(rho):
            p1 = rho @ o1d
            q1 = o1 @ rho
            p2 = rho @ o2d
            q2 = o2 @ rho
            return (-1j * (H @ rho - rho @ H)
                    + (Lop @ p1 - p1 @ Lop) + (q1 @ Ld - Ld @ q1)
                    + (Ld @ p2 - p2 @ Ld) + (q2 @ Lop - Lop @ q2))

        return gen

    def rhs_for(k):
        fa = gen_at([r[k] for r in nodes])
        fm = gen_at([r[k] for r in mids])
        fb = gen_at([r[k + 1] for r in nodes])
        return fa, fm, fb

    return _run_rho(rhs_for, grid, rho0, ops, store_every, trace_tol, leak_tol)
