"""Truncated two-mode number-basis oracle.

Everything downstream of the Gaussian machinery can be cross-checked
here: the memory-carrying master equation

    drho/dt = -i[H_S, rho] + [b, rho Obar^dag] + h.c.,
    Obar(t) = F1 b + F2 b^dag + F3 a + F4 a^dag,

its memoryless limit (the standard damped-mirror Lindblad form), and
the linear stochastic unraveling

    d|psi>/dt = (-i H_S + b z*_t - b^dag Obar(t)) |psi>,

whose unnormalized projectors average to rho.  States live on a
(N_a, N_b) product of truncated ladders; a leakage monitor guards the
truncation.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import NumericalFailure, TruncationError
from .kernel import KernelSpec, path_seed, sample_noise_batch, NoisePath
from .moments import MomentState, MomentTrajectory
from .ocoeff import OCoefficientSeries
from .params import LinearizedSystem
from .stepping import TimeGrid, midpoint_values, pairwise_sum

__all__ = [
    "FockOperators",
    "build_operators",
    "basis_state",
    "projector",
    "moments_from_rho",
    "RhoTrajectory",
    "integrate_master",
    "integrate_lindblad",
    "StatePath",
    "propagate_trajectory",
    "propagate_ensemble",
    "average_trajectories",
    "trace_distance",
]


def _ladder(n):
    m = np.zeros((n, n), dtype=complex)
    idx = np.arange(1, n)
    m[idx - 1, idx] = np.sqrt(idx)
    return m


@dataclass
class FockOperators:
    """Dense matrices of the two truncated modes.

    H is the quadratic Hamiltonian for the system that built the
    operators (None when none was given); L = b is the damped channel.
    """

    dims: tuple
    a: np.ndarray
    ad: np.ndarray
    b: np.ndarray
    bd: np.ndarray
    eye: np.ndarray
    H: np.ndarray = None

    @property
    def dim(self):
        return self.dims[0] * self.dims[1]

    @property
    def L(self):
        return self.b

    @cached_property
    def moment_matrices(self):
        """Stack of the 14 operators matching moments.MOMENT_LABELS."""
        a, ad, b, bd = self.a, self.ad, self.b, self.bd
        return np.stack([
            a, ad, b, bd,
            a @ a, a @ ad, a @ b, a @ bd,
            ad @ ad, ad @ b, ad @ bd,
            b @ b, b @ bd, bd @ bd,
        ])

    @cached_property
    def _leak_mask(self):
        na, nb = self.dims
        ia, ib = np.divmod(np.arange(self.dim), nb)
        return (ia == na - 1) | (ib == nb - 1)

    def leakage(self, rho):
        """Population sitting in the top level of either mode."""
        return float(np.einsum("ii->i", rho).real[self._leak_mask].sum())


def build_operators(dims, sys: LinearizedSystem = None) -> FockOperators:
    """Truncated ladder matrices on the (N_a, N_b) product space.

    When a linearized system is given, the Hamiltonian
    -Delta a^dag a + omega_m b^dag b + G (a^dag + a)(b^dag + b)
    is attached.
    """
    na, nb = int(dims[0]), int(dims[1])
    if na < 2 or nb < 2:
        raise ValueError("need at least two levels per mode")
    sa = _ladder(na)
    sb = _ladder(nb)
    a = np.kron(sa, np.eye(nb))
    b = np.kron(np.eye(na), sb)
    ad = a.conj().T.copy()
    bd = b.conj().T.copy()
    H = None
    if sys is not None:
        H = (-sys.Delta * (ad @ a) + sys.omega_m * (bd @ b)
             + sys.G * ((ad + a) @ (bd + b)))
    return FockOperators(dims=(na, nb), a=a, ad=ad, b=b, bd=bd,
                         eye=np.eye(na * nb, dtype=complex), H=H)


def basis_state(dims, na=0, nb=0):
    """Number state |na, nb> as a flat vector."""
    if not (0 <= na < dims[0] and 0 <= nb < dims[1]):
        raise ValueError("dims too small for the requested state")
    v = np.zeros(dims[0] * dims[1], dtype=complex)
    v[na * dims[1] + nb] = 1.0
    return v


def projector(psi):
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def moments_from_rho(rho, ops: FockOperators, normalize=True) -> MomentState:
    """The 14 means by trace contraction; divides by tr rho by default so
    ensemble-averaged (not exactly normalized) states give estimators."""
    vals = np.einsum("mij,ji->m", ops.moment_matrices, rho)
    if normalize:
        tr = np.trace(rho)
        if abs(tr) < 1e-12:
            raise ValueError("state has (near) zero trace")
        vals = vals / tr
    return MomentState.from_vector(vals)


@dataclass(frozen=True)
class RhoTrajectory:
    """Density-matrix evolution with per-node scalar series.

    Full matrices are kept only at ``store_idx`` nodes (always including
    the first and last); moments and trace are tracked at every node.
    """

    grid: TimeGrid
    store_idx: np.ndarray
    rhos: np.ndarray
    moments: np.ndarray
    traces: np.ndarray

    @property
    def final(self):
        return self.rhos[-1]

    def rho_at(self, node):
        pos = np.searchsorted(self.store_idx, node)
        if pos == len(self.store_idx) or self.store_idx[pos] != node:
            raise KeyError(f"node {node} was not stored")
        return self.rhos[pos]

    def moment_trajectory(self) -> MomentTrajectory:
        return MomentTrajectory(grid=self.grid, values=self.moments)

    def en_series(self, **kw):
        return self.moment_trajectory().en_series(**kw)


def _check_rho(rho, ops, t, trace_tol, leak_tol):
    tr = np.trace(rho).real
    if not np.isfinite(tr) or abs(tr - 1.0) > trace_tol:
        raise NumericalFailure(
            f"trace drifted to {tr:.10f} at t={t:.3f}; reduce the step size"
        )
    leak = ops.leakage(rho)
    if leak > leak_tol:
        na, nb = ops.dims
        raise TruncationError(
            f"truncation leakage {leak:.2e} at t={t:.3f} exceeds {leak_tol:.0e}",
            suggested_dims=(na + 4, nb + 4),
        )


def _stage_coeffs(series_rows, n):
    """Node and 4th-order midpoint values for each driving coefficient row."""
    nodes = [np.asarray(r) for r in series_rows]
    if n >= 4:
        mids = [midpoint_values(r) for r in nodes]
    else:
        mids = [0.5 * (r[:-1] + r[1:]) for r in nodes]
    return nodes, mids


def _run_rho(rhs_for, grid, rho0, ops, store_every, trace_tol, leak_tol):
    """Shared 4th-order density-matrix march.

    ``rhs_for(stage)`` returns the generator for stage index
    (0: node k, 1: midpoint, 2: node k+1), itself a function of rho.
    """
    n = grid.n_points
    dt = grid.dt
    rho = np.array(rho0, dtype=complex)
    if rho.shape != (ops.dim, ops.dim):
        raise ValueError("initial state has wrong dimension")
    store = sorted({0, n - 1, *range(0, n, store_every if store_every else n)})
    store_idx = np.array(store)
    rhos = np.empty((len(store), ops.dim, ops.dim), dtype=complex)
    moments = np.empty((n, 14), dtype=complex)
    traces = np.empty(n)
    ptr = 0
    t = grid.times()
    for k in range(n):
        traces[k] = np.trace(rho).real
        moments[k] = np.einsum("mij,ji->m", ops.moment_matrices, rho)
        if ptr < len(store) and store_idx[ptr] == k:
            rhos[ptr] = rho
            ptr += 1
        _check_rho(rho, ops, t[k], trace_tol, leak_tol)
        if k == n - 1:
            break
        f_node, f_mid, f_next = rhs_for(k)
        k1 = f_node(rho)
        k2 = f_mid(rho + (0.5 * dt) * k1)
        k3 = f_mid(rho + (0.5 * dt) * k2)
        k4 = f_next(rho + dt * k3)
        rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return RhoTrajectory(grid=grid, store_idx=store_idx, rhos=rhos,
                         moments=moments, traces=traces)


def integrate_master(F: OCoefficientSeries, ops: FockOperators, rho0,
                     grid: TimeGrid, store_every=0, trace_tol=1e-6,
                     leak_tol=1e-4) -> RhoTrajectory:
    """Integrate the memory-carrying master equation.

    The generator is applied matrix-free: P = rho Obar^dag,
    D = b P - P b, drho = -i[H, rho] + D + D^dag.  Only F1..F4 drive the
    equation; F5 never enters.
    """
    if not grid.matches(F.grid):
        raise ValueError("F series and master integration must share one grid")
    if ops.H is None:
        raise ValueError("operators were built without a Hamiltonian")
    H, b = ops.H, ops.b
    a, ad, bd = ops.a, ops.ad, ops.bd
    nodes, mids = _stage_coeffs((F.F1, F.F2, F.F3, F.F4), grid.n_points)

    def gen_at(fv):
        od = (fv[0].conjugate() * bd + fv[1].conjugate() * b
              + fv[2].conjugate() * ad + fv[3].conjugate() * a)

        def gen(rho):
            p = rho @ od
            d = b @ p - p @ b
            return -1j * (H @ rho - rho @ H) + d + d.conj().T

        return gen

    def rhs_for(k):
        fa = gen_at([r[k] for r in nodes])
        fm = gen_at([r[k] for r in mids])
        fb = gen_at([r[k + 1] for r in nodes])
        return fa, fm, fb

    return _run_rho(rhs_for, grid, rho0, ops, store_every, trace_tol, leak_tol)


def integrate_lindblad(ops: FockOperators, Gamma, rho0, grid: TimeGrid,
                       store_every=0, trace_tol=1e-6,
                       leak_tol=1e-4) -> RhoTrajectory:
    """Memoryless reference equation
    drho/dt = -i[H, rho] + Gamma/2 ([b, rho b^dag] + [b rho, b^dag]),
    kept as an independent code path for cross-checks."""
    if ops.H is None:
        raise ValueError("operators were built without a Hamiltonian")
    H, b, bd = ops.H, ops.b, ops.bd
    half = 0.5 * Gamma

    def gen(rho):
        p = rho @ bd
        q = b @ rho
        return (-1j * (H @ rho - rho @ H)
                + half * ((b @ p - p @ b) + (q @ bd - bd @ q)))

    def rhs_for(k):
        return gen, gen, gen

    return _run_rho(rhs_for, grid, rho0, ops, store_every, trace_tol, leak_tol)


@dataclass(frozen=True)
class StatePath:
    """Stored (possibly unnormalized) state vectors of one trajectory."""

    grid: TimeGrid
    dims: tuple
    node_indices: np.ndarray
    states: np.ndarray

    @property
    def final(self):
        return self.states[-1]


def _propagate_states(F, ops, Z, psi0, grid, store_idx, norm_cap=1e6):
    """March a batch of trajectories; Z has one noise column per path on
    the refined (half-step) grid."""
    n = grid.n_points
    dt = grid.dt
    H, b = ops.H, ops.b
    drift = [ops.bd @ ops.b, ops.bd @ ops.bd, ops.bd @ ops.a, ops.bd @ ops.ad]
    nodes, mids = _stage_coeffs((F.F1, F.F2, F.F3, F.F4), n)
    psi = np.array(psi0, dtype=complex)
    single = psi.ndim == 1
    if single:
        psi = psi[:, None]
    out = np.empty((len(store_idx), psi.shape[0], psi.shape[1]), dtype=complex)
    ptr = 0

    def amat(fv):
        m = -1j * H
        for c, mat in zip(fv, drift):
            m = m - c * mat
        return m

    def rhs(m, psi_s, z_row):
        return m @ psi_s + (b @ psi_s) * z_row

    for k in range(n):
        if ptr < len(store_idx) and store_idx[ptr] == k:
            out[ptr] = psi
            ptr += 1
        if k == n - 1:
            break
        m0 = amat([r[k] for r in nodes])
        mm = amat([r[k] for r in mids])
        m1 = amat([r[k + 1] for r in nodes])
        z0, zm, z1 = Z[2 * k], Z[2 * k + 1], Z[2 * k + 2]
        k1 = rhs(m0, psi, z0)
        k2 = rhs(mm, psi + (0.5 * dt) * k1, zm)
        k3 = rhs(mm, psi + (0.5 * dt) * k2, zm)
        k4 = rhs(m1, psi + dt * k3, z1)
        psi = psi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if k % 64 == 0 or k == n - 2:
            worst = np.abs(psi).max()
            if not np.isfinite(worst) or worst > norm_cap:
                raise NumericalFailure(
                    f"trajectory amplitude reached {worst:.2e} at "
                    f"t={grid.dt * (k + 1):.3f}; aborting (heavy-tailed norm)"
                )
    return out


def propagate_trajectory(F: OCoefficientSeries, ops: FockOperators,
                         noise: NoisePath, psi0, grid: TimeGrid,
                         store_every=1) -> StatePath:
    """Integrate one linear stochastic trajectory.

    The noise path must live on the half-step refinement of ``grid``
    (its values feed the interior stages directly).  The state norm is
    not preserved; the ensemble mean of projectors is the state.
    """
    if not grid.matches(F.grid):
        raise ValueError("F series and trajectory must share one grid")
    if not noise.grid.matches(grid.refine()):
        raise ValueError("noise must be sampled on the half-step refinement")
    n = grid.n_points
    store = sorted({0, n - 1, *range(0, n, store_every if store_every else n)})
    store_idx = np.array(store)
    out = _propagate_states(F, ops, noise.values[:, None], psi0, grid, store_idx)
    return StatePath(grid=grid, dims=ops.dims, node_indices=store_idx,
                     states=out[:, :, 0])


def propagate_ensemble(F: OCoefficientSeries, ops: FockOperators,
                       k: KernelSpec, psi0, grid: TimeGrid, n_paths,
                       master_seed, batch_size=512, store_every=0):
    """Propagate ``n_paths`` trajectories with per-path counter-based seeds.

    Returns a list of StatePath (batching is an implementation detail;
    path i always consumes the stream seeded by (master_seed, i)).
    """
    n = grid.n_points
    store = sorted({0, n - 1, *range(0, n, store_every if store_every else n)})
    store_idx = np.array(store)
    fine = grid.refine()
    paths = []
    for lo in range(0, n_paths, batch_size):
        hi = min(lo + batch_size, n_paths)
        seeds = [path_seed(master_seed, i) for i in range(lo, hi)]
        Z = sample_noise_batch(k, fine, seeds)
        out = _propagate_states(F, ops, Z, np.tile(np.asarray(psi0, dtype=complex)[:, None], (1, hi - lo)), grid, store_idx)
        for j in range(hi - lo):
            paths.append(StatePath(grid=grid, dims=ops.dims,
                                   node_indices=store_idx,
                                   states=out[:, :, j]))
    return paths


@dataclass(frozen=True)
class AveragedEnsemble:
    """Mean of unnormalized trajectory projectors at the stored nodes."""

    grid: TimeGrid
    node_indices: np.ndarray
    rhos: np.ndarray
    trace_mean: np.ndarray
    trace_se: np.ndarray


def average_trajectories(paths) -> AveragedEnsemble:
    """Pairwise-summed mean of |psi><psi| over the ensemble.

    All paths must share their stored nodes.  The standard error of the
    projector trace (|psi|^2) is reported per node.
    """
    if not paths:
        raise ValueError("need at least one trajectory")
    idx = paths[0].node_indices
    for p in paths[1:]:
        if not np.array_equal(p.node_indices, idx):
            raise ValueError("trajectories store different nodes")
    m = len(paths)
    n_nodes = len(idx)
    dim = paths[0].states.shape[1]
    rhos = np.empty((n_nodes, dim, dim), dtype=complex)
    tr_mean = np.empty(n_nodes)
    tr_se = np.empty(n_nodes)
    chunk = 256
    for j in range(n_nodes):
        partials = []
        norms = np.empty(m)
        for lo in range(0, m, chunk):
            hi = min(lo + chunk, m)
            block = np.stack([p.states[j] for p in paths[lo:hi]])
            norms[lo:hi] = np.einsum("pi,pi->p", block, block.conj()).real
            outer = np.einsum("pi,pj->pij", block, block.conj())
            partials.append(pairwise_sum(outer))
        rhos[j] = pairwise_sum(np.stack(partials)) / m
        tr_mean[j] = norms.mean()
        tr_se[j] = norms.std(ddof=1) / np.sqrt(m) if m > 1 else 0.0
    return AveragedEnsemble(grid=paths[0].grid, node_indices=idx, rhos=rhos,
                            trace_mean=tr_mean, trace_se=tr_se)


def trace_distance(r1, r2):
    """Half the trace norm of the difference of two Hermitian matrices."""
    d = np.asarray(r1) - np.asarray(r2)
    d = 0.5 * (d + d.conj().T)
    return float(0.5 * np.abs(np.linalg.eigvalsh(d)).sum())
