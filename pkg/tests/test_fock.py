"""Truncated number-basis oracle: operators, master equation,
trajectory unraveling, and ensemble averaging."""

import numpy as np
import pytest
from scipy.linalg import expm

from nmoptomech.errors import NumericalFailure, TruncationError
from nmoptomech.fock import (
    average_trajectories,
    basis_state,
    build_operators,
    integrate_lindblad,
    integrate_master,
    moments_from_rho,
    projector,
    propagate_ensemble,
    propagate_trajectory,
    trace_distance,
)
from nmoptomech.kernel import (
    KernelSpec,
    NoisePath,
    OUKernel,
    path_seed,
    sample_noise_path,
)
from nmoptomech.moments import MOMENT_LABELS
from nmoptomech.ocoeff import markov_series, solve_ou_closed
from nmoptomech.params import LinearizedSystem
from nmoptomech.stepping import TimeGrid

SYS = LinearizedSystem(omega_m=1.0, Delta=1.0, G=0.1)
OU_MAIN = OUKernel(Gamma=2.0, gamma=0.6, Omega=0.0)


def test_ladder_commutator_structure():
    ops = build_operators((5, 4))
    comm = ops.a @ ops.ad - ops.ad @ ops.a
    # canonical on the retained levels, broken only at the cutoff
    na, nb = 5, 4
    diag = np.diag(comm).real.reshape(na, nb)
    assert np.allclose(diag[: na - 1], 1.0)
    assert np.allclose(diag[na - 1], 1.0 - na)
    assert np.allclose(comm - np.diag(np.diag(comm)), 0.0)


def test_number_operator_spectrum():
    ops = build_operators((3, 3))
    nb = ops.bd @ ops.b
    want = np.array([0, 1, 2, 0, 1, 2, 0, 1, 2], dtype=float)
    assert np.allclose(np.diag(nb).real, want)


def test_build_operators_validates_dims():
    with pytest.raises(ValueError):
        build_operators((1, 4))


def test_basis_state_and_moments():
    psi = basis_state((4, 4), na=1, nb=2)
    rho = projector(psi)
    ops = build_operators((4, 4))
    m = moments_from_rho(rho, ops).vector
    lab = MOMENT_LABELS.index
    assert m[lab("aad")] == pytest.approx(2.0)
    assert m[lab("bbd")] == pytest.approx(3.0)
    assert m[lab("a")] == pytest.approx(0.0)
    with pytest.raises(ValueError):
        basis_state((3, 3), na=3, nb=0)


def test_hamiltonian_matches_definition():
    ops = build_operators((4, 4), SYS)
    want = (
        -SYS.Delta * ops.ad @ ops.a
        + SYS.omega_m * ops.bd @ ops.b
        + SYS.G * (ops.ad + ops.a) @ (ops.bd + ops.b)
    )
    assert np.allclose(ops.H, want, atol=1e-14)
    assert np.allclose(ops.H, ops.H.conj().T, atol=1e-14)


def test_markov_master_equals_lindblad():
    grid = TimeGrid(dt=0.01, t_final=4.0)
    dims = (6, 6)
    ops = build_operators(dims, SYS)
    rho0 = projector(basis_state(dims))
    F = markov_series(1.2, grid)
    r_m = integrate_master(F, ops, rho0, grid, store_every=20)
    r_l = integrate_lindblad(ops, 1.2, rho0, grid, store_every=20)
    worst = max(float(np.max(np.abs(a - b)))
                for a, b in zip(r_m.rhos, r_l.rhos))
    assert worst < 1e-12


def test_one_phonon_markov_decay():
    # G = 0: survival probability of |0,1> decays exactly at rate Gamma
    grid = TimeGrid(dt=0.005, t_final=4.0)
    sys0 = LinearizedSystem(omega_m=1.0, Delta=1.0, G=0.0)
    dims = (2, 4)
    ops = build_operators(dims, sys0)
    rho0 = projector(basis_state(dims, na=0, nb=1))
    Gamma = 0.7
    rt = integrate_lindblad(ops, Gamma, rho0, grid)
    n = rt.moments[:, MOMENT_LABELS.index("bbd")].real - 1.0
    want = np.exp(-Gamma * grid.times())
    assert np.max(np.abs(n - want)) < 1e-9


def test_master_preserves_trace_and_hermiticity():
    grid = TimeGrid(dt=0.01, t_final=6.0)
    dims = (7, 7)
    ops = build_operators(dims, SYS)
    F = solve_ou_closed(OU_MAIN, SYS, grid)
    rt = integrate_master(F, ops, projector(basis_state(dims)), grid)
    assert np.max(np.abs(rt.traces - 1.0)) < 1e-8
    rho = rt.final
    assert np.max(np.abs(rho - rho.conj().T)) < 1e-10


def test_truncation_guard_raises_with_hint():
    grid = TimeGrid(dt=0.01, t_final=12.0)
    dims = (4, 4)
    ops = build_operators(dims, SYS)
    F = solve_ou_closed(OU_MAIN, SYS, grid)
    with pytest.raises(TruncationError) as info:
        integrate_master(F, ops, projector(basis_state(dims)), grid)
    assert info.value.suggested_dims == (8, 8)


def test_zero_noise_trajectory_is_schroedinger():
    # silent bath, F = 0: the march must reproduce exp(-i H t)
    grid = TimeGrid(dt=0.002, t_final=2.0)
    dims = (5, 5)
    sysb = LinearizedSystem(omega_m=1.0, Delta=0.6, G=0.3)
    ops = build_operators(dims, sysb)
    silent = KernelSpec.from_ou(0.0, 0.5, 0.0)
    F = solve_ou_closed(silent.ou, sysb, grid)
    psi0 = (basis_state(dims, 0, 0) + basis_state(dims, 1, 1)) / np.sqrt(2)
    noise = sample_noise_path(silent, grid.refine(), path_seed(3, 0))
    path = propagate_trajectory(F, ops, noise, psi0, grid)
    want = expm(-1j * ops.H * grid.t_final) @ psi0
    assert np.max(np.abs(path.final - want)) < 1e-8


def test_trajectory_requires_refined_noise_grid():
    grid = TimeGrid(dt=0.01, t_final=1.0)
    dims = (3, 3)
    ops = build_operators(dims, SYS)
    F = markov_series(1.0, grid)
    z = NoisePath(grid=grid, values=np.zeros(grid.n_points, complex))
    with pytest.raises(ValueError):
        propagate_trajectory(F, ops, z, basis_state(dims), grid)


def test_ensemble_mean_approaches_master():
    grid = TimeGrid(dt=0.02, t_final=4.0)
    dims = (6, 6)
    ops = build_operators(dims, SYS)
    k = KernelSpec.from_ou(2.0, 0.6, 0.0)
    F = solve_ou_closed(k.ou, SYS, grid)
    psi0 = basis_state(dims)
    paths = propagate_ensemble(F, ops, k, psi0, grid, 600, 4242, store_every=50)
    avg = average_trajectories(paths)
    ref = integrate_master(F, ops, projector(psi0), grid, store_every=50)
    pairs = zip(avg.rhos, (ref.rho_at(i) for i in avg.node_indices))
    dists = [trace_distance(a, b) for a, b in pairs]
    assert dists[0] < 1e-12
    assert dists[-1] < 0.06
    assert np.all(avg.trace_se >= 0)


def test_ensemble_is_deterministic_for_fixed_seed():
    grid = TimeGrid(dt=0.05, t_final=1.0)
    dims = (4, 4)
    ops = build_operators(dims, SYS)
    k = KernelSpec.from_ou(1.0, 0.8, 0.0)
    F = solve_ou_closed(k.ou, SYS, grid)
    psi0 = basis_state(dims)
    a = average_trajectories(
        propagate_ensemble(F, ops, k, psi0, grid, 64, 99, batch_size=64))
    b = average_trajectories(
        propagate_ensemble(F, ops, k, psi0, grid, 64, 99, batch_size=64))
    # identical call: bitwise reproducible
    assert np.array_equal(a.rhos, b.rhos)
    # split batches reuse the same per-path noise streams; only gemm
    # round-off differs with batch width
    c = average_trajectories(
        propagate_ensemble(F, ops, k, psi0, grid, 64, 99, batch_size=7))
    assert np.max(np.abs(a.rhos - c.rhos)) < 1e-12


def test_trace_distance_known_values():
    rho = projector(basis_state((3, 3), 0, 0))
    sig = projector(basis_state((3, 3), 1, 1))
    assert trace_distance(rho, rho) == pytest.approx(0.0, abs=1e-14)
    assert trace_distance(rho, sig) == pytest.approx(1.0, abs=1e-12)


