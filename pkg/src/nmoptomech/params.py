"""Physical parameters, the classical mean-field fixed point, and the
linearized two-mode system.

The cavity is driven at rate Omega_d and leaks at kappa_a.  Writing
delta0 = omega_drive - omega_c and u = 2 g^2 / omega_m, the stationary
photon number x = |alpha|^2 solves the cubic

    u^2 x^3 + 2 delta0 u x^2 + (delta0^2 + kappa_a^2) x - Omega_d^2 = 0

after which alpha = i Omega_d / (i (delta0 + u x) - kappa_a) and
beta = -g x / omega_m.  The linearized model keeps only the effective
coupling G = |alpha| g and the shifted detuning Delta = delta0 + 2 G^2 / omega_m.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailure

__all__ = [
    "PhysicalParams",
    "MeanFieldSolution",
    "LinearizedSystem",
    "solve_mean_field",
    "linearize",
]


@dataclass(frozen=True)
class PhysicalParams:
    """Raw model parameters, frequencies in units of the mechanical frequency."""

    omega_c: float
    omega_m: float
    g: float
    omega_drive: float
    Omega_d: float
    kappa_a: float

    def __post_init__(self):
        if self.omega_m <= 0:
            raise ValueError("omega_m must be positive")
        if self.kappa_a < 0:
            raise ValueError("kappa_a must be nonnegative")
        if self.Omega_d < 0:
            raise ValueError("Omega_d must be nonnegative")

    @property
    def delta0(self):
        return self.omega_drive - self.omega_c


@dataclass(frozen=True)
class MeanFieldSolution:
    """Stationary amplitudes.

    ``roots`` lists every admissible photon-number root (ascending);
    ``alpha`` and ``beta`` correspond to the smallest one, the
    conventional lower stable branch.  ``residual`` is the magnitude of
    the defining equation evaluated at the returned amplitudes.
    """

    alpha: complex
    beta: complex
    residual: float
    branch_count: int
    roots: tuple


@dataclass(frozen=True)
class LinearizedSystem:
    """Quadratic model data: H = -Delta a^dag a + omega_m b^dag b
    + G (a^dag + a)(b^dag + b)."""

    omega_m: float
    Delta: float
    G: float

    def __post_init__(self):
        if self.omega_m <= 0:
            raise ValueError("omega_m must be positive")
        if self.G < 0:
            raise ValueError("G must be nonnegative (phase absorbed)")


def _real_roots(coeffs, xcap):
    """Real nonnegative roots of the photon-number polynomial.

    Terms that contribute nothing below the photon ceiling ``xcap`` are
    dropped before the companion-matrix solve, so a vanishingly small
    coupling degrades gracefully to the quadratic and linear cases.
    """
    x = max(xcap, 1.0)
    weights = [abs(c) * x ** k for k, c in enumerate(reversed(coeffs))][::-1]
    top = max(weights)
    if top == 0.0:
        return []
    kept = list(coeffs)
    while len(kept) > 1 and weights[0] <= 1e-13 * top:
        kept = kept[1:]
        weights = weights[1:]
    if len(kept) == 1:
        return []
    roots = np.roots(kept)
    out = []
    for r in roots:
        if abs(r.imag) > 1e-9 * max(abs(r), 1.0):
            continue
        if r.real < -1e-12 or r.real > xcap * (1.0 + 1e-6):
            continue
        out.append(float(r.real))
    return out


def _cubic_coeffs(p):
    u = 2.0 * p.g * p.g / p.omega_m
    d0 = p.delta0
    return u, (u * u, 2.0 * d0 * u, d0 * d0 + p.kappa_a ** 2, -p.Omega_d ** 2)


def _polish(x, coeffs, max_iter=60):
    c3, c2, c1, c0 = coeffs
    scale = max(abs(c0), abs(c1) * max(abs(x), 1.0), 1e-30)
    for _ in range(max_iter):
        f = ((c3 * x + c2) * x + c1) * x + c0
        df = (3.0 * c3 * x + 2.0 * c2) * x + c1
        if df == 0.0:
            break
        step = f / df
        x -= step
        if abs(step) <= 1e-14 * max(abs(x), 1.0):
            break
    f = ((c3 * x + c2) * x + c1) * x + c0
    if abs(f) > 1e-12 * scale:
        raise NumericalFailure("mean-field root polishing did not converge")
    return x


def solve_mean_field(p: PhysicalParams) -> MeanFieldSolution:
    """Stationary mean-field amplitudes of the driven cavity-mirror pair.

    All real nonnegative photon-number roots are located; the smallest
    is returned as the solution branch with ``branch_count`` reporting
    how many there are.
    """
    u, coeffs = _cubic_coeffs(p)
    if p.Omega_d == 0.0:
        return MeanFieldSolution(alpha=0j, beta=0j, residual=0.0,
                                 branch_count=1, roots=(0.0,))
    # strict ceilings on the photon number: kappa^2 x <= Omega_d^2 and,
    # past ux = 2|delta0|, also u^2 x^3 / 4 <= Omega_d^2
    caps = []
    if p.kappa_a > 0.0:
        caps.append(p.Omega_d ** 2 / p.kappa_a ** 2)
    if u > 0.0:
        # u**2 can underflow to 0 for tiny couplings; keep the cube
        # root in a form that never divides by zero (inf is fine in min)
        caps.append(max(2.0 * abs(p.delta0) / u,
                        (4.0 * p.Omega_d ** 2) ** (1.0 / 3.0)
                        / u ** (2.0 / 3.0)))
    if not caps:
        if p.delta0 == 0.0:
            raise NumericalFailure(
                "undamped resonant drive has no stationary point"
            )
        caps.append(p.Omega_d ** 2 / p.delta0 ** 2)
    xcap = min(caps)
    roots = []
    for x in _real_roots(coeffs, xcap):
        x = _polish(max(x, 0.0), coeffs)
        if x < 0.0:
            continue
        if all(abs(x - y) > 1e-9 * max(1.0, x) for y in roots):
            roots.append(x)
    roots.sort()
    if not roots:
        raise NumericalFailure(
            "no real photon-number root found; with kappa_a > 0 this signals "
            "a numerical failure"
        )
    x = roots[0]
    denom = 1j * (p.delta0 + u * x) - p.kappa_a
    if denom == 0:
        raise NumericalFailure("undamped resonant drive has no stationary point")
    alpha = 1j * p.Omega_d / denom
    beta = complex(-p.g * abs(alpha) ** 2 / p.omega_m)
    residual = abs(
        (1j * p.delta0 - 1j * p.g * (beta + beta.conjugate()) - p.kappa_a) * alpha
        - 1j * p.Omega_d
    )
    return MeanFieldSolution(alpha=alpha, beta=beta, residual=float(residual),
                             branch_count=len(roots), roots=tuple(roots))


def linearize(p: PhysicalParams, m: MeanFieldSolution) -> LinearizedSystem:
    """Effective coupling and detuning of the quadratic model.

    G = |alpha| g with the phase of alpha absorbed into the cavity
    quadratures; Delta picks up the radiation-pressure shift 2 G^2 / omega_m.
    """
    G = abs(m.alpha) * p.g
    Delta = p.delta0 + 2.0 * G * G / p.omega_m
    return LinearizedSystem(omega_m=p.omega_m, Delta=Delta, G=abs(G))
