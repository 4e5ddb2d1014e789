"""Environment correlation kernels and the complex Gaussian noise process.

The exponential kernel

    alpha(t, s) = (Gamma gamma / 2) exp(-(gamma + i Omega)|t - s|),  conj for t < s

pairs with the Lorentzian spectral density J(w) = (Gamma gamma^2 / 2 pi)
/ ((w - Omega)^2 + gamma^2).  A delta-correlated variant represents the
memoryless limit: its weight Gamma enters boundary integrals with the
half-weight convention int_0^t delta(t,s) f(s) ds = f(t)/2.  Arbitrary
kernels are supported through tabulated lag samples.

Noise paths carry the conjugated process z*_t with statistics
M[z*_t] = 0, M[z*_t z*_s] = 0 and M[z*_t conj(z*_s)] = alpha(t, s).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalFailure
from .stepping import TimeGrid

__all__ = [
    "OUKernel",
    "TabulatedKernel",
    "KernelSpec",
    "NoisePath",
    "eval_kernel",
    "spectral_density",
    "sample_noise_path",
    "sample_noise_batch",
    "path_seed",
    "write_kernel_table",
    "read_kernel_table",
]


@dataclass(frozen=True)
class OUKernel:
    """Exponential correlation kernel (Ornstein-Uhlenbeck process statistics).

    Gamma : overall environmental decay rate
    gamma : inverse memory time (kernel width)
    Omega : environment central frequency
    """

    Gamma: float
    gamma: float
    Omega: float = 0.0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.Gamma < 0:
            raise ValueError("Gamma must be nonnegative")

    @property
    def mu(self):
        return complex(self.gamma, self.Omega)

    @property
    def alpha0(self):
        return 0.5 * self.Gamma * self.gamma

    def alpha(self, tau):
        """Kernel value at lag tau = t - s (array friendly)."""
        tau = np.asarray(tau, dtype=float)
        out = self.alpha0 * np.exp(-self.gamma * np.abs(tau) - 1j * self.Omega * tau)
        return out if out.ndim else complex(out)


@dataclass(frozen=True)
class TabulatedKernel:
    """Kernel given by samples on a uniform nonnegative lag grid.

    Values beyond the last tabulated lag are taken as zero (decayed
    kernel); negative lags use Hermitian symmetry.
    """

    lags: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        lags = np.asarray(self.lags, dtype=float)
        values = np.asarray(self.values, dtype=complex)
        if lags.ndim != 1 or lags.size < 2:
            raise ValueError("need at least two lag samples")
        if lags[0] != 0.0:
            raise ValueError("lag grid must start at 0")
        d = np.diff(lags)
        if np.any(d <= 0) or not np.allclose(d, d[0], rtol=1e-8):
            raise ValueError("lag grid must be uniform and increasing")
        if values.shape != lags.shape:
            raise ValueError("lags and values must have equal length")
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "values", values)

    def alpha(self, tau):
        tau = np.asarray(tau, dtype=float)
        a = np.abs(tau)
        re = np.interp(a, self.lags, self.values.real, right=0.0)
        im = np.interp(a, self.lags, self.values.imag, right=0.0)
        out = re + 1j * np.where(tau < 0, -im, im)
        return out if out.ndim else complex(out)


@dataclass(frozen=True)
class KernelSpec:
    """Dispatch wrapper over the kernel variants.

    variant : 'ou', 'markov-delta' or 'tabulated'
    weight  : delta-kernel weight Gamma (markov-delta only)
    """

    variant: str
    ou: OUKernel = None
    weight: float = 0.0
    table: TabulatedKernel = None

    def __post_init__(self):
        if self.variant not in ("ou", "markov-delta", "tabulated"):
            raise ConfigError(f"unknown kernel variant {self.variant!r}")
        if self.variant == "ou" and self.ou is None:
            raise ConfigError("ou variant requires an OUKernel")
        if self.variant == "tabulated" and self.table is None:
            raise ConfigError("tabulated variant requires a table")
        if self.variant == "markov-delta" and self.weight < 0:
            raise ConfigError("delta weight must be nonnegative")

    @classmethod
    def from_ou(cls, Gamma, gamma, Omega=0.0):
        return cls(variant="ou", ou=OUKernel(Gamma=Gamma, gamma=gamma, Omega=Omega))

    @classmethod
    def markov(cls, Gamma):
        return cls(variant="markov-delta", weight=Gamma)

    @classmethod
    def tabulated(cls, lags, values):
        return cls(variant="tabulated", table=TabulatedKernel(lags=lags, values=values))


@dataclass(frozen=True)
class NoisePath:
    """One realization of z*_t on a uniform grid."""

    grid: TimeGrid
    values: np.ndarray


def eval_kernel(k: KernelSpec, t, s):
    """Pointwise kernel value alpha(t, s).

    The delta variant has no pointwise value and is rejected.
    """
    if k.variant == "markov-delta":
        raise ValueError("the delta kernel has no pointwise value")
    tau = np.asarray(t, dtype=float) - np.asarray(s, dtype=float)
    if k.variant == "ou":
        return k.ou.alpha(tau)
    return k.table.alpha(tau)


def spectral_density(k: OUKernel, omega):
    """Lorentzian line J(w) paired with the exponential kernel."""
    omega = np.asarray(omega, dtype=float)
    out = (k.Gamma * k.gamma ** 2 / (2.0 * np.pi)) / (
        (omega - k.Omega) ** 2 + k.gamma ** 2
    )
    return out if out.ndim else float(out)


def path_seed(master_seed, index):
    """Independent per-path seed from (master seed, path index).

    Counter-based: statistics do not depend on scheduling or batch order.
    """
    return np.random.SeedSequence([int(master_seed), int(index)])


def _standard_draws(grid, seeds):
    """One column of circular standard complex normals per seed."""
    n = grid.n_points
    cols = []
    for s in seeds:
        rng = np.random.default_rng(s)
        cols.append(np.sqrt(0.5) * (rng.standard_normal(n)
                                    + 1j * rng.standard_normal(n)))
    return np.stack(cols, axis=1)


def _cholesky_factor(k, grid):
    t = grid.times()
    cov = np.asarray(eval_kernel(k, t[:, None], t[None, :]), dtype=complex)
    jitter = 1e-14 * np.trace(cov).real / len(t)
    try:
        return np.linalg.cholesky(cov + jitter * np.eye(len(t)))
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(
            "kernel covariance on this grid is not positive definite"
        ) from exc


def sample_noise_batch(k: KernelSpec, grid: TimeGrid, seeds, method="auto"):
    """Realizations of z*_t for each seed, as columns of an (n, m) array.

    Each path draws from its own counter-based generator, so any batch
    split yields the same per-path values.  method 'recursion' uses the
    exact stationary first-order update (exponential kernels only);
    'cholesky' colors the draws with a covariance factorization (any
    kernel with pointwise values).  The delta variant draws independent
    samples of variance Gamma/dt, the grid representation of
    delta-correlated noise.
    """
    if not isinstance(grid, TimeGrid):
        raise TypeError("grid must be a TimeGrid")
    n, m = grid.n_points, len(seeds)
    if k.variant == "markov-delta":
        if k.weight == 0.0:
            return np.zeros((n, m), dtype=complex)
        return np.sqrt(k.weight / grid.dt) * _standard_draws(grid, seeds)
    if k.variant == "ou" and k.ou.Gamma == 0.0:
        return np.zeros((n, m), dtype=complex)
    if method == "auto":
        method = "recursion" if k.variant == "ou" else "cholesky"
    if method == "recursion":
        if k.variant != "ou":
            raise ValueError("the recursion sampler needs an exponential kernel")
        ou = k.ou
        w = _standard_draws(grid, seeds)
        z = np.empty((n, m), dtype=complex)
        z[0] = np.sqrt(ou.alpha0) * w[0]
        decay = np.exp(-ou.mu * grid.dt)
        sigma = np.sqrt(ou.alpha0 * (1.0 - np.exp(-2.0 * ou.gamma * grid.dt)))
        for kk in range(1, n):
            z[kk] = decay * z[kk - 1] + sigma * w[kk]
        return z
    if method == "cholesky":
        return _cholesky_factor(k, grid) @ _standard_draws(grid, seeds)
    raise ValueError(f"unknown sampling method {method!r}")


def sample_noise_path(k: KernelSpec, grid: TimeGrid, seed, method="auto") -> NoisePath:
    """Draw one realization of z*_t on the grid (see sample_noise_batch)."""
    values = sample_noise_batch(k, grid, [seed], method=method)[:, 0]
    return NoisePath(grid=grid, values=values)


def write_kernel_table(path, lags, values):
    """Write lag-sampled kernel values as text: lag, re, im per row."""
    lags = np.asarray(lags, dtype=float)
    values = np.asarray(values, dtype=complex)
    data = np.column_stack([lags, values.real, values.imag])
    np.savetxt(path, data, header="lag re_alpha im_alpha")


def read_kernel_table(path) -> KernelSpec:
    """Read a kernel table written by :func:`write_kernel_table`."""
    try:
        data = np.loadtxt(path)
    except Exception as exc:
        raise ConfigError(f"cannot read kernel table {path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != 3:
        raise ConfigError("kernel table must have columns lag, re, im")
    return KernelSpec.tabulated(data[:, 0], data[:, 1] + 1j * data[:, 2])
