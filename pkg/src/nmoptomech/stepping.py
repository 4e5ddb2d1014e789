"""Uniform time grids and small stencil helpers shared by the integrators.

Every solver in this package marches on the same uniform grid with a
classical fourth-order Runge-Kutta step.  The helpers here keep the grid
bookkeeping, the trapezoidal quadrature weights, and the fourth-order
midpoint stencils in one place so that all modules discretize identically.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TimeGrid",
    "trapezoid_weights",
    "midpoint_values",
    "midpoint_derivative",
    "pairwise_sum",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k*dt for k = 0..n_steps.

    ``t_final`` is rounded to the nearest multiple of ``dt``; the stored
    value is the rounded one so that ``times()[-1] == t_final`` exactly.
    """

    dt: float
    t_final: float

    def __post_init__(self):
        if not (self.dt > 0.0):
            raise ValueError("dt must be positive")
        n = int(round(self.t_final / self.dt))
        if n < 1:
            raise ValueError("t_final must allow at least one step")
        object.__setattr__(self, "t_final", n * self.dt)

    @property
    def n_steps(self):
        return int(round(self.t_final / self.dt))

    @property
    def n_points(self):
        return self.n_steps + 1

    def times(self):
        return np.arange(self.n_points) * self.dt

    def refine(self, factor=2):
        """Grid with the same span and ``factor`` times smaller step."""
        return TimeGrid(self.dt / factor, self.t_final)

    def matches(self, other):
        return (
            abs(self.dt - other.dt) <= 1e-12 * self.dt
            and self.n_steps == other.n_steps
        )


def trapezoid_weights(n, h):
    """Composite trapezoid weights for ``n`` equidistant nodes of spacing ``h``.

    A single node gets weight zero (empty interval).
    """
    if n < 1:
        raise ValueError("need at least one node")
    w = np.full(n, h)
    if n == 1:
        w[0] = 0.0
    else:
        w[0] = 0.5 * h
        w[-1] = 0.5 * h
    return w


# Cubic Lagrange stencils on four consecutive nodes, evaluated half a step
# past the second node (interior) or half a step past the first/last node
# (one-sided ends).  Exact for cubics, so the error is O(h^4).
_MID_INTERIOR = np.array([-1.0, 9.0, 9.0, -1.0]) / 16.0
_MID_LEFT = np.array([5.0, 15.0, -5.0, 1.0]) / 16.0
_MID_RIGHT = np.array([1.0, -5.0, 15.0, 5.0]) / 16.0

_DMID_INTERIOR = np.array([1.0, -27.0, 27.0, -1.0]) / 24.0
_DMID_LEFT = np.array([-23.0, 21.0, 3.0, -1.0]) / 24.0
_DMID_RIGHT = np.array([1.0, -3.0, -21.0, 23.0]) / 24.0


def _apply_mid_stencil(values, interior, left, right):
    v = np.asarray(values)
    n = v.shape[0]
    if n < 4:
        raise ValueError("midpoint stencils need at least four nodes")
    out_shape = (n - 1,) + v.shape[1:]
    out = np.empty(out_shape, dtype=v.dtype)
    out[0] = np.tensordot(left, v[0:4], axes=(0, 0))
    out[-1] = np.tensordot(right, v[n - 4 : n], axes=(0, 0))
    if n > 2:
        # windows v[k-1..k+2] for midpoints k = 1..n-3
        stacked = np.stack([v[0 : n - 3], v[1 : n - 2], v[2 : n - 1], v[3:n]])
        out[1:-1] = np.tensordot(interior, stacked, axes=(0, 0))
    return out


def midpoint_values(values):
    """Fourth-order interpolation of a grid series onto step midpoints.

    ``values`` has the time index first; the result has length one less
    along that axis.
    """
    return _apply_mid_stencil(values, _MID_INTERIOR, _MID_LEFT, _MID_RIGHT)


def midpoint_derivative(values, h):
    """Fourth-order derivative of a grid series at step midpoints."""
    return _apply_mid_stencil(values, _DMID_INTERIOR, _DMID_LEFT, _DMID_RIGHT) / h


def pairwise_sum(values, axis=0):
    """Deterministic pairwise reduction along ``axis``.

    The summation tree depends only on the length of the axis, never on
    chunking or scheduling, so ensemble averages are bit-reproducible.
    """
    v = np.asarray(values)
    v = np.moveaxis(v, axis, 0)
    if v.shape[0] == 0:
        return np.zeros(v.shape[1:], dtype=v.dtype)
    while v.shape[0] > 1:
        n = v.shape[0]
        even = v[0 : n - (n % 2) : 2]
        odd = v[1 : n - (n % 2) : 2]
        head = even + odd
        if n % 2:
            v = np.concatenate([head, v[-1:]], axis=0)
        else:
            v = head
    return v[0]
