"""Time stepping for the heat equation with Dirichlet data.

BDF-k (k = 1..6) on uniform grids, a fine-step BDF-2 proxy for the
semi-discrete flow, and dG(0) on variable grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .fem import FeSpace, boundary_solve

__all__ = [
    "BdfTable",
    "TimeGrid",
    "BoundaryData",
    "Trajectory",
    "GridError",
    "BDF_ANGLES",
    "bdf_table",
    "bdf_solve",
    "starting_values",
    "semidiscrete_reference",
    "discrete_harmonic_extension",
    "dg0_solve",
    "split_solution",
    "evolve_homogeneous",
]

# A(theta)-stability angles in degrees, k = 1..6
BDF_ANGLES = (90.0, 90.0, 86.03, 73.35, 51.84, 17.84)


class GridError(ValueError):
    """Time grid violating the scheme's requirements."""


@dataclass(frozen=True)
class BdfTable:
    k: int
    fractions: tuple
    theta_deg: float

    @property
    def delta(self) -> np.ndarray:
        return np.array([float(f) for f in self.fractions])


def bdf_table(k: int) -> BdfTable:
    """Coefficients of ``sum_{j=1}^k (1 - zeta)^j / j`` from exact rationals."""
    if not 1 <= k <= 6:
        raise ValueError(f"BDF order must be in 1..6, got {k}")
    coef = [Fraction(0)] * (k + 1)
    for j in range(1, k + 1):
        for i in range(j + 1):
            coef[i] += Fraction(math.comb(j, i) * (-1) ** i, j)
    return BdfTable(k, tuple(coef), BDF_ANGLES[k - 1])


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Step sizes ``tau_1..tau_N``; ``times[0] = 0``.

    For graded grids the construction parameters (kappa, c, beta) are
    recorded so the dG(0) conditions can be rechecked.
    """

    steps: np.ndarray
    kappa: float | None = None
    c: float | None = None
    beta: float | None = None

    def __post_init__(self):
        s = np.asarray(self.steps, dtype=float)
        if s.ndim != 1 or len(s) == 0 or np.any(s <= 0):
            raise GridError("time steps must be positive")
        s.setflags(write=False)
        object.__setattr__(self, "steps", s)

    @classmethod
    def uniform(cls, tau: float, N: int) -> TimeGrid:
        return cls(np.full(int(N), float(tau)))

    @classmethod
    def for_horizon(cls, T: float, tau: float) -> TimeGrid:
        """Uniform grid with ``N = floor(T / tau)`` steps."""
        return cls.uniform(tau, int(math.floor(T / tau + 1e-9)))

    @classmethod
    def graded(cls, T: float, tau: float, kappa: float = 1.2, beta: float = 2.0, c: float = 1.0) -> TimeGrid:
        """Steps growing geometrically by `kappa` from about ``c * tau**beta``
        up to the uniform step, which fills the rest of ``[0, T]``.

        The sequence is built backwards from `tau` and rescaled to end at
        `T`, so neighbouring ratios are exactly `kappa` (or 1) and no step
        exceeds `tau`.
        """
        floor = c * tau**beta
        geo = []
        s = tau / kappa
        while s >= floor:
            geo.append(s)
            s /= kappa
        while True:
            G = sum(geo)
            m = max(1, math.ceil((T - G) / tau - 1e-9))
            scale = T / (G + m * tau)
            steps = [x * scale for x in reversed(geo)] + [tau * scale] * m
            if not geo or min(steps) >= floor * (1 - 1e-12):
                break
            geo.pop()
        grid = cls(np.array(steps), kappa=kappa, c=c, beta=beta)
        grid.check_variable(kappa)
        return grid

    @property
    def N(self) -> int:
        return len(self.steps)

    @property
    def times(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.steps)])

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def tau(self) -> float:
        return float(self.steps.max())

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.steps == self.steps[0]))

    def check_variable(self, kappa: float | None = None) -> None:
        kappa = self.kappa if kappa is None else kappa
        if kappa is not None and self.N > 1:
            r = self.steps[:-1] / self.steps[1:]
            if np.any(r > kappa * (1 + 1e-9)) or np.any(r < (1 - 1e-9) / kappa):
                raise GridError(f"neighbouring step ratio outside [1/{kappa}, {kappa}]")
        if self.tau > self.T / 4 * (1 + 1e-12):
            raise GridError("largest step exceeds T/4")
        if self.c is not None and self.steps.min() < self.c * self.tau**self.beta * (1 - 1e-9):
            raise GridError("smallest step below c * tau**beta")


@dataclass(frozen=True, eq=False)
class BoundaryData:
    """Boundary dof values ``g_h^n`` at the grid times.

    ``values`` has shape ``(N + 1, n_boundary)``. If `func` (``g(t, x, y)``)
    is given, `at` interpolates it at arbitrary times; otherwise `at` is the
    piecewise-linear-in-time interpolant of the step values.
    """

    space: FeSpace
    times: np.ndarray
    values: np.ndarray
    func: object = field(default=None, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (len(self.times), len(self.space.boundary_dofs)):
            raise ValueError("boundary data shape does not match grid and space")
        if not np.all(np.isfinite(v)):
            raise ValueError("boundary data must be finite")

    @classmethod
    def from_function(cls, space: FeSpace, grid: TimeGrid, g) -> BoundaryData:
        t = grid.times
        x = space.dof_coords[space.boundary_dofs]
        vals = np.array([np.broadcast_to(g(ti, x[:, 0], x[:, 1]), len(x)) for ti in t], dtype=float)
        return cls(space, t, vals, g)

    @classmethod
    def constant(cls, space: FeSpace, grid: TimeGrid, c: float = 1.0) -> BoundaryData:
        return cls(space, grid.times, np.full((grid.N + 1, len(space.boundary_dofs)), float(c)))

    def at(self, t: float) -> np.ndarray:
        if self.func is not None:
            x = self.space.dof_coords[self.space.boundary_dofs]
            return np.broadcast_to(self.func(t, x[:, 0], x[:, 1]), len(x)).astype(float)
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        if i >= len(self.times) - 1:
            return self.values[-1].copy()
        i = max(i, 0)
        s = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        return (1 - s) * self.values[i] + s * self.values[i + 1]

    def scaled(self, a: float) -> BoundaryData:
        return BoundaryData(self.space, self.times, a * self.values)

    def masked(self, keep) -> BoundaryData:
        """Copy keeping only the steps where ``keep[n]`` is true."""
        keep = np.asarray(keep, dtype=bool)
        return BoundaryData(self.space, self.times, np.where(keep[:, None], self.values, 0.0))


@dataclass(frozen=True, eq=False)
class Trajectory:
    space: FeSpace
    times: np.ndarray
    values: np.ndarray  # (n_times, n_dofs)
    scheme: str = ""

    def __len__(self):
        return len(self.times)

    def __getitem__(self, n):
        return self.values[n]

    def linf_series(self) -> np.ndarray:
        """Nodal max-norm per step (exact L-infinity for P1)."""
        return np.abs(self.values).max(axis=1)


def _march(space, k, tau, U, G, start):
    """Fill ``U[start:]`` by BDF-k with boundary rows ``G[n]``; U[:start] is history."""
    d = bdf_table(k).delta
    I, B = space.interior_dofs, space.boundary_dofs
    fac = space.shifted_factor(d[0] / tau)
    C = (d[0] / tau) * space.M_IB + space.A_IB
    for n in range(start, len(U)):
        w = sum(d[j] * U[n - j] for j in range(1, k + 1))
        rhs = -(space.M_I @ w) / tau - C @ G[n]
        U[n, I] = fac.solve(rhs)
        U[n, B] = G[n]
    return U


def starting_values(space: FeSpace, k: int, tau: float, bdata: BoundaryData, u0) -> list:
    """``u^0 = u0`` and ``u^1..u^{k-1}`` by backward Euler steps of size `tau`."""
    U = np.zeros((k, space.n_dofs))
    U[0] = u0
    for n in range(1, k):
        _march(space, 1, tau, U[: n + 1], bdata.values, n)
    return list(U)


def bdf_solve(space: FeSpace, k: int, grid: TimeGrid, bdata: BoundaryData, starting) -> Trajectory:
    """Fully discrete BDF-k solution on a uniform grid."""
    if not grid.is_uniform:
        raise GridError("BDF-k needs a uniform grid")
    if len(starting) != k:
        raise ValueError(f"BDF-{k} needs {k} starting values")
    if grid.N < k:
        raise GridError("grid has fewer steps than the BDF order")
    U = np.zeros((grid.N + 1, space.n_dofs))
    U[:k] = np.asarray(starting)
    _march(space, k, grid.steps[0], U, bdata.values, k)
    return Trajectory(space, grid.times, U, f"bdf{k}")


def semidiscrete_reference(space: FeSpace, bdata: BoundaryData, u0, T: float, substep: float, output_times=None) -> Trajectory:
    """BDF-2 at a fine `substep` (backward Euler first step) as a proxy for
    the semi-discrete flow; boundary values from ``bdata.at``."""
    t_data = np.diff(bdata.times)
    if len(t_data) and np.allclose(t_data, t_data[0]) and substep > t_data[0] / 8 * (1 + 1e-9):
        raise GridError("substep must not exceed 1/8 of the data step")
    N = int(round(T / substep))
    if abs(N * substep - T) > 1e-9 * T:
        raise GridError("T must be a multiple of the substep")
    t = substep * np.arange(N + 1)
    G = np.array([bdata.at(ti) for ti in t])
    U = np.zeros((N + 1, space.n_dofs))
    U[0] = u0
    _march(space, 1, substep, U[:2], G, 1)
    _march(space, 2, substep, U, G, 2)
    if output_times is None:
        return Trajectory(space, t, U, "semidiscrete")
    idx = np.rint(np.asarray(output_times) / substep).astype(int)
    if np.any(np.abs(idx * substep - output_times) > 1e-9):
        raise GridError("output times must be multiples of the substep")
    return Trajectory(space, t[idx], U[idx], "semidiscrete")


def evolve_homogeneous(space: FeSpace, grid: TimeGrid, u0) -> Trajectory:
    """Zero-boundary BDF-2; each run of equal steps starts with backward Euler."""
    U = np.zeros((grid.N + 1, space.n_dofs))
    U[0] = u0
    steps = grid.steps
    n = 0
    while n < grid.N:
        m = n
        while m + 1 < grid.N and steps[m + 1] == steps[n]:
            m += 1
        seg = U[n : m + 2]  # view: restart value plus the run's new levels
        G = np.zeros((len(seg), len(space.boundary_dofs)))
        _march(space, 1, steps[n], seg[:2], G, 1)
        _march(space, 2, steps[n], seg, G, 2)
        n = m + 1
    return Trajectory(space, grid.times, U, "bdf2")


def discrete_harmonic_extension(space: FeSpace, boundary_values) -> np.ndarray:
    """Field with the given boundary values and zero stiffness residual."""
    return boundary_solve(space, 0.0, np.asarray(boundary_values, dtype=float))


def dg0_solve(space: FeSpace, grid: TimeGrid, bdata: BoundaryData, u0, kappa: float | None = None) -> Trajectory:
    """dG(0) in time via the harmonic-extension splitting ``u = v + G``.

    ``G_m`` is the discrete harmonic extension of ``g_h(t_m)`` and ``G_0``
    that of the boundary trace of `u0`; ``v`` (zero trace) solves
    ``(v_m - v_{m-1}, chi) + tau_m (grad v_m, grad chi) = -(G_m - G_{m-1}, chi)``.
    """
    grid.check_variable(kappa)
    I, B = space.interior_dofs, space.boundary_dofs
    u0 = np.asarray(u0, dtype=float)
    G_prev = discrete_harmonic_extension(space, u0[B])
    v = u0 - G_prev
    U = np.zeros((grid.N + 1, space.n_dofs))
    U[0] = u0
    for m in range(1, grid.N + 1):
        tau = grid.steps[m - 1]
        G = discrete_harmonic_extension(space, bdata.values[m])
        rhs = space.M_II @ v[I] - space.M_I @ (G - G_prev)
        v = np.zeros(space.n_dofs)
        v[I] = space.shifted_factor(1.0 / tau).solve(rhs / tau)
        U[m] = v + G
        U[m, B] = bdata.values[m]
        G_prev = G
    return Trajectory(space, grid.times, U, "dg0")


def split_solution(space: FeSpace, k: int, grid: TimeGrid, bdata: BoundaryData, starting):
    """Linear split ``u = u1 + u2 + u3`` of the BDF-k solution.

    u1 carries the boundary data of the last two steps, u2 the boundary data
    of steps ``k..N-2``, u3 the starting values with zero boundary data.
    """
    N = grid.N
    n = np.arange(N + 1)
    zero_start = [np.zeros(space.n_dofs)] * k
    u1 = bdf_solve(space, k, grid, bdata.masked(n >= N - 1), zero_start)
    u2 = bdf_solve(space, k, grid, bdata.masked((n >= k) & (n <= N - 2)), zero_start)
    u3 = bdf_solve(space, k, grid, bdata.masked(np.zeros(N + 1, dtype=bool)), starting)
    return u1, u2, u3
