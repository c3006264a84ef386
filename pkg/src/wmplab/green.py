"""Discrete and reference parabolic Green's functions.

The discrete Green's function starts from the discrete delta
``delta_{h,x0}`` on the coarse zero-trace space; the reference starts from
the L2 projection of the regularized delta on a nested refinement (two
levels finer by default). Both are advanced by zero-boundary BDF-2 on a
shared two-phase time grid: ten steps of ``h^2/2`` resolve the initial
layer, then steps of about ``h`` run to ``T``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .fem import (
    FeSpace,
    RegularizedDelta,
    construct_regularized_delta,
    discrete_delta,
    l2_project,
    norm,
    prolongation,
)
from .quadrature import triangle_rule
from .mesh import AnnulusDecomposition, Mesh, MeshError, Region, boundary_band, domain_mesh, refine_uniform
from .stepper import TimeGrid, Trajectory, evolve_homogeneous

__all__ = [
    "GreenRun",
    "BandMeasurement",
    "green_grid",
    "green_discrete",
    "green_reference",
    "green_run",
    "band_measurement",
    "band_estimate",
    "l1_bounds",
    "time_derivative_l1",
    "annulus_profile",
    "write_green_csv",
    "write_annulus_csv",
]


def green_grid(h: float, T: float = 1.0, tau: float | None = None, n_layer: int = 10) -> TimeGrid:
    """`n_layer` steps of ``h^2/2``, then equal steps of at most `tau` (default h) up to `T`."""
    tau = h if tau is None else tau
    small = 0.5 * h * h
    if n_layer * small >= T:
        raise ValueError("initial layer exceeds the horizon")
    rest = T - n_layer * small
    n = max(1, math.ceil(rest / tau - 1e-9))
    return TimeGrid(np.concatenate([np.full(n_layer, small), np.full(n, rest / n)]))


def green_discrete(space: FeSpace, x0, tau: float | None = None, T: float = 1.0, grid: TimeGrid | None = None) -> Trajectory:
    """``Gamma_h(t, ., x0)`` from ``delta_{h,x0}``."""
    grid = green_grid(space.mesh.width, T, tau) if grid is None else grid
    tr = evolve_homogeneous(space, grid, discrete_delta(space, x0))
    return Trajectory(space, tr.times, tr.values, "green")


def green_reference(fine_space: FeSpace, delta_tilde: RegularizedDelta, tau: float | None = None, T: float = 1.0, grid: TimeGrid | None = None) -> Trajectory:
    """Fine-space proxy of the regularized Green's function ``Gamma``."""
    grid = green_grid(fine_space.mesh.width, T, tau) if grid is None else grid
    tr = evolve_homogeneous(fine_space, grid, l2_project(fine_space, delta_tilde))
    return Trajectory(fine_space, tr.times, tr.values, "green-reference")


@dataclass(frozen=True, eq=False)
class GreenRun:
    """Coarse ``Gamma_h`` and reference ``Gamma`` on shared output times.

    `band` is the set of fine elements within distance `h` (the coarse
    nominal width) of the boundary.
    """

    x0: np.ndarray
    coarse: Trajectory
    reference: Trajectory
    band: Region
    h: float

    def __post_init__(self):
        if len(self.coarse.times) != len(self.reference.times) or not np.allclose(
            self.coarse.times, self.reference.times, rtol=0, atol=1e-14
        ):
            raise ValueError("coarse and reference trajectories need the same output times")
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))

    @property
    def times(self) -> np.ndarray:
        return self.coarse.times

    @property
    def fine_space(self) -> FeSpace:
        return self.reference.space

    def prolonged(self) -> np.ndarray:
        """Coarse trajectory embedded in the fine space, (n_times, n_fine)."""
        P = prolongation(self.coarse.space, self.reference.space)
        return (P @ self.coarse.values.T).T


def green_run(domain, x0, level: int, extra: int = 2, r: int = 1, T: float = 1.0, tau: float | None = None, concurrent: bool = True) -> GreenRun:
    """Coarse and reference Green's functions on `domain` at h-level `level`.

    `domain` is a name accepted by `domain_mesh` or a coarse `Mesh`.
    """
    coarse_mesh = domain if isinstance(domain, Mesh) else domain_mesh(domain, level)
    fine_mesh = coarse_mesh
    for _ in range(extra):
        fine_mesh = refine_uniform(fine_mesh)
    coarse, fine = FeSpace(coarse_mesh, r), FeSpace(fine_mesh, r)
    h = coarse_mesh.width
    grid = green_grid(h, T, tau)
    dt = construct_regularized_delta(coarse_mesh, x0, r)
    if concurrent:
        with ThreadPoolExecutor(max_workers=2) as ex:
            a = ex.submit(green_discrete, coarse, x0, None, T, grid)
            b = ex.submit(green_reference, fine, dt, None, T, grid)
            gh, gref = a.result(), b.result()
    else:
        gh = green_discrete(coarse, x0, grid=grid)
        gref = green_reference(fine, dt, grid=grid)
    band = boundary_band(fine_mesh, h)
    return GreenRun(np.asarray(x0, dtype=float), gh, gref, Region(band.element_ids, "D_h band"), h)


def _trapezoid_weights(t):
    dt = np.diff(t)
    w = np.zeros(len(t))
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


@dataclass(frozen=True)
class BandMeasurement:
    """``h^-1 int_0^T ||grad F||_{L1(D_h)} dt`` and its per-time series.

    ``tail`` is the exponential extrapolation of the integral beyond ``T``
    (``h^-1 g(T) / lam``) and is never included in ``value``.
    """

    times: np.ndarray
    grad_l1_band: np.ndarray
    cumulative: np.ndarray
    value: float
    tail: float
    decay_rate: float


def band_measurement(run: GreenRun, n_fit: int = 4) -> BandMeasurement:
    fine = run.fine_space
    F = run.prolonged() - run.reference.values
    g = np.array([norm(fine, f, "gradL1", run.band) for f in F])
    w = _trapezoid_weights(run.times)
    increments = np.concatenate([[0.0], 0.5 * np.diff(run.times) * (g[1:] + g[:-1])])
    cumulative = np.cumsum(increments) / run.h
    value = float(np.dot(w, g) / run.h)
    # exponential fit on the last n_fit samples
    tt, gg = run.times[-n_fit:], g[-n_fit:]
    lam, tail = math.nan, math.nan
    if len(tt) >= 2 and np.all(gg > 0):
        slope = np.polyfit(tt, np.log(gg), 1)[0]
        if slope < 0:
            lam = -float(slope)
            tail = float(g[-1] / lam / run.h)
    return BandMeasurement(run.times.copy(), g, cumulative, value, tail, lam)


def band_estimate(run: GreenRun) -> float:
    """``h^-1 ||grad(Gamma_h - Gamma)||_{L1((0,T) x D_h)}`` by the trapezoid rule."""
    return band_measurement(run).value


def l1_bounds(traj: Trajectory) -> dict:
    """Per-time ``||Gamma(t)||_{L1}`` and ``t ||d_t Gamma(t)||_{L1}``.

    The time derivative is the backward difference quotient, so the second
    series starts at the first step.
    """
    sp = traj.space
    l1 = np.array([norm(sp, u, "L1") for u in traj.values])
    t = traj.times
    dq = np.array(
        [norm(sp, (traj.values[n] - traj.values[n - 1]) / (t[n] - t[n - 1]), "L1") for n in range(1, len(t))]
    )
    return {"times": t, "l1": l1, "t_dt_l1": np.concatenate([[math.nan], t[1:] * dq]), "dt_l1": np.concatenate([[math.nan], dq])}


def time_derivative_l1(run: GreenRun) -> float:
    """``||d_t F||_{L1((0,T) x Omega)}`` from difference quotients."""
    F = run.prolonged() - run.reference.values
    return float(sum(norm(run.fine_space, F[n] - F[n - 1], "L1") for n in range(1, len(F))))


def annulus_profile(run: GreenRun, decomposition: AnnulusDecomposition) -> list:
    """Per-annulus sup and gradient L2 norms of the coarse ``Gamma_h``.

    An element ``e`` at output time ``t`` belongs to ``Q_j`` when
    ``d_j <= max(|b_e - x0|, sqrt(t)) < 2 d_j`` (``b_e`` the barycenter);
    the last row ("star") collects ``max(...) < d_star``. Gradient norms
    integrate in time with trapezoid weights. ``count`` is the number of
    elements in the spatial annulus, so counts sum to the element total.
    """
    if not np.allclose(decomposition.x0, run.x0):
        raise ValueError("decomposition anchor differs from the run anchor")
    sp = run.coarse.space
    mesh = sp.mesh
    if sum(len(r) for r in decomposition.regions) + len(decomposition.star_region) != mesh.n_triangles:
        raise MeshError("decomposition was built on a different mesh")
    rho = np.linalg.norm(mesh.barycenters - run.x0, axis=1)
    t = run.times
    w = _trapezoid_weights(t)
    lat = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [0.5, 0.5, 0], [0, 0.5, 0.5], [0.5, 0, 0.5], [1 / 3, 1 / 3, 1 / 3]])
    sup_e = np.zeros((len(t), mesh.n_triangles))
    grad2_e = np.zeros((len(t), mesh.n_triangles))
    lam, wq = triangle_rule(max(0, 2 * sp.degree - 2))
    for n, u in enumerate(run.coarse.values):
        sup_e[n] = np.abs(sp.element_values(u, lat)).max(axis=1)
        gr = sp.element_gradients(u, lam)
        grad2_e[n] = mesh.areas * (np.sum(gr * gr, axis=-1) @ wq)
    m = np.maximum(rho[None, :], np.sqrt(t)[:, None])
    idx = decomposition.index_of(m)
    rows = []
    labels = list(range(decomposition.J_star + 1)) + ["star"]
    for j in labels:
        key = -1 if j == "star" else j
        mask = idx == key
        if j == "star":
            d = decomposition.star_radius
            count = len(decomposition.star_region)
        else:
            d = float(decomposition.radii[j])
            count = len(decomposition.regions[j])
        empty = not mask.any()
        rows.append(
            dict(
                j=j,
                d_j=d,
                sup_norm=0.0 if empty else float(sup_e[mask].max()),
                grad_l2=float(np.sqrt(np.sum(w[:, None] * grad2_e * mask))),
                count=count,
                empty=empty,
            )
        )
    return rows


def write_green_csv(run: GreenRun, path) -> None:
    meas = band_measurement(run)
    lc = l1_bounds(run.coarse)["l1"]
    lr = l1_bounds(run.reference)["l1"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "l1_coarse", "l1_ref", "grad_l1_band", "cumulative_band_estimate"])
        for row in zip(run.times, lc, lr, meas.grad_l1_band, meas.cumulative):
            w.writerow([repr(float(x)) for x in row])


def write_annulus_csv(rows, path) -> None:
    cols = ["j", "d_j", "sup_norm", "grad_l2", "count", "empty"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({c: r[c] for c in cols})
