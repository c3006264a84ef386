"""Generating functions, BDF symbols and contour quadrature.

Conventions: ``zeta = exp(-tau z)``; the BDF-k symbol is
``delta_tau(zeta) = delta(zeta) / tau`` with
``delta(zeta) = sum_{j=1}^k (1 - zeta)^j / j``. Sector contours
``Gamma_{theta,sigma}^tau`` consist of the arc ``|z| = 1/sigma``,
``|arg z| <= theta`` and the two rays ``|arg z| = theta`` cut at
``|Im z| = pi / tau``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_legendre

from .fem import FeSpace, boundary_solve
from .stepper import BDF_ANGLES

__all__ = [
    "SectorSample",
    "SymbolReport",
    "QuadratureError",
    "bdf_symbol",
    "euler_symbol",
    "symbol_defect",
    "sector_sample",
    "sector_bounds_check",
    "consistency_slope",
    "ztransform",
    "laplace_hat_piecewise_linear",
    "hat_factor",
    "solution_map_M",
    "solution_map_L",
    "resolvent_linf_norm",
    "solution_map_difference_ratio",
    "contour_reconstruct",
    "write_sector_csv",
]


class QuadratureError(RuntimeError):
    """Contour quadrature did not converge."""


def bdf_symbol(k: int, z, tau: float):
    """``delta(exp(-tau z)) / tau`` (Horner in ``w = 1 - zeta``, via expm1)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    w = -np.expm1(-tau * np.asarray(z, dtype=complex))
    acc = np.zeros_like(w)
    for j in range(k, 0, -1):
        acc = (acc + 1.0 / j) * w
    return acc / tau if np.ndim(z) else complex(acc / tau)


def symbol_defect(k: int, z, tau: float):
    """``delta_tau(e^{-tau z}) - z`` without cancellation.

    Since ``sum_{j>=1} w^j / j = tau z`` for ``w = 1 - e^{-tau z}``, the
    defect is ``-(1/tau) sum_{j>k} w^j / j``; the tail series is used where
    ``|w| < 1/2`` and the direct difference elsewhere.
    """
    z = np.asarray(z, dtype=complex)
    w = -np.expm1(-tau * z)
    small = np.abs(w) < 0.5
    tail = np.zeros_like(w)
    ws = np.where(small, w, 0.0)
    p = ws**k
    for j in range(k + 1, k + 80):
        p = p * ws
        tail += p / j
    out = np.where(small, -tail / tau, bdf_symbol(k, z, tau) - z)
    return out if np.ndim(z) else complex(out)


def euler_symbol(z, tau: float):
    return bdf_symbol(1, z, tau)


@dataclass(frozen=True, eq=False)
class SectorSample:
    """Points on the upper and lower halves of a truncated sector contour."""

    theta: float
    sigma: float
    tau: float
    points: np.ndarray
    weights: np.ndarray


def sector_sample(theta: float, sigma: float, tau: float, n_points: int) -> SectorSample:
    """`n_points` per half contour: a quarter on the arc, the rest on the ray
    (geometrically spaced, ray endpoint included); weights are arc lengths."""
    R = 1.0 / sigma
    r_max = math.pi / (tau * math.sin(theta))
    n_arc = max(2, n_points // 4)
    n_ray = max(2, n_points - n_arc) if r_max > R else 0
    phi = np.linspace(0.0, theta, n_arc)
    arc = R * np.exp(1j * phi)
    w_arc = np.full(n_arc, R * theta / n_arc)
    if n_ray:
        r = np.geomspace(R, r_max, n_ray + 1)[1:]
        ray = r * np.exp(1j * theta)
        w_ray = np.diff(np.concatenate([[R], r]))
    else:
        ray, w_ray = np.array([], dtype=complex), np.array([])
    upper = np.concatenate([arc, ray])
    w = np.concatenate([w_arc, w_ray])
    pts = np.concatenate([upper, np.conj(upper[1:])])
    wts = np.concatenate([w, w[1:]])
    return SectorSample(theta, sigma, tau, pts, wts)


@dataclass
class SymbolReport:
    k: int
    theta: float
    eps: float
    rows: list = field(default_factory=list)  # one dict per tau
    points: list = field(default_factory=list)  # per-point records for CSV

    @property
    def C1(self):
        return np.array([r["C1"] for r in self.rows])

    @property
    def C2(self):
        return np.array([r["C2"] for r in self.rows])

    @property
    def taus(self):
        return np.array([r["tau"] for r in self.rows])

    @property
    def C_cons(self):
        return np.array([r["C_cons"] for r in self.rows])

    @property
    def max_arg(self) -> float:
        return max(r["max_arg"] for r in self.rows)

    @property
    def violations(self) -> int:
        return sum(r["violations"] for r in self.rows)

    @property
    def fitted_eps(self) -> float:
        """Smallest margin for which every sampled symbol lies in the sector."""
        return max(0.0, self.max_arg - (math.pi - math.radians(BDF_ANGLES[self.k - 1])))

    def spread(self) -> tuple:
        return float(self.C1.max() / self.C1.min()), float(self.C2.max() / self.C2.min())


def sector_bounds_check(k: int, theta: float, tau_list, n_points: int = 64, sigma: float = 1.0, eps: float = 0.05) -> SymbolReport:
    """Two-sided bounds, consistency ratio and sector membership of the
    BDF symbol on sampled contours, one row per step size."""
    if not math.pi / 2 < theta < math.pi:
        raise ValueError("theta must lie in (pi/2, pi)")
    if n_points < 2:
        raise ValueError("empty sample")
    limit = math.pi - math.radians(BDF_ANGLES[k - 1]) + eps
    rep = SymbolReport(k, theta, eps)
    for tau in tau_list:
        smp = sector_sample(theta, sigma, tau, n_points)
        z = smp.points
        s = bdf_symbol(k, z, tau)
        ratio = np.abs(s) / np.abs(z)
        defect = np.abs(symbol_defect(k, z, tau))
        cons = defect / (tau**k * np.abs(z) ** (k + 1))
        arg = np.abs(np.angle(s))
        bad = arg > limit
        C1, C2 = float(ratio.min()), float(ratio.max())
        rep.rows.append(
            dict(
                tau=float(tau),
                C1=C1,
                C2=C2,
                C_cons=float(cons.max()),
                max_arg=float(arg.max()),
                violations=int(bad.sum()),
                consistency_max=float((defect / np.abs(z) ** (k + 1)).max()),
            )
        )
        for zi, si, ri, ci in zip(z, s, ratio, cons):
            rep.points.append(
                dict(
                    k=k,
                    tau=float(tau),
                    theta=theta,
                    z_re=zi.real,
                    z_im=zi.imag,
                    abs_symbol=abs(si),
                    arg_symbol=float(np.angle(si)),
                    bound_ratio_low=ri / C1,
                    bound_ratio_high=ri / C2,
                    consistency_ratio=ci,
                )
            )
    return rep


def consistency_slope(report: SymbolReport) -> float:
    """Log-log slope of ``max_z |delta_tau - z| / |z|^{k+1}`` against tau."""
    t = np.log(report.taus)
    c = np.log([r["consistency_max"] for r in report.rows])
    return float(np.polyfit(t, c, 1)[0])


def write_sector_csv(report: SymbolReport, path) -> None:
    cols = [
        "k", "tau", "theta", "z_re", "z_im", "abs_symbol", "arg_symbol",
        "bound_ratio_low", "bound_ratio_high", "consistency_ratio",
    ]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for row in report.points:
            w.writerow({c: repr(float(row[c])) if c != "k" else row[c] for c in cols})


def ztransform(seq, zeta):
    """Horner evaluation of ``sum_n seq[n] * zeta**n`` (axis 0 is n)."""
    seq = np.asarray(seq)
    acc = np.zeros(seq.shape[1:], dtype=np.result_type(seq, complex))
    for g in seq[::-1]:
        acc = acc * zeta + g
    return acc


def hat_factor(z, tau):
    """``(exp(-tau z) + exp(tau z) - 2) / (z^2 tau)``."""
    z = np.asarray(z, dtype=complex)
    return (np.exp(-tau * z) + np.exp(tau * z) - 2.0) / (z * z * tau)


def laplace_hat_piecewise_linear(seq, tau: float, z):
    """Laplace transform of the continuous piecewise-linear function with
    nodal values ``seq[n]`` at ``t_n = n tau`` (zero after the last node),
    integrated exactly interval by interval."""
    z = complex(z)
    if z.real <= 0:
        raise ValueError("Re z must be positive")
    seq = np.asarray(seq)
    ext = np.concatenate([seq, np.zeros((1,) + seq.shape[1:])], axis=0)
    e = np.exp(-z * tau)
    E0 = (1.0 - e) / z
    E1 = (1.0 - e * (1.0 + z * tau)) / (z * z)
    n = np.arange(len(ext) - 1)
    shift = np.exp(-z * tau * n).reshape((-1,) + (1,) * (seq.ndim - 1))
    a, b = ext[:-1], ext[1:]
    return np.sum(shift * (a * E0 + (b - a) * (E1 / tau)), axis=0)


def solution_map_M(space: FeSpace, k: int, tau: float, z, f_boundary):
    """Boundary-to-solution map with BDF-k symbol shift ``delta_tau(e^{-tau z})``."""
    return boundary_solve(space, bdf_symbol(k, z, tau), f_boundary)


def solution_map_L(space: FeSpace, tau: float, z, f_boundary):
    """Boundary-to-solution map with backward Euler shift ``(1 - e^{-tau z})/tau``."""
    return boundary_solve(space, euler_symbol(z, tau), f_boundary)


def resolvent_linf_norm(space: FeSpace, z, cap: int = 20000, block: int = 512) -> float:
    """Max absolute row sum of ``z (z M0 + A0)^{-1} M0`` on the interior dofs.

    For P1 this is the exact L-infinity operator norm of ``z (z - Delta_h)^{-1}``
    on the zero-trace space; for P2 it is a nodal (lattice) proxy.
    """
    z = complex(z)
    if z == 0:
        raise ValueError("z = 0 is excluded")
    n = len(space.interior_dofs)
    if n > cap:
        raise ValueError(f"{n} interior dofs exceed the dense row-sum cap {cap}")
    fac = space.shifted_factor(z)
    M = space.M_II
    rows = np.zeros(n)
    for s in range(0, n, block):
        cols = M[:, s : s + block].toarray()
        rows += np.abs(z * fac.solve(cols.astype(complex))).sum(axis=1)
    return float(rows.max())


def solution_map_difference_ratio(space: FeSpace, k: int, tau: float, z, probes) -> float:
    """``max_probe ||(M - L) f||_inf / (tau |z| ||f||_inf)`` (nodal max)."""
    probes = np.asarray(probes, dtype=float)
    if probes.ndim == 1:
        probes = probes[:, None]
    d = solution_map_M(space, k, tau, z, probes) - solution_map_L(space, tau, z, probes)
    num = np.abs(d).max(axis=0)
    den = tau * abs(z) * np.abs(probes).max(axis=0)
    return float(np.max(num / den))


def _contour_nodes(theta, sigma, tau, n):
    """Gauss-Legendre nodes/weights (dz) on the upper half contour."""
    R = 1.0 / sigma
    r_max = math.pi / (tau * math.sin(theta))
    x, w = roots_legendre(n)
    # arc 0 -> theta
    phi = 0.5 * theta * (x + 1.0)
    z_arc = R * np.exp(1j * phi)
    dz_arc = 0.5 * theta * w * 1j * z_arc
    nodes, weights = [z_arc], [dz_arc]
    if r_max > R:
        # ray split into panels of geometrically growing length
        n_pan = max(1, int(math.ceil(math.log2(r_max / R))))
        edges = np.geomspace(R, r_max, n_pan + 1)
        for a, b in zip(edges[:-1], edges[1:]):
            r = a + 0.5 * (b - a) * (x + 1.0)
            nodes.append(r * np.exp(1j * theta))
            weights.append(0.5 * (b - a) * w * np.exp(1j * theta))
    return np.concatenate(nodes), np.concatenate(weights)


def contour_reconstruct(
    space: FeSpace,
    k: int,
    tau: float,
    bdata,
    N: int,
    theta: float = 0.55 * math.pi,
    sigma: float | None = None,
    n_points: int = 16,
    tol: float = 1e-9,
    max_doublings: int = 8,
):
    """Step-`N` value of the zero-start BDF-k solution with boundary data
    ``bdata[n]`` from the inverse generating-function integral
    ``(tau / 2 pi i) int M_h(e^{-tau z}) g(e^{-tau z}) e^{t_N z} dz``.

    Conjugate symmetry reduces the integral to ``(tau/pi) Im`` of the upper
    half. `n_points` Gauss-Legendre nodes per panel are doubled until two
    successive results agree to `tol` in the nodal max norm.
    """
    g = np.asarray(getattr(bdata, "values", bdata), dtype=float)
    tN = N * tau
    sigma = tN if sigma is None else sigma
    if sigma <= tau / math.pi:
        raise ValueError("sigma must exceed tau / pi")
    g = g[: N + 1]
    if np.any(g[:k] != 0):
        raise ValueError("boundary data must vanish on the first k steps")

    def evaluate(n):
        z, dz = _contour_nodes(theta, sigma, tau, n)
        acc = np.zeros(space.n_dofs, dtype=complex)
        for zi, wi in zip(z, dz):
            zeta = np.exp(-tau * zi)
            gz = ztransform(g, zeta)
            u = solution_map_M(space, k, tau, zi, gz)
            acc += u * (np.exp(tN * zi) * wi)
        return (tau / math.pi) * acc.imag

    prev = evaluate(n_points)
    n = n_points
    for _ in range(max_doublings):
        n *= 2
        cur = evaluate(n)
        if np.max(np.abs(cur - prev)) <= tol:
            return cur
        prev = cur
    raise QuadratureError(f"contour quadrature not converged with {n} nodes per panel")
