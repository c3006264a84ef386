"""Quadrature rules on triangles and disks."""

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@lru_cache(maxsize=None)
def triangle_rule(degree: int):
    """Collapsed Gauss-Jacobi rule exact for polynomials of total `degree`.

    Returns barycentric points ``(n, 3)`` and weights summing to 1, so that
    ``area * sum(w * f(points))`` integrates over a triangle.
    """
    n = degree // 2 + 1
    s, ws = roots_jacobi(n, 1.0, 0.0)  # weight (1 - s) on [-1, 1]
    u = 0.5 * (1.0 + s)
    wu = ws / 4.0
    v, wv = roots_legendre(n)
    v = 0.5 * (1.0 + v)
    wv = 0.5 * wv
    x = np.repeat(u, n)
    y = np.outer(1.0 - u, v).ravel()
    w = np.outer(wu, wv).ravel() * 2.0
    pts = np.stack([1.0 - x - y, x, y], axis=1)
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w


@lru_cache(maxsize=None)
def disk_rule(n_radial: int, n_angular: int):
    """Polar rule on the unit disk: Gauss-Legendre in r, trapezoid in angle.

    Exact for ``r**a * trig(b)`` with ``a <= 2*n_radial - 2`` and
    ``b < n_angular``. Returns points ``(m, 2)`` and weights summing to pi.
    """
    r, wr = roots_legendre(n_radial)
    r = 0.5 * (1.0 + r)
    wr = 0.5 * wr * r
    phi = 2.0 * np.pi * np.arange(n_angular) / n_angular
    pts = np.stack(
        [np.outer(r, np.cos(phi)).ravel(), np.outer(r, np.sin(phi)).ravel()], axis=1
    )
    w = np.outer(wr, np.full(n_angular, 2.0 * np.pi / n_angular)).ravel()
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w
