"""Lagrange finite elements of degree 1 and 2 on triangle meshes.

Fields are plain numpy vectors indexed by the degrees of freedom of a
`FeSpace`. Dirichlet conditions are imposed by splitting the dofs into
interior and boundary blocks; operators on the zero-trace subspace are the
interior blocks of the assembled mass and stiffness matrices.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .mesh import Mesh, MeshError, Region
from .quadrature import disk_rule, triangle_rule

__all__ = [
    "FeSpace",
    "RegularizedDelta",
    "SingularSystemError",
    "build_space",
    "assemble_mass",
    "assemble_stiffness",
    "interpolate",
    "l2_project",
    "ritz_project",
    "discrete_delta",
    "construct_regularized_delta",
    "norm",
    "shifted_solve",
    "boundary_solve",
    "prolongation",
    "factorize",
]


class SingularSystemError(ArithmeticError):
    """A factorization produced a (numerically) vanishing pivot."""


class _Factor:
    """Sparse LU with a pivot-ratio guard; handles empty systems."""

    def __init__(self, K, rtol=1e-13):
        self.n = K.shape[0]
        self.dtype = K.dtype
        if self.n == 0:
            self.lu = None
            return
        self.lu = splu(sp.csc_matrix(K))
        d = np.abs(self.lu.U.diagonal())
        if not np.all(np.isfinite(d)) or d.min() <= rtol * d.max():
            raise SingularSystemError(
                f"near-singular factorization (pivot ratio {d.min() / d.max():.2e})"
            )

    def solve(self, b):
        b = np.asarray(b)
        if self.n == 0:
            return np.zeros(b.shape, dtype=np.result_type(b, self.dtype))
        if np.iscomplexobj(b) and not np.issubdtype(self.dtype, np.complexfloating):
            return self.lu.solve(np.ascontiguousarray(b.real)) + 1j * self.lu.solve(
                np.ascontiguousarray(b.imag)
            )
        return self.lu.solve(np.ascontiguousarray(b.astype(np.result_type(b, self.dtype))))


def factorize(K) -> _Factor:
    return _Factor(K)


def _shape(degree, lam):
    """Basis values (m, nloc) and barycentric derivatives (m, nloc, 3)."""
    lam = np.atleast_2d(lam)
    m = len(lam)
    if degree == 1:
        vals = lam.copy()
        dl = np.broadcast_to(np.eye(3), (m, 3, 3)).copy()
        return vals, dl
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    vals = np.stack(
        [l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), 4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0],
        axis=1,
    )
    dl = np.zeros((m, 6, 3))
    for i in range(3):
        dl[:, i, i] = 4 * lam[:, i] - 1
        j = (i + 1) % 3
        dl[:, 3 + i, i] = 4 * lam[:, j]
        dl[:, 3 + i, j] = 4 * lam[:, i]
    return vals, dl


class FeSpace:
    """Continuous piecewise polynomials of degree 1 or 2 on `mesh`.

    Dofs are the mesh nodes, followed (degree 2) by the edge midpoints in the
    mesh's edge order. Local dofs per element: three vertices, then the
    midpoints of edges (0,1), (1,2), (2,0).
    """

    def __init__(self, mesh: Mesh, degree: int = 1):
        if degree not in (1, 2):
            raise ValueError(f"unsupported degree {degree}; expected 1 or 2")
        self.mesh = mesh
        self.degree = degree
        if degree == 1:
            self.element_dofs = np.array(mesh.triangles)
            self.dof_coords = np.array(mesh.nodes)
        else:
            self.element_dofs = np.hstack([mesh.triangles, mesh.n_nodes + mesh.element_edges])
            mids = mesh.nodes[mesh.edges].mean(axis=1)
            self.dof_coords = np.vstack([mesh.nodes, mids])
        on_bnd = np.zeros(len(self.dof_coords), dtype=bool)
        on_bnd[mesh.boundary_nodes] = True
        if degree == 2:
            on_bnd[mesh.n_nodes + np.flatnonzero(mesh.edge_counts == 1)] = True
        self.boundary_dofs = np.flatnonzero(on_bnd)
        self.interior_dofs = np.flatnonzero(~on_bnd)
        self._shift_cache: OrderedDict = OrderedDict()
        self._cache_size = 64

    def __repr__(self):
        return f"FeSpace(P{self.degree}, ndof={self.n_dofs}, level={self.mesh.level})"

    @property
    def n_dofs(self) -> int:
        return len(self.dof_coords)

    @property
    def n_local(self) -> int:
        return self.element_dofs.shape[1]

    @cached_property
    def grad_lambda(self) -> np.ndarray:
        """(T, 3, 2) gradients of the barycentric coordinates."""
        p = self.mesh.nodes[self.mesh.triangles]
        twoA = 2.0 * self.mesh.areas
        g = np.empty((len(p), 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            g[:, i, 0] = (p[:, j, 1] - p[:, k, 1]) / twoA
            g[:, i, 1] = (p[:, k, 0] - p[:, j, 0]) / twoA
        return g

    # -- assembly ---------------------------------------------------------

    def _coo(self, local):
        ed = self.element_dofs
        n = self.n_local
        rows = np.repeat(ed, n, axis=1).ravel()
        cols = np.tile(ed, (1, n)).ravel()
        A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(self.n_dofs, self.n_dofs))
        return A.tocsr()

    @cached_property
    def mass(self) -> sp.csr_matrix:
        lam, w = triangle_rule(2 * self.degree)
        vals, _ = _shape(self.degree, lam)
        ref = np.einsum("q,qi,qj->ij", w, vals, vals)
        return self._coo(self.mesh.areas[:, None, None] * ref[None])

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        lam, w = triangle_rule(max(2 * self.degree - 2, 0))
        _, dl = _shape(self.degree, lam)
        grads = np.einsum("qnj,tjd->tqnd", dl, self.grad_lambda)
        local = np.einsum("q,tqid,tqjd->tij", w, grads, grads) * self.mesh.areas[:, None, None]
        return self._coo(local)

    def _block(self, A, rows, cols):
        return A[rows][:, cols].tocsc()

    @cached_property
    def M_II(self):
        return self._block(self.mass, self.interior_dofs, self.interior_dofs)

    @cached_property
    def M_IB(self):
        return self._block(self.mass, self.interior_dofs, self.boundary_dofs)

    @cached_property
    def A_II(self):
        return self._block(self.stiffness, self.interior_dofs, self.interior_dofs)

    @cached_property
    def A_IB(self):
        return self._block(self.stiffness, self.interior_dofs, self.boundary_dofs)

    @cached_property
    def M_I(self):
        """Interior rows of the full mass matrix."""
        return self.mass[self.interior_dofs].tocsr()

    def shifted_factor(self, shift) -> _Factor:
        """Cached factorization of ``shift * M_II + A_II``."""
        key = complex(shift)
        if key in self._shift_cache:
            self._shift_cache.move_to_end(key)
            return self._shift_cache[key]
        s = key.real if key.imag == 0 else key
        fac = _Factor(s * self.M_II + self.A_II)
        self._shift_cache[key] = fac
        if len(self._shift_cache) > self._cache_size:
            self._shift_cache.popitem(last=False)
        return fac

    @cached_property
    def mass_factor(self) -> _Factor:
        return _Factor(self.M_II)

    @cached_property
    def stiffness_factor(self) -> _Factor:
        return _Factor(self.A_II)

    # -- evaluation -------------------------------------------------------

    def basis_at(self, tri, bary):
        """Global dofs (m, nloc), values (m, nloc) and gradients (m, nloc, 2)."""
        vals, dl = _shape(self.degree, bary)
        grads = np.einsum("mnj,mjd->mnd", dl, self.grad_lambda[tri])
        return self.element_dofs[tri], vals, grads

    def evaluate(self, u, points) -> np.ndarray:
        tri, bary = self.mesh.locate(points)
        dofs, vals, _ = self.basis_at(tri, bary)
        return np.sum(np.asarray(u)[dofs] * vals, axis=1)

    def element_values(self, u, bary):
        """Field values at barycentric points on every element: (T, q)."""
        vals, _ = _shape(self.degree, bary)
        return np.einsum("tn,qn->tq", np.asarray(u)[self.element_dofs], vals)

    def element_gradients(self, u, bary):
        """Field gradients at barycentric points on every element: (T, q, 2)."""
        _, dl = _shape(self.degree, bary)
        g = np.einsum("qnj,tjd->tqnd", dl, self.grad_lambda)
        return np.einsum("tn,tqnd->tqd", np.asarray(u)[self.element_dofs], g)

    def quadrature_points(self, degree):
        lam, w = triangle_rule(degree)
        p = self.mesh.nodes[self.mesh.triangles]  # (T,3,2)
        return np.einsum("qj,tjd->tqd", lam, p), lam, w

    def load_vector(self, f, degree=None) -> np.ndarray:
        """``b_i = (f, phi_i)`` for a vectorized callable ``f(x, y)``."""
        degree = 2 * self.degree + 2 if degree is None else degree
        xq, lam, w = self.quadrature_points(degree)
        fv = np.asarray(f(xq[..., 0], xq[..., 1]))
        if not np.all(np.isfinite(fv)):
            raise ValueError("non-finite function value at a quadrature point")
        vals, _ = _shape(self.degree, lam)
        local = np.einsum("tq,q,qn->tn", fv, w, vals) * self.mesh.areas[:, None]
        return _scatter(self.element_dofs, local, self.n_dofs)

    def zeros(self, dtype=float):
        return np.zeros(self.n_dofs, dtype=dtype)


def _scatter(element_dofs, local, n):
    out = np.zeros(n, dtype=local.dtype)
    np.add.at(out, element_dofs.ravel(), local.ravel())
    return out


def build_space(mesh: Mesh, r: int = 1) -> FeSpace:
    return FeSpace(mesh, r)


def assemble_mass(space: FeSpace):
    return space.mass


def assemble_stiffness(space: FeSpace):
    return space.stiffness


def interpolate(space: FeSpace, f) -> np.ndarray:
    """Nodal Lagrange interpolant of a vectorized callable ``f(x, y)``."""
    x = space.dof_coords
    v = np.asarray(f(x[:, 0], x[:, 1]))
    v = np.broadcast_to(v, (space.n_dofs,)).copy()
    if not np.all(np.isfinite(v)):
        raise ValueError("interpolated function is not finite at a dof")
    return v


def _interior_to_full(space, c):
    u = np.zeros(space.n_dofs, dtype=np.result_type(c, float))
    u[space.interior_dofs] = c
    return u


def l2_project(space: FeSpace, f, degree=None) -> np.ndarray:
    """L2-orthogonal projection onto the zero-trace subspace.

    `f` is a vectorized callable, an object with a ``load_vector(space)``
    method (e.g. `RegularizedDelta`), or a ``(fine_space, values)`` pair on a
    nested refinement (transferred exactly).
    """
    if hasattr(f, "load_vector"):
        b = f.load_vector(space)
    elif isinstance(f, tuple):
        fine, values = f
        P = prolongation(space, fine)
        b = P.T @ (fine.mass @ np.asarray(values))
    else:
        b = space.load_vector(f, degree)
    return _interior_to_full(space, space.mass_factor.solve(b[space.interior_dofs]))


def ritz_project(space: FeSpace, f, grad=None, degree=None) -> np.ndarray:
    """Ritz projection of a zero-trace function.

    Pass either a field on `space` as `f`, or a callable `f` together with
    ``grad(x, y) -> (fx, fy)``.
    """
    if grad is None:
        u = np.asarray(f)
        if u.shape != (space.n_dofs,):
            raise ValueError("pass grad=... for a callable f")
        b = space.stiffness @ u
    else:
        degree = 2 * space.degree + 2 if degree is None else degree
        xq, lam, w = space.quadrature_points(degree)
        gx, gy = grad(xq[..., 0], xq[..., 1])
        g = np.stack([np.broadcast_to(gx, xq.shape[:2]), np.broadcast_to(gy, xq.shape[:2])], -1)
        _, dl = _shape(space.degree, lam)
        bg = np.einsum("qnj,tjd->tqnd", dl, space.grad_lambda)
        local = np.einsum("tqd,tqnd,q->tn", g, bg, w) * space.mesh.areas[:, None]
        b = _scatter(space.element_dofs, local, space.n_dofs)
    return _interior_to_full(space, space.stiffness_factor.solve(b[space.interior_dofs]))


def point_functional(space: FeSpace, x0) -> np.ndarray:
    """Vector ``e_i = phi_i(x0)`` over all dofs."""
    tri, bary = space.mesh.locate(np.asarray(x0, dtype=float)[None])
    dofs, vals, _ = space.basis_at(tri, bary)
    e = np.zeros(space.n_dofs)
    e[dofs[0]] = vals[0]
    return e


def discrete_delta(space: FeSpace, x0) -> np.ndarray:
    """Riesz representer of point evaluation at `x0` in the zero-trace space."""
    x0 = np.asarray(x0, dtype=float)
    if not space.mesh.polygon.contains(x0[None])[0]:
        raise MeshError("x0 outside the domain")
    e = point_functional(space, x0)
    return _interior_to_full(space, space.mass_factor.solve(e[space.interior_dofs]))


def _monomials(r):
    return [(a, n - a) for n in range(r + 1) for a in range(n, -1, -1)]


@dataclass(frozen=True, eq=False)
class RegularizedDelta:
    """Smooth function supported in one triangle that reproduces point values.

    ``delta(x) = q(xi) * (1 - |xi|^2)_+^4`` with ``xi = (x - center)/radius``,
    where the disk (center, radius) is the inscribed disk of the host
    triangle and ``q`` has degree ``r`` and solves the moment system
    ``int delta * p = p(x0)`` for all polynomials ``p`` of degree ``<= r``.
    """

    x0: np.ndarray
    host: int
    center: np.ndarray
    radius: float
    degree: int
    coef: np.ndarray
    residual: float
    n_radial: int = 48
    n_angular: int = 96

    def _basis(self, xi):
        return np.stack([xi[:, 0] ** a * xi[:, 1] ** b for a, b in _monomials(self.degree)], axis=1)

    def __call__(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        xi = (p - self.center) / self.radius
        s2 = np.sum(xi * xi, axis=1)
        bump = np.clip(1.0 - s2, 0.0, None) ** 4
        return (self._basis(xi) @ self.coef) * bump

    def rule(self):
        """Physical quadrature points and weights on the support disk."""
        pts, w = disk_rule(self.n_radial, self.n_angular)
        return self.center + self.radius * pts, w * self.radius**2

    def integrate(self, fn) -> float:
        """``int delta * fn`` for a vectorized callable ``fn(points)``."""
        x, w = self.rule()
        return np.sum(w * self(x) * fn(x))

    def load_vector(self, space: FeSpace) -> np.ndarray:
        x, w = self.rule()
        tri, bary = space.mesh.locate(x)
        dofs, vals, _ = space.basis_at(tri, bary)
        local = (w * self(x))[:, None] * vals
        return _scatter(dofs, local, space.n_dofs)

    def l1_norm(self) -> float:
        x, w = self.rule()
        return float(np.sum(w * np.abs(self(x))))


def construct_regularized_delta(mesh: Mesh, x0, r: int = 1, n_radial=48, n_angular=96) -> RegularizedDelta:
    x0 = np.asarray(x0, dtype=float)
    if not mesh.polygon.contains(x0[None])[0]:
        raise MeshError("x0 outside the domain")
    tri, _ = mesh.locate(x0[None])
    host = int(tri[0])
    v = mesh.nodes[mesh.triangles[host]]
    side = np.linalg.norm(np.roll(v, -1, axis=0) - np.roll(v, 1, axis=0), axis=1)  # opposite
    center = side @ v / side.sum()
    radius = float(mesh.inradii[host])
    proto = RegularizedDelta(
        x0, host, center, radius, r, np.zeros(len(_monomials(r))), 0.0, n_radial, n_angular
    )
    pts, w = proto.rule()
    xi = (pts - center) / radius
    bump = np.clip(1.0 - np.sum(xi * xi, axis=1), 0.0, None) ** 4
    B = proto._basis(xi)
    G = np.einsum("q,qa,qb->ab", w * bump, B, B)
    rhs = proto._basis(((x0 - center) / radius)[None])[0]
    coef = np.linalg.solve(G, rhs)
    res = float(np.max(np.abs(G @ coef - rhs)))
    if not res <= 1e-10 * max(1.0, np.abs(rhs).max()):
        raise SingularSystemError(f"moment system residual {res:.2e}")
    return RegularizedDelta(x0, host, center, radius, r, coef, res, n_radial, n_angular)


def _lattice(m):
    pts = [(i / m, j / m, (m - i - j) / m) for i in range(m + 1) for j in range(m + 1 - i)]
    pts.append((1 / 3, 1 / 3, 1 / 3))
    return np.unique(np.array(pts), axis=0)


def norm(space: FeSpace, u, kind="L2", region: Region | None = None, lattice: int = 2) -> float:
    """Norm of a field, optionally restricted to a set of elements.

    kind: ``Linf`` (max over a barycentric sample lattice: vertices, edge
    midpoints and barycenter for ``lattice=2``), ``L2``, ``L1``, ``H1semi``
    or ``gradL1`` (``int |grad u|``).
    """
    u = np.asarray(u)
    ids = slice(None) if region is None else region.element_ids
    areas = space.mesh.areas[ids]
    if kind == "Linf":
        vals = space.element_values(u, _lattice(lattice))[ids]
        return float(np.max(np.abs(vals))) if vals.size else 0.0
    if kind in ("L2", "L1"):
        lam, w = triangle_rule(2 * space.degree if kind == "L2" else 4)
        vals = np.abs(space.element_values(u, lam)[ids])
        p = 2 if kind == "L2" else 1
        total = float(np.sum(areas * (vals**p @ w)))
        return np.sqrt(total) if p == 2 else total
    if kind in ("H1semi", "gradL1"):
        deg = 2 * space.degree - 2 if kind == "H1semi" else (0 if space.degree == 1 else 4)
        lam, w = triangle_rule(deg)
        g = space.element_gradients(u, lam)[ids]
        mag2 = np.sum(np.abs(g) ** 2, axis=-1)
        if kind == "H1semi":
            return float(np.sqrt(np.sum(areas * (mag2 @ w))))
        return float(np.sum(areas * (np.sqrt(mag2) @ w)))
    raise ValueError(f"unknown norm kind {kind!r}")


def shifted_solve(space: FeSpace, z, rhs) -> np.ndarray:
    """``(z - Delta_h)^{-1} rhs`` for ``rhs`` in the zero-trace space."""
    rhs = np.asarray(rhs)
    b = space.M_II @ rhs[space.interior_dofs]
    return _interior_to_full(space, space.shifted_factor(z).solve(b))


def boundary_solve(space: FeSpace, shift, g) -> np.ndarray:
    """Field with boundary values `g` solving ``(shift u, v) + (grad u, grad v) = 0``.

    `g` may be a matrix ``(n_boundary, m)``; the result is then ``(n_dofs, m)``.
    """
    g = np.asarray(g)
    s = complex(shift)
    s = s.real if s.imag == 0 else s
    rhs = -(s * (space.M_IB @ g) + space.A_IB @ g)
    ui = space.shifted_factor(shift).solve(rhs)
    out = np.zeros((space.n_dofs,) + g.shape[1:], dtype=np.result_type(ui, g))
    out[space.interior_dofs] = ui
    out[space.boundary_dofs] = g
    return out


def _ancestor_ids(fine: Mesh, coarse: Mesh) -> np.ndarray:
    ids = np.arange(fine.n_triangles)
    m = fine
    while m is not coarse:
        if m.parent is None:
            raise MeshError("meshes are not nested")
        ids = m.parent_ids[ids]
        m = m.parent
    return ids


def prolongation(coarse: FeSpace, fine: FeSpace) -> sp.csr_matrix:
    """Exact embedding matrix of `coarse` into the nested space `fine`."""
    if fine.degree < coarse.degree:
        raise ValueError("fine space must have at least the coarse degree")
    anc = _ancestor_ids(fine.mesh, coarse.mesh)
    dofs, first = np.unique(fine.element_dofs.ravel(), return_index=True)
    elem = anc[first // fine.n_local]
    pts = fine.dof_coords[dofs]
    bary = coarse.mesh.barycentric(elem, pts)
    cd, vals, _ = coarse.basis_at(elem, bary)
    rows = np.repeat(dofs, coarse.n_local)
    P = sp.coo_matrix((vals.ravel(), (rows, cd.ravel())), shape=(fine.n_dofs, coarse.n_dofs)).tocsr()
    P.data[np.abs(P.data) < 1e-15] = 0.0
    P.eliminate_zeros()
    return P
