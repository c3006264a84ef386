"""Triangulations of polygonal domains, uniform refinement and geometric regions.

Meshes are built from a coarse macro triangulation and refined by edge
midpoints, so the quasi-uniformity constant of the macro mesh is kept exactly
at every level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "Polygon",
    "Mesh",
    "Region",
    "AnnulusDecomposition",
    "MeshError",
    "unit_square",
    "lshape",
    "build_polygon_mesh",
    "refine_uniform",
    "domain_mesh",
    "quasi_uniformity",
    "boundary_band",
    "dyadic_annuli",
]

_GEOM_TOL = 1e-12


class MeshError(ValueError):
    """Invalid polygon, template or mesh operation."""


def _cross(o, a, b):
    return (a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1]) - (a[..., 1] - o[..., 1]) * (
        b[..., 0] - o[..., 0]
    )


def _segments_intersect(p1, p2, q1, q2):
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 * d2 < 0 and d3 * d4 < 0:
        return True

    def on_seg(a, b, c, d):
        return abs(d) <= _GEOM_TOL and min(a[0], b[0]) - _GEOM_TOL <= c[0] <= max(
            a[0], b[0]
        ) + _GEOM_TOL and min(a[1], b[1]) - _GEOM_TOL <= c[1] <= max(a[1], b[1]) + _GEOM_TOL

    return on_seg(q1, q2, p1, d1) or on_seg(q1, q2, p2, d2) or on_seg(p1, p2, q1, d3) or on_seg(
        p1, p2, q2, d4
    )


@dataclass(frozen=True, eq=False)
class Polygon:
    """Simple polygon with counterclockwise vertices.

    Clockwise input is reversed; self-intersecting input raises `MeshError`.
    """

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise MeshError("polygon needs at least 3 two-dimensional vertices")
        n = len(v)
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]):
                    raise MeshError(f"polygon is not simple: edges {i} and {j} intersect")
        if _signed_area(v) < 0:
            v = v[::-1].copy()
        if abs(_signed_area(v)) <= _GEOM_TOL:
            raise MeshError("polygon has zero area")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def area(self) -> float:
        return _signed_area(self.vertices)

    @property
    def edges(self) -> np.ndarray:
        """Array (n, 2, 2) of edge endpoints."""
        v = self.vertices
        return np.stack([v, np.roll(v, -1, axis=0)], axis=1)

    @property
    def is_convex(self) -> bool:
        v = self.vertices
        c = _cross(np.roll(v, 1, axis=0), v, np.roll(v, -1, axis=0))
        return bool(np.all(c >= -_GEOM_TOL))

    def reentrant_corners(self) -> np.ndarray:
        v = self.vertices
        c = _cross(np.roll(v, 1, axis=0), v, np.roll(v, -1, axis=0))
        return v[c < -_GEOM_TOL]

    def contains(self, points, tol=1e-12) -> np.ndarray:
        """Closed point-in-polygon test (boundary counts as inside)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.zeros(len(p), dtype=bool)
        v = self.vertices
        n = len(v)
        for i in range(n):
            a, b = v[i], v[(i + 1) % n]
            cond = (a[1] > p[:, 1]) != (b[1] > p[:, 1])
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = a[0] + (p[:, 1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            inside ^= cond & (p[:, 0] < xint)
        return inside | (self.distance_to_boundary(p) <= tol)

    def distance_to_boundary(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        e = self.edges
        return _point_segment_distance(p[:, None, :], e[None, :, 0], e[None, :, 1]).min(axis=1)


def _signed_area(v):
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _point_segment_distance(p, a, b):
    ab = b - a
    denom = np.sum(ab * ab, axis=-1)
    t = np.clip(np.sum((p - a) * ab, axis=-1) / np.where(denom > 0, denom, 1.0), 0.0, 1.0)
    proj = a + t[..., None] * ab
    return np.linalg.norm(p - proj, axis=-1)


def unit_square() -> Polygon:
    return Polygon(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))


def lshape() -> Polygon:
    """[0,1]^2 minus (1/2,1]^2; reentrant corner at (1/2, 1/2)."""
    return Polygon(
        np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.5], [0.5, 0.5], [0.5, 1.0], [0.0, 1.0]])
    )


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation with boundary markers and refinement lineage.

    ``boundary_markers[b]`` is the index of the polygon edge containing
    boundary edge ``b``. ``h0`` is the nominal width of the level-0 mesh, so
    ``width == h0 * 2**-level``; ``h`` is the largest element diameter.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_markers: np.ndarray
    polygon: Polygon
    level: int = 0
    h0: float = 1.0
    parent: Mesh | None = field(default=None, repr=False)
    parent_ids: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("nodes", "triangles", "boundary_edges", "boundary_markers", "parent_ids"):
            a = getattr(self, name)
            if a is not None:
                a = np.array(a)
                a.setflags(write=False)
                object.__setattr__(self, name, a)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def width(self) -> float:
        return self.h0 * 2.0 ** (-self.level)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        return 0.5 * _cross(p[:, 0], p[:, 1], p[:, 2])

    @cached_property
    def diameters(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        lengths = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
        return lengths.max(axis=1)

    @cached_property
    def inradii(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        perim = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2).sum(axis=1)
        return 2.0 * self.areas / perim

    @property
    def h(self) -> float:
        return float(self.diameters.max())

    @cached_property
    def barycenters(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique edges (sorted node pairs, lexicographic order)."""
        return self._edge_data[0]

    @cached_property
    def element_edges(self) -> np.ndarray:
        """(T, 3) edge ids; local edge i joins local vertices i and i+1."""
        return self._edge_data[1]

    @cached_property
    def _edge_data(self):
        t = self.triangles
        local = np.stack([t, np.roll(t, -1, axis=1)], axis=2).reshape(-1, 2)
        local = np.sort(local, axis=1)
        edges, inverse = np.unique(local, axis=0, return_inverse=True)
        return edges, inverse.reshape(-1, 3)

    @cached_property
    def edge_counts(self) -> np.ndarray:
        return np.bincount(self.element_edges.ravel(), minlength=len(self.edges))

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_edges.ravel())

    @cached_property
    def _tree(self):
        return cKDTree(self.barycenters)

    def locate(self, points, tol=1e-10):
        """Host triangle and barycentric coordinates of each point.

        Points on shared edges or vertices go to the lowest triangle id.
        Raises `MeshError` for points outside the mesh.
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        cand = self._tree.query_ball_point(p, r=self.h * (1 + 1e-9))
        tri = np.full(len(p), -1, dtype=np.int64)
        bary = np.zeros((len(p), 3))
        for i, c in enumerate(cand):
            if not c:
                continue
            c = np.sort(np.asarray(c, dtype=np.int64))
            lam = self.barycentric(c, np.broadcast_to(p[i], (len(c), 2)))
            ok = np.flatnonzero(lam.min(axis=1) >= -tol)
            if len(ok):
                tri[i] = c[ok[0]]
                bary[i] = lam[ok[0]]
        if np.any(tri < 0):
            bad = p[np.flatnonzero(tri < 0)[0]]
            raise MeshError(f"point {tuple(bad)} lies outside the mesh")
        return tri, bary

    def barycentric(self, tri_ids, points) -> np.ndarray:
        v = self.nodes[self.triangles[tri_ids]]
        p = np.asarray(points, dtype=float)
        a0 = _cross(p, v[:, 1], v[:, 2])
        a1 = _cross(v[:, 0], p, v[:, 2])
        a2 = _cross(v[:, 0], v[:, 1], p)
        return np.stack([a0, a1, a2], axis=-1) / (2.0 * self.areas[tri_ids])[:, None]

    def check(self) -> None:
        """Verify conformity, positive areas and area conservation."""
        if np.any(self.areas <= 0):
            raise MeshError("non-positive triangle area")
        if np.any(self.edge_counts > 2):
            raise MeshError("edge shared by more than two triangles")
        bnd = self.edges[self.edge_counts == 1]
        be = np.sort(self.boundary_edges, axis=1)
        if len(bnd) != len(be) or not np.array_equal(
            bnd[np.lexsort(bnd.T[::-1])], be[np.lexsort(be.T[::-1])]
        ):
            raise MeshError("boundary edges do not match single-owner edges")
        if abs(self.areas.sum() - self.polygon.area) > 1e-10 * max(1.0, self.polygon.area):
            raise MeshError("triangles do not cover the polygon")


@dataclass(frozen=True, eq=False)
class Region:
    element_ids: np.ndarray
    description: str = ""

    def __post_init__(self):
        ids = np.asarray(self.element_ids, dtype=np.int64)
        if len(np.unique(ids)) != len(ids):
            raise MeshError("region element ids must be distinct")
        object.__setattr__(self, "element_ids", ids)

    def __len__(self):
        return len(self.element_ids)


@dataclass(frozen=True, eq=False)
class AnnulusDecomposition:
    """Dyadic annuli ``d_j <= |x - x0| < 2 d_j`` around an anchor.

    ``regions[j]`` for ``j = 0..J_star`` and ``star_region`` for the ball of
    radius ``d_star``; ``time_bands[j]`` is the interval of ``t`` with
    ``d_j <= sqrt(t) < 2 d_j`` (``(1, inf)`` for ``j = 0``).
    """

    x0: np.ndarray
    radii: np.ndarray
    star_radius: float
    C_star: float
    J_star: int
    regions: list
    star_region: Region
    time_bands: list
    star_time_band: tuple

    def index_of(self, dist) -> np.ndarray:
        """Annulus index for distances (``-1`` means the innermost set)."""
        d = np.asarray(dist, dtype=float)
        j = np.ceil(-np.log2(np.maximum(d, 1e-300))).astype(np.int64)
        j = np.clip(j, 0, None)
        j = np.where(d < self.star_radius, -1, np.minimum(j, self.J_star))
        return j


def _boundary_edges_from(triangles, nodes, polygon):
    t = np.asarray(triangles)
    local = np.sort(np.stack([t, np.roll(t, -1, axis=1)], axis=2).reshape(-1, 2), axis=1)
    edges, counts = np.unique(local, axis=0, return_counts=True)
    bnd = edges[counts == 1]
    mid = nodes[bnd].mean(axis=1)
    e = polygon.edges
    a, b = nodes[bnd[:, 0]], nodes[bnd[:, 1]]
    markers = np.full(len(bnd), -1, dtype=np.int64)
    for k in range(len(e)):
        d = (
            _point_segment_distance(a, e[k, 0], e[k, 1])
            + _point_segment_distance(b, e[k, 0], e[k, 1])
            + _point_segment_distance(mid, e[k, 0], e[k, 1])
        )
        markers[(markers < 0) & (d <= 1e-10)] = k
    if np.any(markers < 0):
        raise MeshError("template boundary edge does not lie on the polygon boundary")
    return bnd, markers


def _orient(nodes, triangles):
    t = np.array(triangles, dtype=np.int64)
    p = nodes[t]
    neg = _cross(p[:, 0], p[:, 1], p[:, 2]) < 0
    t[neg] = t[neg][:, [0, 2, 1]]
    return t


def _ear_clip(v):
    n = len(v)
    idx = list(range(n))
    tris = []
    while len(idx) > 3:
        m = len(idx)
        for i in range(m):
            a, b, c = idx[i - 1], idx[i], idx[(i + 1) % m]
            if _cross(v[a], v[b], v[c]) <= _GEOM_TOL:
                continue
            others = [j for j in idx if j not in (a, b, c)]
            if others:
                p = v[others]
                tri = np.array([v[a], v[b], v[c]])
                l0 = _cross(p, tri[1], tri[2])
                l1 = _cross(tri[0], p, tri[2])
                l2 = _cross(tri[0], tri[1], p)
                if np.any((l0 >= -_GEOM_TOL) & (l1 >= -_GEOM_TOL) & (l2 >= -_GEOM_TOL)):
                    continue
            tris.append((a, b, c))
            idx.pop(i)
            break
        else:
            raise MeshError("ear clipping failed")
    tris.append(tuple(idx))
    return np.array(tris, dtype=np.int64)


def _same_vertices(poly, ref):
    a, b = poly.vertices, ref.vertices
    if a.shape != b.shape:
        return False
    for s in range(len(a)):
        if np.allclose(np.roll(a, -s, axis=0), b, atol=1e-14):
            return True
    return False


_SQUARE_TEMPLATE = (
    np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
    np.array([[0, 1, 2], [0, 2, 3]]),
    1.0,
)
_LSHAPE_TEMPLATE = (
    np.array(
        [[0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [0.0, 0.5], [0.5, 0.5], [1.0, 0.5], [0.0, 1.0], [0.5, 1.0]]
    ),
    np.array([[0, 1, 4], [0, 4, 3], [1, 2, 5], [1, 5, 4], [3, 4, 7], [3, 7, 6]]),
    0.5,
)


def build_polygon_mesh(polygon: Polygon, template="auto") -> Mesh:
    """Level-0 mesh of `polygon`.

    ``template="auto"`` uses the canonical macro meshes for the unit square
    and the L-shape and ear clipping otherwise; a ``(nodes, triangles)`` pair
    is validated to cover the polygon exactly.
    """
    if template == "auto":
        if _same_vertices(polygon, unit_square()):
            nodes, tris, h0 = _SQUARE_TEMPLATE
        elif _same_vertices(polygon, lshape()):
            nodes, tris, h0 = _LSHAPE_TEMPLATE
        else:
            nodes = polygon.vertices.copy()
            tris = _ear_clip(nodes)
            h0 = None
    else:
        nodes, tris = template
        nodes = np.asarray(nodes, dtype=float)
        h0 = None
        missing = [v for v in polygon.vertices if not np.any(np.all(np.abs(nodes - v) < 1e-12, axis=1))]
        if missing:
            raise MeshError("template does not contain every polygon vertex")
        if not np.all(polygon.contains(nodes, tol=1e-10)):
            raise MeshError("template nodes outside the polygon")
    nodes = np.asarray(nodes, dtype=float)
    tris = _orient(nodes, tris)
    bnd, markers = _boundary_edges_from(tris, nodes, polygon)
    if h0 is None:
        p = nodes[tris]
        h0 = float(np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2).max())
    mesh = Mesh(nodes, tris, bnd, markers, polygon, level=0, h0=h0)
    mesh.check()
    return mesh


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split each triangle into four similar children through edge midpoints.

    Old nodes keep their numbers; new midpoint nodes follow, ordered
    lexicographically by ``(y, x)``.
    """
    edges = mesh.edges
    mids = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
    order = np.lexsort((mids[:, 0], mids[:, 1]))
    new_id = np.empty(len(edges), dtype=np.int64)
    new_id[order] = mesh.n_nodes + np.arange(len(edges))
    nodes = np.vstack([mesh.nodes, mids[order]])

    t = mesh.triangles
    m = new_id[mesh.element_edges]  # m[:, i] is the midpoint of edge (i, i+1)
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    mab, mbc, mca = m[:, 0], m[:, 1], m[:, 2]
    children = np.stack(
        [
            np.stack([a, mab, mca], axis=1),
            np.stack([mab, b, mbc], axis=1),
            np.stack([mca, mbc, c], axis=1),
            np.stack([mab, mbc, mca], axis=1),
        ],
        axis=1,
    ).reshape(-1, 3)
    parent_ids = np.repeat(np.arange(len(t)), 4)

    be = mesh.boundary_edges
    key = np.sort(be, axis=1)
    eid = _edge_index(edges, key)
    mid = new_id[eid]
    bnd = np.stack([np.stack([be[:, 0], mid], axis=1), np.stack([mid, be[:, 1]], axis=1)], axis=1)
    bnd = bnd.reshape(-1, 2)
    markers = np.repeat(mesh.boundary_markers, 2)
    return Mesh(
        nodes,
        children,
        bnd,
        markers,
        mesh.polygon,
        level=mesh.level + 1,
        h0=mesh.h0,
        parent=mesh,
        parent_ids=parent_ids,
    )


def _edge_index(edges, pairs):
    n = int(edges.max()) + 1
    keys = edges[:, 0] * n + edges[:, 1]
    q = pairs[:, 0] * n + pairs[:, 1]
    pos = np.searchsorted(keys, q)
    if np.any(keys[np.minimum(pos, len(keys) - 1)] != q):
        raise MeshError("boundary edge not found among mesh edges")
    return pos


def domain_mesh(domain, level: int) -> Mesh:
    """Canonical mesh with nominal width ``2**-level``.

    ``domain`` is ``"square"``, ``"lshape"`` or an existing level-0 `Mesh`
    (refined ``level`` times).
    """
    if isinstance(domain, Mesh):
        mesh, n = domain, level
    elif domain == "square":
        mesh, n = build_polygon_mesh(unit_square()), level
    elif domain == "lshape":
        if level < 1:
            raise MeshError("the L-shape macro mesh already has width 1/2")
        mesh, n = build_polygon_mesh(lshape()), level - 1
    else:
        raise MeshError(f"unknown domain {domain!r}")
    for _ in range(n):
        mesh = refine_uniform(mesh)
    return mesh


def quasi_uniformity(mesh: Mesh) -> float:
    """Smallest K with ``h/K <= rho_l <= h_l <= K h`` for every element."""
    if np.any(mesh.areas <= 0):
        raise MeshError("degenerate triangle")
    h = mesh.h
    return float(max(1.0, np.max(h / mesh.inradii), np.max(mesh.diameters / h)))


def boundary_band(mesh: Mesh, width: float) -> Region:
    """Elements meeting ``{x : dist(x, boundary) <= width}``."""
    if width <= 0:
        raise MeshError("band width must be positive")
    p = mesh.nodes[mesh.triangles]  # (T, 3, 2)
    e = mesh.polygon.edges  # (E, 2, 2)
    # triangle-to-segment distance: both lie in the closed domain and cannot
    # cross, so the minimum is attained at an endpoint of one of them
    d_vert = _point_segment_distance(p[:, :, None, :], e[None, None, :, 0], e[None, None, :, 1])
    dist = d_vert.min(axis=(1, 2))
    a, b = p, np.roll(p, -1, axis=1)
    for k in range(len(e)):
        for q in (e[k, 0], e[k, 1]):
            dist = np.minimum(dist, _point_segment_distance(q[None, None, :], a, b).min(axis=1))
    ids = np.flatnonzero(dist <= width * (1 + 1e-12))
    return Region(ids, f"boundary band width {width:g}")


def dyadic_annuli(mesh: Mesh, x0, C_star: float = 16.0, h: float | None = None) -> AnnulusDecomposition:
    """Dyadic decomposition of the domain around `x0` (barycenter rule)."""
    x0 = np.asarray(x0, dtype=float)
    h = mesh.width if h is None else float(h)
    if C_star < 16:
        raise MeshError("C_star must be at least 16")
    if not h < 1.0 / (4.0 * C_star):
        raise MeshError(f"h={h:g} violates h < 1/(4 C_star) = {1 / (4 * C_star):g}")
    if not mesh.polygon.contains(x0[None])[0]:
        raise MeshError("x0 outside the domain")
    J = int(round(math.log2(1.0 / (C_star * h))))
    radii = 2.0 ** -np.arange(J + 1, dtype=float)
    d_star = float(radii[J])
    dec = AnnulusDecomposition(
        x0=x0,
        radii=radii,
        star_radius=d_star,
        C_star=float(C_star),
        J_star=J,
        regions=[],
        star_region=Region(np.array([], dtype=np.int64)),
        time_bands=[(1.0, math.inf)] + [(d * d, 4 * d * d) for d in radii[1:]],
        star_time_band=(0.0, d_star * d_star),
    )
    idx = dec.index_of(np.linalg.norm(mesh.barycenters - x0, axis=1))
    regions = [Region(np.flatnonzero(idx == j), f"annulus {j}") for j in range(J + 1)]
    object.__setattr__(dec, "regions", regions)
    object.__setattr__(dec, "star_region", Region(np.flatnonzero(idx == -1), "inner ball"))
    return dec
