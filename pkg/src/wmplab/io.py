"""Plain-text mesh, field and trajectory files.

Mesh files start with ``nodes N triangles T boundary B`` followed by N lines
``x y``, T lines ``i j k`` and B lines ``i j marker``. Field files hold one
dof value per line with 17 significant digits (``re im`` for complex).
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .mesh import Mesh, MeshError, Polygon, _cross, build_polygon_mesh

__all__ = ["write_mesh", "read_mesh", "write_field", "read_field", "write_trajectory", "read_trajectory"]


def _g(x) -> str:
    return f"{float(x):.17g}"


def write_mesh(mesh: Mesh, path) -> None:
    lines = [f"nodes {mesh.n_nodes} triangles {mesh.n_triangles} boundary {len(mesh.boundary_edges)}"]
    lines += [f"{_g(x)} {_g(y)}" for x, y in mesh.nodes]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles]
    lines += [f"{i} {j} {m}" for (i, j), m in zip(mesh.boundary_edges, mesh.boundary_markers)]
    Path(path).write_text("\n".join(lines) + "\n")


def _boundary_polygon(nodes, edges) -> Polygon:
    """Polygon traced along the boundary edges, collinear points dropped."""
    nbr = {}
    for i, j in edges:
        nbr.setdefault(int(i), []).append(int(j))
        nbr.setdefault(int(j), []).append(int(i))
    if any(len(v) != 2 for v in nbr.values()):
        raise MeshError("boundary is not a single closed curve")
    start = int(edges[0][0])
    loop, prev, cur = [start], None, start
    while True:
        a, b = nbr[cur]
        nxt = b if a == prev else a
        if nxt == start:
            break
        loop.append(nxt)
        prev, cur = cur, nxt
    if len(loop) != len(nbr):
        raise MeshError("boundary has more than one component")
    p = nodes[loop]
    turn = _cross(np.roll(p, 1, axis=0), p, np.roll(p, -1, axis=0))
    return Polygon(p[np.abs(turn) > 1e-12])


def read_mesh(path) -> Mesh:
    """Level-0 mesh from a mesh file; the polygon is recovered from the
    boundary edges and the markers are recomputed against it."""
    lines = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    head = lines[0] if lines else []
    if len(head) != 6 or head[0::2] != ["nodes", "triangles", "boundary"]:
        raise MeshError(f"{path}: bad header {' '.join(head)!r}")
    n, t, b = (int(x) for x in head[1::2])
    body = lines[1:]
    if len(body) != n + t + b:
        raise MeshError(f"{path}: expected {n + t + b} data lines, found {len(body)}")
    try:
        nodes = np.array(body[:n], dtype=float).reshape(n, 2)
        tris = np.array(body[n : n + t], dtype=np.int64).reshape(t, 3)
        edges = np.array(body[n + t :], dtype=np.int64).reshape(b, 3)[:, :2]
    except ValueError as err:
        raise MeshError(f"{path}: malformed data line ({err})") from None
    return build_polygon_mesh(_boundary_polygon(nodes, edges), template=(nodes, tris))


def write_field(values, path) -> None:
    v = np.asarray(values)
    if np.iscomplexobj(v):
        text = "\n".join(f"{_g(z.real)} {_g(z.imag)}" for z in v)
    else:
        text = "\n".join(_g(x) for x in v)
    Path(path).write_text(text + "\n")


def read_field(path) -> np.ndarray:
    a = np.loadtxt(path, ndmin=2)
    if a.shape[1] == 2:
        return a[:, 0] + 1j * a[:, 1]
    return a[:, 0]


def write_trajectory(traj, directory) -> Path:
    """``grid.csv`` (n, t) plus one field file ``u_00000.txt`` per step."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "grid.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "t"])
        for n, t in enumerate(traj.times):
            w.writerow([n, _g(t)])
    for n, u in enumerate(traj.values):
        write_field(u, d / f"u_{n:05d}.txt")
    return d


def read_trajectory(directory):
    """Times and stacked values written by `write_trajectory`."""
    d = Path(directory)
    with open(d / "grid.csv") as fh:
        rows = list(csv.DictReader(fh))
    times = np.array([float(r["t"]) for r in rows])
    values = np.array([read_field(d / f"u_{int(r['n']):05d}.txt") for r in rows])
    return times, values
