import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wmplab.mesh import (
    Mesh,
    MeshError,
    Polygon,
    boundary_band,
    build_polygon_mesh,
    domain_mesh,
    dyadic_annuli,
    lshape,
    quasi_uniformity,
    refine_uniform,
    unit_square,
)

# closed-form values: inradius of a right isosceles triangle with legs 1 is
# (a + b - c)/2 = (2 - sqrt 2)/2; equilateral side s has inradius s/(2 sqrt 3)
K_RIGHT_ISOSCELES = math.sqrt(2) / ((2 - math.sqrt(2)) / 2)  # = 2 + 2 sqrt 2
K_EQUILATERAL = 2 * math.sqrt(3)


def test_square_macro_mesh():
    m = build_polygon_mesh(unit_square())
    assert m.n_triangles == 2 and m.n_nodes == 4
    assert m.h == pytest.approx(math.sqrt(2), abs=1e-15)
    m.check()


def test_lshape_macro_mesh():
    m = build_polygon_mesh(lshape())
    assert m.n_triangles == 6
    np.testing.assert_allclose(lshape().reentrant_corners(), [[0.5, 0.5]])
    assert m.areas.sum() == pytest.approx(0.75, abs=1e-15)
    assert np.allclose(m.areas, 0.125)


def test_self_intersecting_polygon_rejected():
    with pytest.raises(MeshError):
        Polygon([[0, 0], [1, 1], [1, 0], [0, 1]])


def test_clockwise_polygon_is_reoriented():
    p = Polygon([[0, 0], [0, 1], [1, 1], [1, 0]])
    assert p.area == pytest.approx(1.0)


def test_template_must_contain_vertices():
    nodes = np.array([[0, 0], [1, 0], [0, 1.0]])
    with pytest.raises(MeshError):
        build_polygon_mesh(unit_square(), template=(nodes, [[0, 1, 2]]))


def test_template_must_cover_polygon():
    nodes = np.array([[0, 0], [1, 0], [1, 1], [0, 1.0]])
    with pytest.raises(MeshError):
        build_polygon_mesh(unit_square(), template=(nodes, [[0, 1, 2]]))


def test_refinement_counts_and_width():
    m0 = build_polygon_mesh(unit_square())
    m1 = refine_uniform(m0)
    assert m1.n_triangles == 8
    assert m1.h == pytest.approx(math.sqrt(2) / 2, abs=1e-15)
    assert refine_uniform(m1).n_triangles == 32
    assert m1.level == 1 and m1.parent is m0


def test_quasi_uniformity_single_right_isosceles():
    tri = Polygon([[0, 0], [1, 0], [0, 1]])
    m = build_polygon_mesh(tri)
    assert quasi_uniformity(m) == pytest.approx(K_RIGHT_ISOSCELES, rel=1e-14)


def test_quasi_uniformity_equilateral():
    tri = Polygon([[0, 0], [1, 0], [0.5, math.sqrt(3) / 2]])
    m = build_polygon_mesh(tri)
    assert quasi_uniformity(m) == pytest.approx(K_EQUILATERAL, rel=1e-14)
    assert quasi_uniformity(refine_uniform(refine_uniform(m))) == pytest.approx(K_EQUILATERAL, rel=1e-12)


@pytest.mark.parametrize("domain", ["square", "lshape"])
def test_quasi_uniformity_level_independent(domain):
    ks = [quasi_uniformity(domain_mesh(domain, lv)) for lv in (1, 2, 3, 4)]
    assert max(ks) - min(ks) <= 1e-12


@pytest.mark.parametrize("domain,area", [("square", 1.0), ("lshape", 0.75)])
def test_conformity_and_area(domain, area):
    for lv in (1, 3, 5):
        m = domain_mesh(domain, lv)
        m.check()
        counts = m.edge_counts
        assert set(np.unique(counts)) <= {1, 2}
        assert np.sum(counts == 1) == len(m.boundary_edges)
        assert abs(m.areas.sum() - area) <= 1e-12


def test_boundary_edges_lie_on_marked_polygon_edges():
    m = domain_mesh("lshape", 3)
    e = m.polygon.edges
    for (i, j), k in zip(m.boundary_edges, m.boundary_markers):
        a, b = e[k]
        for p in (m.nodes[i], m.nodes[j]):
            cross = (b - a)[0] * (p - a)[1] - (b - a)[1] * (p - a)[0]
            assert abs(cross) < 1e-14


def test_refined_node_order_is_lexicographic_in_y_then_x():
    m0 = build_polygon_mesh(unit_square())
    m1 = refine_uniform(m0)
    new = m1.nodes[m0.n_nodes :]
    keys = list(zip(new[:, 1], new[:, 0]))
    assert keys == sorted(keys)


def test_locate_returns_host_and_barycentric():
    m = domain_mesh("lshape", 3)
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 0.5, size=(50, 2))
    tri, bary = m.locate(pts)
    v = m.nodes[m.triangles[tri]]
    np.testing.assert_allclose(np.einsum("pj,pjd->pd", bary, v), pts, atol=1e-14)
    with pytest.raises(MeshError):
        m.locate([[0.9, 0.9]])


def test_band_whole_domain_for_large_width():
    m = domain_mesh("lshape", 3)
    assert len(boundary_band(m, 2.0)) == m.n_triangles


def test_band_two_triangle_square():
    m = build_polygon_mesh(unit_square())
    assert len(boundary_band(m, m.h)) == 2


def test_band_count_scales_like_perimeter():
    # width-h band of the unit square: two element rows along a perimeter
    # of 4, two triangles per square cell, so count * h -> 16 from below
    vals, frac = [], []
    for lv in (3, 4, 5, 6):
        m = domain_mesh("square", lv)
        n = len(boundary_band(m, m.width))
        vals.append(n * m.width)
        frac.append(n * m.width / m.n_triangles)
    vals = np.array(vals)
    assert np.all(vals <= 16.0) and np.all(np.diff(vals) > 0)
    assert vals.max() / vals.min() < 1.35
    assert np.all(np.diff(frac) < 0)


def test_band_elements_really_meet_the_band():
    m = domain_mesh("square", 4)
    band = boundary_band(m, m.width)
    p = m.nodes[m.triangles[band.element_ids]]
    d = np.minimum(np.minimum(p[..., 0], 1 - p[..., 0]), np.minimum(p[..., 1], 1 - p[..., 1]))
    assert np.all(d.min(axis=1) <= m.width + 1e-14)
    outside = np.setdiff1d(np.arange(m.n_triangles), band.element_ids)
    q = m.nodes[m.triangles[outside]]
    dq = np.minimum(np.minimum(q[..., 0], 1 - q[..., 0]), np.minimum(q[..., 1], 1 - q[..., 1]))
    assert np.all(dq.min(axis=1) > m.width)


def test_band_rejects_nonpositive_width():
    with pytest.raises(MeshError):
        boundary_band(domain_mesh("square", 1), 0.0)


def test_dyadic_level_for_h_2_minus_8():
    m = domain_mesh("square", 5)
    dec = dyadic_annuli(m, (0.5, 0.5), 16, h=2.0**-8)
    assert dec.J_star == 4
    assert dec.star_radius == 2.0**-4
    np.testing.assert_array_equal(dec.radii, 2.0 ** -np.arange(5))


def test_dyadic_partition_covers_mesh():
    m = domain_mesh("lshape", 7)
    dec = dyadic_annuli(m, (0.25, 0.25))
    total = sum(len(r) for r in dec.regions) + len(dec.star_region)
    assert total == m.n_triangles
    ids = np.concatenate([r.element_ids for r in dec.regions] + [dec.star_region.element_ids])
    assert len(np.unique(ids)) == m.n_triangles
    d = np.linalg.norm(m.barycenters - dec.x0, axis=1)
    for j, r in enumerate(dec.regions[1:], start=1):
        dj = dec.radii[j]
        assert np.all((d[r.element_ids] >= dj) & (d[r.element_ids] < 2 * dj))
    assert np.all(d[dec.star_region.element_ids] < dec.star_radius)


def test_dyadic_anchor_at_boundary_vertex():
    m = domain_mesh("square", 7)
    dec = dyadic_annuli(m, (0.0, 0.0))
    assert sum(len(r) for r in dec.regions) + len(dec.star_region) == m.n_triangles


def test_dyadic_requires_small_h():
    with pytest.raises(MeshError):
        dyadic_annuli(domain_mesh("square", 5), (0.5, 0.5))
    with pytest.raises(MeshError):
        dyadic_annuli(domain_mesh("square", 7), (0.5, 0.5), C_star=8)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=3, max_size=3))
def test_triangle_polygons_mesh_consistently(pts):
    v = np.array(pts)
    area = 0.5 * abs((v[1, 0] - v[0, 0]) * (v[2, 1] - v[0, 1]) - (v[1, 1] - v[0, 1]) * (v[2, 0] - v[0, 0]))
    if area < 1e-3:
        return
    m = refine_uniform(build_polygon_mesh(Polygon(v)))
    m.check()
    assert abs(m.areas.sum() - area) <= 1e-12 * max(1.0, area)
    assert np.all(m.areas > 0)


def test_mesh_arrays_are_read_only():
    m = domain_mesh("square", 1)
    assert isinstance(m, Mesh)
    with pytest.raises(ValueError):
        m.nodes[0, 0] = 3.0
