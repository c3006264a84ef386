import csv
import dataclasses
import math

import numpy as np
import pytest

from wmplab.fem import FeSpace, construct_regularized_delta, discrete_delta, norm
from wmplab.green import (
    GreenRun,
    annulus_profile,
    band_estimate,
    band_measurement,
    green_discrete,
    green_grid,
    green_run,
    l1_bounds,
    time_derivative_l1,
    write_annulus_csv,
    write_green_csv,
)
from wmplab.mesh import Mesh, Polygon, Region, boundary_band, build_polygon_mesh, domain_mesh, dyadic_annuli, refine_uniform
from wmplab.stepper import Trajectory

X0 = (0.25, 0.25)


@pytest.fixture(scope="module")
def runs():
    return {lv: green_run("lshape", X0, lv, extra=1) for lv in (3, 4, 5)}


def test_green_grid_two_phases():
    h = 1 / 16
    g = green_grid(h)
    np.testing.assert_allclose(g.steps[:10], h * h / 2)
    rest = g.steps[10:]
    assert np.ptp(rest) <= 1e-15 and rest[0] <= h
    assert g.T == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(ValueError):
        green_grid(1.0, T=1.0)


def test_initial_value_is_discrete_delta():
    sp = FeSpace(domain_mesh("lshape", 3))
    tr = green_discrete(sp, X0)
    np.testing.assert_allclose(tr[0], discrete_delta(sp, X0), atol=1e-12)
    # duality against random chi with zero trace
    rng = np.random.default_rng(0)
    tri, bary = sp.mesh.locate([X0])
    for _ in range(5):
        chi = np.zeros(sp.n_dofs)
        chi[sp.interior_dofs] = rng.standard_normal(len(sp.interior_dofs))
        chi_x0 = bary[0] @ chi[sp.mesh.triangles[tri[0]]]
        assert abs(chi @ (sp.mass @ tr[0]) - chi_x0) <= 1e-10


def test_discrete_green_function_is_symmetric():
    # Gamma_h(t, x_a; x_b) = Gamma_h(t, x_b; x_a) at mesh nodes
    sp = FeSpace(domain_mesh("square", 3))
    a, b = sp.interior_dofs[[5, 30]]
    xa, xb = sp.mesh.nodes[a], sp.mesh.nodes[b]
    ga, gb = green_discrete(sp, xa), green_discrete(sp, xb)
    np.testing.assert_allclose(ga.values[:, b], gb.values[:, a], rtol=1e-10, atol=1e-12)


def test_zero_difference_gives_zero_estimate():
    # with no extra refinement the reference starts from the projection of
    # the regularized delta, which is the discrete delta itself
    run = green_run("lshape", X0, 3, extra=0)
    assert band_estimate(run) <= 1e-10
    same = GreenRun(run.x0, run.reference, run.reference, run.band, run.h)
    assert band_estimate(same) == 0.0


def test_run_validates_times():
    run = green_run("square", (0.5, 0.5), 2, extra=0, T=0.5)
    short = Trajectory(run.coarse.space, run.times[:-1], run.coarse.values[:-1], "green")
    with pytest.raises(ValueError):
        GreenRun(run.x0, short, run.reference, run.band, run.h)


def test_band_estimate_invariant_under_element_relabeling():
    run = green_run("lshape", X0, 3, extra=1)
    fine = run.fine_space.mesh
    perm = np.random.default_rng(1).permutation(fine.n_triangles)
    shuffled = dataclasses.replace(fine, triangles=fine.triangles[perm], parent_ids=fine.parent_ids[perm])
    sp = FeSpace(shuffled)
    ref = Trajectory(sp, run.times, run.reference.values, "green-reference")
    band = Region(boundary_band(shuffled, run.h).element_ids, "D_h band")
    other = GreenRun(run.x0, run.coarse, ref, band, run.h)
    assert len(band) == len(run.band)
    assert band_estimate(other) == pytest.approx(band_estimate(run), rel=1e-12)


def test_l1_bounds_stable_across_refinement(runs):
    for key in ("l1", "t_dt_l1"):
        c = [np.nanmax(l1_bounds(r.coarse)[key]) for r in runs.values()]
        rf = [np.nanmax(l1_bounds(r.reference)[key]) for r in runs.values()]
        assert max(c) / min(c) <= 1.5
        assert max(rf) / min(rf) <= 1.5


def test_heat_kernel_mass_after_initial_layer(runs):
    # positivity is lost only at t = 0; later the L1 norm stays below one
    for r in runs.values():
        a = l1_bounds(r.coarse)
        late = a["times"] >= 0.1
        assert np.all(a["l1"][late] <= 1.0)


def test_time_derivative_of_difference_stable(runs):
    v = [time_derivative_l1(r) for r in runs.values()]
    assert all(np.isfinite(v))
    assert max(b / a for a, b in zip(v, v[1:])) <= 1.5


def test_late_time_exponential_decay():
    run = green_run("lshape", X0, 3, extra=0, T=2.0)
    a = l1_bounds(run.coarse)
    t = a["times"]
    d1 = a["dt_l1"][np.argmin(np.abs(t - 1.0))]
    d2 = a["dt_l1"][-1]
    lam = math.log(d1 / d2) / (t[-1] - t[np.argmin(np.abs(t - 1.0))])
    assert lam > 1.0


def test_gaussian_envelope_of_reference():
    # square (-1, 1)^2, anchor at the centre; the nominal width of a
    # custom polygon is its longest macro edge halved per level
    poly = Polygon([[-1, -1], [1, -1], [1, 1], [-1, 1]])
    m = build_polygon_mesh(poly)
    for _ in range(6):
        m = refine_uniform(m)
    h = m.width
    assert h == pytest.approx(2 * math.sqrt(2) / 2**6)
    run = green_run(m, (0.0, 0.0), 6, extra=2, T=2 * (4 * h) ** 2)
    ref = run.reference
    n = int(np.argmax(ref.times >= (4 * h) ** 2 * (1 - 1e-12)))
    fm = ref.space.mesh
    far = np.linalg.norm(fm.barycenters, axis=1) >= 6 * math.sqrt(ref.times[n])
    vals = np.abs(ref.values[n][fm.triangles])
    assert far.any()
    assert vals[far].max() <= 1e-3 * vals.max()


def test_band_estimate_bounded_under_refinement():
    v = [band_estimate(green_run("lshape", X0, lv)) for lv in (4, 5)]
    assert v[1] <= 1.15 * v[0]


@pytest.mark.parametrize("domain,x0", [("lshape", X0), ("square", (0.5, 0.5))])
def test_reference_self_convergence(domain, x0):
    fine = band_estimate(green_run(domain, x0, 4, extra=2))
    finer = band_estimate(green_run(domain, x0, 4, extra=3))
    assert abs(fine - finer) <= 0.2 * finer


def test_band_measurement_parts():
    run = green_run("lshape", X0, 3, extra=1)
    m = band_measurement(run)
    assert m.cumulative[-1] == pytest.approx(m.value, rel=1e-12)
    assert np.all(np.diff(m.cumulative) >= 0)
    assert m.decay_rate > 0 and 0 <= m.tail < 1e-3 * m.value


@pytest.fixture(scope="module")
def fine_run():
    return green_run("lshape", X0, 7, extra=0, T=0.25)


def test_annulus_profile_rows(fine_run):
    mesh = fine_run.coarse.space.mesh
    dec = dyadic_annuli(mesh, X0)
    rows = annulus_profile(fine_run, dec)
    assert [r["j"] for r in rows] == list(range(dec.J_star + 1)) + ["star"]
    assert sum(r["count"] for r in rows) == mesh.n_triangles
    for r in rows:
        if r["empty"]:
            assert r["sup_norm"] == 0.0 and r["grad_l2"] == 0.0
    inner = [r for r in rows[1:-1] if not r["empty"]]
    d = np.log([r["d_j"] for r in inner])
    s = np.log([r["sup_norm"] for r in inner])
    assert np.polyfit(d, s, 1)[0] <= -0.5


def test_annulus_profile_flags_empty_annulus(fine_run):
    # at the domain corner the outermost annulus lies outside the domain
    mesh = fine_run.coarse.space.mesh
    dec = dyadic_annuli(mesh, X0)
    rows = annulus_profile(fine_run, dec)
    j0 = rows[0]
    assert j0["count"] == 0 and j0["empty"] and j0["sup_norm"] == 0.0


def test_annulus_profile_rejects_mismatch(fine_run):
    mesh = fine_run.coarse.space.mesh
    with pytest.raises(ValueError):
        annulus_profile(fine_run, dyadic_annuli(mesh, (0.3, 0.3)))


def test_csv_reports(tmp_path, fine_run):
    run = green_run("lshape", X0, 3, extra=1)
    p = tmp_path / "g.csv"
    write_green_csv(run, p)
    with open(p) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["t", "l1_coarse", "l1_ref", "grad_l1_band", "cumulative_band_estimate"]
    assert len(rows) == len(run.times)
    assert float(rows[-1]["cumulative_band_estimate"]) == pytest.approx(band_estimate(run), rel=1e-12)
    q = tmp_path / "a.csv"
    write_annulus_csv(annulus_profile(fine_run, dyadic_annuli(fine_run.coarse.space.mesh, X0)), q)
    with open(q) as fh:
        assert next(csv.reader(fh)) == ["j", "d_j", "sup_norm", "grad_l2", "count", "empty"]


def test_custom_mesh_uses_edge_length_width():
    m = build_polygon_mesh(Polygon([[0, 0], [2, 0], [2, 1], [0, 1]]))
    assert isinstance(m, Mesh)
    assert refine_uniform(m).width == pytest.approx(m.width / 2)
    assert construct_regularized_delta(refine_uniform(refine_uniform(m)), (1.0, 0.5)) is not None
    assert norm(FeSpace(m), np.ones(m.n_nodes), "L1") == pytest.approx(2.0)
