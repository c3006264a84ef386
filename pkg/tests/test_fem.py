import math

import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from wmplab.fem import (
    FeSpace,
    SingularSystemError,
    boundary_solve,
    construct_regularized_delta,
    discrete_delta,
    factorize,
    interpolate,
    l2_project,
    norm,
    point_functional,
    prolongation,
    ritz_project,
    shifted_solve,
)
from wmplab.mesh import Polygon, build_polygon_mesh, domain_mesh, refine_uniform
from wmplab.quadrature import disk_rule, triangle_rule

# P1 on the reference right triangle (0,0), (1,0), (0,1): gradients of the
# hat functions are (-1,-1), (1,0), (0,1) and the area is 1/2
REF_STIFFNESS = np.array([[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]])
REF_MASS = (0.5 / 12.0) * np.array([[2.0, 1, 1], [1, 2, 1], [1, 1, 2]])


def _ref_space(degree=1):
    return FeSpace(build_polygon_mesh(Polygon([[0, 0], [1, 0], [0, 1]])), degree)


def _sin2(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def _l2_error(space, u, f):
    xq, lam, w = space.quadrature_points(8)
    uh = space.element_values(u, lam)
    e = (uh - f(xq[..., 0], xq[..., 1])) ** 2
    return math.sqrt(np.sum(space.mesh.areas * (e @ w)))


def _h1_error(space, u, grad):
    xq, lam, w = space.quadrature_points(8)
    gh = space.element_gradients(u, lam)
    gx, gy = grad(xq[..., 0], xq[..., 1])
    e = (gh[..., 0] - gx) ** 2 + (gh[..., 1] - gy) ** 2
    return math.sqrt(np.sum(space.mesh.areas * (e @ w)))


def test_triangle_rule_exactness():
    # int over the reference triangle of x^a y^b = a! b! / (a + b + 2)!
    for deg in range(0, 9):
        lam, w = triangle_rule(deg)
        x, y = lam[:, 1], lam[:, 2]
        for a in range(deg + 1):
            b = deg - a
            exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
            assert 0.5 * np.sum(w * x**a * y**b) == pytest.approx(exact, rel=1e-13)


def test_disk_rule_moments():
    pts, w = disk_rule(12, 24)
    assert np.sum(w) == pytest.approx(math.pi, rel=1e-14)
    r2 = np.sum(pts**2, axis=1)
    # int_disk r^4 = 2 pi / 6
    assert np.sum(w * r2**2) == pytest.approx(math.pi / 3, rel=1e-13)


def test_reference_element_matrices():
    sp = _ref_space()
    np.testing.assert_allclose(sp.stiffness.toarray(), REF_STIFFNESS, atol=1e-15)
    np.testing.assert_allclose(sp.mass.toarray(), REF_MASS, atol=1e-15)


@pytest.mark.parametrize("degree", [1, 2])
def test_dof_counts_and_partition(degree):
    m = domain_mesh("lshape", 2)
    sp = FeSpace(m, degree)
    expected = m.n_nodes if degree == 1 else m.n_nodes + len(m.edges)
    assert sp.n_dofs == expected
    assert len(np.intersect1d(sp.boundary_dofs, sp.interior_dofs)) == 0
    assert len(sp.boundary_dofs) + len(sp.interior_dofs) == sp.n_dofs
    x = sp.dof_coords[sp.boundary_dofs]
    assert np.all(sp.mesh.polygon.distance_to_boundary(x) < 1e-14)
    assert np.all(sp.mesh.polygon.distance_to_boundary(sp.dof_coords[sp.interior_dofs]) > 1e-3)


@pytest.mark.parametrize("degree", [1, 2])
def test_operator_symmetry_and_kernel(degree):
    sp = FeSpace(domain_mesh("lshape", 3), degree)
    M, A = sp.mass, sp.stiffness
    assert abs(M - M.T).max() <= 1e-14
    assert abs(A - A.T).max() <= 1e-14
    one = np.ones(sp.n_dofs)
    assert np.abs(A @ one).max() <= 1e-12
    assert one @ M @ one == pytest.approx(0.75, rel=1e-13)
    assert np.linalg.eigvalsh(M.toarray()).min() > 0


def test_p2_mass_integrates_quadratics():
    sp = FeSpace(domain_mesh("square", 1), 2)
    u = interpolate(sp, lambda x, y: x * y)
    # int_0^1 int_0^1 x^2 y^2 = 1/9
    assert u @ sp.mass @ u == pytest.approx(1.0 / 9.0, rel=1e-13)
    v = interpolate(sp, lambda x, y: x * x)
    # int |grad x^2|^2 = int 4 x^2 = 4/3
    assert v @ sp.stiffness @ v == pytest.approx(4.0 / 3.0, rel=1e-13)


@pytest.mark.parametrize("degree,rate", [(1, 2.0), (2, 3.0)])
def test_interpolation_rate(degree, rate):
    errs = []
    for lv in (2, 3, 4, 5):
        sp = FeSpace(domain_mesh("square", lv), degree)
        errs.append(_l2_error(sp, interpolate(sp, _sin2), _sin2))
    slopes = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert abs(slopes[-1] - rate) < 0.1


def _grad_sin2(x, y):
    return (np.pi * np.cos(np.pi * x) * np.sin(np.pi * y), np.pi * np.sin(np.pi * x) * np.cos(np.pi * y))


@pytest.mark.parametrize("degree", [1, 2])
def test_ritz_projection_rate(degree):
    errs = []
    for lv in (2, 3, 4, 5):
        sp = FeSpace(domain_mesh("square", lv), degree)
        errs.append(_h1_error(sp, ritz_project(sp, _sin2, grad=_grad_sin2), _grad_sin2))
    slopes = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert abs(slopes[-1] - degree) < 0.1


def test_ritz_projection_is_identity_on_the_space():
    sp = FeSpace(domain_mesh("lshape", 3), 2)
    rng = np.random.default_rng(1)
    u = np.zeros(sp.n_dofs)
    u[sp.interior_dofs] = rng.standard_normal(len(sp.interior_dofs))
    np.testing.assert_allclose(ritz_project(sp, u), u, atol=1e-11)


def test_l2_projection_orthogonality():
    sp = FeSpace(domain_mesh("lshape", 3), 1)
    p = l2_project(sp, _sin2)
    b = sp.load_vector(_sin2)
    r = (sp.mass @ p - b)[sp.interior_dofs]
    assert np.abs(r).max() <= 1e-14


@pytest.mark.parametrize("degree", [1, 2])
def test_discrete_delta_duality(degree):
    sp = FeSpace(domain_mesh("lshape", 3), degree)
    x0 = np.array([0.23, 0.31])
    d = discrete_delta(sp, x0)
    rng = np.random.default_rng(2)
    for _ in range(5):
        chi = np.zeros(sp.n_dofs)
        chi[sp.interior_dofs] = rng.standard_normal(len(sp.interior_dofs))
        assert chi @ sp.mass @ d == pytest.approx(sp.evaluate(chi, x0[None])[0], abs=1e-10)


def test_point_functional_partition_of_unity():
    sp = FeSpace(domain_mesh("square", 3), 2)
    e = point_functional(sp, (0.3, 0.7))
    assert e.sum() == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("degree", [1, 2])
def test_regularized_delta_moments(degree):
    m = domain_mesh("lshape", 3)
    x0 = np.array([0.26, 0.2])
    dt = construct_regularized_delta(m, x0, degree)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            val = dt.integrate(lambda p: p[:, 0] ** a * p[:, 1] ** b)
            assert val == pytest.approx(x0[0] ** a * x0[1] ** b, abs=1e-12)
    # support inside the host triangle
    x, _ = dt.rule()
    tri, _ = m.locate(x)
    assert np.all(tri == dt.host)


@pytest.mark.parametrize("degree", [1, 2])
def test_projection_of_regularized_delta_is_discrete_delta(degree):
    m = domain_mesh("lshape", 3)
    sp = FeSpace(m, degree)
    x0 = (0.25, 0.25)
    dt = construct_regularized_delta(m, x0, degree)
    np.testing.assert_allclose(l2_project(sp, dt), discrete_delta(sp, x0), atol=1e-10 * np.abs(discrete_delta(sp, x0)).max())


def test_norms_of_simple_fields():
    sp = FeSpace(domain_mesh("lshape", 2), 1)
    one = np.ones(sp.n_dofs)
    x = interpolate(sp, lambda a, b: a)
    assert norm(sp, one, "L2") == pytest.approx(math.sqrt(0.75), rel=1e-14)
    assert norm(sp, one, "L1") == pytest.approx(0.75, rel=1e-14)
    assert norm(sp, x, "Linf") == pytest.approx(1.0)
    assert norm(sp, x, "H1semi") == pytest.approx(math.sqrt(0.75), rel=1e-14)
    assert norm(sp, x, "gradL1") == pytest.approx(0.75, rel=1e-14)
    # int x over [0,1]x[0,1/2] is 1/4, over [0,1/2]x[1/2,1] it is 1/16
    assert norm(sp, x, "L1") == pytest.approx(0.25 + 0.0625, rel=1e-14)
    with pytest.raises(ValueError):
        norm(sp, x, "W2")


def test_norm_on_region():
    from wmplab.mesh import Region

    sp = FeSpace(domain_mesh("square", 2), 1)
    r = Region(np.arange(4))
    assert norm(sp, np.ones(sp.n_dofs), "L1", r) == pytest.approx(sp.mesh.areas[:4].sum())


def test_shifted_solve_on_discrete_eigenpair():
    sp = FeSpace(domain_mesh("square", 4), 1)
    lam, vec = spla.eigsh(sp.A_II.tocsc(), k=1, M=sp.M_II.tocsc(), sigma=0.0)
    v = np.zeros(sp.n_dofs)
    v[sp.interior_dofs] = vec[:, 0]
    for z in (1.0, 3.0 + 4.0j, -2.0 + 10.0j):
        u = shifted_solve(sp, z, v)
        np.testing.assert_allclose(u, v / (z + lam[0]), atol=1e-10)
    # continuous first eigenvalue 2 pi^2 approached from above
    assert 2 * math.pi**2 < lam[0] < 2 * math.pi**2 * 1.05


def test_boundary_solve_reproduces_linear_harmonic():
    for degree in (1, 2):
        sp = FeSpace(domain_mesh("lshape", 3), degree)
        f = interpolate(sp, lambda x, y: 2 * x - 3 * y + 1)
        u = boundary_solve(sp, 0.0, f[sp.boundary_dofs])
        np.testing.assert_allclose(u, f, atol=1e-12)


def test_boundary_solve_matrix_argument():
    sp = FeSpace(domain_mesh("square", 3), 1)
    g = np.random.default_rng(3).standard_normal((len(sp.boundary_dofs), 3))
    U = boundary_solve(sp, 2.0 + 1.0j, g)
    for j in range(3):
        np.testing.assert_allclose(U[:, j], boundary_solve(sp, 2.0 + 1.0j, g[:, j]), atol=1e-14)


def test_shift_factor_cache_reuses_factorization():
    sp = FeSpace(domain_mesh("square", 3), 1)
    assert sp.shifted_factor(2.5) is sp.shifted_factor(2.5)


def test_singular_system_detected():
    sp = FeSpace(domain_mesh("square", 2), 1)
    with pytest.raises(SingularSystemError):
        factorize(sp.stiffness)


@pytest.mark.parametrize("degree", [1, 2])
def test_prolongation_is_exact_embedding(degree):
    m0 = domain_mesh("lshape", 2)
    m1 = refine_uniform(refine_uniform(m0))
    c, f = FeSpace(m0, degree), FeSpace(m1, degree)
    u = np.random.default_rng(4).standard_normal(c.n_dofs)
    P = prolongation(c, f)
    pts = np.random.default_rng(5).uniform(0, 0.5, size=(40, 2))
    np.testing.assert_allclose(f.evaluate(P @ u, pts), c.evaluate(u, pts), atol=1e-12)


def test_l2_projection_from_fine_pair_is_exact_on_coarse_functions():
    m0 = domain_mesh("square", 2)
    c, f = FeSpace(m0), FeSpace(refine_uniform(m0))
    u = np.zeros(c.n_dofs)
    u[c.interior_dofs] = np.random.default_rng(6).standard_normal(len(c.interior_dofs))
    np.testing.assert_allclose(l2_project(c, (f, prolongation(c, f) @ u)), u, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.02, 0.98), st.floats(0.02, 0.98))
def test_delta_duality_random_anchor(x, y):
    sp = FeSpace(domain_mesh("square", 2), 1)
    d = discrete_delta(sp, (x, y))
    chi = interpolate(sp, _sin2)
    assert chi @ sp.mass @ d == pytest.approx(sp.evaluate(chi, [[x, y]])[0], abs=1e-10)
