import numpy as np
import pytest

from mimpde import geometry as geo
from mimpde.autodiff import lift_input

# chi-square critical values at the 1% level (dof: 2^d - 1)
_CHI2_99 = {3: 11.345, 7: 18.475, 15: 30.578}


def test_ball_mean_norm():
    # uniform on the d-ball: E|x| = d/(d+1)
    rng = np.random.default_rng(0)
    for d in (2, 3):
        pts = geo.sample_interior(geo.UnitBall(d), 100_000, rng)
        r = np.linalg.norm(pts, axis=1)
        mean, want = r.mean(), d / (d + 1)
        se = r.std() / np.sqrt(len(r))
        assert abs(mean - want) < 3 * se


def test_ball_octant_uniformity_chi_square():
    rng = np.random.default_rng(1)
    for d in (2, 3):
        pts = geo.sample_interior(geo.UnitBall(d), 100_000, rng)
        signs = (pts > 0).astype(int)
        cell = signs @ (2 ** np.arange(d))
        counts = np.bincount(cell, minlength=2**d)
        expected = len(pts) / 2**d
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        assert chi2 < _CHI2_99[2**d - 1]


def test_cube_support():
    rng = np.random.default_rng(2)
    pts = geo.sample_interior(geo.UnitCube(4), 5_000, rng)
    assert pts.shape == (5_000, 4)
    assert np.all((pts >= 0.0) & (pts <= 1.0))


def test_annulus_support_and_radius_law():
    rng = np.random.default_rng(3)
    dom = geo.Annulus(2)
    pts = geo.sample_interior(dom, 50_000, rng)
    r = np.linalg.norm(pts, axis=1)
    assert np.all((r > 0.5) & (r < 1.0))
    # P(R <= r) = (r^2 - r0^2)/(r1^2 - r0^2); check the median
    med = np.sqrt(0.25 + 0.5 * (1.0 - 0.25))
    assert abs(np.median(r) - med) < 5e-3


def test_sphere_boundary_normals():
    rng = np.random.default_rng(4)
    pts, nus = geo.sample_boundary(geo.UnitBall(3), "all", 2_000, rng)
    assert np.allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-12)
    assert np.allclose(nus, pts)
    assert np.max(np.abs(np.linalg.norm(nus, axis=1) - 1.0)) < 1e-14


def test_cube_face_normals():
    rng = np.random.default_rng(5)
    pts, nus = geo.sample_boundary(geo.UnitCube(3), "all", 4_000, rng)
    on_face = np.isclose(pts, 0.0) | np.isclose(pts, 1.0)
    assert np.all(on_face.sum(axis=1) >= 1)
    # the normal points along the face axis, outward
    ax = np.argmax(np.abs(nus), axis=1)
    vals = pts[np.arange(len(pts)), ax]
    signs = nus[np.arange(len(pts)), ax]
    assert np.all(np.isin(vals, (0.0, 1.0)))
    assert np.all(signs == 2 * vals - 1)
    assert np.max(np.abs(np.linalg.norm(nus, axis=1) - 1.0)) < 1e-14


def test_annulus_portion_normals():
    rng = np.random.default_rng(6)
    dom = geo.Annulus(2)
    pts, nus = geo.sample_boundary(dom, "dirichlet", 500, rng)
    assert np.allclose(np.linalg.norm(pts, axis=1), 0.5, atol=1e-12)
    assert np.allclose(nus, -pts / 0.5)
    pts, nus = geo.sample_boundary(dom, "neumann", 500, rng)
    assert np.allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-12)
    assert np.allclose(nus, pts)


def test_unknown_portion_rejected():
    rng = np.random.default_rng(7)
    with pytest.raises(geo.GeometryError):
        geo.sample_boundary(geo.UnitBall(2), "dirichlet", 10, rng)
    with pytest.raises(geo.GeometryError):
        geo.sample_boundary(geo.UnitCube(2), "neumann", 10, rng)


def test_slab_portions():
    rng = np.random.default_rng(8)
    dom = geo.UnitCube(3, dirichlet_axes=(0,))
    pts, nus = geo.sample_boundary(dom, "dirichlet", 1_000, rng)
    assert np.all(np.isin(pts[:, 0], (0.0, 1.0)))
    assert np.all(np.abs(nus[:, 0]) == 1.0)
    pts, nus = geo.sample_boundary(dom, "neumann", 1_000, rng)
    assert np.all((pts[:, 0] > 0) & (pts[:, 0] < 1))
    assert np.all(nus[:, 0] == 0.0)


def test_polygon_membership_and_sampling():
    dom = geo.PolygonSlab(2)
    inside = np.array([[-0.5, 0.25], [-0.7, 0.2], [-0.45, 0.42]])
    outside = np.array([[0.5, 0.5], [-0.5, 0.7], [-0.2, 0.1], [-0.45, -0.1]])
    assert np.all(dom.contains(inside))
    assert not np.any(dom.contains(outside))
    rng = np.random.default_rng(9)
    pts = geo.sample_interior(dom, 5_000, rng)
    assert np.all(dom.contains(pts))
    # the trial prefactor never vanishes inside
    psi, *_ = geo._poly_partials(pts)
    assert np.min(np.abs(psi)) > 0


def test_polygon_boundary_on_zero_set():
    rng = np.random.default_rng(10)
    dom = geo.PolygonSlab(2)
    pts, nus = geo.sample_boundary(dom, "dirichlet", 2_000, rng)
    psi, *_ = geo._poly_partials(pts)
    assert np.max(np.abs(psi)) < 1e-12
    assert np.max(np.abs(np.linalg.norm(nus, axis=1) - 1.0)) < 1e-14


def test_polygon_slab_extra_axes():
    rng = np.random.default_rng(11)
    dom = geo.PolygonSlab(4)
    pts = geo.sample_interior(dom, 2_000, rng)
    assert np.all(dom.contains(pts))
    bpts, bnus = geo.sample_boundary(dom, "neumann", 500, rng)
    assert np.all(np.isin(bpts[np.abs(bnus) == 1.0], (0.0, 1.0)))


def test_time_cylinder():
    rng = np.random.default_rng(12)
    dom = geo.TimeCylinder(geo.UnitCube(2))
    pts = geo.sample_interior(dom, 3_000, rng)
    assert pts.shape == (3_000, 3)
    assert np.all((pts[:, -1] > 0) & (pts[:, -1] < 1))
    ini, _ = geo.sample_boundary(dom, "initial", 500, rng)
    assert np.all(ini[:, -1] == 0.0)
    lat, nus = geo.sample_boundary(dom, "lateral", 500, rng)
    face_vals = lat[:, :2][np.abs(nus[:, :2]) == 1.0]
    assert np.all(np.isin(face_vals, (0.0, 1.0)))
    assert np.all(nus[:, -1] == 0.0)


def test_sample_count_validation():
    rng = np.random.default_rng(13)
    with pytest.raises(geo.GeometryError):
        geo.sample_interior(geo.UnitBall(2), 0, rng)


# ---------------------------------------------------------------------------
# boundary helper fields


def _eval_L(bd, pts):
    return np.atleast_1d(bd.L(lift_input(pts)).value)


def test_boundary_functions_unknown_id():
    with pytest.raises(geo.GeometryError):
        geo.boundary_functions("no-such-experiment")


def test_dirichlet_ball_fields():
    spec = geo.boundary_functions("dirichlet-elliptic-ball")
    rng = np.random.default_rng(14)
    dom = spec.domain_factory(3)
    bpts, _ = dom.sample_boundary("all", 10_000, rng)
    assert np.max(np.abs(_eval_L(spec.dirichlet, bpts))) <= 1e-12
    ipts = dom.sample_interior(10_000, rng)
    assert np.min(np.abs(_eval_L(spec.dirichlet, ipts))) > 0
    x = lift_input(np.array([[0.1, 0.2, 0.3]]))
    g = spec.dirichlet.G(x)
    assert float(g) == pytest.approx(np.e)


def test_vanishing_multipliers_on_their_portions():
    rng = np.random.default_rng(15)
    cases = [
        ("mixed-slab", "dirichlet", 2),
        ("mixed-annulus", "dirichlet", 2),
        ("mixed-complex2d", "dirichlet", 2),
        ("monge-ampere", "all", 2),
    ]
    for eid, portion, d in cases:
        spec = geo.boundary_functions(eid)
        dom = spec.domain_factory(d)
        bpts, _ = dom.sample_boundary(portion, 10_000, rng)
        assert np.max(np.abs(_eval_L(spec.dirichlet, bpts))) <= 1e-12, eid
        ipts = dom.sample_interior(10_000, rng)
        assert np.min(np.abs(_eval_L(spec.dirichlet, ipts))) > 0, eid


def test_neumann_ball_denominator_bounded():
    # the catalogued denominator is the constant extension 1 of grad(L)·nu
    spec = geo.boundary_functions("neumann-ball")
    x = lift_input(np.array([[0.0, 0.0], [0.3, -0.2]]))
    assert spec.flux.denom(x) == 1.0


def test_mixed_annulus_dirichlet_value():
    spec = geo.boundary_functions("mixed-annulus")
    x = lift_input(np.array([[0.5, 0.0]]))
    assert np.allclose(_eval_L(spec.dirichlet, x.value), 0.0)
    assert float(spec.dirichlet.G(x)) == pytest.approx(np.cos(0.75))
