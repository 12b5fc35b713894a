import numpy as np
import pytest

from mimpde import catalog as cat
from mimpde import constructions as cons
from mimpde import geometry as geo
from mimpde.autodiff import DiffVector, NonFiniteError, lift_input
from mimpde.network import NetworkSpec, init_parameters


def _const_net(d_in, d_out, value):
    """A network that outputs the constant `value` in every component."""
    params = init_parameters(NetworkSpec(d_in, max(d_in, 4), 1, d_out), 0)
    params.set_vector(np.zeros(params.size))
    params.block("bout").value[...] = value
    return params


def _rand_net(d_in, d_out, rng, n=6, m=2, act="requ"):
    return init_parameters(NetworkSpec(d_in, n, m, d_out, act), rng)


# ---------------------------------------------------------------------------
# Dirichlet


def test_dirichlet_trial_boundary_value():
    rng = np.random.default_rng(0)
    bd = geo.boundary_functions("dirichlet-elliptic-ball").dirichlet
    trial = cons.dirichlet_trial(_rand_net(2, 1, rng), _rand_net(2, 2, rng), bd)
    pts, _ = geo.UnitBall(2).sample_boundary("all", 1000, rng)
    u = trial.fields(lift_input(pts)).u
    assert np.max(np.abs(u.value - np.e)) <= 1e-12 * np.e


def test_dirichlet_trial_at_center():
    # L(0) = -1, so u(0) = e - N(0)
    c = 0.37
    bd = geo.boundary_functions("dirichlet-elliptic-ball").dirichlet
    trial = cons.dirichlet_trial(_const_net(2, 1, c), None, bd)
    u = trial.fields(lift_input(np.zeros((1, 2)))).u
    assert u.value[0] == pytest.approx(np.e - c, abs=1e-14)


def test_dirichlet_independence_of_p():
    # perturbing p's parameters never changes u (and vice versa)
    rng = np.random.default_rng(1)
    net_u, net_p = _rand_net(2, 1, rng), _rand_net(2, 2, rng)
    bd = geo.boundary_functions("dirichlet-elliptic-ball").dirichlet
    trial = cons.dirichlet_trial(net_u, net_p, bd)
    pts = geo.UnitBall(2).sample_interior(50, rng)
    f1 = trial.fields(lift_input(pts))
    u1, p1 = f1.u.value.copy(), f1.p.value.copy()
    net_p.set_vector(rng.standard_normal(net_p.size))
    f2 = trial.fields(lift_input(pts))
    assert np.array_equal(f2.u.value, u1)
    assert not np.allclose(f2.p.value, p1)
    net_u.set_vector(rng.standard_normal(net_u.size))
    f3 = trial.fields(lift_input(pts))
    assert np.array_equal(f3.p.value, f2.p.value)


def test_monge_ampere_trial_sphere_value():
    rng = np.random.default_rng(2)
    for d in (2, 4):
        bd = geo.boundary_functions("monge-ampere").dirichlet
        trial = cons.dirichlet_trial(_rand_net(d, 1, rng), _rand_net(d, d, rng), bd)
        pts, _ = geo.UnitBall(d).sample_boundary("all", 500, rng)
        u = trial.fields(lift_input(pts)).u
        assert np.max(np.abs(u.value - np.exp(1.0 / d))) <= 1e-12 * np.exp(1.0 / d)


# ---------------------------------------------------------------------------
# Neumann


def test_neumann_mim_ball_algebraic_identity():
    # p = (-x·N*) x + N*  =>  p·x = 0 on the unit sphere
    rng = np.random.default_rng(3)
    bd = geo.boundary_functions("neumann-ball").flux
    trial = cons.neumann_trial_mim(_rand_net(2, 1, rng), _rand_net(2, 2, rng), bd)
    pts, nus = geo.UnitBall(2).sample_boundary("all", 1000, rng)
    p = trial.fields(lift_input(pts)).p
    flux = (p.value * nus).sum(axis=1)
    assert np.max(np.abs(flux)) <= 1e-10


def test_neumann_cube_face_values():
    # p_i = x_i(1-x_i) N*_i + (e-1)x_i + 1 equals 1 at x_i=0 and e at x_i=1
    rng = np.random.default_rng(4)
    bd = geo.boundary_functions("neumann-cube").flux
    trial = cons.neumann_trial_mim(_rand_net(2, 1, rng), _rand_net(2, 2, rng), bd)
    pts = rng.random((200, 2))
    pts[:100, 0] = 0.0
    pts[100:, 0] = 1.0
    p = trial.fields(lift_input(pts)).p
    assert np.allclose(p.value[:100, 0], 1.0, atol=1e-12)
    assert np.allclose(p.value[100:, 0], np.e, atol=4e-12)


def test_neumann_dgm_flux_zero_via_autodiff():
    rng = np.random.default_rng(5)
    bd = geo.boundary_functions("neumann-ball").flux
    trial = cons.neumann_trial_dgm(_rand_net(2, 1, rng), bd)
    pts, nus = geo.UnitBall(2).sample_boundary("all", 1000, rng)
    xv = lift_input(pts)
    u = trial.fields(xv).u
    flux = (u.grad(xv).value * nus).sum(axis=1)
    assert np.max(np.abs(flux)) <= 1e-10


def test_neumann_dgm_linear_net_closed_form():
    # for N(x) = c·x + b: F = -(x·c), u = L F + N; verify against closed form
    c = np.array([0.8, -0.3])
    b = 0.2
    params = init_parameters(NetworkSpec(2, 2, 1, 1), 0)
    params.set_vector(np.zeros(params.size))
    params.block("Wout").value[...] = c[None, :]
    params.block("bout").value[...] = b
    bd = geo.boundary_functions("neumann-ball").flux
    trial = cons.neumann_trial_dgm(params, bd)
    rng = np.random.default_rng(6)
    pts = geo.UnitBall(2).sample_interior(100, rng)
    u = trial.fields(lift_input(pts)).u
    r2 = (pts**2).sum(axis=1)
    want = 0.5 * (r2 - 1.0) * (-(pts @ c)) + pts @ c + b
    assert np.allclose(u.value, want, atol=1e-13)


def test_denominator_floor_trip():
    # a multiplier whose gradient vanishes at the origin, with the literal
    # denominator: the guard must name the offending sample
    bd = geo.BoundaryData(
        kind="flux",
        style="projection",
        L=lambda x: 0.5 * (x.norm_sq() - 1.0),
        grad_L=lambda x: x,
        G=lambda x: 0.0,
        normal_ext=lambda x: x,
        denom=None,  # computed as grad_L·nu = |x|^2, which vanishes at 0
    )
    rng = np.random.default_rng(7)
    net_u, net_p = _rand_net(2, 1, rng), _rand_net(2, 2, rng)
    pts = np.array([[0.5, 0.1], [0.0, 0.0]])
    with pytest.raises(NonFiniteError) as err:
        cons.neumann_trial_mim(net_u, net_p, bd).fields(lift_input(pts))
    assert "index 1" in str(err.value)


# ---------------------------------------------------------------------------
# mixed


def test_mixed_slab_prefactors():
    rng = np.random.default_rng(8)
    spec = geo.boundary_functions("mixed-slab")
    trial = cons.mixed_trial_mim(_rand_net(2, 1, rng), _rand_net(2, 2, rng),
                                 spec.dirichlet, spec.flux)
    pts = rng.random((100, 2))
    pts[:50, 0] = 1.0  # Dirichlet face
    pts[50:, 1] = 0.0  # Neumann face
    f = trial.fields(lift_input(pts))
    assert np.max(np.abs(f.u.value[:50])) <= 1e-12
    assert np.max(np.abs(f.p.value[50:, 1])) <= 1e-12


def test_mixed_annulus_inner_value():
    rng = np.random.default_rng(9)
    spec = geo.boundary_functions("mixed-annulus")
    trial = cons.mixed_trial_mim(_rand_net(2, 1, rng), _rand_net(2, 2, rng),
                                 spec.dirichlet, spec.flux)
    pts, _ = geo.Annulus(2).sample_boundary("dirichlet", 500, rng)
    u = trial.fields(lift_input(pts)).u
    assert np.max(np.abs(u.value - np.cos(0.75))) <= 1e-12


# ---------------------------------------------------------------------------
# Robin


def test_robin_mim_one_dimensional_hand_expansion():
    # d=1 on [0,1]: F = (G - N - N*·nu)/denominator with explicit fields
    bd = geo.BoundaryData(
        kind="robin",
        style="projection",
        L=lambda x: x[0] * (x[0] - 1.0),
        grad_L=lambda x: DiffVector.stack([2.0 * x[0] - 1.0]),
        G=lambda x: 2.0,
        normal_ext=lambda x: DiffVector.stack([2.0 * x[0] - 1.0]),
        denom=None,  # (2x-1)^2, fine away from x = 1/2
    )
    cu, cp = 0.3, -0.7
    net_u, net_p = _const_net(1, 1, cu), _const_net(1, 1, cp)
    trial = cons.robin_trial_mim(net_u, net_p, bd)
    pts = np.array([[0.8], [0.9], [0.15]])
    f = trial.fields(lift_input(pts))
    x = pts[:, 0]
    F = (2.0 - cu - cp * (2 * x - 1)) / (2 * x - 1) ** 2
    want_p = F * (2 * x - 1) + cp
    assert np.allclose(f.p.value[:, 0], want_p, atol=1e-13)
    # and the Robin combination is exact on the boundary x=1 (nu=+1)
    fb = trial.fields(lift_input(np.array([[1.0]])))
    assert fb.p.value[0, 0] + cu == pytest.approx(2.0, abs=1e-13)


def test_robin_dgm_boundary_identity_sampled():
    rng = np.random.default_rng(10)
    bd = geo.boundary_functions("robin-ball").robin
    trial = cons.robin_trial_dgm(_rand_net(2, 1, rng), bd)
    report = cons.verify_exactness(trial, geo.UnitBall(2), 1000, rng)
    assert report.passed, report.entries


def test_robin_sumdiff_face_pinning():
    rng = np.random.default_rng(11)
    bd = geo.boundary_functions("robin-sumdiff").robin
    trial = cons.robin_split_trial((_rand_net(2, 2, rng), _rand_net(2, 2, rng)), bd, "SumDiff")
    pts = rng.random((200, 2))
    pts[:100, 0] = 0.0
    pts[100:, 0] = 1.0
    xv = lift_input(pts)
    f = trial.fields(xv)
    G0 = np.sin(pts.sum(axis=1)) + (2 * pts[:, 0] - 1) * np.cos(pts.sum(axis=1))
    assert np.allclose(f.r_lo.value[:100, 0], G0[:100], atol=1e-12)
    assert np.allclose(f.r_hi.value[100:, 0], G0[100:], atol=1e-12)


def test_robin_augmented_face_pinning():
    rng = np.random.default_rng(12)
    bd = geo.boundary_functions("robin-augmented").robin
    trial = cons.robin_split_trial((_rand_net(2, 1, rng), _rand_net(2, 2, rng)), bd, "Augmented")
    pts = rng.random((200, 2))
    pts[:100, 1] = 0.0
    pts[100:, 1] = 1.0
    f = trial.fields(lift_input(pts))
    G = np.sin(pts.sum(axis=1)) + np.cos(pts.sum(axis=1))
    got = f.p.value[:, 1] + f.u.value
    assert np.allclose(got, G, atol=1e-12)


def test_robin_split_requires_componentwise_data():
    rng = np.random.default_rng(13)
    bd = geo.boundary_functions("robin-ball").robin
    with pytest.raises(cons.ConstructionError):
        cons.robin_split_trial((_rand_net(2, 2, rng), _rand_net(2, 2, rng)), bd, "SumDiff")
    with pytest.raises(cons.ConstructionError):
        cons.robin_split_trial(
            (_rand_net(2, 2, rng), _rand_net(2, 2, rng)),
            geo.boundary_functions("robin-sumdiff").robin,
            "Other",
        )


# ---------------------------------------------------------------------------
# periodic


def test_periodic_features_layout():
    x = lift_input(np.array([[0.5, -0.25]]))
    z = cons.periodic_features(x, 2.0, 1)
    # per axis: sin(pi x_i), cos(pi x_i)
    want = [np.sin(np.pi * 0.5), np.cos(np.pi * 0.5),
            np.sin(-np.pi * 0.25), np.cos(-np.pi * 0.25)]
    assert np.allclose(z.value[0], want, atol=1e-15)
    assert np.allclose(z.value[0][:2], [1.0, 0.0], atol=1e-15)


def test_periodic_features_width():
    x = lift_input(np.zeros((1, 2)))
    z = cons.periodic_features(x, 2.0, 3)
    assert z.width == 12


def test_periodic_features_exact_shift():
    rng = np.random.default_rng(14)
    pts = rng.uniform(-1, 1, (200, 3))
    z1 = cons.periodic_features(lift_input(pts), 2.0, 2).value
    for i in range(3):
        moved = pts.copy()
        moved[:, i] += 2.0
        z2 = cons.periodic_features(lift_input(moved), 2.0, 2).value
        assert np.max(np.abs(z1 - z2)) < 1e-13


def test_periodic_features_validation():
    x = lift_input(np.zeros((1, 2)))
    with pytest.raises(cons.ConstructionError):
        cons.periodic_features(x, -1.0, 1)
    with pytest.raises(cons.ConstructionError):
        cons.periodic_features(x, 2.0, 0)


def test_periodic_trial_network_periodicity():
    rng = np.random.default_rng(15)
    trial = cons.periodic_trial(_rand_net(4, 1, rng, act="swish"),
                                _rand_net(4, 2, rng, act="swish"), 2.0, 1)
    report = cons.verify_exactness(trial, geo.SymmetricCube(2), 1000, rng)
    assert report.passed
    assert report.max_residual <= 1e-12


# ---------------------------------------------------------------------------
# time-dependent


def test_parabolic_trial_zero_at_t0_and_walls():
    rng = np.random.default_rng(16)
    trial = cons.parabolic_trial(_rand_net(3, 1, rng, act="swish"))
    pts = rng.random((100, 3))
    pts[:50, -1] = 0.0  # t = 0
    pts[50:, 0] = 1.0  # lateral wall
    u = trial.fields(lift_input(pts)).u
    assert np.max(np.abs(u.value)) <= 1e-12


def test_wave_trial_both_initial_conditions():
    rng = np.random.default_rng(17)
    trial = cons.wave_trial_mim2(
        _rand_net(3, 1, rng), _rand_net(3, 1, rng), _rand_net(3, 2, rng)
    )
    pts = rng.random((100, 3))
    pts[:, -1] = 0.0
    f = trial.fields(lift_input(pts))
    assert np.max(np.abs(f.u.value)) <= 1e-12
    assert np.max(np.abs(f.v.value)) <= 1e-12
    # at t > 0 on the wall: u pinned, v free
    pts2 = rng.random((50, 3))
    pts2[:, 0] = 0.0
    pts2[:, -1] = 0.5
    f2 = trial.fields(lift_input(pts2))
    assert np.max(np.abs(f2.u.value)) <= 1e-12
    assert np.min(np.abs(f2.v.value)) > 0


def test_penalty_trial_rejected_by_verify():
    rng = np.random.default_rng(18)
    trial = cons.penalty_trial([_rand_net(2, 1, rng)])
    with pytest.raises(cons.ConstructionError):
        cons.verify_exactness(trial, geo.UnitCube(2), 10, rng)


# ---------------------------------------------------------------------------
# exactness for all parameters (the fast version; acceptance runs 20 draws)


@pytest.mark.parametrize("name", [c[0] for c in __import__("mimpde.verification", fromlist=["exactness_cases"]).exactness_cases()])
def test_exactness_three_draws(name):
    from mimpde.verification import exactness_cases

    build = dict(exactness_cases())[name]
    rng = np.random.default_rng(19)
    for _ in range(3):
        trial, domain = build(rng)
        report = cons.verify_exactness(trial, domain, 300, rng)
        assert report.passed, (name, report.entries)
