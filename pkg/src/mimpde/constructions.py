"""Trial functions that satisfy boundary/initial conditions for every parameter value.

Each builder returns a TrialFunction whose `fields(x)` instantiates the
candidate solution bundle (u, and for the mixed-residual method p and
possibly v) on the tape of x, and whose `checks` list samples the constraint
set and measures the constraint residual.  The residual of a well-formed
construction is zero to rounding for arbitrary network parameters; the
verification suite asserts exactly that.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    DiffScalar,
    DiffVector,
    SafeRecipNode,
    cos,
    lift_input,
    sin,
)
from . import network as net_mod

EPS_DEN = 1e-8  # denominator floor: constructions fail loudly, never regularise


class ConstructionError(Exception):
    pass


def as_scalar(x, v):
    """Wrap python numbers from boundary-data builders as constants on x's tape."""
    if isinstance(v, DiffScalar):
        return v
    return DiffScalar(x.tape, x.tape.constant(float(v)))


def _inv(x, denom, label):
    """1/denom with the floor guard; constant denominators short-circuit."""
    if not isinstance(denom, DiffScalar):
        c = float(denom)
        if abs(c) < EPS_DEN:
            raise ConstructionError(f"constant denominator '{label}' below floor: {c}")
        return as_scalar(x, 1.0 / c)
    node = x.tape._add(SafeRecipNode(x.tape, denom.node, EPS_DEN, label))
    return DiffScalar(x.tape, node)


@dataclass
class TrialFields:
    u: DiffScalar
    p: DiffVector = None
    v: DiffScalar = None
    r_lo: DiffVector = None  # Robin sum/diff auxiliaries
    r_hi: DiffVector = None


@dataclass
class TrialFunction:
    constraint_kind: str  # dirichlet|neumann|robin|mixed|periodic|parabolic-ic|wave-ic|none
    nets: tuple
    fields: object  # callable (x: DiffVector) -> TrialFields
    checks: list = field(default_factory=list)  # ConstraintCheck instances

    def net_params(self):
        return self.nets


@dataclass
class ConstraintCheck:
    """One sampled exactness check: residual must vanish for all parameters."""

    name: str
    sampler: object  # (domain, count, rng) -> (points, normals|None)
    residual: object  # (fields, x, normals) -> DiffScalar | DiffVector
    tol: float  # absolute tolerance (already scaled by the data magnitude)


@dataclass
class ExactnessReport:
    max_residual: float
    worst_point: np.ndarray
    worst_check: str
    entries: list  # (name, max_abs, tol, passed)

    @property
    def passed(self):
        return all(ok for _, _, _, ok in self.entries)


def verify_exactness(trial, domain, sample_count, rng):
    """Sample every constraint of the trial and report the worst residual."""
    if trial.constraint_kind == "none":
        raise ConstructionError("penalty-mode trial has no exact constraint to verify")
    entries = []
    worst = (-1.0, None, "")
    for chk in trial.checks:
        if chk.name == "periodic-shift":
            m, pt = trial.periodic_shift_check(domain, sample_count, rng)
        else:
            pts, normals = chk.sampler(domain, sample_count, rng)
            xv = lift_input(pts)
            res = chk.residual(trial.fields(xv), xv, normals)
            vals = res.value
            if vals.ndim == 1:
                vals = vals[:, None]
            flat = np.abs(vals).max(axis=1)
            i = int(np.argmax(flat))
            m, pt = float(flat[i]), pts[i]
        entries.append((chk.name, m, chk.tol, m <= chk.tol))
        if m > worst[0]:
            worst = (m, pt, chk.name)
    return ExactnessReport(worst[0], worst[1], worst[2], entries)


# samplers ------------------------------------------------------------------


def _boundary_sampler(portion):
    def sample(domain, count, rng):
        return domain.sample_boundary(portion, count, rng)

    return sample


def _initial_sampler(domain, count, rng):
    return domain.sample_boundary("initial", count, rng)


# value / flux residual helpers ---------------------------------------------


def _dirichlet_residual(bd):
    def residual(fields, x, normals):
        return fields.u - as_scalar(x, bd.G(x))

    return residual


def _flux_residual_p(bd):
    """a p·nu - g at boundary samples, with nu supplied by the sampler."""

    def residual(fields, x, normals):
        nu = DiffVector(x.tape, x.tape.constant(normals))
        flux = bd.a * fields.p.dot(nu)
        return flux - _boundary_data(bd, x, normals)

    return residual


def _flux_residual_gradu(bd):
    def residual(fields, x, normals):
        nu = DiffVector(x.tape, x.tape.constant(normals))
        flux = bd.a * fields.u.grad(x).dot(nu)
        return flux - _boundary_data(bd, x, normals)

    return residual


def _boundary_data(bd, x, normals):
    """Scalar boundary data at the sampled points.

    Projection-style data is a scalar field; componentwise data is the vector
    G contracted with the (axis-aligned) normal.
    """
    if bd.style == "componentwise":
        gs = [as_scalar(x, g) for g in bd.G(x)]
        nu = DiffVector(x.tape, x.tape.constant(normals))
        return DiffVector.stack(gs).dot(nu)
    return as_scalar(x, bd.G(x))


# constructions --------------------------------------------------------------


def dirichlet_trial(net_u, net_p, bdata):
    """u = L N + G with L vanishing on the boundary; p (if any) stays free."""

    def fields(x):
        u = as_scalar(x, bdata.L(x)) * net_mod.forward(net_u.spec, net_u, x)[0] + as_scalar(
            x, bdata.G(x)
        )
        p = net_mod.forward(net_p.spec, net_p, x) if net_p is not None else None
        return TrialFields(u=u, p=p)

    nets = (net_u,) if net_p is None else (net_u, net_p)
    chk = ConstraintCheck(
        "dirichlet-value",
        _boundary_sampler("all"),
        _dirichlet_residual(bdata),
        1e-12 * _data_scale(bdata),
    )
    return TrialFunction("dirichlet", nets, fields, [chk])


def _data_scale(bd):
    # magnitude of the boundary data, for scaling absolute tolerances
    probe = lift_input(np.full((1, 2), 0.5))
    try:
        g = bd.G(probe)
        if isinstance(g, list):
            vals = [float(v.value[0]) if isinstance(v, DiffScalar) else float(v) for v in g]
            return max(1.0, max(abs(v) for v in vals))
        if isinstance(g, DiffScalar):
            return max(1.0, abs(float(g.value[0])))
        return max(1.0, abs(float(g)))
    except Exception:
        return 1.0


def neumann_trial_dgm(net, bdata):
    """u = L F(x, N) + N with F = (G - a grad(N)·nu) / (a grad(L)·nu)."""

    def fields(x):
        N = net_mod.forward(net.spec, net, x)[0]
        nu = bdata.normal_ext(x)
        G = as_scalar(x, bdata.G(x))
        denom = bdata.denom(x) if bdata.denom is not None else bdata.a * bdata.grad_L(x).dot(nu)
        F = (G - bdata.a * N.grad(x).dot(nu)) * _inv(x, denom, "a grad(L)·nu")
        u = as_scalar(x, bdata.L(x)) * F + N
        return TrialFields(u=u)

    chk = ConstraintCheck(
        "neumann-flux-gradu",
        _boundary_sampler("all"),
        _flux_residual_gradu(bdata),
        1e-10 * _data_scale(bdata),
    )
    return TrialFunction("neumann", (net,), fields, [chk])


def _flux_phat(x, bd, nstar):
    """The derivative-field construction pinning a p·nu = G on the boundary."""
    if bd.style == "componentwise":
        prefs = bd.prefactors(x)
        gs = bd.G(x)
        comps = []
        for i in range(len(prefs)):
            if prefs[i] is None:
                comps.append(nstar[i])
            else:
                comps.append(prefs[i] * nstar[i] + as_scalar(x, gs[i]))
        return DiffVector.stack(comps)
    nu = bd.normal_ext(x)
    G = as_scalar(x, bd.G(x))
    denom = bd.denom(x) if bd.denom is not None else bd.a * bd.grad_L(x).dot(nu)
    F = (G - bd.a * nstar.dot(nu)) * _inv(x, denom, "a grad(L)·nu")
    return bd.grad_L(x) * F + nstar


def neumann_trial_mim(net_u, net_p_star, bdata):
    """u free; p = F(x, N*) grad(L) + N* (or the per-axis pinned form)."""

    def fields(x):
        u = net_mod.forward(net_u.spec, net_u, x)[0]
        nstar = net_mod.forward(net_p_star.spec, net_p_star, x)
        return TrialFields(u=u, p=_flux_phat(x, bdata, nstar))

    chk = ConstraintCheck(
        "neumann-flux-p",
        _boundary_sampler("all"),
        _flux_residual_p(bdata),
        1e-10 * _data_scale(bdata),
    )
    return TrialFunction("neumann", (net_u, net_p_star), fields, [chk])


def mixed_trial_mim(net_u, net_p_star, bdata_D, bdata_N):
    """Dirichlet data pinned through u, flux data pinned through p.

    The two constraints live on separate variables, so nothing degenerates
    where the Dirichlet and Neumann portions meet.
    """

    def fields(x):
        u = as_scalar(x, bdata_D.L(x)) * net_mod.forward(net_u.spec, net_u, x)[0] + as_scalar(
            x, bdata_D.G(x)
        )
        nstar = net_mod.forward(net_p_star.spec, net_p_star, x)
        return TrialFields(u=u, p=_flux_phat(x, bdata_N, nstar))

    checks = [
        ConstraintCheck(
            "mixed-dirichlet",
            _boundary_sampler("dirichlet"),
            _dirichlet_residual(bdata_D),
            1e-12 * _data_scale(bdata_D),
        )
    ]
    if bdata_N is not None:
        checks.append(
            ConstraintCheck(
                "mixed-flux",
                _boundary_sampler("neumann"),
                _flux_residual_p(bdata_N),
                1e-10 * _data_scale(bdata_N),
            )
        )
    return TrialFunction("mixed", (net_u, net_p_star), fields, checks)


def robin_trial_dgm(net, bdata):
    """u = L F(x, N) + N with F = (G - N - a grad(N)·nu) / (a grad(L)·nu)."""

    def fields(x):
        N = net_mod.forward(net.spec, net, x)[0]
        nu = bdata.normal_ext(x)
        G = as_scalar(x, bdata.G(x))
        denom = bdata.denom(x) if bdata.denom is not None else bdata.a * bdata.grad_L(x).dot(nu)
        F = (G - N - bdata.a * N.grad(x).dot(nu)) * _inv(x, denom, "a grad(L)·nu")
        u = as_scalar(x, bdata.L(x)) * F + N
        return TrialFields(u=u)

    def residual(fields, x, normals):
        nu = DiffVector(x.tape, x.tape.constant(normals))
        return bdata.a * fields.u.grad(x).dot(nu) + fields.u - as_scalar(x, bdata.G(x))

    chk = ConstraintCheck(
        "robin-gradu", _boundary_sampler("all"), residual, 1e-10 * _data_scale(bdata)
    )
    return TrialFunction("robin", (net,), fields, [chk])


def robin_trial_mim(net_u, net_p_star, bdata):
    """u = N free; p = F(x, N*) grad(L) + N* so that a p·nu + u = G exactly.

    The multiplier on F must be grad(L) (as in the Neumann case): multiplying
    by L itself would vanish on the boundary and pin nothing.
    """

    def fields(x):
        u = net_mod.forward(net_u.spec, net_u, x)[0]
        nstar = net_mod.forward(net_p_star.spec, net_p_star, x)
        nu = bdata.normal_ext(x)
        G = as_scalar(x, bdata.G(x))
        denom = bdata.denom(x) if bdata.denom is not None else bdata.a * bdata.grad_L(x).dot(nu)
        F = (G - u - bdata.a * nstar.dot(nu)) * _inv(x, denom, "a grad(L)·nu")
        return TrialFields(u=u, p=bdata.grad_L(x) * F + nstar)

    def residual(fields, x, normals):
        nu = DiffVector(x.tape, x.tape.constant(normals))
        return bdata.a * fields.p.dot(nu) + fields.u - as_scalar(x, bdata.G(x))

    chk = ConstraintCheck(
        "robin-p", _boundary_sampler("all"), residual, 1e-10 * _data_scale(bdata)
    )
    return TrialFunction("robin", (net_u, net_p_star), fields, [chk])


def robin_split_trial(nets, bdata, variant):
    """The two cube Robin reformulations in (u +/- du) variables.

    SumDiff: r_lo = x ⊙ N ⊕ G approximates u ⊖ grad(u) (its Robin data lives
    on the x_i = 0 faces, where the prefactor pins it); r_hi = (1-x) ⊙ N* ⊕ G
    approximates u ⊕ grad(u), pinned on the x_i = 1 faces.  Recover
    u = (1/d) sum_i (r_lo,i + r_hi,i)/2 and p = (r_hi - r_lo)/2.

    Augmented: u = N free, r = x ⊙ (1-x) ⊙ N* ⊕ G pins r_i = G_i on both
    x_i faces, p = r ⊖ u.
    """
    if variant not in ("SumDiff", "Augmented"):
        raise ConstructionError(f"unknown Robin split variant '{variant}'")
    if bdata.style != "componentwise":
        raise ConstructionError(
            "robin_split_trial requires the unit cube (componentwise boundary data)"
        )

    if variant == "SumDiff":
        net_a, net_b = nets

        def fields(x):
            d = x.width
            N = net_mod.forward(net_a.spec, net_a, x)
            Ns = net_mod.forward(net_b.spec, net_b, x)
            G = [as_scalar(x, g) for g in bdata.G(x)]
            r_lo = DiffVector.stack([x[i] * N[i] + G[i] for i in range(d)])
            r_hi = DiffVector.stack([(1.0 - x[i]) * Ns[i] + G[i] for i in range(d)])
            u = (r_lo + r_hi).sum() * (0.5 / d)
            p = (r_hi - r_lo) * 0.5
            return TrialFields(u=u, p=p, r_lo=r_lo, r_hi=r_hi)

        def residual(fields, x, normals):
            # component-i reading of u at a face sample: (r_lo,i + r_hi,i)/2;
            # with nu = ±e_i the Robin combination u + nu_i p_i equals r_hi,i
            # (outer face) or r_lo,i (inner face), both pinned to G_i.
            nu = DiffVector(x.tape, x.tape.constant(normals))
            absnu = DiffVector(x.tape, x.tape.constant(np.abs(normals)))
            G = DiffVector.stack([as_scalar(x, g) for g in bdata.G(x)])
            ubar = (fields.r_lo + fields.r_hi) * 0.5
            comb = ubar + nu * fields.p
            return (comb - G) * absnu

        trial_nets = (net_a, net_b)
    else:
        net_u, net_r = nets

        def fields(x):
            d = x.width
            u = net_mod.forward(net_u.spec, net_u, x)[0]
            Ns = net_mod.forward(net_r.spec, net_r, x)
            G = [as_scalar(x, g) for g in bdata.G(x)]
            r = DiffVector.stack([x[i] * (1.0 - x[i]) * Ns[i] + G[i] for i in range(d)])
            p = r - u
            return TrialFields(u=u, p=p)

        def residual(fields, x, normals):
            # r_i = u + p_i is pinned to G_i on both faces of axis i
            absnu = DiffVector(x.tape, x.tape.constant(np.abs(normals)))
            G = DiffVector.stack([as_scalar(x, g) for g in bdata.G(x)])
            return (fields.p + fields.u - G) * absnu

        trial_nets = (net_u, net_r)

    chk = ConstraintCheck(
        f"robin-split-{variant.lower()}",
        _boundary_sampler("all"),
        residual,
        1e-10 * _data_scale(bdata),
    )
    return TrialFunction("robin", trial_nets, fields, [chk])


# periodic -------------------------------------------------------------------


def periodic_features(x, periods, k):
    """Fourier feature lift: for each axis i and harmonic j = 1..k, append
    sin(2 pi j x_i / I_i) then cos(2 pi j x_i / I_i).  Output width 2 k d."""
    periods = np.atleast_1d(np.asarray(periods, dtype=np.float64))
    if periods.size == 1:
        periods = np.full(x.width, periods[0])
    if periods.size != x.width or np.any(periods <= 0) or k < 1:
        raise ConstructionError(f"bad periodic transform: periods={periods}, k={k}")
    comps = []
    for i in range(x.width):
        for j in range(1, k + 1):
            arg = x[i] * (2.0 * np.pi * j / periods[i])
            comps.append(sin(arg))
            comps.append(cos(arg))
    return DiffVector.stack(comps)


def periodic_trial(net_u, net_p, periods, k):
    """Networks composed with the Fourier lift are periodic identically."""

    def fields(x):
        z = periodic_features(x, periods, k)
        u = net_mod.forward(net_u.spec, net_u, z)[0]
        p = net_mod.forward(net_p.spec, net_p, z) if net_p is not None else None
        return TrialFields(u=u, p=p)

    def shift_check(domain, count, rng):
        pts = domain.sample_interior(count, rng)
        worst = -1.0
        worst_pt = pts[0]
        base = fields(lift_input(pts)).u.value
        per = np.atleast_1d(np.asarray(periods, dtype=np.float64))
        if per.size == 1:
            per = np.full(domain.d, per[0])
        for i in range(domain.d):
            shifted = pts.copy()
            shifted[:, i] += per[i]
            u2 = fields(lift_input(shifted)).u.value
            res = np.abs(u2 - base)
            j = int(np.argmax(res))
            if res[j] > worst:
                worst, worst_pt = float(res[j]), pts[j]
        return worst, worst_pt

    nets = (net_u,) if net_p is None else (net_u, net_p)
    trial = TrialFunction("periodic", nets, fields, [])
    trial.checks.append(ConstraintCheck("periodic-shift", None, None, 1e-12))
    trial.periodic_shift_check = shift_check
    return trial


# time-dependent -------------------------------------------------------------


def _space_time_split(x):
    d = x.width - 1
    t = x[d]
    return d, t


def _ic_prefactor(x, d):
    prod = x[0] * (1.0 - x[0])
    for i in range(1, d):
        prod = prod * (x[i] * (1.0 - x[i]))
    return prod


def _constrained_u(net, x):
    d, t = _space_time_split(x)
    N = net_mod.forward(net.spec, net, x)[0]
    return t * _ic_prefactor(x, d) * N


def _lateral_sampler(domain, count, rng):
    return domain.sample_boundary("lateral", count, rng)


def _u_zero_residual(fields, x, normals):
    return fields.u


def parabolic_trial(net_u, net_v=None, net_p=None):
    """u = t · prod_i x_i(1-x_i) · N(x, t): zero initial data and zero lateral
    boundary data hold identically; v and p (when present) stay free."""

    def fields(x):
        u = _constrained_u(net_u, x)
        v = net_mod.forward(net_v.spec, net_v, x)[0] if net_v is not None else None
        p = net_mod.forward(net_p.spec, net_p, x) if net_p is not None else None
        return TrialFields(u=u, v=v, p=p)

    nets = tuple(n for n in (net_u, net_v, net_p) if n is not None)
    checks = [
        ConstraintCheck("initial-u", _initial_sampler, _u_zero_residual, 1e-12),
        ConstraintCheck("lateral-u", _lateral_sampler, _u_zero_residual, 1e-12),
    ]
    return TrialFunction("parabolic-ic", nets, fields, checks)


def wave_trial_mim2(net_u, net_v, net_p):
    """u as in the parabolic construction and v = t Ñ(x, t): both wave initial
    conditions (u = 0 and u_t = 0 at t = 0) hold identically, since the
    v-coupling residual makes v the time derivative of u."""

    def fields(x):
        _, t = _space_time_split(x)
        u = _constrained_u(net_u, x)
        v = t * net_mod.forward(net_v.spec, net_v, x)[0]
        p = net_mod.forward(net_p.spec, net_p, x)
        return TrialFields(u=u, v=v, p=p)

    def v_zero(fields, x, normals):
        return fields.v

    checks = [
        ConstraintCheck("initial-u", _initial_sampler, _u_zero_residual, 1e-12),
        ConstraintCheck("initial-v", _initial_sampler, v_zero, 1e-12),
        ConstraintCheck("lateral-u", _lateral_sampler, _u_zero_residual, 1e-12),
    ]
    return TrialFunction("wave-ic", (net_u, net_v, net_p), fields, checks)


def penalty_trial(nets):
    """Raw networks with no construction, for penalty-mode baselines."""

    def fields(x):
        u = net_mod.forward(nets[0].spec, nets[0], x)[0]
        p = net_mod.forward(nets[1].spec, nets[1], x) if len(nets) > 1 else None
        return TrialFields(u=u, p=p)

    return TrialFunction("none", tuple(nets), fields, [])
