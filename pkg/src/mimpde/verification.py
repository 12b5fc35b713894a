"""The no-training property suite: construction exactness, autodiff versus
finite differences, the ADAM oracle, parameter-count identities, source-term
validation, and periodicity.  Used by `mimpde verify` and by the acceptance
tests; everything here runs in well under two minutes.
"""

from __future__ import annotations

import numpy as np

from . import catalog as cat
from . import constructions as cons
from . import geometry as geo
from . import losses as los
from .autodiff import DiffVector, Tape, lift_input, mean_sq, param_gradients
from .network import NetworkSpec, count_parameters, forward, init_parameters
from .optimizer import AdamState, adam_step


# ---------------------------------------------------------------------------
# finite-difference oracles (independent of the tape engine)

_H1 = 1e-3  # fourth-order first-derivative stencil step
_H2 = 1e-3  # fourth-order second-derivative stencil step


def fd_partial(fn, x, i, h=_H1):
    """Fourth-order central first derivative along axis i, batched."""
    e = np.zeros(x.shape[1])
    e[i] = 1.0
    return (
        -fn(x + 2 * h * e) + 8.0 * fn(x + h * e) - 8.0 * fn(x - h * e) + fn(x - 2 * h * e)
    ) / (12.0 * h)


def fd_second(fn, x, i, h=_H2):
    """Fourth-order central second derivative along axis i, batched."""
    e = np.zeros(x.shape[1])
    e[i] = 1.0
    return (
        -fn(x + 2 * h * e)
        + 16.0 * fn(x + h * e)
        - 30.0 * fn(x)
        + 16.0 * fn(x - h * e)
        - fn(x - 2 * h * e)
    ) / (12.0 * h * h)


def fd_laplacian(fn, x, axes=None, h=_H2):
    axes = range(x.shape[1]) if axes is None else axes
    return sum(fd_second(fn, x, i, h) for i in axes)


def fd_hessian_det(fn, x, d, h=_H1):
    """det of the FD Hessian (nested fourth-order first-derivative stencils)."""
    H = np.empty((x.shape[0], d, d))
    for i in range(d):
        for j in range(d):
            H[:, i, j] = fd_partial(lambda y, j=j: fd_partial(fn, y, j, h), x, i, h)
    return np.linalg.det(H)


def _strong_operator(experiment):
    """The PDE operator applied to a numpy field, via finite differences."""
    src = los.manufactured_source(experiment)
    u = src.u_exact
    if experiment == "dirichlet-elliptic-ball":
        return lambda x: -fd_laplacian(u, x) + u(x) ** 2
    if experiment == "monge-ampere":
        return lambda x: fd_hessian_det(u, x, x.shape[1])
    if experiment == "neumann-cube":
        return lambda x: -fd_laplacian(u, x) + u(x)
    if experiment == "neumann-ball":
        return lambda x: -fd_laplacian(u, x) - u(x)
    if experiment in ("robin-sumdiff", "robin-augmented"):
        return lambda x: -fd_laplacian(u, x) + np.pi**2 * u(x)
    if experiment.startswith("mixed-"):
        return lambda x: -fd_laplacian(u, x)
    if experiment.startswith("periodic-"):
        return lambda x: -fd_laplacian(u, x) + np.pi**2 * u(x)
    if experiment == "parabolic":
        d = None  # spatial axes are all but the last

        def op(x):
            s = range(x.shape[1] - 1)
            return fd_partial(u, x, x.shape[1] - 1) - fd_laplacian(u, x, axes=s)

        return op
    if experiment == "wave":

        def op(x):
            s = range(x.shape[1] - 1)
            t = x.shape[1] - 1
            return fd_second(u, x, t) - fd_laplacian(u, x, axes=s)

        return op
    raise los.LossError(f"no strong-form operator registered for '{experiment}'")


def validate_source(experiment, count=100, seed=7, rtol=1e-6):
    """Check f(x) against the FD operator applied to u_exact at random points.

    The error is measured relative to the larger of |f| and |u| so that
    identically-zero sources (the cube Neumann problem) are still judged
    against the scale of the cancelling operator terms.
    """
    rng = np.random.default_rng(seed)
    cfg_d = 1 if experiment == "periodic-1d-highfreq" else 2
    cfg = cat.default_config(experiment, cat.EXPERIMENTS[experiment].methods[0], d=cfg_d)
    domain = cat.make_domain(cfg)
    pts = domain.sample_interior(count, rng)
    src = los.manufactured_source(experiment)
    want = src.f(pts)
    got = _strong_operator(experiment)(pts)
    scale = max(1.0, float(np.max(np.abs(want))), float(np.max(np.abs(src.u_exact(pts)))))
    rel = float(np.max(np.abs(got - want)) / scale)
    return rel, rel <= rtol


# ---------------------------------------------------------------------------
# the checks


def check_construction_exactness(draws=20, samples=1000, seed=3):
    """Criterion: every catalogued construction hits its stated tolerance for
    arbitrary parameter draws.  Returns (name, passed, detail) rows."""
    rng = np.random.default_rng(seed)
    rows = []
    for name, build in exactness_cases():
        worst = -np.inf
        worst_detail = ""
        ok = True
        for _ in range(draws):
            trial, domain = build(rng)
            report = cons.verify_exactness(trial, domain, samples, rng)
            for cname, m, tol, passed in report.entries:
                if m > worst:
                    worst, worst_detail = m, f"{cname}: max residual {m:.3e} (tol {tol:.1e})"
                ok = ok and passed
        rows.append((f"exactness/{name}", ok, worst_detail))
    return rows


def _catalog_case(experiment, method, d=2, n=6, m=2):
    def build(rng):
        cfg = cat.default_config(experiment, method, d=d)
        cfg.n, cfg.m = n, m
        nets = cat.make_networks(cfg, rng)
        return cat.make_trial(cfg, nets), cat.make_domain(cfg)

    return build


def _robin_ball_case(variant):
    def build(rng):
        bd = geo.boundary_functions("robin-ball").robin
        if variant == "dgm":
            net = init_parameters(NetworkSpec(2, 6, 2, 1, "requ"), rng)
            trial = cons.robin_trial_dgm(net, bd)
        else:
            net_u = init_parameters(NetworkSpec(2, 6, 2, 1, "requ"), rng)
            net_p = init_parameters(NetworkSpec(2, 6, 2, 2, "requ"), rng)
            trial = cons.robin_trial_mim(net_u, net_p, bd)
        return trial, geo.UnitBall(2)

    return build


def exactness_cases():
    """(name, build(rng) -> (trial, domain)) for every catalogued construction."""
    cases = [
        ("dirichlet-ball", _catalog_case("dirichlet-elliptic-ball", "MIM")),
        ("dirichlet-ball-dgm", _catalog_case("dirichlet-elliptic-ball", "DGM")),
        ("monge-ampere", _catalog_case("monge-ampere", "MIM")),
        ("neumann-cube-mim", _catalog_case("neumann-cube", "MIM")),
        ("neumann-ball-mim", _catalog_case("neumann-ball", "MIM")),
        ("neumann-ball-dgm", _catalog_case("neumann-ball", "DGM")),
        ("mixed-slab", _catalog_case("mixed-slab", "MIM")),
        ("mixed-complex2d", _catalog_case("mixed-complex2d", "MIM")),
        ("mixed-complex2d-d3", _catalog_case("mixed-complex2d", "MIM", d=4)),
        ("mixed-annulus", _catalog_case("mixed-annulus", "MIM")),
        ("robin-dgm-ball", _robin_ball_case("dgm")),
        ("robin-mim-ball", _robin_ball_case("mim")),
        ("robin-sumdiff", _catalog_case("robin-sumdiff", "MIM")),
        ("robin-augmented", _catalog_case("robin-augmented", "MIM")),
        ("periodic", _catalog_case("periodic-sum", "MIM")),
        ("parabolic-ic", _catalog_case("parabolic", "MIM2")),
        ("wave-ic", _catalog_case("wave", "MIM2")),
    ]
    return cases


def check_autodiff_fd(points=100, seed=11):
    """Input gradients, Laplacians and parameter gradients of a small random
    network against central finite differences."""
    rng = np.random.default_rng(seed)
    d = 3
    spec = NetworkSpec(d, 6, 2, 1, "swish")
    params = init_parameters(spec, rng)
    theta0 = params.vector()

    def u_np(x):
        return _plain_forward(spec, params, x)

    pts = rng.uniform(-0.9, 0.9, (points, d))
    xv = lift_input(pts)
    u = forward(spec, params, xv)[0]
    g = np.stack([u.d(xv, i).value for i in range(d)], axis=1)
    g_fd = np.stack([_fd1(u_np, pts, i, 1e-5) for i in range(d)], axis=1)
    rel_g = float(np.max(np.abs(g - g_fd) / np.maximum(np.abs(g_fd), 1e-6)))

    lap = sum(u.d(xv, i).d(xv, i).value for i in range(d))
    lap_fd = sum(_fd2(u_np, pts, i, 1e-4) for i in range(d))
    rel_l = float(np.max(np.abs(lap - lap_fd) / np.maximum(np.abs(lap_fd), 1e-4)))

    loss = mean_sq(u)
    grad = param_gradients(loss)

    def loss_np():
        return float(np.mean(u_np(pts) ** 2))

    g_fd_p = np.zeros_like(theta0)
    for j in range(theta0.size):
        step = 1e-6 * max(1.0, abs(theta0[j]))
        th = theta0.copy()
        th[j] = theta0[j] + step
        params.set_vector(th)
        lp = loss_np()
        th[j] = theta0[j] - step
        params.set_vector(th)
        lm = loss_np()
        g_fd_p[j] = (lp - lm) / (2 * step)
    params.set_vector(theta0)
    scale = np.maximum(np.abs(g_fd_p), np.max(np.abs(g_fd_p)) * 1e-3 + 1e-12)
    rel_p = float(np.max(np.abs(grad - g_fd_p) / scale))

    rows = [
        ("autodiff/input-gradient", rel_g <= 1e-5, f"max rel err {rel_g:.2e} (tol 1e-5)"),
        ("autodiff/laplacian", rel_l <= 1e-4, f"max rel err {rel_l:.2e} (tol 1e-4)"),
        ("autodiff/param-gradient", rel_p <= 1e-5, f"max rel err {rel_p:.2e} (tol 1e-5)"),
    ]
    return rows


def _plain_forward(spec, params, x):
    """Straight-line numpy re-evaluation of the network (no tape)."""
    from .network import activation_eval

    n, m = spec.width, spec.depth
    h = activation_eval(spec.activation, x @ params.block("W1_1").value.T + params.block("b1_1").value)
    h = activation_eval(spec.activation, h @ params.block("W2_1").value.T + params.block("b2_1").value)
    if spec.effective_lift == "zeropad":
        s0 = np.zeros((x.shape[0], n))
        s0[:, : x.shape[1]] = x
        s = h + s0
    else:
        s = h
    for k in range(2, m + 1):
        t = activation_eval(spec.activation, s @ params.block(f"W1_{k}").value.T + params.block(f"b1_{k}").value)
        t = activation_eval(spec.activation, t @ params.block(f"W2_{k}").value.T + params.block(f"b2_{k}").value)
        s = t + s
    out = s @ params.block("Wout").value.T + params.block("bout").value
    return out[:, 0] if spec.d_out == 1 else out


def _fd1(fn, x, i, h):
    e = np.zeros(x.shape[1])
    e[i] = 1.0
    return (fn(x + h * e) - fn(x - h * e)) / (2 * h)


def _fd2(fn, x, i, h):
    e = np.zeros(x.shape[1])
    e[i] = 1.0
    return (fn(x + h * e) - 2.0 * fn(x) + fn(x - h * e)) / (h * h)


def adam_reference(theta0, grads, lr=0.001, b1=0.9, b2=0.999, eps=1e-8):
    """Independent scalar transcription of the ADAM recursion (pure python)."""
    th = [float(v) for v in theta0]
    m = [0.0] * len(th)
    v = [0.0] * len(th)
    out = []
    k = 0
    for g in grads:
        k += 1
        for i in range(len(th)):
            gi = float(g[i])
            m[i] = b1 * m[i] + (1.0 - b1) * gi
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi
            mh = m[i] / (1.0 - b1**k)
            vh = v[i] / (1.0 - b2**k)
            th[i] = th[i] - lr * mh / (vh**0.5 + eps)
        out.append(list(th))
    return out


def check_adam_oracle(steps=10, size=37, seed=5):
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal(size)
    grads = [rng.standard_normal(size) for _ in range(steps)]
    expect = adam_reference(theta, grads)
    state = AdamState.fresh(size)
    th = theta.copy()
    worst = 0.0
    for k, g in enumerate(grads):
        state, th = adam_step(state, th, g)
        worst = max(worst, float(np.max(np.abs(th - np.asarray(expect[k])))))
    ok = worst <= 1e-15
    return [("adam/oracle", ok, f"max |diff| {worst:.2e} over {steps} steps (tol 1e-15)")]


def parameter_count_cases():
    """Deduplicated (m, n, effective d) combos over the whole catalogue."""
    combos = {}
    for exp in cat.EXPERIMENTS.values():
        for row in exp.rows:
            if exp.time_dependent:
                d_eff = row.d + 1
            elif exp.k:
                d_eff = 2 * exp.k * row.d
            else:
                d_eff = row.d
            combos[(row.m, row.n, d_eff)] = exp.id
    return sorted(combos)


def check_parameter_counts():
    """The published count formulas versus actual packed lengths of the
    canonical one-net (DGM) and two-net (MIM) bundles at every catalogued
    (m, n, effective-d) combination."""
    worst = ""
    ok = True
    for m, n, d in parameter_count_cases():
        dgm = NetworkSpec(d, n, m, 1).parameter_count()
        mim = dgm + NetworkSpec(d, n, m, d).parameter_count()
        if dgm != count_parameters("DGM", m, n, d) or mim != count_parameters("MIM", m, n, d):
            ok = False
            worst = f"mismatch at (m={m}, n={n}, d={d})"
    detail = worst or f"{len(parameter_count_cases())} (m,n,d) combos match both formulas"
    return [("network/parameter-counts", ok, detail)]


def check_sources():
    rows = []
    for eid in los.known_source_ids():
        rel, ok = validate_source(eid)
        rows.append((f"source/{eid}", ok, f"max rel err {rel:.2e} (tol 1e-6)"))
    return rows


def check_truth_zero():
    """Injecting the exact solution bundle drives every catalogued loss to
    rounding level."""
    rows = []
    rng = np.random.default_rng(21)
    cases = []
    for eid, exp in cat.EXPERIMENTS.items():
        for method in exp.methods:
            cases.append((eid, method))
    for eid, method in cases:
        val = _truth_zero_value(eid, method, rng)
        rows.append((f"truth-zero/{eid}/{method}", val <= 1e-16, f"loss at truth {val:.2e}"))
    return rows


def _truth_zero_value(experiment, method, rng, count=400):
    cfg = cat.default_config(experiment, method, d=1 if experiment == "periodic-1d-highfreq" else 2)
    src = los.manufactured_source(experiment)
    domain = cat.make_domain(cfg)
    pts = domain.sample_interior(count, rng)
    exp = cat.EXPERIMENTS[experiment]

    tape = Tape()
    x_node = tape.input(pts.shape[1], "x")
    x_node.set_value(pts)
    xv = DiffVector(tape, x_node)
    u = src.u_expr(xv)
    d = cfg.d
    f_node = tape.input(1, "f", differentiable=False)
    f_node.set_value(src.f(pts)[:, None])
    from .autodiff import DiffScalar

    f = DiffScalar(tape, f_node)

    fields = cons.TrialFields(u=u)
    if exp.family == "elliptic":
        if method == "DGM" and cfg.lam == 0:
            loss = los.elliptic_dgm_loss(fields, xv, f, reaction=src.reaction, d=d)
        elif method == "DGM":
            # penalty baseline at truth: strong residual only (boundary term is
            # identically zero for the exact solution's own data)
            loss = los.elliptic_dgm_loss(fields, xv, f, reaction=src.reaction, d=d)
        else:
            fields.p = los.spatial_grad(u, xv, d)
            loss = los.elliptic_mim_loss(fields, xv, f, reaction=src.reaction, d=d)
    elif exp.family == "monge-ampere":
        fields.p = los.spatial_grad(u, xv, d)
        loss = los.monge_ampere_loss(fields, xv, f)
    elif exp.family == "parabolic":
        if method != "DGM":
            fields.p = los.spatial_grad(u, xv, d)
        if method == "MIM1":
            fields.v = u.d(xv, d)
        loss = los.parabolic_loss(fields, xv, f, method)
    else:
        if method != "DGM":
            fields.p = los.spatial_grad(u, xv, d)
        if method == "MIM2":
            fields.v = u.d(xv, d)
            loss = los.wave_loss(fields, xv, f, method)
        else:
            # u_t(x, 0) of the exact solution vanishes; penalty contributes 0
            pen_pts, _ = domain.sample_boundary("initial", count, rng)
            pen_node = tape.input(pts.shape[1], "x0")
            pen_node.set_value(pen_pts)
            pxv = DiffVector(tape, pen_node)
            pu = src.u_expr(pxv)
            pen = mean_sq(pu.d(pxv, d))
            loss = los.wave_loss(fields, xv, f, method, ic_penalty=pen, lam=1.0)
    return float(loss.value[0])


def run_all():
    """Every property check; returns (name, passed, detail) rows."""
    rows = []
    rows += check_parameter_counts()
    rows += check_adam_oracle()
    rows += check_autodiff_fd()
    rows += check_sources()
    rows += check_truth_zero()
    rows += check_construction_exactness()
    return rows
