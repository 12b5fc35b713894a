"""Monte Carlo least-squares residual losses and manufactured source terms.

Loss conventions: every L2 functional is estimated by the plain sample mean
of the squared residual (no domain-volume factor; it rescales all losses by
one constant and cancels in the relative error).  Each experiment's residual
signs are fixed against the truth-zero invariant: the loss of the exact
solution bundle must vanish to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import DiffVector, cos, exp, mean_sq, sin
from .geometry import _poly_partials, poly_prefactor


class LossError(Exception):
    pass


# ---------------------------------------------------------------------------
# differential helpers


def spatial_grad(u, x, d):
    """Gradient of u with respect to the first d input coordinates."""
    return DiffVector.stack([u.d(x, i) for i in range(d)])


def divergence(p, x, d=None):
    d = p.width if d is None else d
    if p.width != d:
        raise LossError(f"divergence over {d} axes needs a width-{d} field, got {p.width}")
    total = p[0].d(x, 0)
    for i in range(1, d):
        total = total + p[i].d(x, i)
    return total


def spatial_laplacian(u, x, d):
    total = u.d(x, 0).d(x, 0)
    for i in range(1, d):
        total = total + u.d(x, i).d(x, i)
    return total


def jacobian(p, x, d):
    """Input Jacobian J[i][j] = d p_i / d x_j as tape scalars."""
    return [[p[i].d(x, j) for j in range(d)] for i in range(d)]


def det(J):
    """Cofactor-expansion determinant of a small tape-valued matrix.

    Kept dense and explicit so the result stays parameter-differentiable;
    pivoted eliminations do not compose with the tape.  The catalogued
    Monge-Ampere rows use d in {2, 4}; d > 4 is rejected.
    """
    n = len(J)
    if n == 1:
        return J[0][0]
    if n == 2:
        return J[0][0] * J[1][1] - J[0][1] * J[1][0]
    if n > 4:
        raise LossError(f"dense determinant limited to d <= 4, got d = {n}")
    total = None
    for j in range(n):
        minor = [[J[r][c] for c in range(n) if c != j] for r in range(1, n)]
        term = J[0][j] * det(minor)
        if j % 2 == 1:
            term = -term
        total = term if total is None else total + term
    return total


# ---------------------------------------------------------------------------
# loss assemblers


def elliptic_mim_loss(fields, x, f, reaction=None, a=1.0, d=None, penalty=None):
    """|a grad(u) - p|^2 + |div(p) + reaction(u) + f|^2 (+ lambda * penalty)."""
    if fields.p is None:
        raise LossError("the mixed-residual elliptic loss needs a derivative field p")
    d = x.width if d is None else d
    gu = spatial_grad(fields.u, x, d)
    res1 = (a * gu if a != 1.0 else gu) - fields.p
    res2 = divergence(fields.p, x, d) + f
    if reaction is not None:
        res2 = res2 + reaction(fields.u)
    loss = mean_sq(res1) + mean_sq(res2)
    if penalty is not None:
        loss = loss + penalty
    return loss


def elliptic_dgm_loss(fields, x, f, reaction=None, d=None, penalty=None):
    """|lap(u) + reaction(u) + f|^2 (+ lambda * penalty)."""
    d = x.width if d is None else d
    res = spatial_laplacian(fields.u, x, d) + f
    if reaction is not None:
        res = res + reaction(fields.u)
    loss = mean_sq(res)
    if penalty is not None:
        loss = loss + penalty
    return loss


def monge_ampere_loss(fields, x, f):
    """|p - grad(u)|^2 + |det(grad p) - f|^2."""
    if fields.p is None:
        raise LossError("the Monge-Ampere loss needs a derivative field p")
    d = x.width
    res1 = fields.p - spatial_grad(fields.u, x, d)
    res2 = det(jacobian(fields.p, x, d)) - f
    return mean_sq(res1) + mean_sq(res2)


def parabolic_loss(fields, x, f, variant):
    """Heat-equation residuals over the time cylinder (t is the last input).

    DGM:  |u_t - lap(u) - f|^2
    MIM1: |v - div(p) - f|^2 + |p - grad(u)|^2 + |v - u_t|^2
    MIM2: |u_t - div(p) - f|^2 + |p - grad(u)|^2
    """
    d = x.width - 1
    td = d
    u_t = fields.u.d(x, td)
    if variant == "DGM":
        return mean_sq(u_t - spatial_laplacian(fields.u, x, d) - f)
    if fields.p is None:
        raise LossError(f"parabolic {variant} needs a derivative field p")
    coupling = mean_sq(fields.p - spatial_grad(fields.u, x, d))
    if variant == "MIM1":
        if fields.v is None:
            raise LossError("parabolic MIM1 needs the auxiliary time-derivative field v")
        return mean_sq(fields.v - divergence(fields.p, x, d) - f) + coupling + mean_sq(
            fields.v - u_t
        )
    if variant == "MIM2":
        return mean_sq(u_t - divergence(fields.p, x, d) - f) + coupling
    raise LossError(f"unknown parabolic variant '{variant}'")


def wave_loss(fields, x, f, variant, ic_penalty=None, lam=1.0):
    """Wave-equation residuals; DGM and MIM1 add lam * |u_t(.,0)|^2 from the
    t = 0 slice (ic_penalty), MIM2 needs no penalty by construction."""
    d = x.width - 1
    td = d
    if variant == "DGM":
        u_tt = fields.u.d(x, td).d(x, td)
        loss = mean_sq(u_tt - spatial_laplacian(fields.u, x, d) - f)
    elif variant == "MIM1":
        if fields.p is None:
            raise LossError("wave MIM1 needs a derivative field p")
        u_tt = fields.u.d(x, td).d(x, td)
        loss = mean_sq(u_tt - divergence(fields.p, x, d) - f) + mean_sq(
            fields.p - spatial_grad(fields.u, x, d)
        )
    elif variant == "MIM2":
        if fields.p is None or fields.v is None:
            raise LossError("wave MIM2 needs both p and the auxiliary field v")
        loss = (
            mean_sq(fields.v.d(x, td) - divergence(fields.p, x, d) - f)
            + mean_sq(fields.p - spatial_grad(fields.u, x, d))
            + mean_sq(fields.v - fields.u.d(x, td))
        )
        if ic_penalty is not None:
            raise LossError("wave MIM2 satisfies the initial conditions exactly; no penalty")
        return loss
    else:
        raise LossError(f"unknown wave variant '{variant}'")
    if ic_penalty is not None:
        loss = loss + lam * ic_penalty
    return loss


def boundary_penalty(fields_b, xb, data):
    """|Gamma u - g|^2 over a boundary batch, for penalty-mode baselines."""
    return mean_sq(fields_b - data)


# ---------------------------------------------------------------------------
# relative L2 error


def relative_l2(u_hat, u_ref):
    u_hat = np.asarray(u_hat, dtype=np.float64).ravel()
    u_ref = np.asarray(u_ref, dtype=np.float64).ravel()
    denom = np.linalg.norm(u_ref)
    if denom == 0.0:
        raise LossError("reference solution vanishes on the evaluation sample")
    return float(np.linalg.norm(u_hat - u_ref) / denom)


def relative_l2_error(trial, u_exact, eval_points):
    """sqrt(sum (u_hat - u)^2) / sqrt(sum u^2) over a fixed evaluation set."""
    from .autodiff import lift_input

    xv = lift_input(np.asarray(eval_points, dtype=np.float64))
    u_hat = trial.fields(xv).u.value
    return relative_l2(u_hat, u_exact(np.asarray(eval_points, dtype=np.float64)))


# ---------------------------------------------------------------------------
# manufactured sources


@dataclass
class SourceTerm:
    """Closed forms derived by hand from the manufactured exact solution.

    `u_exact` and `f` are plain numpy callables over (count, d) point arrays
    (time-dependent problems carry t as the last column).  `u_expr` rebuilds
    the exact solution on a tape for truth-injection tests.  `reaction` is the
    zero-order term entering the divergence/strong residual; `flux_data` is
    the Neumann data g(x, nu) used by penalty-mode baselines.
    """

    experiment: str
    u_exact: object
    f: object
    u_expr: object
    reaction: object = None
    flux_data: object = None
    time_dependent: bool = False


def _r2(x):
    return np.sum(x * x, axis=1)


def _norm_sq_expr(x, d=None):
    d = x.width if d is None else d
    total = x[0] * x[0]
    for i in range(1, d):
        total = total + x[i] * x[i]
    return total


def _src_dirichlet_ball():
    def u(x):
        return np.exp(_r2(x))

    def f(x):
        r2 = _r2(x)
        d = x.shape[1]
        return -(2.0 * d + 4.0 * r2) * np.exp(r2) + np.exp(2.0 * r2)

    return SourceTerm(
        "dirichlet-elliptic-ball",
        u,
        f,
        u_expr=lambda x: exp(_norm_sq_expr(x)),
        reaction=lambda u_: -(u_ * u_),
    )


def _src_monge_ampere():
    def u(x):
        return np.exp(_r2(x) / x.shape[1])

    def f(x):
        d = x.shape[1]
        r2 = _r2(x)
        return (2.0 / d) ** d * np.exp(r2) * (1.0 + 2.0 * r2 / d)

    def u_expr(x):
        return exp(_norm_sq_expr(x) * (1.0 / x.width))

    return SourceTerm("monge-ampere", u, f, u_expr=u_expr)


def _src_neumann_cube():
    def u(x):
        return np.exp(x).sum(axis=1)

    def f(x):
        return np.zeros(x.shape[0])

    def u_expr(x):
        total = exp(x[0])
        for i in range(1, x.width):
            total = total + exp(x[i])
        return total

    def flux_data(x, nu):
        return (np.exp(x) * nu).sum(axis=1)

    return SourceTerm(
        "neumann-cube",
        u,
        f,
        u_expr=u_expr,
        reaction=lambda u_: -u_,
        flux_data=flux_data,
    )


def _cos_r2m1(x):
    return np.cos(_r2(x) - 1.0)


def _neg_lap_cos_r2m1(x):
    # u = cos(|x|^2 - 1): -lap(u) = 2d sin(|x|^2-1) + 4|x|^2 cos(|x|^2-1)
    r2 = _r2(x)
    d = x.shape[1]
    return 2.0 * d * np.sin(r2 - 1.0) + 4.0 * r2 * np.cos(r2 - 1.0)


def _src_neumann_ball():
    def f(x):
        return _neg_lap_cos_r2m1(x) - _cos_r2m1(x)

    return SourceTerm(
        "neumann-ball",
        _cos_r2m1,
        f,
        u_expr=lambda x: cos(_norm_sq_expr(x) - 1.0),
        reaction=lambda u_: u_,
    )


def _src_mixed_annulus():
    return SourceTerm(
        "mixed-annulus",
        _cos_r2m1,
        _neg_lap_cos_r2m1,
        u_expr=lambda x: cos(_norm_sq_expr(x) - 1.0),
    )


def _src_robin():
    def u(x):
        return np.sin(x.sum(axis=1))

    def f(x):
        d = x.shape[1]
        return (d + np.pi**2) * np.sin(x.sum(axis=1))

    def u_expr(x):
        return sin(x.sum())

    pi2 = np.pi**2
    return SourceTerm(
        "robin", u, f, u_expr=u_expr, reaction=lambda u_: (-pi2) * u_
    )


def _src_mixed_slab():
    def u(x):
        return x[:, 0] * (1.0 - x[:, 0]) * np.cos(np.pi * x[:, 1:]).sum(axis=1)

    def f(x):
        c = np.cos(np.pi * x[:, 1:]).sum(axis=1)
        q = x[:, 0] * (1.0 - x[:, 0])
        return (2.0 + np.pi**2 * q) * c

    def u_expr(x):
        c = cos(np.pi * x[1])
        for i in range(2, x.width):
            c = c + cos(np.pi * x[i])
        return x[0] * (1.0 - x[0]) * c

    return SourceTerm("mixed-slab", u, f, u_expr=u_expr)


def _src_mixed_complex2d():
    def _cosum(x):
        return np.cos(np.pi * x[:, 1:]).sum(axis=1)

    def u(x):
        psi, *_ = _poly_partials(x)
        return psi * _cosum(x)

    def f(x):
        psi, _, d2, d11, d22 = _poly_partials(x)
        c = _cosum(x)
        c2 = -np.pi * np.sin(np.pi * x[:, 1])
        # lap(psi * c) = (psi_11 + psi_22) c + 2 psi_2 c_2 - pi^2 psi c
        return -((d11 + d22) * c + 2.0 * d2 * c2 - np.pi**2 * psi * c)

    def u_expr(x):
        c = cos(np.pi * x[1])
        for i in range(2, x.width):
            c = c + cos(np.pi * x[i])
        return poly_prefactor(x) * c

    return SourceTerm("mixed-complex2d", u, f, u_expr=u_expr)


def _src_periodic_sum():
    def u(x):
        return (np.cos(np.pi * x) + np.cos(2.0 * np.pi * x)).sum(axis=1)

    def f(x):
        return (
            2.0 * np.pi**2 * np.cos(np.pi * x) + 5.0 * np.pi**2 * np.cos(2.0 * np.pi * x)
        ).sum(axis=1)

    def u_expr(x):
        total = cos(np.pi * x[0]) + cos(2.0 * np.pi * x[0])
        for i in range(1, x.width):
            total = total + cos(np.pi * x[i]) + cos(2.0 * np.pi * x[i])
        return total

    pi2 = np.pi**2
    return SourceTerm(
        "periodic-sum", u, f, u_expr=u_expr, reaction=lambda u_: (-pi2) * u_
    )


def _src_periodic_product():
    def u(x):
        return (np.cos(np.pi * x) * np.cos(2.0 * np.pi * x)).sum(axis=1)

    def f(x):
        return (
            6.0 * np.pi**2 * np.cos(np.pi * x) * np.cos(2.0 * np.pi * x)
            - 4.0 * np.pi**2 * np.sin(np.pi * x) * np.sin(2.0 * np.pi * x)
        ).sum(axis=1)

    def u_expr(x):
        total = cos(np.pi * x[0]) * cos(2.0 * np.pi * x[0])
        for i in range(1, x.width):
            total = total + cos(np.pi * x[i]) * cos(2.0 * np.pi * x[i])
        return total

    pi2 = np.pi**2
    return SourceTerm(
        "periodic-product", u, f, u_expr=u_expr, reaction=lambda u_: (-pi2) * u_
    )


def _src_periodic_highfreq():
    freqs = (1.0, 2.0, 4.0, 8.0)

    def u(x):
        return sum(np.cos(w * np.pi * x[:, 0]) for w in freqs)

    def f(x):
        return sum((w**2 + 1.0) * np.pi**2 * np.cos(w * np.pi * x[:, 0]) for w in freqs)

    def u_expr(x):
        total = cos(freqs[0] * np.pi * x[0])
        for w in freqs[1:]:
            total = total + cos(w * np.pi * x[0])
        return total

    pi2 = np.pi**2
    return SourceTerm(
        "periodic-1d-highfreq", u, f, u_expr=u_expr, reaction=lambda u_: (-pi2) * u_
    )


def _sinprod(x):
    return np.prod(np.sin(np.pi * x[:, :-1]), axis=1)


def _sinprod_expr(x):
    d = x.width - 1
    total = sin(np.pi * x[0])
    for i in range(1, d):
        total = total * sin(np.pi * x[i])
    return total


def _src_parabolic():
    def u(x):
        return x[:, -1] * _sinprod(x)

    def f(x):
        d = x.shape[1] - 1
        return _sinprod(x) * (1.0 + d * np.pi**2 * x[:, -1])

    def u_expr(x):
        return x[x.width - 1] * _sinprod_expr(x)

    return SourceTerm("parabolic", u, f, u_expr=u_expr, time_dependent=True)


def _src_wave():
    def u(x):
        return x[:, -1] ** 2 * _sinprod(x)

    def f(x):
        d = x.shape[1] - 1
        return _sinprod(x) * (2.0 + d * np.pi**2 * x[:, -1] ** 2)

    def u_expr(x):
        t = x[x.width - 1]
        return t * t * _sinprod_expr(x)

    return SourceTerm("wave", u, f, u_expr=u_expr, time_dependent=True)


_SOURCE_REGISTRY = {
    "dirichlet-elliptic-ball": _src_dirichlet_ball,
    "monge-ampere": _src_monge_ampere,
    "neumann-cube": _src_neumann_cube,
    "neumann-ball": _src_neumann_ball,
    "robin-sumdiff": _src_robin,
    "robin-augmented": _src_robin,
    "mixed-slab": _src_mixed_slab,
    "mixed-complex2d": _src_mixed_complex2d,
    "mixed-annulus": _src_mixed_annulus,
    "periodic-sum": _src_periodic_sum,
    "periodic-product": _src_periodic_product,
    "periodic-1d-highfreq": _src_periodic_highfreq,
    "parabolic": _src_parabolic,
    "wave": _src_wave,
}


def manufactured_source(experiment_id):
    """The manufactured (u_exact, f, boundary data) bundle of an experiment."""
    try:
        return _SOURCE_REGISTRY[experiment_id]()
    except KeyError:
        raise LossError(
            f"unknown experiment '{experiment_id}'; known: {sorted(_SOURCE_REGISTRY)}"
        ) from None


def known_source_ids():
    return sorted(_SOURCE_REGISTRY)
