"""Domains, Monte Carlo samplers, outward normals, and boundary helper fields.

Each experiment needs a region with an interior sampler, a boundary sampler
with unit outward normals, and the pair of helper fields used by the exact
constructions: a vanishing multiplier L (zero exactly on the constrained
boundary portion, nonzero elsewhere) and a smooth extension G of the boundary
data.  The helper fields are supplied as expression builders operating on a
DiffVector input so that the constructions and their derivatives stay on the
autodiff tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import DiffVector, cos, sin, sqrt


class GeometryError(Exception):
    pass


# ---------------------------------------------------------------------------
# domains


class Domain:
    """Base: d-dimensional region with interior and boundary samplers."""

    name = "domain"

    def __init__(self, d):
        if d < 1:
            raise GeometryError(f"dimension must be >= 1, got {d}")
        self.d = d

    def contains(self, x):
        raise NotImplementedError

    def sample_interior(self, count, rng):
        raise NotImplementedError

    @property
    def boundary_portions(self):
        return ("all",)

    def sample_boundary(self, portion, count, rng):
        """Return (points, unit outward normals), both (count, d)."""
        raise NotImplementedError

    def _check_portion(self, portion):
        if portion not in self.boundary_portions:
            raise GeometryError(
                f"{self.name} has no boundary portion '{portion}'; valid: {self.boundary_portions}"
            )


def _unit_directions(count, d, rng):
    v = rng.standard_normal((count, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


class UnitBall(Domain):
    name = "unit-ball"

    def contains(self, x):
        return np.linalg.norm(x, axis=-1) < 1.0

    def sample_interior(self, count, rng):
        # radius by inverse CDF (P(R<r) = r^d), direction uniform on the sphere
        r = rng.random(count) ** (1.0 / self.d)
        return _unit_directions(count, self.d, rng) * r[:, None]

    def sample_boundary(self, portion, count, rng):
        self._check_portion(portion)
        pts = _unit_directions(count, self.d, rng)
        return pts, pts.copy()


class UnitCube(Domain):
    """[0,1]^d, optionally split into Dirichlet faces (per axis) and the rest."""

    name = "unit-cube"

    def __init__(self, d, dirichlet_axes=()):
        super().__init__(d)
        self.dirichlet_axes = tuple(dirichlet_axes)

    def contains(self, x):
        return np.all((x > 0.0) & (x < 1.0), axis=-1)

    def sample_interior(self, count, rng):
        return rng.random((count, self.d))

    @property
    def boundary_portions(self):
        if self.dirichlet_axes:
            return ("all", "dirichlet", "neumann")
        return ("all",)

    def _axes_for(self, portion):
        if portion == "all":
            return tuple(range(self.d))
        if portion == "dirichlet":
            return self.dirichlet_axes
        return tuple(i for i in range(self.d) if i not in self.dirichlet_axes)

    def sample_boundary(self, portion, count, rng):
        self._check_portion(portion)
        axes = self._axes_for(portion)
        if not axes:
            raise GeometryError(f"portion '{portion}' is empty for {self.name} d={self.d}")
        # all faces of the unit cube have equal measure
        ax = rng.choice(len(axes), size=count)
        side = rng.integers(0, 2, size=count)
        pts = rng.random((count, self.d))
        normals = np.zeros((count, self.d))
        for j, a in enumerate(axes):
            sel = ax == j
            pts[sel, a] = side[sel]
            normals[sel, a] = 2.0 * side[sel] - 1.0
        return pts, normals


class SymmetricCube(Domain):
    """(-1,1)^d; used by the periodic experiments (no boundary sampling)."""

    name = "symmetric-cube"

    def contains(self, x):
        return np.all(np.abs(x) < 1.0, axis=-1)

    def sample_interior(self, count, rng):
        return rng.uniform(-1.0, 1.0, (count, self.d))


class Annulus(Domain):
    """{r0 < |x| < r1}; Dirichlet portion = inner sphere, Neumann = outer."""

    name = "annulus"

    def __init__(self, d, r0=0.5, r1=1.0):
        super().__init__(d)
        self.r0, self.r1 = float(r0), float(r1)

    def contains(self, x):
        r = np.linalg.norm(x, axis=-1)
        return (r > self.r0) & (r < self.r1)

    def sample_interior(self, count, rng):
        u = rng.random(count)
        d = self.d
        r = (self.r0**d + u * (self.r1**d - self.r0**d)) ** (1.0 / d)
        return _unit_directions(count, d, rng) * r[:, None]

    @property
    def boundary_portions(self):
        return ("all", "dirichlet", "neumann")

    def sample_boundary(self, portion, count, rng):
        self._check_portion(portion)
        dirs = _unit_directions(count, self.d, rng)
        if portion == "dirichlet":
            inner = np.ones(count, dtype=bool)
        elif portion == "neumann":
            inner = np.zeros(count, dtype=bool)
        else:
            w_in = self.r0 ** (self.d - 1)
            w_out = self.r1 ** (self.d - 1)
            inner = rng.random(count) < w_in / (w_in + w_out)
        r = np.where(inner, self.r0, self.r1)
        pts = dirs * r[:, None]
        normals = np.where(inner[:, None], -dirs, dirs)
        return pts, normals


# the 2D polygon of the complex mixed-boundary example: the largest bounded
# component of {psi != 0} where psi = (x1-x2+1)(x1+x2)(x1+2/5)x2(x2-1);
# a convex quadrilateral with vertices (-1,0), (-2/5,0), (-2/5,2/5), (-1/2,1/2)
_POLY_VERTS = np.array([[-1.0, 0.0], [-0.4, 0.0], [-0.4, 0.4], [-0.5, 0.5]])
_POLY_EDGES = [
    # (start, end, outward normal)
    (_POLY_VERTS[0], _POLY_VERTS[1], np.array([0.0, -1.0])),
    (_POLY_VERTS[1], _POLY_VERTS[2], np.array([1.0, 0.0])),
    (_POLY_VERTS[2], _POLY_VERTS[3], np.array([1.0, 1.0]) / np.sqrt(2.0)),
    (_POLY_VERTS[3], _POLY_VERTS[0], np.array([-1.0, 1.0]) / np.sqrt(2.0)),
]


def _poly2d_contains(xy):
    x1, x2 = xy[..., 0], xy[..., 1]
    return (x2 > 0.0) & (x1 + 0.4 < 0.0) & (x1 + x2 < 0.0) & (x1 - x2 + 1.0 > 0.0)


class PolygonSlab(Domain):
    """The quadrilateral above, crossed with [0,1]^(d-2) for d > 2.

    The Dirichlet portion is the polygon boundary (where the quintic prefactor
    vanishes); the Neumann portion is the cube faces of the extra coordinates.
    """

    name = "polygon-slab"

    def __init__(self, d):
        if d < 2:
            raise GeometryError("polygon-slab needs d >= 2")
        super().__init__(d)

    def contains(self, x):
        ok = _poly2d_contains(x[..., :2])
        if self.d > 2:
            ok = ok & np.all((x[..., 2:] > 0.0) & (x[..., 2:] < 1.0), axis=-1)
        return ok

    def sample_interior(self, count, rng):
        out = np.empty((count, self.d))
        have = 0
        while have < count:
            m = 2 * (count - have) + 16
            cand = np.column_stack(
                [rng.uniform(-1.0, -0.4, m), rng.uniform(0.0, 0.5, m)]
            )
            cand = cand[_poly2d_contains(cand)][: count - have]
            out[have : have + len(cand), :2] = cand
            have += len(cand)
        if self.d > 2:
            out[:, 2:] = rng.random((count, self.d - 2))
        return out

    @property
    def boundary_portions(self):
        return ("dirichlet", "neumann") if self.d > 2 else ("all", "dirichlet")

    def sample_boundary(self, portion, count, rng):
        self._check_portion(portion)
        if portion == "neumann":
            if self.d <= 2:
                raise GeometryError("polygon-slab d=2 has no Neumann portion")
            pts = self.sample_interior(count, rng)
            normals = np.zeros((count, self.d))
            extra = self.d - 2
            ax = 2 + rng.choice(extra, size=count)
            side = rng.integers(0, 2, size=count)
            pts[np.arange(count), ax] = side
            normals[np.arange(count), ax] = 2.0 * side - 1.0
            return pts, normals
        # polygon edges, weighted by length
        lengths = np.array([np.linalg.norm(b - a) for a, b, _ in _POLY_EDGES])
        which = rng.choice(len(_POLY_EDGES), size=count, p=lengths / lengths.sum())
        t = rng.random(count)
        pts = np.empty((count, self.d))
        normals = np.zeros((count, self.d))
        for j, (a, b, nu) in enumerate(_POLY_EDGES):
            sel = which == j
            pts[sel, :2] = a + t[sel, None] * (b - a)
            normals[sel, :2] = nu
        if self.d > 2:
            pts[:, 2:] = rng.random((count, self.d - 2))
        return pts, normals


class TimeCylinder(Domain):
    """(0,T) x base, sampled as columns [x_1..x_d, t] with t last."""

    name = "time-cylinder"

    def __init__(self, base, T=1.0):
        super().__init__(base.d + 1)
        self.base = base
        self.T = float(T)

    @property
    def spatial_d(self):
        return self.base.d

    def contains(self, x):
        t = x[..., -1]
        return self.base.contains(x[..., :-1]) & (t > 0.0) & (t < self.T)

    def sample_interior(self, count, rng):
        xs = self.base.sample_interior(count, rng)
        t = rng.uniform(0.0, self.T, (count, 1))
        return np.hstack([xs, t])

    @property
    def boundary_portions(self):
        return ("initial", "lateral")

    def sample_boundary(self, portion, count, rng):
        self._check_portion(portion)
        if portion == "initial":
            xs = self.base.sample_interior(count, rng)
            pts = np.hstack([xs, np.zeros((count, 1))])
            normals = np.zeros((count, self.d))
            normals[:, -1] = -1.0
            return pts, normals
        xs, nus = self.base.sample_boundary("all", count, rng)
        t = rng.uniform(0.0, self.T, (count, 1))
        return np.hstack([xs, t]), np.hstack([nus, np.zeros((count, 1))])


# module-level forms of the two sampler operations

def sample_interior(domain, count, rng):
    if count < 1:
        raise GeometryError("count must be >= 1")
    return domain.sample_interior(count, rng)


def sample_boundary(domain, portion, count, rng):
    if count < 1:
        raise GeometryError("count must be >= 1")
    return domain.sample_boundary(portion, count, rng)


# ---------------------------------------------------------------------------
# boundary helper fields


@dataclass
class BoundaryData:
    """Helper fields for one boundary condition of one experiment.

    All callable fields map a DiffVector x to tape expressions.  For the
    projection style the derivative field is pinned on the boundary through
    F(x, N*) grad_L + N*; the componentwise style pins component i through
    prefactor_i * N*_i + G_i.  `denom` overrides a*grad_L·nu with the smooth
    extension actually used by the experiment (the catalogued domains extend
    the boundary value of the denominator as a constant, which keeps it away
    from zero on the whole closed region).
    """

    kind: str  # 'dirichlet' | 'flux' | 'robin'
    style: str = "projection"  # 'projection' | 'componentwise'
    L: object = None
    grad_L: object = None
    G: object = None
    normal_ext: object = None
    denom: object = None
    a: float = 1.0
    prefactors: object = None
    free_axes: tuple = ()
    note: str = ""


@dataclass
class BoundarySpec:
    """The boundary data bundle of one experiment."""

    experiment: str
    domain_factory: object
    dirichlet: BoundaryData = None
    flux: BoundaryData = None
    robin: BoundaryData = None

    @property
    def primary(self):
        for bd in (self.dirichlet, self.flux, self.robin):
            if bd is not None:
                return bd
        raise GeometryError(f"{self.experiment} has no boundary data")

    @property
    def L(self):
        return self.primary.L

    @property
    def G(self):
        return self.primary.G


def _norm_sq(x, d=None):
    d = x.width if d is None else d
    total = x[0] * x[0]
    for i in range(1, d):
        total = total + x[i] * x[i]
    return total


def poly_prefactor(x):
    """(x1-x2+1)(x1+x2)(x1+2/5)·x2·(x2-1), the quintic vanishing on the polygon boundary."""
    x1, x2 = x[0], x[1]
    return (x1 - x2 + 1.0) * (x1 + x2) * (x1 + 0.4) * x2 * (x2 - 1.0)


def _poly_partials(xy):
    """psi, psi_1, psi_2, psi_11, psi_22 at numpy points (n,>=2).

    The five factors are linear, so products of per-factor gradients give all
    the second derivatives (per-factor curvature is zero).
    """
    x1, x2 = xy[..., 0], xy[..., 1]
    f = np.stack([x1 - x2 + 1.0, x1 + x2, x1 + 0.4, x2, x2 - 1.0])
    g1 = np.array([1.0, 1.0, 1.0, 0.0, 0.0])
    g2 = np.array([-1.0, 1.0, 0.0, 1.0, 1.0])
    k = 5
    psi = np.prod(f, axis=0)
    d1 = np.zeros_like(psi)
    d2 = np.zeros_like(psi)
    d11 = np.zeros_like(psi)
    d22 = np.zeros_like(psi)
    for a in range(k):
        rest = np.prod(np.delete(f, a, axis=0), axis=0)
        d1 += g1[a] * rest
        d2 += g2[a] * rest
        for b in range(k):
            if b == a:
                continue
            rest2 = np.prod(np.delete(f, (min(a, b), max(a, b)), axis=0), axis=0)
            d11 += g1[a] * g1[b] * rest2
            d22 += g2[a] * g2[b] * rest2
    return psi, d1, d2, d11, d22


def _cube_prefactors(x, axes, d):
    comps = []
    for i in range(d):
        if i in axes:
            comps.append(x[i] * (1.0 - x[i]))
        else:
            comps.append(None)
    return comps


def boundary_functions(experiment_id):
    """The exact helper fields (L, grad L, G, normal extension) of an experiment."""
    try:
        return _BOUNDARY_REGISTRY[experiment_id]()
    except KeyError:
        raise GeometryError(
            f"unknown experiment '{experiment_id}'; known: {sorted(_BOUNDARY_REGISTRY)}"
        ) from None


def _bd_dirichlet_ball():
    return BoundarySpec(
        "dirichlet-elliptic-ball",
        lambda d: UnitBall(d),
        dirichlet=BoundaryData(
            kind="dirichlet",
            L=lambda x: sqrt(_norm_sq(x)) - 1.0,
            G=lambda x: float(np.e),
            note="L = |x| - 1, G = e",
        ),
    )


def _bd_monge_ampere():
    return BoundarySpec(
        "monge-ampere",
        lambda d: UnitBall(d),
        dirichlet=BoundaryData(
            kind="dirichlet",
            L=lambda x: 1.0 - _norm_sq(x),
            G=lambda x: float(np.exp(1.0 / x.width)),
            note="L = 1 - |x|^2, G = e^(1/d)",
        ),
    )


def _bd_neumann_cube():
    return BoundarySpec(
        "neumann-cube",
        lambda d: UnitCube(d),
        flux=BoundaryData(
            kind="flux",
            style="componentwise",
            prefactors=lambda x: _cube_prefactors(x, set(range(x.width)), x.width),
            G=lambda x: [(np.e - 1.0) * x[i] + 1.0 for i in range(x.width)],
            note="p_i = x_i(1-x_i) N*_i + (e-1)x_i + 1; per-face prefactor "
            "replacing the global (1-|x|^2) factor, which does not vanish on "
            "cube faces",
        ),
    )


def _bd_neumann_ball():
    return BoundarySpec(
        "neumann-ball",
        lambda d: UnitBall(d),
        flux=BoundaryData(
            kind="flux",
            style="projection",
            L=lambda x: 0.5 * (_norm_sq(x) - 1.0),
            grad_L=lambda x: x,
            G=lambda x: 0.0,
            normal_ext=lambda x: x,
            denom=lambda x: 1.0,  # constant extension of grad_L·nu = |x|^2 = 1 on the sphere
            note="p = (-x·N*) x + N*",
        ),
    )


def _bd_mixed_slab():
    return BoundarySpec(
        "mixed-slab",
        lambda d: UnitCube(d, dirichlet_axes=(0,)),
        dirichlet=BoundaryData(
            kind="dirichlet",
            L=lambda x: x[0] * (1.0 - x[0]),
            G=lambda x: 0.0,
        ),
        flux=BoundaryData(
            kind="flux",
            style="componentwise",
            prefactors=lambda x: _cube_prefactors(x, set(range(1, x.width)), x.width),
            G=lambda x: [0.0] * x.width,
            free_axes=(0,),
        ),
    )


def _bd_mixed_complex2d():
    return BoundarySpec(
        "mixed-complex2d",
        lambda d: PolygonSlab(d),
        dirichlet=BoundaryData(
            kind="dirichlet",
            L=poly_prefactor,
            G=lambda x: 0.0,
        ),
        flux=BoundaryData(
            kind="flux",
            style="componentwise",
            prefactors=lambda x: _cube_prefactors(x, set(range(2, x.width)), x.width),
            G=lambda x: [0.0] * x.width,
            free_axes=(0, 1),
        ),
    )


def _bd_mixed_annulus():
    return BoundarySpec(
        "mixed-annulus",
        lambda d: Annulus(d),
        dirichlet=BoundaryData(
            kind="dirichlet",
            L=lambda x: _norm_sq(x) - 0.25,
            G=lambda x: float(np.cos(0.75)),
            note="u = (|x|^2 - 1/4) N + cos(3/4) on the inner sphere",
        ),
        flux=BoundaryData(
            kind="flux",
            style="projection",
            L=lambda x: 0.5 * (_norm_sq(x) - 1.0),
            grad_L=lambda x: x,
            G=lambda x: 0.0,
            normal_ext=lambda x: x,
            denom=lambda x: 1.0,
        ),
    )


def _bd_robin_ball():
    def g_robin(x):
        s = DiffVector.stack([x[i] for i in range(x.width)]).sum()
        return s * cos(s) + sin(s)

    return BoundarySpec(
        "robin-ball",
        lambda d: UnitBall(d),
        robin=BoundaryData(
            kind="robin",
            style="projection",
            L=lambda x: 0.5 * (_norm_sq(x) - 1.0),
            grad_L=lambda x: x,
            G=g_robin,
            normal_ext=lambda x: x,
            denom=lambda x: 1.0,
            note="Robin data of u = sin(sum x_k) on the unit sphere",
        ),
    )


def _sum_coords(x):
    return DiffVector.stack([x[i] for i in range(x.width)]).sum()


def _bd_robin_sumdiff():
    def G(x):
        s = _sum_coords(x)
        return [sin(s) + (2.0 * x[i] - 1.0) * cos(s) for i in range(x.width)]

    return BoundarySpec(
        "robin-sumdiff",
        lambda d: UnitCube(d),
        robin=BoundaryData(
            kind="robin",
            style="componentwise",
            G=G,
            note="G_i interpolates the outward-normal Robin data of both x_i faces",
        ),
    )


def _bd_robin_augmented():
    def G(x):
        s = _sum_coords(x)
        g = sin(s) + cos(s)
        return [g for _ in range(x.width)]

    return BoundarySpec(
        "robin-augmented",
        lambda d: UnitCube(d),
        robin=BoundaryData(
            kind="robin",
            style="componentwise",
            G=G,
            note="r_i = u + d_i u is pinned on both x_i faces (coordinate-normal reading)",
        ),
    )


_BOUNDARY_REGISTRY = {
    "dirichlet-elliptic-ball": _bd_dirichlet_ball,
    "monge-ampere": _bd_monge_ampere,
    "neumann-cube": _bd_neumann_cube,
    "neumann-ball": _bd_neumann_ball,
    "mixed-slab": _bd_mixed_slab,
    "mixed-complex2d": _bd_mixed_complex2d,
    "mixed-annulus": _bd_mixed_annulus,
    "robin-ball": _bd_robin_ball,
    "robin-sumdiff": _bd_robin_sumdiff,
    "robin-augmented": _bd_robin_augmented,
}


def known_boundary_ids():
    return sorted(_BOUNDARY_REGISTRY)
