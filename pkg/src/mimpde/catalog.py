"""The experiment catalogue: every published run as a buildable configuration.

Each entry couples a manufactured source, a domain, the exact-constraint
trial construction per method, the residual definition, the published
(d, n, m) rows with their reported relative L2 errors, and the desk/paper
sampling and epoch budgets.  `build_plan` turns a validated RunConfig into a
TrainingPlan for the optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import DiffScalar, DiffVector, Tape, mean_sq
from . import constructions as cons
from . import geometry as geo
from . import losses as los
from .network import NetworkSpec, ParamBundle, init_parameters
from .optimizer import TrainingPlan


class CatalogError(Exception):
    pass


@dataclass
class Row:
    d: int
    n: int
    m: int
    activation: str = None  # experiment default unless overridden (wave table)
    desk: bool = True  # d >= 32 rows exist but are out of the desk budget
    paper: dict = field(default_factory=dict)  # method -> printed epsilon (or None)


@dataclass
class Experiment:
    id: str
    family: str  # elliptic | monge-ampere | parabolic | wave
    methods: tuple
    activation: str
    rows: list
    interior: dict  # budget -> count
    epochs: dict  # budget -> count (per-row overrides via epochs_by_d)
    k: int = 0  # periodic harmonics (0 = non-periodic)
    periods: float = 2.0
    boundary_id: str = None  # geometry.boundary_functions key
    lam: dict = field(default_factory=dict)  # method -> default penalty weight
    epochs_by_d: dict = field(default_factory=dict)  # (budget, d) -> epochs
    note: str = ""

    @property
    def time_dependent(self):
        return self.family in ("parabolic", "wave")

    def row_for(self, d, n=None, m=None, activation=None):
        for r in self.rows:
            if r.d != d:
                continue
            if n is not None and r.n != n:
                continue
            if m is not None and r.m != m:
                continue
            if activation is not None and (r.activation or self.activation) != activation:
                continue
            return r
        raise CatalogError(
            f"{self.id} has no catalogued row d={d}"
            + (f" n={n}" if n is not None else "")
            + (f" m={m}" if m is not None else "")
        )


def _rows(data, methods):
    out = []
    for entry in data:
        d, n, m, *rest = entry
        paper = dict(zip(methods, rest[0])) if rest else {}
        out.append(Row(d=d, n=n, m=m, paper=paper))
    return out


_E = {}


def _register(exp):
    _E[exp.id] = exp
    return exp


_register(
    Experiment(
        id="dirichlet-elliptic-ball",
        family="elliptic",
        methods=("MIM", "DGM"),
        activation="requ",
        rows=_rows(
            [
                (2, 10, 2, (2.37e-4, 3.26e-4)),
                (4, 15, 2, (5.85e-4, 3.13e-4)),
                (8, 20, 2, (8.10e-4, 3.22e-4)),
                (16, 20, 2, (8.63e-4, 2.31e-4)),
                (32, 35, 2, (1.01e-3, 1.53e-4)),
                (64, 70, 2, (5.85e-4, 9.41e-5)),
                (128, 144, 2, (4.63e-4, None)),
                (256, 280, 2, (5.19e-4, None)),
            ],
            ("MIM", "DGM"),
        ),
        interior={"desk": 10_000, "paper": 10_000},
        epochs={"desk": 20_000, "paper": 20_000},
        boundary_id="dirichlet-elliptic-ball",
    )
)
for r in _E["dirichlet-elliptic-ball"].rows:
    r.desk = r.d <= 16

_register(
    Experiment(
        id="monge-ampere",
        family="monge-ampere",
        methods=("MIM",),
        activation="requ",
        rows=_rows(
            [
                (2, 10, 2, (1.39e-4,)),
                (2, 20, 2, (2.16e-4,)),
                (2, 30, 2, (1.91e-4,)),
                (4, 20, 1, (1.66e-4,)),
                (4, 20, 2, (6.82e-5,)),
            ],
            ("MIM",),
        ),
        interior={"desk": 10_000, "paper": 50_000},
        epochs={"desk": 10_000, "paper": 10_000},
        boundary_id="monge-ampere",
    )
)

_register(
    Experiment(
        id="neumann-cube",
        family="elliptic",
        methods=("MIM", "DGM"),
        activation="requ",
        rows=_rows(
            [
                (2, 10, 2, (2.86e-5, 3.67e-4)),
                (4, 15, 2, (6.23e-4, 1.37e-3)),
                (8, 20, 2, (1.70e-3, 6.12e-3)),
                (16, 25, 2, (2.55e-3, 7.18e-3)),
                (32, 35, 2, (3.08e-3, 6.14e-3)),
                (64, 70, 2, (2.43e-3, None)),
                (128, 130, 2, (3.61e-3, None)),
            ],
            ("MIM", "DGM"),
        ),
        interior={"desk": 10_000, "paper": 50_000},
        epochs={"desk": 10_000, "paper": 10_000},
        boundary_id="neumann-cube",
        lam={"DGM": 1.0},  # the cube Neumann baseline is the penalty method
    )
)
for r in _E["neumann-cube"].rows:
    r.desk = r.d <= 16

_register(
    Experiment(
        id="neumann-ball",
        family="elliptic",
        methods=("MIM", "DGM"),
        activation="requ",
        rows=_rows(
            [
                (2, 10, 3, (5.19e-4, 1.01e-3)),
                (4, 15, 3, (3.60e-4, 6.53e-4)),
                (8, 20, 3, (5.84e-4, 6.00e-3)),
                (16, 25, 3, (1.14e-3, 9.97e-3)),
            ],
            ("MIM", "DGM"),
        ),
        interior={"desk": 10_000, "paper": 10_000},
        epochs={"desk": 20_000, "paper": 100_000},
        boundary_id="neumann-ball",
    )
)

_register(
    Experiment(
        id="robin-sumdiff",
        family="elliptic",
        methods=("MIM",),
        activation="requ",
        rows=_rows(
            [
                (2, 5, 2, (9.47e-5,)),
                (4, 10, 2, (7.38e-5,)),
                (8, 20, 2, (4.79e-5,)),
                (16, 20, 2, (3.80e-5,)),
                (32, 40, 2, (4.32e-5,)),
                (64, 80, 2, (3.39e-5,)),
            ],
            ("MIM",),
        ),
        interior={"desk": 10_000, "paper": 50_000},
        epochs={"desk": 20_000, "paper": 50_000},
        boundary_id="robin-sumdiff",
    )
)
for r in _E["robin-sumdiff"].rows:
    r.desk = r.d <= 16

_register(
    Experiment(
        id="robin-augmented",
        family="elliptic",
        methods=("MIM",),
        activation="requ",
        rows=_rows(
            [
                (2, 5, 2, (7.42e-3,)),
                (4, 10, 2, (9.71e-3,)),
                (8, 20, 2, (1.30e-2,)),
                (16, 40, 2, (2.82e-2,)),
            ],
            ("MIM",),
        ),
        interior={"desk": 10_000, "paper": 50_000},
        epochs={"desk": 20_000, "paper": 20_000},
        boundary_id="robin-augmented",
    )
)

_register(
    Experiment(
        id="mixed-slab",
        family="elliptic",
        methods=("MIM",),
        activation="requ",
        rows=_rows(
            [
                (2, 5, 2, (1.74e-3,)),
                (4, 10, 2, (3.87e-3,)),
                (8, 15, 2, (1.24e-2,)),
                (16, 24, 2, (1.91e-2,)),
            ],
            ("MIM",),
        ),
        interior={"desk": 10_000, "paper": 50_000},
        epochs={"desk": 20_000, "paper": 50_000},
        boundary_id="mixed-slab",
    )
)

_register(
    Experiment(
        id="mixed-complex2d",
        family="elliptic",
        methods=("MIM",),
        activation="requ",
        rows=_rows(
            [
                (2, 5, 2, (5.71e-3,)),
                (4, 10, 2, (9.33e-3,)),
                (8, 20, 2, (1.35e-2,)),
                (16, 40, 2, (1.77e-2,)),
            ],
            ("MIM",),
        ),
        interior={"desk": 10_000, "paper": 50_000},
        epochs={"desk": 20_000, "paper": 50_000},
        boundary_id="mixed-complex2d",
    )
)

_register(
    Experiment(
        id="mixed-annulus",
        family="elliptic",
        methods=("MIM",),
        activation="requ",
        rows=_rows(
            [
                (2, 10, 2, (2.32e-4,)),
                (4, 15, 2, (8.62e-4,)),
                (8, 20, 2, (2.94e-3,)),
                (16, 25, 2, (3.26e-3,)),
            ],
            ("MIM",),
        ),
        interior={"desk": 10_000, "paper": 10_000},
        epochs={"desk": 20_000, "paper": 20_000},
        boundary_id="mixed-annulus",
        note="the published table states no sampling or epoch budget; desk values reused",
    )
)

_register(
    Experiment(
        id="periodic-sum",
        family="elliptic",
        methods=("MIM",),
        activation="swish",
        k=1,
        rows=_rows(
            [
                (2, 8, 3, (1.514e-3,)),
                (4, 16, 3, (6.593e-3,)),
                (8, 24, 3, (1.608e-2,)),
                (16, 32, 3, (1.658e-2,)),
            ],
            ("MIM",),
        ),
        interior={"desk": 1_000, "paper": 1_000},
        epochs={"desk": 20_000, "paper": 20_000},
        epochs_by_d={("paper", 16): 50_000},
    )
)

_register(
    Experiment(
        id="periodic-product",
        family="elliptic",
        methods=("MIM",),
        activation="swish",
        k=3,
        rows=_rows(
            [
                (2, 8, 3, (2.578e-3,)),
                (4, 8, 3, (2.747e-3,)),
                (8, 16, 3, (2.965e-3,)),
                (16, 24, 3, (3.885e-3,)),
            ],
            ("MIM",),
        ),
        interior={"desk": 1_000, "paper": 1_000},
        epochs={"desk": 20_000, "paper": 20_000},
        epochs_by_d={("paper", 16): 80_000},
    )
)

_register(
    Experiment(
        id="periodic-1d-highfreq",
        family="elliptic",
        methods=("MIM",),
        activation="swish",
        k=1,
        rows=_rows([(1, 20, 3, (4.3e-3,))], ("MIM",)),
        interior={"desk": 1_000, "paper": 1_000},
        epochs={"desk": 20_000, "paper": 20_000},
    )
)

_register(
    Experiment(
        id="parabolic",
        family="parabolic",
        methods=("MIM1", "MIM2", "DGM"),
        activation="swish",
        rows=_rows(
            [
                (2, 4, 3, (1.92e-2, 4.27e-2, 5.16e-4)),
                (3, 8, 3, (1.42e-2, 3.83e-2, 1.74e-4)),
                (5, 8, 3, (3.48e-2, 3.22e-2, 1.49e-3)),
                (10, 20, 3, (8.17e-2, 1.32e-1, 4.70e-3)),
                (12, 20, 3, (7.47e-2, 2.20e-1, 5.06e-2)),
            ],
            ("MIM1", "MIM2", "DGM"),
        ),
        interior={"desk": 2_000, "paper": 2_000},
        epochs={"desk": 50_000, "paper": 50_000},
        epochs_by_d={("paper", 10): 100_000, ("paper", 12): 200_000},
        note="desk epochs follow the published 50000 for the low-dimensional rows",
    )
)

_WAVE_TABLE = [
    # (d, n, activation, method, eps at m=2, eps at m=3)
    (2, 10, "requ", "DGM", 1.25e-1, 7.28e-2),
    (2, 10, "requ", "MIM1", 5.20e-2, 6.33e-3),
    (2, 10, "requ", "MIM2", 7.02e-2, 2.90e-3),
    (2, 10, "recu", "DGM", 1.79e-2, 2.39e-2),
    (2, 10, "recu", "MIM1", 1.23e-2, 3.84e-3),
    (2, 10, "recu", "MIM2", 6.89e-3, 7.20e-3),
    (2, 20, "requ", "DGM", 4.58e-2, 1.68e-2),
    (2, 20, "requ", "MIM1", 4.58e-3, 2.21e-3),
    (2, 20, "requ", "MIM2", 3.71e-3, 2.47e-3),
    (2, 20, "recu", "DGM", 1.87e-2, 1.14e-2),
    (2, 20, "recu", "MIM1", 1.19e-3, 1.13e-3),
    (2, 20, "recu", "MIM2", 3.19e-3, 2.62e-3),
    (2, 40, "requ", "DGM", 2.77e-2, 1.24e-2),
    (2, 40, "requ", "MIM1", 1.67e-3, 1.42e-3),
    (2, 40, "requ", "MIM2", 2.77e-3, 2.23e-3),
    (2, 40, "recu", "DGM", 4.91e-3, 3.11e-3),
    (2, 40, "recu", "MIM1", 1.33e-3, 1.22e-3),
    (2, 40, "recu", "MIM2", 1.67e-3, 1.83e-3),
    (3, 10, "requ", "DGM", 2.05e-1, 1.86e-1),
    (3, 10, "requ", "MIM1", 2.88e-2, 5.85e-2),
    (3, 10, "requ", "MIM2", 1.64e-2, 6.21e-3),
    (3, 10, "recu", "DGM", 1.34e-1, 1.30e-1),
    (3, 10, "recu", "MIM1", 5.13e-2, 3.17e-2),
    (3, 10, "recu", "MIM2", 2.34e-2, 1.47e-2),
    (3, 20, "requ", "DGM", 1.54e-1, 1.01e-1),
    (3, 20, "requ", "MIM1", 4.30e-2, 4.03e-2),
    (3, 20, "requ", "MIM2", 1.57e-2, 9.32e-3),
    (3, 20, "recu", "DGM", 5.66e-2, 5.63e-2),
    (3, 20, "recu", "MIM1", 2.23e-2, 1.62e-2),
    (3, 20, "recu", "MIM2", 2.02e-2, 1.18e-2),
    (3, 40, "requ", "DGM", 5.98e-2, 7.34e-2),
    (3, 40, "requ", "MIM1", 3.47e-2, 4.34e-3),
    (3, 40, "requ", "MIM2", 1.02e-2, 4.41e-3),
    (3, 40, "recu", "DGM", 1.74e-2, 2.15e-2),
    (3, 40, "recu", "MIM1", 4.01e-3, 2.80e-3),
    (3, 40, "recu", "MIM2", 3.27e-3, 6.11e-3),
]


def _wave_rows():
    rows = {}
    for d, n, act, method, e2, e3 in _WAVE_TABLE:
        for m, e in ((2, e2), (3, e3)):
            key = (d, n, m, act)
            row = rows.setdefault(key, Row(d=d, n=n, m=m, activation=act, paper={}))
            row.paper[method] = e
    # the acceptance row (d=2, n=20, m=3, requ) leads the listing
    ordered = sorted(rows.values(), key=lambda r: (r.d, r.n, r.m, r.activation))
    ordered.sort(key=lambda r: (r.d, r.n, r.m, r.activation) != (2, 20, 3, "requ"))
    return ordered


_register(
    Experiment(
        id="wave",
        family="wave",
        methods=("DGM", "MIM1", "MIM2"),
        activation="requ",
        rows=_wave_rows(),
        interior={"desk": 2_500, "paper": 50_000},
        epochs={"desk": 20_000, "paper": 50_000},
        lam={"DGM": 1.0, "MIM1": 1.0},
        note="two wave-table rows per (d, n) print 'MIM' twice; mapped to MIM1/MIM2 by position",
    )
)

EXPERIMENTS = _E


def experiment_ids():
    return sorted(EXPERIMENTS)


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    experiment: str
    method: str
    d: int
    n: int
    m: int
    activation: str
    k: int = 0
    interior: int = 10_000
    boundary: int = 0
    epochs: int = 10_000
    lam: float = 0.0
    lr: float = 0.001
    seed: int = 0
    eval_interval: int = 100
    eval_count: int = 0  # 0 -> dimension rule: 1e4 for d <= 4 else 5e4
    target_error: float = 0.0
    resample: bool = True
    out: str = ""

    def resolved_eval_count(self):
        if self.eval_count > 0:
            return self.eval_count
        return 10_000 if self.d <= 4 else 50_000


def default_config(experiment, method, d=None, budget="desk", n=None, m=None,
                   activation=None, **overrides):
    """The catalogued configuration of one table row under a budget."""
    exp = _lookup(experiment)
    if budget not in ("desk", "paper"):
        raise CatalogError(f"unknown budget '{budget}'")
    if d is None:
        d = exp.rows[0].d
    row = exp.row_for(d, n=n, m=m, activation=activation)
    act = activation or row.activation or exp.activation
    epochs = exp.epochs_by_d.get((budget, d), exp.epochs[budget])
    lam = exp.lam.get(method, 0.0)
    boundary = 0
    if experiment == "neumann-cube" and method == "DGM":
        boundary = min(2_000 * d, 8_000)  # 1000 points per side, capped at desk scale
    elif experiment == "wave" and method in ("DGM", "MIM1"):
        boundary = min(exp.interior[budget], 4_000)  # fresh t = 0 slice per step
    cfg = RunConfig(
        experiment=experiment,
        method=method,
        d=d,
        n=row.n,
        m=row.m,
        activation=act,
        k=exp.k,
        interior=exp.interior[budget],
        boundary=boundary,
        epochs=epochs,
        lam=lam,
    )
    for key, val in overrides.items():
        if not hasattr(cfg, key):
            raise CatalogError(f"unknown config field '{key}'")
        setattr(cfg, key, val)
    return cfg


def _lookup(experiment):
    try:
        return EXPERIMENTS[experiment]
    except KeyError:
        raise CatalogError(
            f"unknown experiment '{experiment}'; valid ids: {', '.join(experiment_ids())}"
        ) from None


def validate_config(cfg):
    exp = _lookup(cfg.experiment)
    errs = []
    if cfg.method not in exp.methods:
        errs.append(
            f"method: '{cfg.method}' is not run for {cfg.experiment} (valid: {exp.methods})"
        )
    if cfg.d < 1:
        errs.append(f"d: must be >= 1, got {cfg.d}")
    if cfg.experiment == "monge-ampere" and cfg.d > 4:
        errs.append("d: the dense Monge-Ampere determinant is limited to d <= 4")
    if cfg.n < 1 or cfg.m < 1:
        errs.append(f"n/m: must be >= 1, got n={cfg.n} m={cfg.m}")
    if cfg.activation not in ("requ", "recu", "swish"):
        errs.append(f"activation: unknown '{cfg.activation}'")
    if cfg.interior < 1:
        errs.append(f"interior: must be >= 1, got {cfg.interior}")
    if cfg.epochs < 0:
        errs.append(f"epochs: must be >= 0, got {cfg.epochs}")
    if cfg.lam < 0:
        errs.append(f"lambda: must be >= 0, got {cfg.lam}")
    if cfg.lam > 0 and cfg.boundary < 1:
        errs.append("boundary: penalty mode (lambda > 0) needs a boundary batch size")
    if cfg.lam == 0 and cfg.experiment == "neumann-cube" and cfg.method == "DGM":
        errs.append("lambda: the cube Neumann DGM baseline is the penalty method; set lambda > 0")
    if cfg.k < 0 or (exp.k > 0 and cfg.k < 1):
        errs.append(f"k: periodic experiments need k >= 1, got {cfg.k}")
    if cfg.eval_interval < 1:
        errs.append(f"eval_interval: must be >= 1, got {cfg.eval_interval}")
    if errs:
        raise CatalogError("; ".join(errs))
    return exp


# ---------------------------------------------------------------------------
# plan assembly


def make_domain(cfg):
    exp = _lookup(cfg.experiment)
    if exp.time_dependent:
        return geo.TimeCylinder(geo.UnitCube(cfg.d))
    if exp.k:
        return geo.SymmetricCube(cfg.d)
    return geo.boundary_functions(exp.boundary_id).domain_factory(cfg.d)


def _net_layout(cfg):
    """Ordered (name, d_in, d_out) triples of the trainable networks."""
    exp = _lookup(cfg.experiment)
    d = cfg.d
    if exp.time_dependent:
        d_in = d + 1
        if cfg.method == "DGM":
            return [("u", d_in, 1)]
        if cfg.method == "MIM1" and exp.family == "parabolic":
            return [("u", d_in, 1), ("v", d_in, 1), ("p", d_in, d)]
        if cfg.method == "MIM2" and exp.family == "parabolic":
            return [("u", d_in, 1), ("p", d_in, d)]
        if cfg.method == "MIM1":  # wave
            return [("u", d_in, 1), ("p", d_in, d)]
        return [("u", d_in, 1), ("v", d_in, 1), ("p", d_in, d)]  # wave MIM2
    if exp.k:
        d_in = 2 * cfg.k * d
    else:
        d_in = d
    if cfg.experiment == "robin-sumdiff":
        return [("r1", d_in, d), ("r2", d_in, d)]
    if cfg.experiment == "robin-augmented":
        return [("u", d_in, 1), ("r", d_in, d)]
    if cfg.method == "DGM":
        return [("u", d_in, 1)]
    return [("u", d_in, 1), ("p", d_in, d)]


def make_networks(cfg, init_rng):
    """Initialise the method's network bundle; consumed in a fixed order."""
    nets = {}
    for name, d_in, d_out in _net_layout(cfg):
        spec = NetworkSpec(d_in=d_in, width=cfg.n, depth=cfg.m, d_out=d_out,
                           activation=cfg.activation)
        nets[name] = init_parameters(spec, init_rng)
    return nets


def make_trial(cfg, nets):
    exp = _lookup(cfg.experiment)
    eid = cfg.experiment
    if eid in ("dirichlet-elliptic-ball", "monge-ampere"):
        bd = geo.boundary_functions(eid).dirichlet
        return cons.dirichlet_trial(nets["u"], nets.get("p"), bd)
    if eid == "neumann-cube":
        if cfg.method == "DGM":
            return cons.penalty_trial([nets["u"]])
        return cons.neumann_trial_mim(nets["u"], nets["p"], geo.boundary_functions(eid).flux)
    if eid == "neumann-ball":
        bd = geo.boundary_functions(eid).flux
        if cfg.method == "DGM":
            return cons.neumann_trial_dgm(nets["u"], bd)
        return cons.neumann_trial_mim(nets["u"], nets["p"], bd)
    if eid == "robin-sumdiff":
        return cons.robin_split_trial(
            (nets["r1"], nets["r2"]), geo.boundary_functions(eid).robin, "SumDiff"
        )
    if eid == "robin-augmented":
        return cons.robin_split_trial(
            (nets["u"], nets["r"]), geo.boundary_functions(eid).robin, "Augmented"
        )
    if eid.startswith("mixed-"):
        spec = geo.boundary_functions(eid)
        flux_check = not (eid == "mixed-complex2d" and cfg.d == 2)
        trial = cons.mixed_trial_mim(nets["u"], nets["p"], spec.dirichlet, spec.flux)
        if not flux_check:
            trial.checks = [c for c in trial.checks if c.name != "mixed-flux"]
        return trial
    if exp.k:
        return cons.periodic_trial(nets["u"], nets.get("p"), exp.periods, cfg.k)
    if exp.family == "parabolic":
        if cfg.method == "DGM":
            return cons.parabolic_trial(nets["u"])
        if cfg.method == "MIM1":
            return cons.parabolic_trial(nets["u"], nets["v"], nets["p"])
        return cons.parabolic_trial(nets["u"], None, nets["p"])
    if exp.family == "wave":
        if cfg.method == "DGM":
            return cons.parabolic_trial(nets["u"])
        if cfg.method == "MIM1":
            return cons.parabolic_trial(nets["u"], None, nets["p"])
        return cons.wave_trial_mim2(nets["u"], nets["v"], nets["p"])
    raise CatalogError(f"no trial rule for {eid}/{cfg.method}")


def build_plan(cfg):
    """Assemble the full training program (tape, loss, samplers, evaluator)."""
    exp = validate_config(cfg)
    src = los.manufactured_source(cfg.experiment)
    domain = make_domain(cfg)
    d_active = cfg.d + 1 if exp.time_dependent else cfg.d

    ss = np.random.SeedSequence(cfg.seed)
    init_ss, sample_ss, eval_ss, build_ss = ss.spawn(4)
    init_rng = np.random.default_rng(init_ss)
    sample_rng = np.random.default_rng(sample_ss)
    eval_rng = np.random.default_rng(eval_ss)
    build_rng = np.random.default_rng(build_ss)

    nets = make_networks(cfg, init_rng)
    bundle = ParamBundle(list(nets.values()))
    trial = make_trial(cfg, nets)

    tape = Tape(order=2)
    x_node = tape.input(d_active, "x")
    x_node.set_value(domain.sample_interior(cfg.interior, build_rng))
    xv = DiffVector(tape, x_node)
    fields = trial.fields(xv)
    f_node = tape.input(1, "f", differentiable=False)
    f_node.set_value(src.f(x_node.val)[:, None])
    f = DiffScalar(tape, f_node)

    fillers = [_interior_filler(domain, cfg, src, x_node, f_node)]

    if exp.family == "elliptic":
        if cfg.lam > 0.0:
            pen, fill = _flux_penalty(tape, trial, domain, cfg, src, build_rng)
            fillers.append(fill)
            loss = los.elliptic_dgm_loss(fields, xv, f, reaction=src.reaction, d=cfg.d,
                                         penalty=cfg.lam * pen)
        elif cfg.method == "DGM":
            loss = los.elliptic_dgm_loss(fields, xv, f, reaction=src.reaction, d=cfg.d)
        else:
            loss = los.elliptic_mim_loss(fields, xv, f, reaction=src.reaction, d=cfg.d)
    elif exp.family == "monge-ampere":
        loss = los.monge_ampere_loss(fields, xv, f)
    elif exp.family == "parabolic":
        loss = los.parabolic_loss(fields, xv, f, cfg.method)
    else:  # wave
        pen = None
        if cfg.method in ("DGM", "MIM1"):
            pen, fill = _initial_slice_penalty(tape, trial, domain, cfg, build_rng)
            fillers.append(fill)
        loss = los.wave_loss(fields, xv, f, cfg.method, ic_penalty=pen, lam=cfg.lam)

    eval_pts = domain.sample_interior(cfg.resolved_eval_count(), eval_rng)
    u_ref = src.u_exact(eval_pts)
    eval_tape = Tape(order=2)
    e_node = eval_tape.input(d_active, "x")
    e_node.set_value(eval_pts)
    u_eval = trial.fields(DiffVector(eval_tape, e_node)).u

    def evaluate():
        eval_tape.run()
        return los.relative_l2(u_eval.value, u_ref)

    frozen = {"done": False}

    def resample(rng):
        if not cfg.resample and frozen["done"]:
            return
        for fill in fillers:
            fill(rng)
        frozen["done"] = True

    return TrainingPlan(
        bundle=bundle,
        tape=tape,
        loss_node=loss,
        resample=resample,
        evaluate=evaluate,
        rng=sample_rng,
        max_epochs=cfg.epochs,
        eval_interval=cfg.eval_interval,
        target_error=cfg.target_error,
        lr=cfg.lr,
        config=config_to_dict(cfg),
    )


def _interior_filler(domain, cfg, src, x_node, f_node):
    def fill(rng):
        pts = domain.sample_interior(cfg.interior, rng)
        x_node.set_value(pts)
        f_node.set_value(src.f(pts)[:, None])

    return fill


def _flux_penalty(tape, trial, domain, cfg, src, build_rng):
    """|grad(u)·nu - g|^2 over a fresh boundary batch (penalty baselines)."""
    xb_node = tape.input(cfg.d, "xb")
    nu_node = tape.input(cfg.d, "nu", differentiable=False)
    g_node = tape.input(1, "g", differentiable=False)
    pts, nus = domain.sample_boundary("all", cfg.boundary, build_rng)
    xb_node.set_value(pts)
    nu_node.set_value(nus)
    g_node.set_value(src.flux_data(pts, nus)[:, None])
    xb = DiffVector(tape, xb_node)
    fb = trial.fields(xb)
    flux = fb.u.grad(xb).dot(DiffVector(tape, nu_node))
    pen = mean_sq(flux - DiffScalar(tape, g_node))

    def fill(rng):
        pts, nus = domain.sample_boundary("all", cfg.boundary, rng)
        xb_node.set_value(pts)
        nu_node.set_value(nus)
        g_node.set_value(src.flux_data(pts, nus)[:, None])

    return pen, fill


def _initial_slice_penalty(tape, trial, domain, cfg, build_rng):
    """|u_t(x, 0)|^2 over a fresh t = 0 slice batch (wave DGM/MIM1)."""
    xs_node = tape.input(cfg.d + 1, "x0")
    pts, _ = domain.sample_boundary("initial", cfg.boundary, build_rng)
    xs_node.set_value(pts)
    xs = DiffVector(tape, xs_node)
    fs = trial.fields(xs)
    pen = mean_sq(fs.u.d(xs, cfg.d))

    def fill(rng):
        pts, _ = domain.sample_boundary("initial", cfg.boundary, rng)
        xs_node.set_value(pts)

    return pen, fill


def config_to_dict(cfg):
    return {
        "experiment": cfg.experiment,
        "method": cfg.method,
        "d": cfg.d,
        "n": cfg.n,
        "m": cfg.m,
        "activation": cfg.activation,
        "k": cfg.k,
        "interior": cfg.interior,
        "boundary": cfg.boundary,
        "epochs": cfg.epochs,
        "lambda": cfg.lam,
        "lr": cfg.lr,
        "seed": cfg.seed,
        "eval_interval": cfg.eval_interval,
        "eval_count": cfg.eval_count,
        "target_error": cfg.target_error,
        "resample": cfg.resample,
    }


def config_from_dict(data):
    cfg = RunConfig(
        experiment=str(data["experiment"]),
        method=str(data["method"]),
        d=int(data["d"]),
        n=int(data["n"]),
        m=int(data["m"]),
        activation=str(data["activation"]),
        k=int(data.get("k", 0)),
        interior=int(data.get("interior", 10_000)),
        boundary=int(data.get("boundary", 0)),
        epochs=int(data.get("epochs", 10_000)),
        lam=float(data.get("lambda", 0.0)),
        lr=float(data.get("lr", 0.001)),
        seed=int(data.get("seed", 0)),
        eval_interval=int(data.get("eval_interval", 100)),
        eval_count=int(data.get("eval_count", 0)),
        target_error=float(data.get("target_error", 0.0)),
        resample=_parse_bool(data.get("resample", True)),
        out=str(data.get("out", "")),
    )
    return cfg


def _parse_bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise CatalogError(f"cannot parse boolean '{v}'")
