"""The acceptance gate: every criterion at its stated tolerance.

Criteria 1-5 are property checks (no training, seconds).  Criteria 6-14 are
desk-scale training reproductions of the published tables; thresholds are ten
times the printed errors.  Where a criterion asserts only a threshold, the
run stops as soon as the evaluation error reaches it (the epoch budget is an
upper bound); where it asserts an ordering between two methods, both runs use
the identical fixed budget.

Run with `-s` to see one PASS/FAIL line per criterion.
"""

import numpy as np
import pytest

from mimpde import catalog as cat
from mimpde import verification as V
from mimpde.optimizer import train

_RESULTS = {}


def _report(criterion, ok, detail):
    print(f"[acceptance] criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {criterion}: {detail}"


def _run(eid, method, d, target=0.0, seed=0, **overrides):
    key = (eid, method, d, target, seed, tuple(sorted(overrides.items())))
    if key in _RESULTS:
        return _RESULTS[key]
    cfg = cat.default_config(eid, method, d=d, seed=seed)
    cfg.target_error = target
    for k, v in overrides.items():
        setattr(cfg, k, v)
    rec = train(cat.build_plan(cfg))
    assert rec.status == "completed", f"{eid}/{method} diverged"
    _RESULTS[key] = rec
    print(
        f"[acceptance]   run {eid}/{method} d={d}: eps={rec.final_error:.3e} "
        f"at epoch {rec.epochs_run} ({rec.wall_seconds/60:.1f} min)"
    )
    return rec


# ---------------------------------------------------------------------------
# property criteria (no training)


def test_criterion_1_exact_constraint_suite():
    rows = V.check_construction_exactness(draws=20, samples=1000)
    failed = [r for r in rows if not r[1]]
    worst = max(rows, key=lambda r: float(r[2].split("residual ")[1].split(" ")[0]))
    _report(1, not failed, f"{len(rows)} constructions x 20 draws; worst {worst[2]} ({worst[0]})")


def test_criterion_2_autodiff_finite_differences():
    rows = V.check_autodiff_fd(points=100)
    failed = [r for r in rows if not r[1]]
    _report(2, not failed, "; ".join(f"{name.split('/')[1]} {d}" for name, _, d in rows))


def test_criterion_3_adam_oracle():
    rows = V.check_adam_oracle(steps=10)
    _report(3, rows[0][1], rows[0][2])


def test_criterion_4_parameter_counts():
    rows = V.check_parameter_counts()
    _report(4, rows[0][1], rows[0][2])


def test_criterion_5_source_terms():
    rows = V.check_sources()
    failed = [r for r in rows if not r[1]]
    worst = max(float(d.split("err ")[1].split(" ")[0]) for _, _, d in rows)
    _report(5, not failed, f"{len(rows)} sources validated; worst rel err {worst:.2e} (tol 1e-6)")


# ---------------------------------------------------------------------------
# training criteria


def test_criterion_6_dirichlet_elliptic():
    mim = _run("dirichlet-elliptic-ball", "MIM", 2, target=2.4e-3)
    dgm = _run("dirichlet-elliptic-ball", "DGM", 2, target=3.3e-3)
    ok = mim.final_error <= 2.4e-3 and dgm.final_error <= 3.3e-3
    _report(6, ok, f"MIM eps={mim.final_error:.3e} (<=2.4e-3), DGM eps={dgm.final_error:.3e} (<=3.3e-3)")


def test_criterion_7_monge_ampere():
    rec = _run("monge-ampere", "MIM", 2, target=1.4e-3)
    _report(7, rec.final_error <= 1.4e-3, f"eps={rec.final_error:.3e} (<=1.4e-3)")


def test_criterion_8_neumann_cube():
    # ordering against the penalty baseline: identical fixed budgets
    mim2 = _run("neumann-cube", "MIM", 2)
    dgm2 = _run("neumann-cube", "DGM", 2)
    mim4 = _run("neumann-cube", "MIM", 4)
    dgm4 = _run("neumann-cube", "DGM", 4)
    ok = (
        mim2.final_error <= 2.9e-4
        and mim2.final_error < dgm2.final_error
        and mim4.final_error < dgm4.final_error
    )
    _report(
        8,
        ok,
        f"MIM d2 eps={mim2.final_error:.3e} (<=2.9e-4); "
        f"d2 MIM {mim2.final_error:.3e} < DGM {dgm2.final_error:.3e}; "
        f"d4 MIM {mim4.final_error:.3e} < DGM {dgm4.final_error:.3e}",
    )


def test_criterion_9_neumann_ball():
    mim = _run("neumann-ball", "MIM", 2, target=5.2e-3)
    dgm = _run("neumann-ball", "DGM", 2, target=1.1e-2)
    ok = mim.final_error <= 5.2e-3 and dgm.final_error <= 1.1e-2
    _report(9, ok, f"MIM eps={mim.final_error:.3e} (<=5.2e-3), "
                   f"penalty-free DGM eps={dgm.final_error:.3e} (<=1.1e-2)")


def test_criterion_10_robin():
    sd = _run("robin-sumdiff", "MIM", 2)
    au = _run("robin-augmented", "MIM", 2)
    ok = (
        sd.final_error <= 9.5e-4
        and au.final_error <= 7.5e-2
        and sd.final_error < au.final_error
    )
    _report(10, ok, f"SumDiff eps={sd.final_error:.3e} (<=9.5e-4), "
                    f"Augmented eps={au.final_error:.3e} (<=7.5e-2), SumDiff < Augmented")


def test_criterion_11_mixed():
    slab = _run("mixed-slab", "MIM", 2, target=1.8e-2)
    ann = _run("mixed-annulus", "MIM", 2, target=2.4e-3)
    ok = slab.final_error <= 1.8e-2 and ann.final_error <= 2.4e-3
    _report(11, ok, f"slab eps={slab.final_error:.3e} (<=1.8e-2), "
                    f"annulus eps={ann.final_error:.3e} (<=2.4e-3)")


def test_criterion_12_periodic():
    k1 = _run("periodic-sum", "MIM", 2, target=1.6e-2)
    k3 = _run("periodic-product", "MIM", 2, target=2.6e-2)
    hf = _run("periodic-1d-highfreq", "MIM", 1, target=4.3e-2)
    ok = k1.final_error <= 1.6e-2 and k3.final_error <= 2.6e-2 and hf.final_error <= 4.3e-2
    _report(12, ok, f"k=1 eps={k1.final_error:.3e} (<=1.6e-2), "
                    f"k=3 eps={k3.final_error:.3e} (<=2.6e-2), "
                    f"1d high-freq eps={hf.final_error:.3e} (<=4.3e-2)")


def test_criterion_13_parabolic():
    mim1 = _run("parabolic", "MIM1", 2, target=1.9e-1)
    dgm = _run("parabolic", "DGM", 2, target=5.2e-3)
    ok = mim1.final_error <= 1.9e-1 and dgm.final_error <= 5.2e-3
    order = "DGM < MIM1" if dgm.final_error < mim1.final_error else "MIM1 <= DGM"
    _report(13, ok, f"MIM1 eps={mim1.final_error:.3e} (<=1.9e-1), "
                    f"DGM eps={dgm.final_error:.3e} (<=5.2e-3); observed {order} (recorded only)")


def test_criterion_14_wave():
    mim2 = _run("wave", "MIM2", 2)
    dgm = _run("wave", "DGM", 2)
    ok = mim2.final_error <= 2.5e-2 and mim2.final_error < dgm.final_error
    _report(14, ok, f"MIM2 eps={mim2.final_error:.3e} (<=2.5e-2), "
                    f"DGM eps={dgm.final_error:.3e}; exact-IC advantage MIM2 < DGM")
