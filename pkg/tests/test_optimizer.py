import numpy as np
import pytest

from mimpde import catalog as cat
from mimpde import geometry as geo
from mimpde import losses as los
from mimpde.autodiff import DiffScalar, DiffVector, NonFiniteError, Tape, mean_sq
from mimpde.constructions import dirichlet_trial
from mimpde.network import NetworkSpec, ParamBundle, init_parameters
from mimpde.optimizer import AdamState, TrainingPlan, adam_step, train
from mimpde.verification import adam_reference


def test_adam_first_step_hand_value():
    # k=1 with scalar g=0.5: bias corrections cancel, theta' = theta - lr*g/(|g|+eps)
    state = AdamState.fresh(1)
    theta = np.array([2.0])
    g = np.array([0.5])
    state, theta2 = adam_step(state, theta, g)
    want = 2.0 - 0.001 * 0.5 / (0.5 + 1e-8)
    assert theta2[0] == pytest.approx(want, abs=1e-15)
    assert state.k == 1


def test_adam_zero_gradient_from_rest():
    state = AdamState.fresh(3)
    theta = np.array([1.0, -1.0, 0.5])
    state, theta2 = adam_step(state, theta, np.zeros(3))
    assert np.array_equal(theta2, theta)
    assert np.all(state.m == 0) and np.all(state.v == 0)


def test_adam_matches_scalar_reference():
    rng = np.random.default_rng(0)
    theta = rng.standard_normal(25)
    grads = [rng.standard_normal(25) for _ in range(10)]
    expect = adam_reference(theta, grads)
    state = AdamState.fresh(25)
    th = theta.copy()
    for k, g in enumerate(grads):
        state, th = adam_step(state, th, g)
        assert np.max(np.abs(th - expect[k])) <= 1e-15


def test_adam_displacement_bound():
    # |delta theta| <= 10 * lr for any gradient sequence
    rng = np.random.default_rng(1)
    state = AdamState.fresh(50)
    th = rng.standard_normal(50)
    for _ in range(50):
        g = rng.standard_normal(50) * 10.0 ** rng.integers(-3, 4)
        state, th2 = adam_step(state, th, g)
        assert np.max(np.abs(th2 - th)) <= 10 * state.lr
        th = th2


def test_adam_rejects_nonfinite_gradient():
    state = AdamState.fresh(3)
    g = np.array([0.1, np.inf, 0.2])
    with pytest.raises(NonFiniteError) as err:
        adam_step(state, np.zeros(3), g)
    assert "index 1" in str(err.value)
    assert "step 1" in str(err.value)


def test_adam_shape_mismatch():
    from mimpde.optimizer import OptimizerError

    with pytest.raises(OptimizerError):
        adam_step(AdamState.fresh(3), np.zeros(3), np.zeros(4))


def test_adam_determinism():
    def run():
        rng = np.random.default_rng(2)
        state = AdamState.fresh(10)
        th = rng.standard_normal(10)
        for _ in range(20):
            state, th = adam_step(state, th, rng.standard_normal(10))
        return th

    assert np.array_equal(run(), run())


# ---------------------------------------------------------------------------
# the training loop


def _toy_plan(epochs, target=0.0, lr=0.001, n_points=256, seed=0, resample=True):
    """Fit u(x) = x^2 on the interval ball via the Poisson mixed residual."""
    ss = np.random.SeedSequence(seed)
    init_ss, sample_ss, eval_ss = ss.spawn(3)
    rng_init = np.random.default_rng(init_ss)
    rng_eval = np.random.default_rng(eval_ss)

    domain = geo.UnitBall(1)
    bd = geo.BoundaryData(kind="dirichlet", L=lambda x: x[0] * x[0] - 1.0, G=lambda x: 1.0)
    net_u = init_parameters(NetworkSpec(1, 8, 1, 1, "swish"), rng_init)
    net_p = init_parameters(NetworkSpec(1, 8, 1, 1, "swish"), rng_init)
    trial = dirichlet_trial(net_u, net_p, bd)
    bundle = ParamBundle([net_u, net_p])

    tape = Tape()
    x_node = tape.input(1, "x")
    x_node.set_value(domain.sample_interior(n_points, np.random.default_rng(123)))
    xv = DiffVector(tape, x_node)
    fields = trial.fields(xv)
    f = DiffScalar(tape, tape.constant(-2.0))  # -lap(x^2) = -2
    loss = los.elliptic_mim_loss(fields, xv, f, d=1)

    eval_pts = domain.sample_interior(2000, rng_eval)
    eval_tape = Tape()
    e_node = eval_tape.input(1, "x")
    e_node.set_value(eval_pts)
    u_eval = trial.fields(DiffVector(eval_tape, e_node)).u
    u_ref = eval_pts[:, 0] ** 2

    batches = []

    def resample_fn(rng):
        if not resample and batches:
            x_node.set_value(batches[0])
            return
        pts = domain.sample_interior(n_points, rng)
        batches.append(pts)
        x_node.set_value(pts)

    def evaluate():
        eval_tape.run()
        return los.relative_l2(u_eval.value, u_ref)

    plan = TrainingPlan(
        bundle=bundle,
        tape=tape,
        loss_node=loss,
        resample=resample_fn,
        evaluate=evaluate,
        rng=np.random.default_rng(sample_ss),
        max_epochs=epochs,
        eval_interval=100,
        target_error=target,
        lr=lr,
        config={"experiment": "toy-quadratic"},
    )
    return plan, batches


def test_train_zero_epochs_single_row():
    plan, _ = _toy_plan(0)
    rec = train(plan)
    assert len(rec.rows) == 1
    assert rec.rows[0][0] == 0
    assert rec.epochs_run == 0
    assert rec.status == "completed"


def test_train_quadratic_toy_converges():
    plan, _ = _toy_plan(2000)
    rec = train(plan)
    assert rec.status == "completed"
    assert rec.final_error < 1e-2
    epochs = [r[0] for r in rec.rows]
    assert epochs == sorted(epochs) and len(set(epochs)) == len(epochs)


def test_train_loss_trend_decreases():
    # training-sanity: the recorded loss rows (each the mean over the last 100
    # epochs) trend downward on the toy problem
    plan, _ = _toy_plan(1500)
    rec = train(plan)
    losses = [r[1] for r in rec.rows[1:]]
    smooth = np.convolve(losses, np.ones(3) / 3, mode="valid")
    assert smooth[-1] < smooth[0] / 10
    assert np.all(smooth[1:] <= smooth[:-1] * 1.25)


def test_train_resampling_advances():
    plan, batches = _toy_plan(3)
    train(plan)
    assert len(batches) >= 3
    assert not np.array_equal(batches[0], batches[1])


def test_train_frozen_samples():
    plan, batches = _toy_plan(3, resample=False)
    train(plan)
    assert len(batches) == 1  # the first draw is reused


def test_train_early_stop_at_target():
    plan, _ = _toy_plan(5000, target=5e-2)
    rec = train(plan)
    assert rec.status == "completed"
    assert rec.final_error <= 5e-2
    assert rec.stopped_early
    assert rec.epochs_run < 5000


def test_train_divergence_aborts_with_checkpoint():
    # a huge learning rate blows the swish/requ chains up to overflow
    plan, _ = _toy_plan(4000, lr=1e100)
    theta0 = plan.bundle.vector().copy()
    rec = train(plan)
    assert rec.status == "diverged"
    assert rec.diverged
    # parameters were restored to the last recorded checkpoint
    assert np.all(np.isfinite(rec.theta))


def test_train_determinism_bit_identical():
    recs = [train(_toy_plan(300, seed=7)[0]) for _ in range(2)]
    assert recs[0].final_error == recs[1].final_error
    assert np.array_equal(recs[0].theta, recs[1].theta)
    assert recs[0].rows == recs[1].rows
