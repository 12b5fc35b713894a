"""ADAM with per-step resampling of the collocation points.

The update follows the standard moment recursion with bias correction:
m' = b1 m + (1-b1) g, v' = b2 v + (1-b2) g*g, theta' = theta - lr *
(m'/(1-b1^k)) / (sqrt(v'/(1-b2^k)) + eps), with defaults lr = 0.001,
b1 = 0.9, b2 = 0.999, eps = 1e-8.  Every step draws a fresh interior batch
(and fresh boundary/initial batches in penalty mode) before the gradient is
evaluated.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteError


class OptimizerError(Exception):
    pass


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    k: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, size, lr=0.001):
        return cls(m=np.zeros(size), v=np.zeros(size), lr=lr)


def adam_step(state, params, grad):
    """One ADAM update; returns (new_state, new_params)."""
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise OptimizerError(
            f"shape mismatch: params {params.shape}, grad {grad.shape}, m {state.m.shape}"
        )
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise NonFiniteError(
            f"non-finite gradient at step {state.k + 1}, parameter index {bad}"
        )
    k = state.k + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**k)
    v_hat = v / (1.0 - state.beta2**k)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(
        m=m, v=v, k=k, lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps
    )
    return new_state, new_params


@dataclass
class TrainingPlan:
    """Everything the loop needs, prepared by the experiment catalogue."""

    bundle: object  # ParamBundle
    tape: object  # training tape
    loss_node: object  # DiffScalar
    resample: object  # callable(rng) -> None, refreshes every input leaf
    evaluate: object  # callable() -> float, relative L2 on the fixed eval set
    rng: object  # sampling stream (numpy Generator)
    max_epochs: int
    eval_interval: int = 100
    target_error: float = 0.0
    lr: float = 0.001
    config: dict = field(default_factory=dict)


@dataclass
class RunRecord:
    config: dict
    rows: list  # (epoch, mean loss since last row, rel_l2)
    final_error: float
    epochs_run: int
    wall_seconds: float
    status: str  # 'completed' | 'diverged'
    stopped_early: bool
    theta: np.ndarray
    version: str = ""

    @property
    def diverged(self):
        return self.status == "diverged"


def train(plan):
    """Run the resampled ADAM loop and record the loss/error trace.

    Rows are written at epoch 0 and every `eval_interval` epochs; the loss
    column is the mean training loss since the previous row.  A non-finite
    loss or gradient aborts the run, keeping the parameters from the last
    recorded row as the checkpoint.
    """
    from . import __version__

    bundle = plan.bundle
    theta = bundle.vector()
    state = AdamState.fresh(theta.size, lr=plan.lr)
    t0 = time.perf_counter()

    plan.resample(plan.rng)
    plan.tape.run()
    loss0 = float(plan.loss_node.value[0])
    rows = [(0, loss0, plan.evaluate())]
    checkpoint = theta.copy()
    status = "completed"
    stopped_early = False
    epoch = 0
    loss_acc, loss_n = 0.0, 0

    if plan.target_error > 0.0 and rows[0][2] <= plan.target_error:
        stopped_early = plan.max_epochs > 0
    else:
        # overflow shows up as a non-finite loss/gradient and aborts the run;
        # no need for numpy to warn on the way there
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            for epoch in range(1, plan.max_epochs + 1):
                try:
                    plan.resample(plan.rng)
                    plan.tape.run()
                    loss = float(plan.loss_node.value[0])
                    if not np.isfinite(loss):
                        raise NonFiniteError(f"loss became non-finite at epoch {epoch}")
                    plan.tape.backward(plan.loss_node.node)
                    state, theta = adam_step(state, theta, bundle.grad_vector())
                    bundle.set_vector(theta)
                except NonFiniteError:
                    status = "diverged"
                    bundle.set_vector(checkpoint)
                    break
                loss_acc += loss
                loss_n += 1
                if epoch % plan.eval_interval == 0 or epoch == plan.max_epochs:
                    err = plan.evaluate()
                    rows.append((epoch, loss_acc / loss_n, err))
                    loss_acc, loss_n = 0.0, 0
                    checkpoint = theta.copy()
                    if plan.target_error > 0.0 and err <= plan.target_error:
                        stopped_early = epoch < plan.max_epochs
                        break
            else:
                epoch = plan.max_epochs

    wall = time.perf_counter() - t0
    return RunRecord(
        config=dict(plan.config),
        rows=rows,
        final_error=rows[-1][2],
        epochs_run=epoch,
        wall_seconds=wall,
        status=status,
        stopped_early=stopped_early,
        theta=bundle.vector().copy(),
        version=__version__,
    )
