"""ResNet function approximator: m residual blocks of width n.

Block k computes s_k = act(W2k · act(W1k · s_{k-1} + b1k) + b2k) + s_{k-1};
the output is a final affine map to d_out components.

Input handling is chosen so that packed parameter counts reproduce the
published closed forms exactly: the first block's first matrix maps the raw
input (n x d_in), and the shortcut of block 1 carries the zero-padded input
when d_in <= n ('zeropad' lift).  When d_in > n (only the high-harmonic
periodic feature nets) no affine lift would keep the count identity, so the
first block simply has no shortcut ('none' lift).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    AddNode,
    AffineNode,
    AutodiffError,
    DiffVector,
    PadNode,
    ParamBlock,
    UnaryNode,
)

ACTIVATIONS = ("requ", "recu", "swish")


def activation_eval(kind, x):
    """Numeric activation value: requ = max(x,0)^2, recu = max(x,0)^3, swish = x·sigmoid(x)."""
    if kind not in ACTIVATIONS:
        raise ValueError(f"unknown activation '{kind}', expected one of {ACTIVATIONS}")
    x = np.asarray(x, dtype=np.float64)
    if kind == "requ":
        out = np.maximum(x, 0.0) ** 2
    elif kind == "recu":
        out = np.maximum(x, 0.0) ** 3
    else:
        out = x / (1.0 + np.exp(-np.clip(x, -500, 500)))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class NetworkSpec:
    d_in: int
    width: int
    depth: int
    d_out: int = 1
    activation: str = "requ"
    lift: str = "auto"  # 'zeropad' | 'none' | 'auto'

    def __post_init__(self):
        if self.width < 1 or self.depth < 1 or self.d_out < 1 or self.d_in < 1:
            raise ValueError(f"invalid network shape {self}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{self.activation}'")
        if self.lift not in ("zeropad", "none", "auto"):
            raise ValueError(f"unknown lift '{self.lift}'")
        if self.lift == "zeropad" and self.d_in > self.width:
            raise ValueError(f"zeropad lift requires d_in <= width, got {self}")

    @property
    def effective_lift(self):
        if self.lift != "auto":
            return self.lift
        return "zeropad" if self.d_in <= self.width else "none"

    def block_shapes(self):
        """Ordered (name, shape) pairs of every parameter block."""
        n, m, d_in, d_out = self.width, self.depth, self.d_in, self.d_out
        shapes = [("W1_1", (n, d_in)), ("b1_1", (n,)), ("W2_1", (n, n)), ("b2_1", (n,))]
        for k in range(2, m + 1):
            shapes += [
                (f"W1_{k}", (n, n)),
                (f"b1_{k}", (n,)),
                (f"W2_{k}", (n, n)),
                (f"b2_{k}", (n,)),
            ]
        shapes += [("Wout", (d_out, n)), ("bout", (d_out,))]
        return shapes

    def parameter_count(self):
        return sum(int(np.prod(s)) for _, s in self.block_shapes())


def count_parameters(method, m, n, d):
    """Closed-form parameter counts, per network-structure conventions above.

    DGM uses one scalar net; MIM pairs it with a d-component derivative net.
    For time-dependent problems d is the spatial dimension plus one; for
    periodic nets d is the Fourier feature width 2kd.
    """
    if m < 1 or n < 1 or d < 1:
        raise ValueError(f"need positive m, n, d; got m={m} n={n} d={d}")
    if method == "DGM":
        return (2 * m - 1) * n * n + (2 * m + d + 1) * n + 1
    if method == "MIM":
        return (4 * m - 2) * n * n + (4 * m + 3 * d + 1) * n + d + 1
    raise ValueError(f"unknown method '{method}', expected DGM or MIM")


@dataclass
class NetworkParams:
    """The ordered parameter blocks of one network, packable to a flat vector."""

    spec: NetworkSpec
    blocks: list = field(default_factory=list)

    @property
    def size(self):
        return sum(b.size for b in self.blocks)

    def vector(self):
        return np.concatenate([b.value.ravel() for b in self.blocks])

    def set_vector(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self.size:
            raise ValueError(f"expected {self.size} parameters, got {theta.size}")
        at = 0
        for b in self.blocks:
            b.value[...] = theta[at : at + b.size].reshape(b.value.shape)
            at += b.size

    def grad_vector(self):
        return np.concatenate([b.grad.ravel() for b in self.blocks])

    def block(self, name):
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)


def init_parameters(spec, seed):
    """Xavier-uniform weights, zero biases; deterministic in the seed.

    `seed` may be an integer or a numpy Generator.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    blocks = []
    for name, shape in spec.block_shapes():
        if name.startswith("b"):
            blocks.append(ParamBlock(name, np.zeros(shape)))
        else:
            fan_out, fan_in = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            blocks.append(ParamBlock(name, rng.uniform(-bound, bound, size=shape)))
    return NetworkParams(spec, blocks)


def forward(spec, params, x):
    """Evaluate the network at a DiffVector input, fully tape-connected.

    Returns a DiffVector of width spec.d_out.
    """
    if x.width != spec.d_in:
        raise AutodiffError(f"network expects input width {spec.d_in}, got {x.width}")
    if params.size != spec.parameter_count():
        raise AutodiffError(
            f"parameter vector has {params.size} entries, spec needs {spec.parameter_count()}"
        )
    tape = x.tape
    act = spec.activation
    n, m = spec.width, spec.depth

    def affine(node, W, b):
        return tape._add(AffineNode(tape, node, params.block(W), params.block(b)))

    def activate(node):
        return tape._add(UnaryNode(tape, act, node))

    h = activate(affine(x.node, "W1_1", "b1_1"))
    h = activate(affine(h, "W2_1", "b2_1"))
    if spec.effective_lift == "zeropad":
        s0 = x.node if x.width == n else tape._add(PadNode(tape, x.node, n))
        s = tape._add(AddNode(tape, h, s0))
    else:
        s = h
    for k in range(2, m + 1):
        t = activate(affine(s, f"W1_{k}", f"b1_{k}"))
        t = activate(affine(t, f"W2_{k}", f"b2_{k}"))
        s = tape._add(AddNode(tape, t, s))
    out = affine(s, "Wout", "bout")
    return DiffVector(tape, out)


class ParamBundle:
    """Several networks trained jointly: one flat vector over all their blocks."""

    def __init__(self, nets):
        self.nets = list(nets)

    @property
    def size(self):
        return sum(p.size for p in self.nets)

    def vector(self):
        return np.concatenate([p.vector() for p in self.nets])

    def set_vector(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self.size:
            raise ValueError(f"expected {self.size} parameters, got {theta.size}")
        at = 0
        for p in self.nets:
            p.set_vector(theta[at : at + p.size])
            at += p.size

    def grad_vector(self):
        return np.concatenate([p.grad_vector() for p in self.nets])
