"""Batched expression tape with nested input derivatives.

Every quantity is a field sampled at a batch of collocation points: node
values are float64 arrays of shape (N, w), with N the batch size and w the
field width (1 for scalars).  A Tape records the expression graph once; the
graph is then re-evaluated for fresh sample batches (``InputNode.set_value``
followed by ``Tape.run``) and swept in reverse to accumulate gradients into
every reachable parameter block.

Input derivatives (gradients, divergences, Laplacians, time derivatives) are
built as derivative *subgraphs* on the same tape: ``Tape.derivative(node,
leaf, i)`` returns the node computing d(node)/d(leaf_i), applying forward-mode
chain rules symbolically and memoising the result.  Derivative nodes are
ordinary nodes, so they can be differentiated again to any order and the
reverse sweep differentiates straight through them.  This is what lets a loss
contain, say, the Laplacian of an expression that already involves first
derivatives of a network.
"""

from __future__ import annotations

import numpy as np


class AutodiffError(Exception):
    """Base class for tape construction and evaluation errors."""


class NonFiniteError(AutodiffError):
    """An evaluation produced inf/nan; the message names the offending node."""


def _as2d(x):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise AutodiffError(f"expected scalar, vector or (N, d) array, got shape {a.shape}")
    return a


def _unbroadcast(adj, shape):
    """Sum `adj` down to `shape` along axes that were broadcast."""
    if adj.shape == shape:
        return adj
    if shape[0] == 1 and adj.shape[0] != 1:
        adj = adj.sum(axis=0, keepdims=True)
    if shape[1] == 1 and adj.shape[1] != 1:
        adj = adj.sum(axis=1, keepdims=True)
    return adj


class ParamBlock:
    """A trainable array (weight matrix or bias vector) with its gradient."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name, value):
        self.name = name
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def size(self):
        return self.value.size

    def __repr__(self):
        return f"ParamBlock({self.name}, shape={self.value.shape})"


# ---------------------------------------------------------------------------
# nodes


class Node:
    __slots__ = ("tape", "parents", "width", "val", "adj", "requires_grad", "_touched")

    def __init__(self, tape, parents, width):
        self.tape = tape
        self.parents = parents
        self.width = width
        self.val = None
        self.adj = None
        self.requires_grad = any(p.requires_grad for p in parents)
        self._touched = False

    def forward(self):
        raise NotImplementedError

    def backward(self):
        raise NotImplementedError

    def deriv(self, leaf, i):
        """Node computing the derivative of self w.r.t. coordinate i of `leaf`.

        Returns None for a structural zero.
        """
        raise AutodiffError(f"{type(self).__name__} does not support input derivatives")

    def _accum(self, contribution):
        if self.adj is None or self.adj.shape != self.val.shape:
            self.adj = np.empty_like(self.val)
        c = _unbroadcast(contribution, self.adj.shape)
        if not self._touched:
            self._touched = True
            np.copyto(self.adj, c)
        else:
            self.adj += c

    def _accum_slice(self, lo, hi, contribution):
        """Accumulate into columns [lo, hi) only (adjoint of a slice)."""
        if self.adj is None or self.adj.shape != self.val.shape:
            self.adj = np.empty_like(self.val)
        if not self._touched:
            self._touched = True
            self.adj[...] = 0.0
        self.adj[:, lo:hi] += contribution


class InputNode(Node):
    """A leaf holding the sample batch; differentiable leaves seed e_i tangents."""

    __slots__ = ("differentiable", "label")

    def __init__(self, tape, width, differentiable, label):
        super().__init__(tape, (), width)
        self.differentiable = differentiable
        self.label = label
        self.val = np.zeros((1, width))

    def set_value(self, x):
        a = _as2d(x)
        if a.shape[1] != self.width:
            raise AutodiffError(
                f"input '{self.label}' expects width {self.width}, got {a.shape[1]}"
            )
        if not np.all(np.isfinite(a)):
            raise AutodiffError(f"input '{self.label}' contains non-finite entries")
        self.val = a

    def forward(self):
        pass

    def backward(self):
        pass

    def deriv(self, leaf, i):
        if self is not leaf or not self.differentiable:
            return None
        e = np.zeros((1, self.width))
        e[0, i] = 1.0
        return self.tape._add(ConstNode(self.tape, e))


class ConstNode(Node):
    __slots__ = ()

    def __init__(self, tape, value):
        super().__init__(tape, (), _as2d(value).shape[1])
        self.val = _as2d(value)

    def forward(self):
        pass

    def backward(self):
        pass

    def deriv(self, leaf, i):
        return None


class ParamVecNode(Node):
    """Exposes a parameter block (viewed flat) as a (1, size) field."""

    __slots__ = ("block",)

    def __init__(self, tape, block):
        super().__init__(tape, (), block.size)
        self.block = block
        self.requires_grad = True
        tape.register_block(block)
        self.forward()

    def forward(self):
        self.val = self.block.value.reshape(1, -1)

    def backward(self):
        self.block.grad += self.adj.sum(axis=0).reshape(self.block.value.shape)

    def deriv(self, leaf, i):
        return None


def _matout(x, WT, out, width):
    if out is not None and out.shape == (x.shape[0], width) and out.flags.c_contiguous:
        np.dot(x, WT, out=out)
        return out
    return x @ WT


class AffineNode(Node):
    """y = x @ W.T + b with W, b trainable parameter blocks (b optional)."""

    __slots__ = ("W", "b")

    def __init__(self, tape, x, W, b):
        super().__init__(tape, (x,), W.value.shape[0])
        self.W = W
        self.b = b
        self.requires_grad = True
        tape.register_block(W)
        if b is not None:
            tape.register_block(b)
        self.forward()

    def forward(self):
        (x,) = self.parents
        self.val = _matout(x.val, self.W.value.T, self.val, self.width)
        if self.b is not None:
            self.val += self.b.value

    def backward(self):
        (x,) = self.parents
        self.W.grad += self.adj.T @ x.val
        if self.b is not None:
            self.b.grad += self.adj.sum(axis=0)
        if x.requires_grad:
            x._accum(self.adj @ self.W.value)

    def deriv(self, leaf, i):
        dx = self.tape.derivative(self.parents[0], leaf, i)
        if dx is None:
            return None
        return self.tape._add(MatApplyNode(self.tape, dx, self.W))


class MatApplyNode(Node):
    """y = x @ W.T with W treated as a constant of the input coordinates.

    Used for derivative subgraphs of affine layers: the reverse sweep still
    accumulates into W (the tangent W dx depends on W), but no bias is added
    and further input derivatives only chain through x.
    """

    __slots__ = ("W",)

    def __init__(self, tape, x, W):
        super().__init__(tape, (x,), W.value.shape[0])
        self.W = W
        self.requires_grad = True
        self.forward()

    def forward(self):
        self.val = _matout(self.parents[0].val, self.W.value.T, self.val, self.width)

    def backward(self):
        (x,) = self.parents
        self.W.grad += self.adj.T @ x.val
        if x.requires_grad:
            x._accum(self.adj @ self.W.value)

    def deriv(self, leaf, i):
        dx = self.tape.derivative(self.parents[0], leaf, i)
        if dx is None:
            return None
        return self.tape._add(MatApplyNode(self.tape, dx, self.W))


class _BinaryNode(Node):
    __slots__ = ()
    ufunc = None

    def __init__(self, tape, a, b):
        super().__init__(tape, (a, b), max(a.width, b.width))
        self.forward()

    def forward(self):
        a, b = self.parents
        out = self.val
        if out is not None and out.shape == np.broadcast_shapes(a.val.shape, b.val.shape):
            type(self).ufunc(a.val, b.val, out=out)
        else:
            self.val = type(self).ufunc(a.val, b.val)


class AddNode(_BinaryNode):
    __slots__ = ()
    ufunc = np.add

    def backward(self):
        for p in self.parents:
            if p.requires_grad:
                p._accum(self.adj)

    def deriv(self, leaf, i):
        t = self.tape
        return _d_add(t, t.derivative(self.parents[0], leaf, i), t.derivative(self.parents[1], leaf, i))


class SubNode(_BinaryNode):
    __slots__ = ()
    ufunc = np.subtract

    def backward(self):
        a, b = self.parents
        if a.requires_grad:
            a._accum(self.adj)
        if b.requires_grad:
            b._accum(-self.adj)

    def deriv(self, leaf, i):
        t = self.tape
        da = t.derivative(self.parents[0], leaf, i)
        db = t.derivative(self.parents[1], leaf, i)
        if db is None:
            return da
        if da is None:
            return t._add(ScaleNode(t, db, -1.0))
        return t._add(SubNode(t, da, db))


class MulNode(_BinaryNode):
    __slots__ = ()
    ufunc = np.multiply

    def backward(self):
        a, b = self.parents
        if a.requires_grad:
            a._accum(self.adj * b.val)
        if b.requires_grad:
            b._accum(self.adj * a.val)

    def deriv(self, leaf, i):
        t = self.tape
        a, b = self.parents
        da = t.derivative(a, leaf, i)
        db = t.derivative(b, leaf, i)
        left = None if da is None else t._add(MulNode(t, da, b))
        right = None if db is None else t._add(MulNode(t, a, db))
        return _d_add(t, left, right)


class DivNode(Node):
    __slots__ = ()

    def __init__(self, tape, a, b):
        super().__init__(tape, (a, b), max(a.width, b.width))
        self.forward()

    def forward(self):
        a, b = self.parents
        with np.errstate(divide="ignore", invalid="ignore"):
            self.val = a.val / b.val
        if not np.all(np.isfinite(self.val)):
            raise NonFiniteError("division produced non-finite values (zero denominator?)")

    def backward(self):
        a, b = self.parents
        if a.requires_grad:
            a._accum(self.adj / b.val)
        if b.requires_grad:
            b._accum(-self.adj * self.val / b.val)

    def deriv(self, leaf, i):
        # d(a/b) = (da - (a/b) db) / b
        t = self.tape
        da = t.derivative(self.parents[0], leaf, i)
        db = t.derivative(self.parents[1], leaf, i)
        term = None if db is None else t._add(MulNode(t, self, db))
        if da is None and term is None:
            return None
        if term is None:
            num = da
        elif da is None:
            num = t._add(ScaleNode(t, term, -1.0))
        else:
            num = t._add(SubNode(t, da, term))
        return t._add(DivNode(t, num, self.parents[1]))


class ScaleNode(Node):
    """y = c * x for a python float c."""

    __slots__ = ("c",)

    def __init__(self, tape, x, c):
        super().__init__(tape, (x,), x.width)
        self.c = float(c)
        self.forward()

    def forward(self):
        xv = self.parents[0].val
        if self.val is not None and self.val.shape == xv.shape:
            np.multiply(xv, self.c, out=self.val)
        else:
            self.val = self.c * xv

    def backward(self):
        (x,) = self.parents
        if x.requires_grad:
            x._accum(self.c * self.adj)

    def deriv(self, leaf, i):
        dx = self.tape.derivative(self.parents[0], leaf, i)
        if dx is None:
            return None
        return self.tape._add(ScaleNode(self.tape, dx, self.c))


def _stable_sigmoid(x):
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0, e)
    out /= 1.0 + e
    return out


def _fwd_exp(xv, out):
    return np.exp(xv, out=out)


def _fwd_sin(xv, out):
    return np.sin(xv, out=out)


def _fwd_cos(xv, out):
    return np.cos(xv, out=out)


def _fwd_sigmoid(xv, out):
    s = _stable_sigmoid(xv)
    if out is None:
        return s
    np.copyto(out, s)
    return out


def _fwd_relu(xv, out):
    return np.maximum(xv, 0.0, out=out)


def _fwd_step(xv, out):
    if out is None:
        return (xv > 0).astype(np.float64)
    np.greater(xv, 0.0, out=out, casting="unsafe")
    return out


def _fwd_requ(xv, out):
    out = np.maximum(xv, 0.0, out=out)
    out *= out
    return out


def _fwd_recu(xv, out):
    m = np.maximum(xv, 0.0, out=out)
    mm = m * m
    np.multiply(mm, m, out=m)
    return m


def _fwd_swish(xv, out):
    s = _stable_sigmoid(xv)
    return np.multiply(xv, s, out=out)


def _fwd_recip(xv, out):
    return np.divide(1.0, xv, out=out)


def _fwd_sqrt(xv, out):
    return np.sqrt(xv, out=out)


# kind -> (forward(xv, out) -> val, local_partial(xv, val) -> f'(x), check_finite)
_UNARY = {
    "exp": (_fwd_exp, lambda xv, val: val, True),
    "sin": (_fwd_sin, lambda xv, val: np.cos(xv), False),
    "cos": (_fwd_cos, lambda xv, val: -np.sin(xv), False),
    "sigmoid": (_fwd_sigmoid, lambda xv, val: val * (1.0 - val), False),
    "relu": (_fwd_relu, lambda xv, val: (xv > 0).astype(np.float64), False),
    "step": (_fwd_step, lambda xv, val: np.zeros_like(xv), False),
    "requ": (_fwd_requ, lambda xv, val: 2.0 * np.maximum(xv, 0.0), False),
    "recu": (_fwd_recu, lambda xv, val: 3.0 * np.maximum(xv, 0.0) ** 2, False),
    "swish": (
        _fwd_swish,
        lambda xv, val: (lambda s: s * (1.0 + xv * (1.0 - s)))(_stable_sigmoid(xv)),
        False,
    ),
    "recip": (_fwd_recip, lambda xv, val: -val * val, True),
    "sqrt": (_fwd_sqrt, lambda xv, val: 0.5 / val, True),
}


class UnaryNode(Node):
    __slots__ = ("kind", "_chain")

    def __init__(self, tape, kind, x):
        super().__init__(tape, (x,), x.width)
        self.kind = kind
        self._chain = None
        self.forward()

    def forward(self):
        fwd, _, check = _UNARY[self.kind]
        xv = self.parents[0].val
        out = self.val if self.val is not None and self.val.shape == xv.shape else None
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            self.val = fwd(xv, out)
        if check and not np.all(np.isfinite(self.val)):
            raise NonFiniteError(f"'{self.kind}' node produced non-finite values")

    def backward(self):
        (x,) = self.parents
        if x.requires_grad:
            _, dfn, _ = _UNARY[self.kind]
            x._accum(self.adj * dfn(x.val, self.val))

    def chain(self):
        """Node computing f'(x), built from primitives so it is differentiable."""
        if self._chain is not None:
            return self._chain
        t = self.tape
        (x,) = self.parents
        k = self.kind
        if k == "exp":
            c = self
        elif k == "sin":
            c = t._add(UnaryNode(t, "cos", x))
        elif k == "cos":
            c = t._add(ScaleNode(t, t._add(UnaryNode(t, "sin", x)), -1.0))
        elif k == "sigmoid":
            c = t._add(SubNode(t, self, t._add(MulNode(t, self, self))))
        elif k == "relu":
            c = t._add(UnaryNode(t, "step", x))
        elif k == "step":
            c = None  # zero a.e.; exact zeros are measure-zero sample points
        elif k == "requ":
            c = t._add(ScaleNode(t, t._add(UnaryNode(t, "relu", x)), 2.0))
        elif k == "recu":
            c = t._add(ScaleNode(t, t._add(UnaryNode(t, "requ", x)), 3.0))
        elif k == "swish":
            s = t._add(UnaryNode(t, "sigmoid", x))
            s1s = t._add(SubNode(t, s, t._add(MulNode(t, s, s))))
            c = t._add(AddNode(t, s, t._add(MulNode(t, x, s1s))))
        elif k == "recip":
            c = t._add(ScaleNode(t, t._add(MulNode(t, self, self)), -1.0))
        elif k == "sqrt":
            c = t._add(ScaleNode(t, t._add(UnaryNode(t, "recip", self)), 0.5))
        else:  # pragma: no cover
            raise AutodiffError(f"no chain rule for '{k}'")
        self._chain = c
        return c

    def deriv(self, leaf, i):
        dx = self.tape.derivative(self.parents[0], leaf, i)
        if dx is None:
            return None
        c = self.chain()
        if c is None:
            return None
        return self.tape._add(MulNode(self.tape, c, dx))


class PowerNode(Node):
    """y = x ** p for a fixed real exponent p."""

    __slots__ = ("p",)

    def __init__(self, tape, x, p):
        super().__init__(tape, (x,), x.width)
        self.p = float(p)
        self.forward()

    def forward(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            self.val = self.parents[0].val ** self.p
        if not np.all(np.isfinite(self.val)):
            raise NonFiniteError(f"power({self.p}) node produced non-finite values")

    def backward(self):
        (x,) = self.parents
        if x.requires_grad:
            x._accum(self.adj * self.p * x.val ** (self.p - 1.0))

    def deriv(self, leaf, i):
        t = self.tape
        dx = t.derivative(self.parents[0], leaf, i)
        if dx is None:
            return None
        c = t._add(ScaleNode(t, t._add(PowerNode(t, self.parents[0], self.p - 1.0)), self.p))
        return t._add(MulNode(t, c, dx))


class SafeRecipNode(Node):
    """1/x with a configured floor: |x| below the floor raises a diagnostic.

    Used for the denominators of the flux/Robin constructions; silently
    regularising the denominator would reintroduce exactly the modeling error
    the constructions eliminate, so we fail loudly instead.
    """

    __slots__ = ("floor", "label")

    def __init__(self, tape, x, floor, label):
        super().__init__(tape, (x,), x.width)
        self.floor = float(floor)
        self.label = label
        self.forward()

    def forward(self):
        xv = self.parents[0].val
        amin = np.abs(xv).min() if xv.size else np.inf
        if amin < self.floor:
            idx = np.unravel_index(np.argmin(np.abs(xv)), xv.shape)
            raise NonFiniteError(
                f"denominator '{self.label}' has magnitude {amin:.3e} < floor "
                f"{self.floor:.1e} at sample index {idx[0]}"
            )
        self.val = 1.0 / xv

    def backward(self):
        (x,) = self.parents
        if x.requires_grad:
            x._accum(-self.adj * self.val * self.val)

    def deriv(self, leaf, i):
        t = self.tape
        dx = t.derivative(self.parents[0], leaf, i)
        if dx is None:
            return None
        c = t._add(ScaleNode(t, t._add(MulNode(t, self, self)), -1.0))
        return t._add(MulNode(t, c, dx))


class ConcatNode(Node):
    __slots__ = ("_splits",)

    def __init__(self, tape, parts):
        super().__init__(tape, tuple(parts), sum(p.width for p in parts))
        self._splits = np.cumsum([p.width for p in parts])[:-1]
        self.forward()

    def forward(self):
        n = max(p.val.shape[0] for p in self.parents)
        self.val = np.concatenate(
            [np.broadcast_to(p.val, (n, p.width)) for p in self.parents], axis=1
        )

    def backward(self):
        pieces = np.split(self.adj, self._splits, axis=1)
        for p, g in zip(self.parents, pieces):
            if p.requires_grad:
                p._accum(g)

    def deriv(self, leaf, i):
        t = self.tape
        ds = [t.derivative(p, leaf, i) for p in self.parents]
        if all(d is None for d in ds):
            return None
        parts = [
            d if d is not None else t._add(ConstNode(t, np.zeros((1, p.width))))
            for d, p in zip(ds, self.parents)
        ]
        return t._add(ConcatNode(t, parts))


class SliceNode(Node):
    __slots__ = ("lo", "hi")

    def __init__(self, tape, x, lo, hi):
        super().__init__(tape, (x,), hi - lo)
        self.lo = lo
        self.hi = hi
        self.forward()

    def forward(self):
        self.val = self.parents[0].val[:, self.lo : self.hi]

    def backward(self):
        (x,) = self.parents
        if x.requires_grad:
            x._accum_slice(self.lo, self.hi, self.adj)

    def deriv(self, leaf, i):
        dx = self.tape.derivative(self.parents[0], leaf, i)
        if dx is None:
            return None
        if dx.width == 1:  # parent tangent already collapsed by broadcasting
            return dx
        return self.tape._add(SliceNode(self.tape, dx, self.lo, self.hi))


class PadNode(Node):
    """Right-pad a field with zeros up to a total width (ZeroPad input lift)."""

    __slots__ = ()

    def __init__(self, tape, x, total):
        if total < x.width:
            raise AutodiffError(f"cannot pad width {x.width} down to {total}")
        super().__init__(tape, (x,), total)
        self.forward()

    def forward(self):
        xv = self.parents[0].val
        out = np.zeros((xv.shape[0], self.width))
        out[:, : xv.shape[1]] = xv
        self.val = out

    def backward(self):
        (x,) = self.parents
        if x.requires_grad:
            x._accum(self.adj[:, : x.width])

    def deriv(self, leaf, i):
        dx = self.tape.derivative(self.parents[0], leaf, i)
        if dx is None:
            return None
        return self.tape._add(PadNode(self.tape, dx, self.width))


class SumWidthNode(Node):
    __slots__ = ()

    def __init__(self, tape, x):
        super().__init__(tape, (x,), 1)
        self.forward()

    def forward(self):
        xv = self.parents[0].val
        if self.val is not None and self.val.shape == (xv.shape[0], 1):
            xv.sum(axis=1, keepdims=True, out=self.val)
        else:
            self.val = xv.sum(axis=1, keepdims=True)

    def backward(self):
        (x,) = self.parents
        if x.requires_grad:
            x._accum(np.broadcast_to(self.adj, (self.adj.shape[0], x.width)))

    def deriv(self, leaf, i):
        dx = self.tape.derivative(self.parents[0], leaf, i)
        if dx is None:
            return None
        return self.tape._add(SumWidthNode(self.tape, dx))


class MeanAllNode(Node):
    """Mean over batch and width; the Monte Carlo estimate of an L2 functional."""

    __slots__ = ()

    def __init__(self, tape, x):
        super().__init__(tape, (x,), 1)
        self.forward()

    def forward(self):
        self.val = self.parents[0].val.mean().reshape(1, 1)

    def backward(self):
        (x,) = self.parents
        if x.requires_grad:
            x._accum(np.full_like(x.val, self.adj[0, 0] / x.val.size))


def _d_add(tape, a, b):
    if a is None:
        return b
    if b is None:
        return a
    return tape._add(AddNode(tape, a, b))


# ---------------------------------------------------------------------------
# tape


class Tape:
    """Single-writer record of one expression graph.

    Nodes are appended in topological order and evaluated eagerly on
    creation, so freshly built expressions carry values immediately.  For
    training, build the graph once, then per step call ``run`` after updating
    input leaves and ``backward`` from the loss node.
    """

    def __init__(self, order=2):
        if order not in (0, 1, 2):
            raise AutodiffError(f"order must be 0, 1 or 2, got {order}")
        self.order = order
        self.nodes = []
        self.blocks = []
        self._block_ids = set()
        self._deriv_memo = {}
        self.primary_input = None

    # construction ---------------------------------------------------------

    def _add(self, node):
        self.nodes.append(node)
        return node

    def register_block(self, block):
        if id(block) not in self._block_ids:
            self._block_ids.add(id(block))
            self.blocks.append(block)

    def input(self, width, label="x", differentiable=True):
        node = self._add(InputNode(self, width, differentiable, label))
        if differentiable and self.primary_input is None:
            self.primary_input = node
        return node

    def constant(self, value):
        return self._add(ConstNode(self, value))

    def param_vector(self, block):
        """Expose a parameter block as a (1, size) leaf on this tape."""
        return self._add(ParamVecNode(self, block))

    def node_count(self):
        return len(self.nodes)

    def clear(self):
        """Drop every non-leaf node, keeping inputs and parameter leaves."""
        self.nodes = [n for n in self.nodes if isinstance(n, (InputNode, ParamVecNode))]
        self._deriv_memo.clear()

    # derivatives ----------------------------------------------------------

    def derivative(self, node, leaf, i):
        key = (id(node), id(leaf), i)
        try:
            return self._deriv_memo[key]
        except KeyError:
            pass
        d = node.deriv(leaf, i)
        self._deriv_memo[key] = d
        return d

    # evaluation -----------------------------------------------------------

    def run(self):
        for n in self.nodes:
            n.forward()

    def backward(self, root):
        if root.tape is not self:
            raise AutodiffError("stale tape handle: node does not belong to this tape")
        for b in self.blocks:
            b.grad[...] = 0.0
        for n in self.nodes:
            n._touched = False
        if not root.requires_grad:
            return
        root._accum(np.ones_like(root.val))
        for n in reversed(self.nodes):
            if n._touched and n.requires_grad:
                n.backward()


# ---------------------------------------------------------------------------
# user-facing wrappers


class DiffScalar:
    """A scalar field over the sample batch, tied to a tape node."""

    __slots__ = ("tape", "node")

    def __init__(self, tape, node):
        if node.width != 1:
            raise AutodiffError(f"DiffScalar requires width 1, got {node.width}")
        self.tape = tape
        self.node = node

    @property
    def value(self):
        return self.node.val[:, 0]

    def item(self):
        v = self.node.val
        if v.size != 1:
            raise AutodiffError(f"item() on a batch of size {v.shape[0]}")
        return float(v[0, 0])

    # arithmetic -----------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, DiffScalar):
            return other.node
        if np.isscalar(other):
            return self.tape.constant(float(other))
        raise AutodiffError(f"cannot combine DiffScalar with {type(other).__name__}")

    def __add__(self, other):
        return DiffScalar(self.tape, self.tape._add(AddNode(self.tape, self.node, self._coerce(other))))

    __radd__ = __add__

    def __sub__(self, other):
        return DiffScalar(self.tape, self.tape._add(SubNode(self.tape, self.node, self._coerce(other))))

    def __rsub__(self, other):
        return DiffScalar(self.tape, self.tape._add(SubNode(self.tape, self._coerce(other), self.node)))

    def __mul__(self, other):
        if isinstance(other, DiffVector):
            return other * self
        return DiffScalar(self.tape, self.tape._add(MulNode(self.tape, self.node, self._coerce(other))))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return DiffScalar(self.tape, self.tape._add(DivNode(self.tape, self.node, self._coerce(other))))

    def __rtruediv__(self, other):
        return DiffScalar(self.tape, self.tape._add(DivNode(self.tape, self._coerce(other), self.node)))

    def __neg__(self):
        return DiffScalar(self.tape, self.tape._add(ScaleNode(self.tape, self.node, -1.0)))

    def __pow__(self, p):
        return DiffScalar(self.tape, self.tape._add(PowerNode(self.tape, self.node, p)))

    # derivatives ----------------------------------------------------------

    def d(self, x, i):
        """Derivative with respect to coordinate i of the input vector x."""
        if self.tape.order < 1:
            raise AutodiffError("tape was lifted with order 0; derivatives unavailable")
        d = self.tape.derivative(self.node, x.node, i)
        if d is None:
            d = self.tape.constant(0.0)
        return DiffScalar(self.tape, d)

    def grad(self, x):
        return DiffVector(self.tape, _concat(self.tape, [self.d(x, i).node for i in range(x.width)]))

    def laplacian(self, x):
        if self.tape.order < 2:
            raise AutodiffError("second-order mode is not enabled on this tape")
        total = None
        for i in range(x.width):
            dii = self.d(x, i).d(x, i)
            total = dii if total is None else total + dii
        return total

    @property
    def input_tangent(self):
        x = self.tape.primary_input
        if x is None:
            raise AutodiffError("tape has no differentiable input")
        return np.stack([self.d(_wrap_vec(self.tape, x), i).value for i in range(x.width)], axis=-1)

    @property
    def input_curvature(self):
        if self.tape.order < 2:
            raise AutodiffError("second-order mode is not enabled on this tape")
        x = self.tape.primary_input
        xv = _wrap_vec(self.tape, x)
        return np.stack([self.d(xv, i).d(xv, i).value for i in range(x.width)], axis=-1)


def _wrap_vec(tape, node):
    return DiffVector(tape, node)


def _concat(tape, nodes):
    if len(nodes) == 1:
        return nodes[0]
    return tape._add(ConcatNode(tape, nodes))


class DiffVector:
    """A vector field over the sample batch (width >= 1)."""

    __slots__ = ("tape", "node")

    def __init__(self, tape, node):
        self.tape = tape
        self.node = node

    @property
    def width(self):
        return self.node.width

    @property
    def value(self):
        return self.node.val

    def __len__(self):
        return self.node.width

    def __getitem__(self, i):
        if not 0 <= i < self.width:
            raise IndexError(i)
        if self.width == 1:
            return DiffScalar(self.tape, self.node)
        return DiffScalar(self.tape, self.tape._add(SliceNode(self.tape, self.node, i, i + 1)))

    def __iter__(self):
        return (self[i] for i in range(self.width))

    def _coerce(self, other):
        if isinstance(other, (DiffVector, DiffScalar)):
            return other.node
        if np.isscalar(other):
            return self.tape.constant(float(other))
        arr = np.asarray(other, dtype=np.float64)
        return self.tape.constant(arr)

    def __add__(self, other):
        return DiffVector(self.tape, self.tape._add(AddNode(self.tape, self.node, self._coerce(other))))

    __radd__ = __add__

    def __sub__(self, other):
        return DiffVector(self.tape, self.tape._add(SubNode(self.tape, self.node, self._coerce(other))))

    def __rsub__(self, other):
        return DiffVector(self.tape, self.tape._add(SubNode(self.tape, self._coerce(other), self.node)))

    def __mul__(self, other):
        return DiffVector(self.tape, self.tape._add(MulNode(self.tape, self.node, self._coerce(other))))

    __rmul__ = __mul__

    def __neg__(self):
        return DiffVector(self.tape, self.tape._add(ScaleNode(self.tape, self.node, -1.0)))

    def sum(self):
        return DiffScalar(self.tape, self.tape._add(SumWidthNode(self.tape, self.node)))

    def dot(self, other):
        prod = self * other
        return DiffScalar(self.tape, self.tape._add(SumWidthNode(self.tape, prod.node)))

    def norm_sq(self):
        return self.dot(self)

    @classmethod
    def stack(cls, components):
        tape = components[0].tape
        return cls(tape, _concat(tape, [c.node for c in components]))


def _elementwise(kind, x):
    cls = DiffScalar if isinstance(x, DiffScalar) else DiffVector
    return cls(x.tape, x.tape._add(UnaryNode(x.tape, kind, x.node)))


def exp(x):
    return _elementwise("exp", x)


def sin(x):
    return _elementwise("sin", x)


def cos(x):
    return _elementwise("cos", x)


def sqrt(x):
    return _elementwise("sqrt", x)


def sigmoid(x):
    return _elementwise("sigmoid", x)


def relu(x):
    return _elementwise("relu", x)


def mean_sq(residual):
    """Monte Carlo mean of the squared residual, summed over components.

    This is the plain-sample-mean estimate of an L2-norm-squared functional;
    the domain volume factor is dropped throughout (it rescales every loss by
    the same constant and cancels in the relative error).
    """
    tape = residual.tape
    sq = tape._add(MulNode(tape, residual.node, residual.node))
    if sq.width > 1:
        sq = tape._add(SumWidthNode(tape, sq))
    return DiffScalar(tape, tape._add(MeanAllNode(tape, sq)))


# ---------------------------------------------------------------------------
# spec-level operations


def lift_input(x, order=2, label="x"):
    """Seed a fresh tape with the point (or batch) x and return it as a DiffVector."""
    a = _as2d(x)
    if not np.all(np.isfinite(a)):
        raise AutodiffError("lift_input: non-finite input")
    tape = Tape(order=order)
    node = tape.input(a.shape[1], label=label)
    node.set_value(a)
    return DiffVector(tape, node)


def grad_wrt_inputs(expr_builder, x):
    """Gradient of a scalar expression of the inputs; components stay tape-connected."""
    xv = lift_input(x, order=2)
    f = expr_builder(xv)
    return f.grad(xv)


def laplacian_wrt_inputs(expr_builder, x):
    xv = lift_input(x, order=2)
    f = expr_builder(xv)
    return f.laplacian(xv)


def param_gradients(loss):
    """Flat gradient vector over the tape's parameter blocks, in registration order.

    Blocks unreachable from the loss keep zero entries.
    """
    tape = loss.tape
    tape.backward(loss.node)
    if not tape.blocks:
        return np.zeros(0)
    return np.concatenate([b.grad.ravel() for b in tape.blocks])
