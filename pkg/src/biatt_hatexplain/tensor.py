"""Dense tensors with reverse-mode automatic differentiation.

Only the primitives needed by the recurrent encoders, the attention heads and
the two training losses are provided. Every op either preserves shapes
exactly or documents the single axis it reduces or expands; there is no
general broadcasting (a Python scalar times a tensor is the only mixed case).

Operations accept optional leading batch axes: ``masked_softmax`` on
``[B, L]`` normalises each row, ``max_over_tokens`` on ``[B, L, d]`` pools
each post, and so on.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class EmptySequenceError(ValueError):
    """A reduction over tokens found no unmasked position."""


class BackwardError(RuntimeError):
    """Misuse of :func:`backward` (non-scalar loss, reused graph)."""


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype.kind in "iub":
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """An n-dimensional real array that can record how it was computed.

    ``data`` is a numpy array; ``grad`` is ``None`` until :func:`backward`
    populates it with an array of identical shape.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name", "_released")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"
        self.name = name
        self._released = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    # operator sugar
    def __add__(self, other):
        return add_scalar(self, other) if _is_scalar(other) else add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add_scalar(self, -other) if _is_scalar(other) else sub(self, other)

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), other)

    def __mul__(self, other):
        return scale(self, other) if _is_scalar(other) else mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def _raise_item(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Iterable[Tensor], backward_fn, op: str) -> Tensor:
    parents = tuple(parents)
    out = Tensor(data, dtype=data.dtype)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    a = _wrap(a)
    c = a.data.dtype.type(c)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def add_scalar(a: Tensor, c: float) -> Tensor:
    a = _wrap(a)
    c = a.data.dtype.type(c)
    return _node(a.data + c, (a,), lambda g: (g,), "add_scalar")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _node(y, (a,), lambda g: (g * y,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    return _node(np.log(x), (a,), lambda g: (g / x,), "log")


def where(cond, a: Tensor, b: Tensor) -> Tensor:
    """Select ``a`` where the constant boolean ``cond`` holds, else ``b``.

    ``cond`` must have exactly the operands' shape.
    """
    a, b = _wrap(a), _wrap(b)
    _same_shape(a, b, "where")
    cond = np.asarray(cond, dtype=bool)
    if cond.shape != a.shape:
        raise ShapeError(f"where: condition shape {cond.shape} != operand shape {a.shape}")
    zero = np.zeros((), dtype=a.data.dtype)
    return _node(
        np.where(cond, a.data, b.data),
        (a, b),
        lambda g: (np.where(cond, g, zero), np.where(cond, zero, g)),
        "where",
    )


def dropout(x: Tensor, p: float, training: bool, seed=None) -> Tensor:
    """Inverted dropout.

    ``seed`` may be an int or a ``numpy.random.Generator``; identical seeds
    give identical masks. Outside training (or with ``p == 0``) the input is
    returned unchanged.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keep = rng.random(x.shape) >= p
    m = keep.astype(x.data.dtype) / x.data.dtype.type(1.0 - p)
    return _node(x.data * m, (x,), lambda g: (g * m,), "dropout")


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a[..., m, k] @ b[k, n]``; leading axes of ``a`` are batch axes.

    A 1-D ``a`` of length ``k`` is treated as a single row and yields ``[n]``.
    """
    a, b = _wrap(a), _wrap(b)
    if b.ndim != 2:
        raise ShapeError(f"matmul: right operand must be 2-D, got {b.shape}")
    if a.ndim == 0 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree for {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    a2 = ad.reshape(-1, ad.shape[-1])
    out = (a2 @ bd).reshape(ad.shape[:-1] + (bd.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, bd.shape[1])
        return (g2 @ bd.T).reshape(ad.shape), a2.T @ g2

    return _node(out, (a, b), backward, "matmul")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a bias vector ``b[n]`` to every row of ``x[..., n]``."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: bias {b.shape} does not fit {x.shape}")
    axes = tuple(range(x.ndim - 1))
    return _node(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=axes)), "add_bias")


def scale_rows(h: Tensor, a: Tensor) -> Tensor:
    """Multiply token row ``h[..., t, :]`` by weight ``a[..., t]``."""
    if h.shape[:-1] != a.shape:
        raise ShapeError(f"scale_rows: weights {a.shape} do not index rows of {h.shape}")
    hd, ad = h.data, a.data
    return _node(
        hd * ad[..., None],
        (h, a),
        lambda g: (g * ad[..., None], (g * hd).sum(axis=-1)),
        "scale_rows",
    )


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; gradients scatter-add into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError("embedding: token id outside the table")
    shape = table.shape

    def backward(g):
        gt = np.zeros(shape, dtype=g.dtype)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (gt,)

    return _node(table.data[ids], (table,), backward, "embedding")


# ---------------------------------------------------------------- structure


def getitem(a: Tensor, index) -> Tensor:
    shape = a.shape
    out = a.data[index]

    def backward(g):
        ga = np.zeros(shape, dtype=g.dtype)
        if advanced:
            np.add.at(ga, index, g)
        else:
            ga[index] += g
        return (ga,)

    advanced = any(isinstance(i, (list, np.ndarray)) for i in (index if isinstance(index, tuple) else (index,)))
    return _node(np.array(out, copy=True), (a,), backward, "getitem")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or t.shape[:ax] + t.shape[ax + 1:] != ref.shape[:ax] + ref.shape[ax + 1:]:
            raise ShapeError(f"concat: {t.shape} incompatible with {ref.shape} on axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _node(
        np.concatenate([t.data for t in tensors], axis=ax),
        tensors,
        lambda g: tuple(np.split(g, sizes, axis=ax)),
        "concat",
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    for t in tensors[1:]:
        _same_shape(tensors[0], t, "stack")
    ax = axis % (tensors[0].ndim + 1)
    n = len(tensors)
    return _node(
        np.stack([t.data for t in tensors], axis=ax),
        tensors,
        lambda g: tuple(np.take(g, i, axis=ax) for i in range(n)),
        "stack",
    )


# ---------------------------------------------------------------- reductions


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return _node(
        np.asarray(a.data.sum(), dtype=a.data.dtype),
        (a,),
        lambda g: (np.broadcast_to(g, shape).astype(g.dtype, copy=True),),
        "sum",
    )


def mean(a: Tensor) -> Tensor:
    return scale(sum(a), 1.0 / a.data.size)


def _check_mask(mask, shape, op: str) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise ShapeError(f"{op}: mask shape {mask.shape} != {shape}")
    if not mask.any(axis=-1).all():
        raise EmptySequenceError(f"{op}: a sequence has no unmasked token")
    return mask


def masked_softmax(scores: Tensor, mask) -> Tensor:
    """Softmax over the last axis restricted to ``mask``; masked entries are 0."""
    mask = _check_mask(mask, scores.shape, "masked_softmax")
    x = np.where(mask, scores.data, -np.inf)
    x = x - x.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(x), 0.0).astype(scores.data.dtype)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _node(y, (scores,), backward, "masked_softmax")


def log_softmax(x: Tensor) -> Tensor:
    """Log of the softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(y)
    return _node(y, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),), "log_softmax")


def max_over_tokens(h: Tensor, mask) -> Tensor:
    """Per-feature maximum over the unmasked token axis of ``h[..., L, d]``.

    The gradient goes only to the winning position of each feature; ties go
    to the lowest token index.
    """
    mask = _check_mask(mask, h.shape[:-1], "max_over_tokens")
    hd = np.where(mask[..., None], h.data, -np.inf)
    idx = hd.argmax(axis=-2)  # first maximal index
    out = np.take_along_axis(h.data, idx[..., None, :], axis=-2)[..., 0, :]
    shape = h.shape

    def backward(g):
        gh = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(gh, idx[..., None, :], g[..., None, :], axis=-2)
        return (gh,)

    return _node(np.array(out, copy=True), (h,), backward, "max_over_tokens")


# ---------------------------------------------------------------- backward pass


class Tape:
    """The recorded graph behind one scalar, in topological order.

    ``nodes`` lists every tensor that requires a gradient, inputs before the
    outputs that consume them; replaying it in reverse visits each node once.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes = _toposort(root)

    def __len__(self) -> int:
        return len(self.nodes)

    def replay(self, visit: Callable[[Tensor], None] | None = None) -> None:
        grads: dict[int, np.ndarray] = {id(self.root): np.ones_like(self.root.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if visit is not None:
                visit(node)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> Tape:
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

    Leaf gradients accumulate, so call :meth:`Tensor.zero_grad` between
    steps. A graph can be replayed only once.
    """
    if loss.data.size != 1:
        raise BackwardError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._released:
        raise BackwardError("backward already ran on this graph; rebuild it with a new forward pass")
    if not loss.requires_grad:
        raise BackwardError("loss does not depend on any tensor that requires a gradient")
    tape = Tape(loss)
    tape.replay()
    for node in tape.nodes:
        if node._backward is not None:
            node._released = True
    return tape


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------- gradient checking


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``, with zero for two zero arrays."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    return 0.0 if denom == 0 else float(np.linalg.norm(analytic - numeric) / denom)


def numerical_gradient(loss_fn: Callable[[], Tensor], param: Tensor, step: float = 1e-4) -> np.ndarray:
    """Central finite differences of the scalar ``loss_fn()`` in each entry of ``param``.

    ``loss_fn`` must rebuild the graph from ``param.data`` on every call and be
    deterministic (reseed any dropout inside it).
    """
    num = np.zeros_like(param.data, dtype=np.float64)
    for idx in np.ndindex(param.shape):
        old = param.data[idx]
        param.data[idx] = old + step
        up = loss_fn().item()
        param.data[idx] = old - step
        down = loss_fn().item()
        param.data[idx] = old
        num[idx] = (up - down) / (2 * step)
    return num


def gradient_check(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], step: float = 1e-4) -> dict[str, float]:
    """Relative error between backprop and finite differences for every parameter."""
    for p in params.values():
        p.grad = None
    backward(loss_fn())
    return {name: relative_error(p.grad if p.grad is not None else np.zeros_like(p.data),
                                 numerical_gradient(loss_fn, p, step))
            for name, p in params.items()}
