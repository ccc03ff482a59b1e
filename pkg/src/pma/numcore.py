"""Dense float64 tensors with a define-by-run reverse-mode tape.

Operations record themselves on the innermost active :class:`Graph` when at
least one input requires a gradient. Outside a graph everything runs as plain
numpy with no bookkeeping, which is what evaluation loops use.

Every op accepts arrays with extra leading (batch) dimensions; the 2-D
semantics are the contract, batching is how the training loop stays fast.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

DTYPE = np.float64
_compute_dtype = [DTYPE]


class compute_dtype:
    """Temporarily evaluate new tensors in another float type (grad_check uses long double)."""

    def __init__(self, dtype):
        self.dtype = np.dtype(dtype)

    def __enter__(self):
        _compute_dtype.append(self.dtype)
        return self.dtype

    def __exit__(self, *exc) -> None:
        _compute_dtype.pop()


def current_dtype():
    return _compute_dtype[-1]


class GraphStateError(RuntimeError):
    pass


class NondeterminismError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "_ctx", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_compute_dtype[-1])
        self.requires_grad = requires_grad
        self._ctx: _Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)


class Parameter(Tensor):
    """A leaf tensor holding a learnable (or frozen) value.

    ``grad`` always has the value's shape. Frozen parameters never enter the
    tape, so their grad stays zero. ``version`` is bumped on every update.
    """

    __slots__ = ("grad", "trainable", "version", "name", "_has_grad", "_adam_m", "_adam_v")

    def __init__(self, data, trainable: bool = True, name: str = ""):
        super().__init__(np.array(data, dtype=DTYPE, copy=True), requires_grad=trainable)
        self.grad = np.zeros_like(self.data)
        self.trainable = trainable
        self.version = 0
        self.name = name
        self._has_grad = False
        self._adam_m: np.ndarray | None = None
        self._adam_v: np.ndarray | None = None

    def set_trainable(self, flag: bool) -> None:
        self.trainable = flag
        self.requires_grad = flag
        if not flag:
            self.grad[...] = 0.0

    def assign(self, value) -> None:
        value = np.asarray(value, dtype=DTYPE)
        if value.shape != self.data.shape:
            raise ValueError(f"cannot assign shape {value.shape} to parameter of shape {self.data.shape}")
        self.data = value.copy()
        self.version += 1

    def zero_grad(self) -> None:
        self.grad[...] = 0.0
        self._has_grad = False

    def __repr__(self) -> str:
        return f"Parameter({self.name or '?'}, shape={self.shape}, trainable={self.trainable})"


@dataclass(eq=False)
class _Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


@dataclass(eq=False)
class Graph:
    """Ordered record of executed operations for one forward pass."""

    nodes: list[_Node] = field(default_factory=list)
    stopped_sources: list[Tensor] = field(default_factory=list)
    consumed: bool = False

    def __enter__(self) -> Graph:
        _graph_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _graph_stack.remove(self)

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


_graph_stack: list[Graph] = []
# Each entry is a list collecting discrete (gradient-stopped) outputs.
_discrete_logs: list[list[np.ndarray]] = []


def active_graph() -> Graph | None:
    return _graph_stack[-1] if _graph_stack else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor(out_data)
    graph = active_graph()
    if graph is None or not any(t.requires_grad for t in inputs):
        return out
    if graph.consumed:
        raise GraphStateError("graph already ran backward; open a new Graph for a new forward pass")
    out.requires_grad = True
    node = _Node(out, tuple(inputs), backward_fn, op)
    out._ctx = node
    graph.nodes.append(node)
    return out


def custom_op(out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn, op: str = "custom") -> Tensor:
    """Register an op whose backward maps the output grad to one grad per input."""
    return _record(out_data, inputs, backward_fn, op)


def backward(graph: Graph, loss: Tensor) -> None:
    """Accumulate d(loss)/d(value) into every trainable Parameter's ``grad``."""
    if graph.consumed:
        raise GraphStateError("backward already ran on this graph")
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    graph.consumed = True
    if loss._ctx is None:
        if isinstance(loss, Parameter) and loss.trainable:
            loss.grad += 1.0
            loss._has_grad = True
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if isinstance(t, Parameter):
                t.grad += gi
                t._has_grad = True
            else:
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(a.data @ b.data, (a, b), bw, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """x @ weight (+ bias); weight is (in, out)."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def reduce_sum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), bw, "sum")


def reduce_mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(reduce_sum(x, axis, keepdims), 1.0 / float(n))


def reduce_max(x, axis: int) -> Tensor:
    """Max along one axis; gradient goes to the first (lowest-index) maximum."""
    x = as_tensor(x)
    axis = axis % x.ndim
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def bw(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _record(out, (x,), bw, "max")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def swapaxes(x, a: int, b: int) -> Tensor:
    x = as_tensor(x)
    return _record(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),), "swapaxes")


def take(x, index) -> Tensor:
    """Basic (slice/int) indexing."""
    x = as_tensor(x)

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[index] += g
        return (gx,)

    return _record(x.data[index], (x,), bw, "index")


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    axis = axis % parts[0].ndim
    ref = list(parts[0].shape)
    for p in parts:
        other = list(p.shape)
        if len(other) != len(ref) or other[:axis] + other[axis + 1:] != ref[:axis] + ref[axis + 1:]:
            raise ValueError(f"concat shape mismatch along axis {axis}: {[q.shape for q in parts]}")
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def bw(g):
        return [np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(parts))]

    return _record(np.concatenate([p.data for p in parts], axis=axis), parts, bw, "concat")


def concat_rows(parts: Sequence) -> Tensor:
    """Vertical stacking along the row axis (second to last)."""
    parts = [as_tensor(p) for p in parts]
    cols = {p.shape[-1] for p in parts}
    if len(cols) != 1:
        raise ValueError(f"concat_rows column mismatch: {[p.shape for p in parts]}")
    return concat(parts, axis=-2)


def stop_gradient(x) -> Tensor:
    return Tensor(as_tensor(x).data)


# ---------------------------------------------------------------------------
# elementwise


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def _gelu(x):
    u = _SQRT_2_OVER_PI * (x + 0.044715 * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def _gelu_grad(x):
    u = _SQRT_2_OVER_PI * (x + 0.044715 * x * x * x)
    t = np.tanh(u)
    du = _SQRT_2_OVER_PI * (1.0 + 3 * 0.044715 * x * x)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


def _silu_grad(x):
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


_ELEMENTWISE = {
    # name: (forward, derivative given (x, y))
    "exp": (np.exp, lambda x, y: y),
    "sigmoid": (_sigmoid, lambda x, y: y * (1.0 - y)),
    "silu": (lambda x: x * _sigmoid(x), lambda x, y: _silu_grad(x)),
    "softplus": (_softplus, lambda x, y: _sigmoid(x)),
    "tanh": (np.tanh, lambda x, y: 1.0 - y**2),
    "gelu": (_gelu, lambda x, y: _gelu_grad(x)),
    "relu": (lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(x.dtype)),
}


def elementwise(fn: str, x) -> Tensor:
    if fn not in _ELEMENTWISE:
        raise ValueError(f"unknown elementwise function {fn!r}; choose from {sorted(_ELEMENTWISE)}")
    x = as_tensor(x)
    f, df = _ELEMENTWISE[fn]
    y = f(x.data)
    return _record(y, (x,), lambda g: (g * df(x.data, y),), fn)


def exp(x):
    return elementwise("exp", x)


def sigmoid(x):
    return elementwise("sigmoid", x)


def silu(x):
    return elementwise("silu", x)


def softplus(x):
    return elementwise("softplus", x)


def gelu(x):
    return elementwise("gelu", x)


# ---------------------------------------------------------------------------
# normalisation / probability


def softmax_rows(x) -> Tensor:
    """Softmax over the last axis with per-row max subtraction."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record(y, (x,), bw, "softmax")


def layer_norm(x, weight, bias, eps: float = 1e-5) -> Tensor:
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * weight.data + bias.data

    def bw(g):
        gw = _unbroadcast(g * xhat, weight.shape)
        gb = _unbroadcast(g, bias.shape)
        gxhat = g * weight.data
        gx = rstd * (gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, gw, gb

    return _record(out, (x, weight, bias), bw, "layer_norm")


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood over the batch."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ValueError(f"expected {b} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"label out of range for {c} classes")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logz
    loss = -logp[np.arange(b), labels].mean()

    def bw(g):
        p = np.exp(logp)
        p[np.arange(b), labels] -= 1.0
        return (g * p / b,)

    return _record(np.asarray(loss), (logits,), bw, "cross_entropy")


# ---------------------------------------------------------------------------
# index routing


def _check_perm(perm: np.ndarray, m: int) -> None:
    if perm.shape[-1] != m:
        raise ValueError(f"permutation length {perm.shape[-1]} does not match {m} rows")
    ok = np.sort(perm, axis=-1) == np.arange(m)
    if not ok.all():
        raise ValueError("invalid permutation")


def gather_rows(x, perm) -> Tensor:
    """out[..., i, :] = x[..., perm[..., i], :]; perm may carry batch dims."""
    x = as_tensor(x)
    perm = np.asarray(perm, dtype=np.int64)
    m = x.shape[-2]
    _check_perm(perm, m)
    idx = np.broadcast_to(perm[..., None], perm.shape + (x.shape[-1],))
    if idx.ndim < x.ndim:
        idx = np.broadcast_to(idx, x.shape)
    out = np.take_along_axis(x.data, idx, axis=-2)
    inv = np.argsort(perm, axis=-1)

    def bw(g):
        inv_idx = np.broadcast_to(inv[..., None], inv.shape + (g.shape[-1],))
        if inv_idx.ndim < g.ndim:
            inv_idx = np.broadcast_to(inv_idx, g.shape)
        return (np.take_along_axis(g, inv_idx, axis=-2),)

    return _record(out, (x,), bw, "gather_rows")


def neighbor_max_pool(x, neighbors) -> Tensor:
    """out[i, c] = max_{j in neighbors[i]} x[j, c].

    ``neighbors`` is an (m, k) integer array (optionally with the same batch
    dims as ``x``). Ties route the gradient to the lowest row index.
    """
    x = as_tensor(x)
    nb = np.asarray(neighbors, dtype=np.int64)
    m = x.shape[-2]
    if nb.size == 0 or nb.shape[-1] == 0:
        raise ValueError("neighbor lists must be non-empty")
    if nb.min() < 0 or nb.max() >= m:
        raise IndexError(f"neighbor index out of range for {m} rows")
    batch = x.shape[:-2]
    nb = np.broadcast_to(nb, batch + nb.shape[-2:])
    d = x.shape[-1]
    flat_x = x.data.reshape(-1, m, d)
    flat_nb = nb.reshape(-1, m, nb.shape[-1])
    bi = np.arange(flat_x.shape[0])[:, None, None]
    vals = flat_x[bi, flat_nb]  # (B, m, k, d)
    best = vals.max(axis=2)
    cand = np.where(vals == best[:, :, None, :], flat_nb[..., None], m)
    src = cand.min(axis=2)  # (B, m, d) winning row per output cell
    out = best.reshape(batch + (m, d))

    def bw(g):
        gx = np.zeros_like(flat_x)
        ci = np.broadcast_to(np.arange(d), src.shape)
        bb = np.broadcast_to(bi[:, :, 0:1], src.shape)
        np.add.at(gx, (bb, src, ci), g.reshape(src.shape))
        return (gx.reshape(x.shape),)

    return _record(out, (x,), bw, "neighbor_max_pool")


# ---------------------------------------------------------------------------
# gradient-stopped discrete outputs


def mark_discrete(values: np.ndarray, source: Tensor | None = None) -> np.ndarray:
    """Record a hard (non-differentiable) decision derived from ``source``.

    The values are logged for :func:`grad_check` so perturbations that flip a
    decision can be told apart from genuine gradient errors, and the source is
    remembered so parameters upstream of it are reported as gradient-stopped.
    """
    values = np.asarray(values)
    for sink in _discrete_logs:
        sink.append(values.copy())
    graph = active_graph()
    if graph is not None and source is not None and source.requires_grad:
        graph.stopped_sources.append(source)
    return values


class _collect_discrete:
    def __enter__(self) -> list[np.ndarray]:
        self.log: list[np.ndarray] = []
        _discrete_logs.append(self.log)
        return self.log

    def __exit__(self, *exc) -> None:
        _discrete_logs.remove(self.log)


def _upstream_parameters(sources: Iterable[Tensor]) -> set[int]:
    seen: set[int] = set()
    found: set[int] = set()
    stack = list(sources)
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if isinstance(t, Parameter):
            found.add(id(t))
        elif t._ctx is not None:
            stack.extend(t._ctx.inputs)
    return found


# ---------------------------------------------------------------------------
# verification


@dataclass
class ParamCheck:
    name: str
    status: str  # "ok", "failed", "frozen", "gradient-stopped"
    max_rel_err: float
    checked: int
    skipped_discrete: int = 0

    @property
    def passed(self) -> bool:
        return self.status != "failed"


def rel_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))


def _same_log(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(
    fn: Callable[[], Tensor],
    params: dict[str, Parameter] | Sequence[Parameter],
    step: float = 1e-5,
    tol: float = 1e-4,
    extended: bool = True,
) -> list[ParamCheck]:
    """Compare tape gradients with central differences, parameter by parameter.

    ``fn`` must rebuild its computation on every call and return a scalar.
    Elements whose perturbation flips a logged discrete decision are skipped;
    parameters upstream of such decisions are reported ``gradient-stopped``.

    With ``extended`` the differences are evaluated in long double. At step
    1e-5 a float64 loss of order one carries ~1e-11 of rounding noise in the
    difference quotient, which swamps gradients below ~1e-7 under the 1e-8
    relative-error floor; the analytic side is always the float64 tape.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if not isinstance(params, dict):
        params = {p.name or f"param{i}": p for i, p in enumerate(params)}
    for p in params.values():
        p.zero_grad()
    with _collect_discrete() as base_log, Graph() as graph:
        loss = fn()
    base = float(loss.data)
    graph.backward(loss)
    stopped = _upstream_parameters(graph.stopped_sources)

    with _collect_discrete() as again:
        repeat = float(fn().data)
    if repeat != base or not _same_log(base_log, again):
        raise NondeterminismError(f"fn is not deterministic: {base!r} vs {repeat!r}")

    dtype = np.longdouble if extended else DTYPE
    with compute_dtype(dtype), _collect_discrete() as ref_log:
        fn()

    report = []
    for name, p in params.items():
        analytic = p.grad.copy()
        if not p.trainable:
            report.append(ParamCheck(name, "frozen", float(np.abs(analytic).max(initial=0.0)), 0))
            continue
        numeric = np.zeros(p.data.shape, dtype=dtype)
        valid = np.ones(p.data.shape, dtype=bool)
        saved = p.data
        p.data = saved.astype(dtype)
        flat = p.data.reshape(-1)
        try:
            with compute_dtype(dtype):
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + step
                    with _collect_discrete() as lp:
                        fp = fn().data
                    flat[i] = orig - step
                    with _collect_discrete() as lm:
                        fm = fn().data
                    flat[i] = orig
                    if not (_same_log(lp, ref_log) and _same_log(lm, ref_log)):
                        valid.reshape(-1)[i] = False
                    numeric.reshape(-1)[i] = (fp - fm) / (2 * dtype(step))
        finally:
            p.data = saved
        err = rel_error(analytic, numeric.astype(DTYPE))[valid]
        worst = float(err.max(initial=0.0))
        skipped = int((~valid).sum())
        if worst > tol:
            status = "failed"
        elif id(p) in stopped:
            status = "gradient-stopped"
        else:
            status = "ok"
        report.append(ParamCheck(name, status, worst, int(valid.sum()), skipped))
        p.zero_grad()
    return report


# ---------------------------------------------------------------------------
# optimisation


def adam_step(
    params: Iterable[Parameter],
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    t: int = 1,
) -> None:
    """One bias-corrected Adam update on trainable parameters; zeroes grads."""
    params = list(params)
    if not any(p._has_grad for p in params):
        log.warning("adam_step called before any backward pass; skipping")
        return
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p in params:
        if not p.trainable:
            continue
        if p._adam_m is None:
            p._adam_m = np.zeros_like(p.data)
            p._adam_v = np.zeros_like(p.data)
        g = p.grad
        p._adam_m = beta1 * p._adam_m + (1.0 - beta1) * g
        p._adam_v = beta2 * p._adam_v + (1.0 - beta2) * g * g
        mhat = p._adam_m / c1
        vhat = p._adam_v / c2
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)
        p.version += 1
        p.zero_grad()
    for p in params:
        p._has_grad = False
