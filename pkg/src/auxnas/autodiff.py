"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Every op takes :class:`Tensor` inputs. If any input is attached to a
:class:`Tape`, the op appends a node to that tape; otherwise the op is a
plain numpy evaluation with no bookkeeping. Nodes are visited in exact
reverse append order by :func:`backward`, so gradient accumulation order is
fixed and results are bit-reproducible for identical forward passes.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .exceptions import ContractViolation, DimensionError, NonFiniteError

DTYPE = np.float64


class Tensor:
    """Dense float64 array, optionally recorded on a tape."""

    __slots__ = ("data", "tape", "node_id", "name")

    def __init__(self, data, tape: "Tape | None" = None, node_id: int | None = None,
                 name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.tape = tape
        self.node_id = node_id
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"


@dataclass
class Node:
    op: str
    inputs: tuple[int | None, ...]
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None
    flops: int = 0
    bwd_flops: int = 0
    tag: str | None = None
    saved: object = None
    name: str | None = None


@dataclass
class Tape:
    """Append-only record of a forward computation."""

    nodes: list[Node] = field(default_factory=list)
    _leaves: dict[str, Tensor] = field(default_factory=dict)

    def leaf(self, value, name: str) -> Tensor:
        """Return the leaf tensor registered under ``name``, creating it once."""
        if name in self._leaves:
            return self._leaves[name]
        node_id = len(self.nodes)
        self.nodes.append(Node("leaf", (), None, name=name))
        t = Tensor(value, self, node_id, name)
        self._leaves[name] = t
        return t

    def param(self, store: "ParamStore", name: str) -> Tensor:
        return self.leaf(store[name], name)

    def record(self, op: str, inputs: Sequence[Tensor | None], out: np.ndarray,
               backward_fn, flops: int = 0, bwd_flops: int = 0,
               tag: str | None = None, saved=None) -> Tensor:
        ids = []
        for t in inputs:
            if t is None or t.tape is None:
                ids.append(None)
            elif t.tape is not self:
                raise ContractViolation(f"{op}: input recorded on a different tape")
            else:
                ids.append(t.node_id)
        node_id = len(self.nodes)
        self.nodes.append(Node(op, tuple(ids), backward_fn, flops, bwd_flops, tag, saved))
        return Tensor(out, self, node_id)

    # cost accounting -------------------------------------------------------

    def forward_flops(self, tag: str | None = None) -> int:
        return sum(n.flops for n in self.nodes if tag is None or n.tag == tag)

    def backward_flops(self) -> int:
        return sum(n.bwd_flops for n in self.nodes)

    def count_tag(self, tag: str) -> int:
        return sum(1 for n in self.nodes if n.tag == tag)

    def min_relu_margin(self) -> float:
        """Smallest |pre-activation| over all recorded ReLU inputs."""
        margins = [float(np.min(np.abs(n.saved))) for n in self.nodes
                   if n.op == "relu" and n.saved is not None and n.saved.size]
        return min(margins) if margins else float("inf")


def _tape_of(*tensors: Tensor | None) -> Tape | None:
    tape = None
    for t in tensors:
        if t is not None and t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ContractViolation("inputs recorded on different tapes")
            tape = t.tape
    return tape


def _finite(op: str, out: np.ndarray) -> np.ndarray:
    # one reduction: any NaN/Inf (or overflow) makes the sum non-finite
    with np.errstate(over="ignore", invalid="ignore"):
        total = out.sum()
    if not math.isfinite(total):
        raise NonFiniteError(f"{op} produced non-finite values")
    return out


def _emit(op, inputs, out, backward_fn, flops=0, bwd_flops=0, tag=None, saved=None):
    _finite(op, out)
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(out)
    return tape.record(op, inputs, out, backward_fn, flops, bwd_flops, tag, saved)


def constant(value) -> Tensor:
    return Tensor(value)


# ---------------------------------------------------------------------------
# primitive ops


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           tag: str | None = None) -> Tensor:
    """``x @ weight (+ bias)`` for ``x`` of shape (batch, in)."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"linear: x{x.shape} incompatible with weight{weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise DimensionError(f"linear: bias{bias.shape} incompatible with weight{weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd
    if bias is not None:
        out = out + bias.data
    batch, n_in = xd.shape
    n_out = wd.shape[1]
    macs = batch * n_in * n_out
    flops = macs + (batch * n_out if bias is not None else 0)
    bwd = 0
    if x.tape is not None:
        bwd += macs
    if weight.tape is not None:
        bwd += macs
    if bias is not None and bias.tape is not None:
        bwd += batch * n_out

    def backward_fn(g):
        gx = g @ wd.T if x.tape is not None else None
        gw = xd.T @ g if weight.tape is not None else None
        gb = g.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    return _emit("linear", (x, weight, bias), out, backward_fn, flops, bwd, tag)


def add(a: Tensor, b: Tensor, tag: str | None = None) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add: {a.shape} vs {b.shape}")
    out = a.data + b.data
    n = out.size
    return _emit("add", (a, b), out, lambda g: (g, g), n, 0, tag)


def add_n(terms: Sequence[Tensor]) -> Tensor:
    """Sum of equally shaped tensors, left to right."""
    if not terms:
        raise ContractViolation("add_n: empty term list")
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return total


def mul_const(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = x.data * c
    return _emit("mul_const", (x,), out, lambda g: (g * c,), out.size, out.size)


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate (batch, c_k) tensors along the channel axis."""
    if not parts:
        raise ContractViolation("concat: empty part list")
    if len(parts) == 1:
        return parts[0]
    batch = parts[0].shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.shape[0] != batch:
            raise DimensionError(f"concat: batch mismatch {parts[0].shape} vs {p.shape}")
    out = np.concatenate([p.data for p in parts], axis=1)
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward_fn(g):
        return tuple(g[:, bounds[k]:bounds[k + 1]] for k in range(len(parts)))

    return _emit("concat", tuple(parts), out, backward_fn)


def scale(x: Tensor, alpha: Tensor, tag: str | None = None) -> Tensor:
    """Elementwise ``alpha * x`` with a scalar ``alpha``."""
    if alpha.size != 1:
        raise DimensionError(f"scale: alpha must be scalar, got shape {alpha.shape}")
    a = alpha.data.reshape(())
    xd = x.data
    out = a * xd

    def backward_fn(g):
        ga = np.sum(g * xd).reshape(alpha.shape) if alpha.tape is not None else None
        gx = a * g if x.tape is not None else None
        return gx, ga

    return _emit("scale", (x, alpha), out, backward_fn, out.size, 2 * out.size, tag)


def relu(x: Tensor, tag: str | None = None) -> Tensor:
    xd = x.data
    out = np.maximum(xd, 0.0)
    mask = xd > 0
    return _emit("relu", (x,), out, lambda g: (g * mask,), out.size, out.size,
                 tag, saved=xd)


def identity(x: Tensor) -> Tensor:
    return x


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, training: bool,
              state: dict | None = None, momentum: float = 0.1,
              eps: float = 1e-5, tag: str | None = None) -> Tensor:
    """Batch normalization over axis 0 of a (batch, c) tensor.

    ``gamma`` and ``beta`` may be per-channel (shape ``(c,)``) or a single
    shared pair (shape ``()``). ``state`` holds ``mean`` and ``var``
    running statistics; in training mode they are updated in place.
    """
    xd = x.data
    if xd.ndim != 2:
        raise DimensionError(f"batchnorm: expected (batch, c), got {xd.shape}")
    batch, c = xd.shape
    for p in (gamma, beta):
        if p.shape not in ((), (c,)):
            raise DimensionError(f"batchnorm: affine shape {p.shape} vs channels {c}")
    gd, bd = gamma.data, beta.data

    if training:
        if batch < 2:
            raise ContractViolation(f"batchnorm: training mode needs batch >= 2, got {batch}")
        mu = xd.mean(axis=0)
        var = xd.var(axis=0)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (xd - mu) * inv
        out = xhat * gd + bd
        if state is not None:
            state["mean"] = (1.0 - momentum) * state["mean"] + momentum * mu
            state["var"] = (1.0 - momentum) * state["var"] + momentum * var * batch / (batch - 1)

        def backward_fn(g):
            dxhat = g * gd
            gx = inv / batch * (batch * dxhat - dxhat.sum(axis=0)
                                - xhat * (dxhat * xhat).sum(axis=0))
            ggamma = g * xhat
            ggamma = ggamma.sum() if gamma.shape == () else ggamma.sum(axis=0)
            gbeta = g.sum() if beta.shape == () else g.sum(axis=0)
            return gx, np.asarray(ggamma), np.asarray(gbeta)

        n = xd.size
        return _emit("batchnorm", (x, gamma, beta), out, backward_fn, 7 * n, 8 * n, tag)

    if state is None:
        raise ContractViolation("batchnorm: eval mode requires running statistics")
    inv = 1.0 / np.sqrt(state["var"] + eps)
    xhat = (xd - state["mean"]) * inv
    out = xhat * gd + bd

    def backward_fn(g):
        ggamma = g * xhat
        ggamma = ggamma.sum() if gamma.shape == () else ggamma.sum(axis=0)
        gbeta = g.sum() if beta.shape == () else g.sum(axis=0)
        return g * gd * inv, np.asarray(ggamma), np.asarray(gbeta)

    n = xd.size
    # two sums (shift, beta) and two products (inv-std, gamma) per element
    return _emit("batchnorm", (x, gamma, beta), out, backward_fn, 4 * n, 4 * n, tag)


# ---------------------------------------------------------------------------
# losses and reductions


def softmax_xent(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under ``softmax(logits)``."""
    z = logits.data
    labels = np.asarray(labels)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise DimensionError(f"softmax_xent: logits{z.shape} vs labels{labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= z.shape[1]):
        raise ContractViolation("softmax_xent: label out of range")
    labels = labels.astype(np.int64)
    batch = z.shape[0]
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - logsum[:, None]
    loss = -logp[np.arange(batch), labels].mean()

    def backward_fn(g):
        p = np.exp(logp)
        p[np.arange(batch), labels] -= 1.0
        return (p * (g / batch),)

    return _emit("softmax_xent", (logits,), np.asarray(loss), backward_fn,
                 4 * z.size, 2 * z.size)


def mse(pred: Tensor, target) -> Tensor:
    """Mean of squared differences over every element."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=DTYPE)
    if pred.shape != t.shape:
        raise DimensionError(f"mse: pred{pred.shape} vs target{t.shape}")
    diff = pred.data - t
    n = diff.size
    loss = np.asarray(np.mean(diff * diff))
    return _emit("mse", (pred,), loss, lambda g: (2.0 * g / n * diff,), 3 * n, 2 * n)


def cosine_loss(pred: Tensor, target) -> Tensor:
    """Batch mean of ``1 - cos(pred_b, target_b)``."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=DTYPE)
    p = pred.data
    if p.shape != t.shape or p.ndim != 2:
        raise DimensionError(f"cosine_loss: pred{p.shape} vs target{t.shape}")
    pn = np.linalg.norm(p, axis=1)
    tn = np.linalg.norm(t, axis=1)
    if np.any(pn == 0) or np.any(tn == 0):
        raise ContractViolation("cosine_loss: zero-norm input vector")
    dots = np.sum(p * t, axis=1)
    cos = dots / (pn * tn)
    batch = p.shape[0]
    loss = np.asarray(np.mean(1.0 - cos))

    def backward_fn(g):
        dcos = (t / (pn * tn)[:, None]) - (cos / pn ** 2)[:, None] * p
        return (-g / batch * dcos,)

    return _emit("cosine_loss", (pred,), loss, backward_fn, 6 * p.size, 6 * p.size)


def l1_norm(params: Iterable[Tensor], zero_subgradient: float = 0.0) -> Tensor:
    """Sum of absolute values over a group of tensors.

    The subgradient at exactly 0 is ``zero_subgradient`` (any value in
    ``[-1, 1]`` is valid; the default 0 is the usual lasso convention).
    """
    params = list(params)
    if not params:
        return Tensor(np.asarray(0.0))
    if not -1.0 <= zero_subgradient <= 1.0:
        raise ContractViolation("l1_norm: zero_subgradient must lie in [-1, 1]")
    total = float(sum(np.abs(p.data).sum() for p in params))
    signs = [np.where(p.data == 0, zero_subgradient, np.sign(p.data)) for p in params]

    def backward_fn(g):
        return tuple(g * s for s in signs)

    n = sum(p.size for p in params)
    return _emit("l1_norm", tuple(params), np.asarray(total), backward_fn, 2 * n, n)


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _emit("sum", (x,), np.asarray(x.data.sum()),
                 lambda g: (np.broadcast_to(g, shape).copy(),), x.size, x.size)


def weighted_sum(x: Tensor, weights) -> Tensor:
    """``sum(x * weights)`` for a constant array ``weights``."""
    w = np.asarray(weights, dtype=DTYPE)
    if w.shape != x.shape:
        raise DimensionError(f"weighted_sum: {x.shape} vs {w.shape}")
    return _emit("weighted_sum", (x,), np.asarray(np.sum(x.data * w)),
                 lambda g: (g * w,), 2 * x.size, x.size)


# ---------------------------------------------------------------------------
# backward pass


def backward(tape: Tape, root: Tensor, params: "ParamStore | None" = None,
             ) -> dict[str, np.ndarray]:
    """Gradients of scalar ``root`` with respect to every named leaf.

    When ``params`` is given, the result also carries an exact zero gradient
    for every parameter that never entered the tape.
    """
    if root.size != 1:
        raise ContractViolation(f"backward: root must be scalar, got shape {root.shape}")
    if root.tape is not tape:
        raise ContractViolation("backward: root is not recorded on this tape")
    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    grads[root.node_id] = np.ones_like(root.data)
    for node_id in range(root.node_id, -1, -1):
        g = grads[node_id]
        node = tape.nodes[node_id]
        if g is None or node.backward_fn is None:
            continue
        in_grads = node.backward_fn(g)
        for src, gi in zip(node.inputs, in_grads):
            if src is None or gi is None:
                continue
            grads[src] = gi if grads[src] is None else grads[src] + gi
    out: dict[str, np.ndarray] = {}
    if params is not None:
        for name in params.names():
            if name not in tape._leaves:
                out[name] = np.zeros_like(params[name])
    for name, leaf in tape._leaves.items():
        g = grads[leaf.node_id]
        out[name] = np.zeros_like(leaf.data) if g is None else np.asarray(g).reshape(leaf.shape)
    return out


# ---------------------------------------------------------------------------
# finite-difference check


class NearKinkError(ContractViolation):
    """Raised when a ReLU input lies too close to 0 for finite differences."""


def grad_check(fn: Callable[[Tape, dict[str, Tensor]], Tensor],
               inputs: dict[str, np.ndarray], eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``fn(tape, leaves)`` must build a scalar from the leaf tensors. The
    error per coordinate is ``|g_ad - g_fd| / max(1, |g_fd|)``. Raises
    :class:`NearKinkError` when a ReLU pre-activation is within ``10 * eps``
    of zero; callers re-sample the point.
    """
    if eps <= 0:
        raise ContractViolation("grad_check: eps must be positive")
    tape = Tape()
    leaves = {k: tape.leaf(np.array(v, dtype=DTYPE), k) for k, v in inputs.items()}
    root = fn(tape, leaves)
    if tape.min_relu_margin() < 10 * eps:
        raise NearKinkError("grad_check: ReLU pre-activation within 10*eps of the kink")
    analytic = backward(tape, root)

    def evaluate(values: dict[str, np.ndarray]) -> float:
        return float(fn(None, {k: Tensor(v) for k, v in values.items()}).data)

    worst = 0.0
    base = {k: np.array(v, dtype=DTYPE) for k, v in inputs.items()}
    for name, value in base.items():
        flat = value.reshape(-1)
        g_ad = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = evaluate(base)
            flat[i] = orig - eps
            f_minus = evaluate(base)
            flat[i] = orig
            g_fd = (f_plus - f_minus) / (2 * eps)
            if not (np.isfinite(g_fd) and np.isfinite(g_ad[i])):
                raise NonFiniteError(f"grad_check: non-finite gradient at {name}[{i}]")
            worst = max(worst, abs(g_ad[i] - g_fd) / max(1.0, abs(g_fd)))
    return worst


# ---------------------------------------------------------------------------
# parameter storage


class ParamStore:
    """Named float64 arrays partitioned into disjoint groups."""

    def __init__(self):
        self._values: dict[str, np.ndarray] = {}
        self._group_of: dict[str, str] = {}

    def add(self, name: str, value, group: str) -> None:
        if name in self._values:
            raise ContractViolation(f"duplicate parameter {name!r}")
        self._values[name] = np.array(value, dtype=DTYPE)
        self._group_of[name] = group

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __setitem__(self, name: str, value) -> None:
        if name not in self._values:
            raise KeyError(name)
        value = np.asarray(value, dtype=DTYPE)
        if value.shape != self._values[name].shape:
            raise DimensionError(f"{name}: shape {value.shape} != {self._values[name].shape}")
        self._values[name] = value.copy()

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)

    def names(self, group: str | None = None) -> list[str]:
        if group is None:
            return list(self._values)
        return [n for n, g in self._group_of.items() if g == group]

    def group_of(self, name: str) -> str:
        return self._group_of[name]

    def groups(self) -> list[str]:
        return sorted(set(self._group_of.values()))

    def names_in(self, groups: Iterable[str]) -> list[str]:
        groups = set(groups)
        return [n for n, g in self._group_of.items() if g in groups]

    def count(self, groups: Iterable[str] | None = None) -> int:
        names = self.names() if groups is None else self.names_in(groups)
        return int(sum(self._values[n].size for n in names))

    def digest(self, names: Iterable[str]) -> str:
        h = hashlib.sha256()
        for n in sorted(names):
            h.update(n.encode())
            h.update(np.ascontiguousarray(self._values[n]).tobytes())
        return h.hexdigest()

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for n, v in self._values.items():
            out.add(n, v.copy(), self._group_of[n])
        return out

    def items(self):
        return self._values.items()
