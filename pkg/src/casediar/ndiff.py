"""Small deterministic reverse-mode differentiation core.

Every value is a 2-D float64 array wrapped in a :class:`Tensor`.  Operations
record a backward closure on the tape when gradients are enabled; calling
``loss.backward()`` walks the recorded graph in reverse topological order and
accumulates gradients into the leaf tensors owned by a :class:`ParamStore`.
"""
from __future__ import annotations

import contextlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference, finite differences)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    """A 2-D float64 value that may take part in a recorded computation."""

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2:
            raise ValueError(f"Tensor must be 2-D, got shape {arr.shape}")
        self.value = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    def item(self) -> float:
        if self.value.size != 1:
            raise ValueError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.value[0, 0])

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Back-propagate from this tensor; a 1x1 tensor seeds with 1.0."""
        if grad is None:
            if self.value.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar tensor")
            grad = np.ones_like(self.value)
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    if node.grad is None:
                        node.grad = np.zeros_like(node.value)
                    node.grad += g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def constant(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(value: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.value = value
    out.grad = None
    out.name = None
    out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------------------
# primitives


def affine(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """Row-wise ``x @ W + b``."""
    x = constant(x)
    if x.cols != W.rows:
        raise ValueError(f"affine: input has {x.cols} columns but weight is {W.rows}x{W.cols}")
    if b is not None and b.shape != (1, W.cols):
        raise ValueError(f"affine: bias shape {b.shape} does not match weight {W.shape}")
    out = x.value @ W.value
    if b is not None:
        out = out + b.value

    def backward(g):
        gx = g @ W.value.T if x.requires_grad else None
        gW = x.value.T @ g if W.requires_grad else None
        if b is None:
            return gx, gW
        return gx, gW, g.sum(axis=0, keepdims=True)

    parents = (x, W) if b is None else (x, W, b)
    return _result(out, parents, backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    if a.cols != b.rows:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")

    def backward(g):
        return (g @ b.value.T if a.requires_grad else None,
                a.value.T @ g if b.requires_grad else None)

    return _result(a.value @ b.value, (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    return _result(x.value.T.copy(), (x,), lambda g: (g.T,))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a single row broadcast over ``a``."""
    a, b = constant(a), constant(b)
    if a.shape == b.shape:
        return _result(a.value + b.value, (a, b), lambda g: (g, g))
    if b.shape == (1, a.cols):
        return _result(a.value + b.value, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)))
    raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape}")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(x.value * c, (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    """max(0, x); the subgradient at exactly 0 is taken as 0."""
    mask = x.value > 0
    return _result(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.value)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise ValueError(f"hadamard: shapes differ, {a.shape} vs {b.shape}")
    return _result(a.value * b.value, (a, b), lambda g: (g * b.value, g * a.value))


def scale_rows(x: Tensor, w: Tensor) -> Tensor:
    """Multiply every row of ``x`` by the matching entry of column ``w``."""
    x, w = constant(x), constant(w)
    if w.shape != (x.rows, 1):
        raise ValueError(f"scale_rows: weights {w.shape} do not match {x.shape}")

    def backward(g):
        return g * w.value, (g * x.value).sum(axis=1, keepdims=True)

    return _result(x.value * w.value, (x, w), backward)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [constant(p) for p in parts]
    rows = {p.rows for p in parts}
    if len(rows) != 1:
        raise ValueError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    edges = np.cumsum([0] + [p.cols for p in parts])

    def backward(g):
        return tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.value for p in parts], axis=1), parts, backward)


def take_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows ``x[index]`` (indices may repeat)."""
    index = np.asarray(index, dtype=np.intp)
    unique = np.unique(index).size == index.size

    def backward(g):
        gx = np.zeros_like(x.value)
        if unique:
            gx[index] = g
        else:
            np.add.at(gx, index, g)
        return (gx,)

    return _result(x.value[index], (x,), backward)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous block of rows ``x[start:stop]``."""

    def backward(g):
        gx = np.zeros_like(x.value)
        gx[start:stop] = g
        return (gx,)

    return _result(x.value[start:stop], (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    return _result(np.array([[x.value.sum()]]), (x,), lambda g: (np.full_like(x.value, g[0, 0]),))


def _groups(x: Tensor, group: int | None) -> int:
    group = x.rows if group is None else group
    if group < 1 or x.rows % group:
        raise ValueError(f"{x.rows} rows cannot be split into groups of {group}")
    return group


def splice(x: Tensor, left: int, right: int, group: int | None = None) -> Tensor:
    """Concatenate each row with its ``left``/``right`` neighbours.

    Rows are processed in independent blocks of ``group`` rows (one block per
    window); out-of-range neighbours replicate the nearest edge row of the block.
    """
    if left < 0 or right < 0:
        raise ValueError("splice: context sizes must be non-negative")
    if x.rows == 0:
        raise ValueError("splice: empty input")
    T = _groups(x, group)
    B, W = x.rows // T, x.cols
    xv = x.value.reshape(B, T, W)
    offsets = range(-left, right + 1)
    idx = [np.clip(np.arange(T) + k, 0, T - 1) for k in offsets]
    out = np.concatenate([xv[:, i, :] for i in idx], axis=2).reshape(B * T, W * len(idx))

    def backward(g):
        gv = g.reshape(B, T, len(idx), W)
        gx = np.zeros((B, T, W))
        for j, k in enumerate(offsets):
            lo, hi = max(0, -k), min(T, T - k)  # rows whose neighbour t+k is in range
            if lo < hi:
                gx[:, lo + k:hi + k, :] += gv[:, lo:hi, j, :]
            if lo > 0:
                gx[:, 0, :] += gv[:, :lo, j, :].sum(axis=1)
            if hi < T:
                gx[:, T - 1, :] += gv[:, hi:, j, :].sum(axis=1)
        return (gx.reshape(B * T, W),)

    return _result(out, (x,), backward)


def sparse_matmul(S, W: Tensor) -> Tensor:
    """``S @ W`` for a constant scipy sparse matrix ``S``."""
    if S.shape[1] != W.rows:
        raise ValueError(f"sparse_matmul: {S.shape} @ {W.shape}")
    out = np.asarray(S @ W.value)

    def backward(g):
        return (np.asarray(S.T @ g),)

    return _result(out, (W,), backward)


def splice_sparse(S, left: int, right: int, group: int | None = None):
    """Sparse counterpart of :func:`splice` for a constant CSR matrix."""
    S = sparse.csr_matrix(S)
    N, C = S.shape
    T = group or N
    if T <= 0 or N % T:
        raise ValueError(f"splice_sparse: {N} rows do not split into blocks of {T}")
    base = (np.arange(N) // T) * T
    t = np.arange(N) % T
    blocks = [S[base + np.clip(t + k, 0, T - 1)] for k in range(-left, right + 1)]
    return sparse.hstack(blocks, format="csr")


def _is_sparse_constant(x: Tensor) -> bool:
    return (not x.requires_grad and x.value.size >= 1024
            and np.count_nonzero(x.value) <= 0.1 * x.value.size)


def spliced_affine(parts: Sequence[Tensor], W: Tensor, b: Tensor | None, left: int, right: int,
                   group: int | None = None) -> Tensor:
    """Same value and gradients as ``affine(splice(concat_cols(parts)), W, b)``.

    Mostly-zero constant parts (one-hot content) are spliced in CSR form and
    multiplied sparsely; the rest go through the dense splice.
    """
    if left < 0 or right < 0:
        raise ValueError("splice: context sizes must be non-negative")
    parts = [constant(p) for p in parts]
    rows = parts[0].rows
    if any(p.rows != rows for p in parts):
        raise ValueError("spliced_affine: parts differ in row count")
    widths = [p.cols for p in parts]
    K, Win = left + right + 1, sum(widths)
    if W.rows != K * Win:
        raise ValueError(f"spliced_affine: weight has {W.rows} rows, expected {K * Win}")
    offs = np.cumsum([0] + widths)
    flags = [_is_sparse_constant(p) for p in parts]
    if not any(flags):
        return affine(splice(concat_cols(parts) if len(parts) > 1 else parts[0], left, right, group), W, b)

    def weight_rows(sel):
        cols = np.concatenate([np.arange(offs[i], offs[i + 1]) for i in sel])
        return (np.arange(K)[:, None] * Win + cols[None, :]).reshape(-1)

    dense = [i for i, f in enumerate(flags) if not f]
    sparse_idx = [i for i, f in enumerate(flags) if f]
    S = splice_sparse(sparse.hstack([sparse.csr_matrix(parts[i].value) for i in sparse_idx], format="csr"),
                      left, right, group)
    out = sparse_matmul(S, take_rows(W, weight_rows(sparse_idx)))
    if dense:
        x = concat_cols([parts[i] for i in dense]) if len(dense) > 1 else parts[dense[0]]
        out = add(out, matmul(splice(x, left, right, group), take_rows(W, weight_rows(dense))))
    if b is not None:
        out = add(out, b)
    return out


def group_softmax(x: Tensor, group: int | None = None) -> Tensor:
    """Softmax over the rows of each block, independently per column."""
    T = _groups(x, group)
    B, C = x.rows // T, x.cols
    z = x.value.reshape(B, T, C)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        gv = g.reshape(B, T, C)
        inner = (gv * p).sum(axis=1, keepdims=True)
        return ((p * (gv - inner)).reshape(B * T, C),)

    return _result(p.reshape(B * T, C), (x,), backward)


def group_sum(x: Tensor, group: int | None = None) -> Tensor:
    """Sum the rows of each block, giving one row per block."""
    T = _groups(x, group)
    B, C = x.rows // T, x.cols

    def backward(g):
        return (np.repeat(g, T, axis=0),)

    return _result(x.value.reshape(B, T, C).sum(axis=1), (x,), backward)


def attention_penalty(A: Tensor, group: int | None = None) -> Tensor:
    """Mean over blocks of ``||A_b^T A_b - I||_F^2``.

    Each block ``A_b`` is T x H with one attention distribution per column, so
    ``A_b^T A_b`` is the H x H head-overlap matrix.
    """
    T = _groups(A, group)
    B, H = A.rows // T, A.cols
    a = A.value.reshape(B, T, H)
    resid = np.einsum("bth,btk->bhk", a, a) - np.eye(H)
    value = float((resid ** 2).sum()) / B

    def backward(g):
        ga = 4.0 * np.einsum("bth,bhk->btk", a, resid) * (g[0, 0] / B)
        return (ga.reshape(B * T, H),)

    return _result(np.array([[value]]), (A,), backward)


def gradient_reverse(x: Tensor, lam: float) -> Tensor:
    """Identity forward; multiplies the upstream gradient by ``-lam``."""
    if lam < 0:
        raise ValueError(f"gradient_reverse: lambda must be >= 0, got {lam}")
    lam = float(lam)
    return _result(x.value.copy(), (x,), lambda g: (-lam * g,))


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(np.asarray(z, dtype=np.float64)))


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under row-wise softmax."""
    targets = np.asarray(targets, dtype=np.intp).reshape(-1)
    n, k = logits.shape
    if targets.shape[0] != n:
        raise ValueError(f"softmax_cross_entropy: {targets.shape[0]} targets for {n} rows")
    if n and (targets.min() < 0 or targets.max() >= k):
        bad = targets[(targets < 0) | (targets >= k)][0]
        raise ValueError(f"softmax_cross_entropy: target {bad} outside [0, {k})")
    logp = log_softmax(logits.value)
    rows = np.arange(n)
    loss = -logp[rows, targets].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[rows, targets] -= 1.0
        return (grad * (g[0, 0] / n),)

    return _result(np.array([[loss]]), (logits,), backward)


@dataclass(frozen=True)
class LossConfig:
    kind: str = "angular-softmax"
    margin: int = 1
    scale: float = 10.0

    def __post_init__(self):
        if self.kind not in ("softmax-cross-entropy", "angular-softmax"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.margin < 1:
            raise ValueError("margin must be >= 1")
        if self.kind == "angular-softmax" and self.margin != 1:
            raise ValueError("only margin m=1 is supported for angular softmax")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be finite and positive, got {self.scale}")


def _normalize_rows(v: np.ndarray):
    norms = np.sqrt((v * v).sum(axis=1, keepdims=True))
    return v / np.where(norms == 0, 1.0, norms), norms


def angular_softmax_logits(e: Tensor, W: Tensor, cfg: LossConfig = LossConfig()) -> Tensor:
    """Scaled cosine logits ``s * cos(e_i, w_j)`` for class weight rows ``W``."""
    if cfg.margin != 1:
        raise ValueError("angular_softmax_logits: margin must be 1")
    if e.cols != W.cols:
        raise ValueError(f"angular_softmax_logits: embedding width {e.cols} vs class weights {W.shape}")
    en, e_norm = _normalize_rows(e.value)
    if np.any(e_norm == 0):
        row = int(np.flatnonzero(e_norm.ravel() == 0)[0])
        raise ValueError(f"angular_softmax_logits: embedding row {row} has zero norm")
    wn, w_norm = _normalize_rows(W.value)
    if np.any(w_norm == 0):
        raise ValueError("angular_softmax_logits: class weight row with zero norm")
    s = cfg.scale
    cos = en @ wn.T

    def backward(g):
        gc = g * s
        g_en = gc @ wn
        g_wn = gc.T @ en
        # d(v/|v|) = (I - n n^T)/|v|
        ge = (g_en - en * (g_en * en).sum(axis=1, keepdims=True)) / e_norm
        gw = (g_wn - wn * (g_wn * wn).sum(axis=1, keepdims=True)) / w_norm
        return ge, gw

    return _result(s * cos, (e, W), backward)


# ---------------------------------------------------------------------------
# parameters and optimisation


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class ParamStore:
    """Named parameter tensors plus their gradient accumulators."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, rows: int, cols: int, init: str = "glorot") -> Tensor:
        if name in self._tensors:
            raise KeyError(f"parameter {name!r} already exists")
        if init == "glorot":
            value = glorot_uniform(self._rng, rows, cols)
        elif init == "zeros":
            value = np.zeros((rows, cols))
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(value, requires_grad=True, name=name)
        t.grad = np.zeros_like(t.value)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            if t.grad is None:
                t.grad = np.zeros_like(t.value)
            else:
                t.grad.fill(0.0)

    def grad(self, name: str) -> np.ndarray:
        t = self._tensors[name]
        return t.grad if t.grad is not None else np.zeros_like(t.value)

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self._tensors.items()}

    def load_state(self, values: dict[str, np.ndarray]) -> None:
        for name, value in values.items():
            t = self._tensors[name]
            if t.shape != value.shape:
                raise ValueError(f"{name}: stored shape {value.shape} != parameter shape {t.shape}")
            t.value[...] = value

    def n_values(self) -> int:
        return sum(t.value.size for t in self._tensors.values())


class Adam:
    """Adaptive-moment optimiser with bias correction."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: ParamStore, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        for name, t in params.items():
            g = params.grad(name)
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, t in params.items():
            g = params.grad(name)
            m = self.m.setdefault(name, np.zeros_like(t.value))
            v = self.v.setdefault(name, np.zeros_like(t.value))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            t.value -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        out = {f"m/{k}": v for k, v in self.m.items()}
        out.update({f"v/{k}": v for k, v in self.v.items()})
        out["t"] = np.array([[float(self.t)]])
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.t = int(state["t"][0, 0])
        self.m = {k[2:]: v.copy() for k, v in state.items() if k.startswith("m/")}
        self.v = {k[2:]: v.copy() for k, v in state.items() if k.startswith("v/")}


def optimizer_step(params: ParamStore, optimizer: Adam, lr: float | None = None) -> None:
    optimizer.step(params, lr)


# ---------------------------------------------------------------------------
# verification


class ModelGraph:
    """A fixed network: a parameter store plus a scalar loss over a batch."""

    params: ParamStore

    def loss(self, batch) -> Tensor:
        raise NotImplementedError

    def objective(self, batch, name: str) -> Tensor:
        """Scalar whose derivative the training gradient of ``name`` should equal.

        It is the loss itself unless the graph deliberately alters gradients
        (e.g. gradient reversal), in which case subclasses return the
        equivalent surrogate.
        """
        return self.loss(batch)

    def gradients(self, batch) -> dict[str, np.ndarray]:
        self.params.zero_grad()
        self.loss(batch).backward()
        return {name: self.params.grad(name).copy() for name in self.params}


def finite_diff_check(graph: ModelGraph, batch, epsilon: float = 1e-5,
                      max_entries: int | None = 12, seed: int = 0,
                      floor: float = 1e-7) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``max_entries`` entries per parameter are probed (all of them when None).
    The relative error of one entry is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if not (1e-7 <= epsilon <= 1e-3):
        raise ValueError(f"epsilon {epsilon} outside [1e-7, 1e-3]")
    analytic = graph.gradients(batch)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, t in graph.params.items():
        flat = t.value.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            probe = np.arange(flat.size)
        else:
            probe = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        g = analytic[name].reshape(-1)
        for i in probe:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + epsilon
                up = graph.objective(batch, name).item()
                flat[i] = orig - epsilon
                down = graph.objective(batch, name).item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * epsilon)
            err = abs(g[i] - numeric) / max(abs(g[i]), abs(numeric), floor)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# checkpoint files

CHECKPOINT_MAGIC = b"CASECKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write name -> shape -> row-major float64 values, plus a JSON meta block.

    Layout: magic, uint32 version, uint64 header length, UTF-8 JSON header,
    then the little-endian float64 payload of every array in header order.
    """
    entries = []
    payload = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape)})
        payload.append(arr.tobytes())
    header = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for chunk in payload:
            fh.write(chunk)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[20:20 + hlen])
    offset = 20 + hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arrays[entry["name"]] = np.frombuffer(data, dtype="<f8", count=count,
                                              offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
    return arrays, header["meta"]


def iter_minibatches(n: int, batch_size: int, rng: np.random.Generator) -> Iterable[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
