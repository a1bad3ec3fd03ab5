"""Dense float32 tensors with reverse-mode autodiff on an explicit gradient tape.

Ops are module-level functions over `Tensor`. When a `GradTape` is active on
the current thread and any input requires a gradient, the op appends a record
to the tape; `GradTape.backward` replays the records in exact reverse order
and accumulates gradients into `Tensor.grad`. Without an active tape, ops are
plain numpy computations, so frozen models can run forward from any thread.

Everything defaults to float32. Float64 arrays are accepted unchanged so that
tests can drive the same formulas through a 64-bit reference path.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


class TensorError(ValueError):
    """Invalid shapes, dtypes, or op arguments."""


class DomainError(TensorError):
    """Input outside an op's mathematical domain (e.g. KL support violation)."""


class NonFiniteError(ArithmeticError):
    """NaN or Inf encountered in a forward or backward computation."""


class TapeError(RuntimeError):
    """Gradient tape misuse (double backward, backward on empty tape, ...)."""


class Counters:
    """Monotonic instrumentation counters for train-free assertions."""

    def __init__(self) -> None:
        self.grad_buffer_allocs = 0
        self.optimizer_steps = 0
        self.tape_nodes = 0

    def snapshot(self) -> dict:
        return {
            "grad_buffer_allocs": self.grad_buffer_allocs,
            "optimizer_steps": self.optimizer_steps,
            "tape_nodes": self.tape_nodes,
        }


counters = Counters()

_FLOAT_DTYPES = (np.float32, np.float64)


def _ensure_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {where}")


class Tensor:
    """N-dimensional float array, row-major, optionally carrying a gradient."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        explicit_f64 = isinstance(data, np.ndarray) and data.dtype == np.float64
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype != np.float32 and not explicit_f64:
            arr = arr.astype(np.float32)
        if arr.ndim > 0:  # ascontiguousarray would promote 0-d to 1-d
            arr = np.ascontiguousarray(arr)
        _ensure_finite(arr, "tensor data")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        # internal fast path: arr already validated by the producing op
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def item(self) -> float:
        if self.size != 1:
            raise TensorError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, c: float) -> "Tensor":
        return scalar_mul(self, c)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


# --------------------------------------------------------------------------
# gradient tape
# --------------------------------------------------------------------------

_tls = threading.local()


def _tape_stack() -> list:
    stack = getattr(_tls, "tapes", None)
    if stack is None:
        stack = []
        _tls.tapes = stack
    return stack


def _active_tape() -> Optional["GradTape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


@dataclass
class _Node:
    out: Tensor
    inputs: tuple
    backward: Callable[[np.ndarray], tuple]


class GradTape:
    """Ordered record of op applications; consumed by a single backward pass."""

    def __init__(self) -> None:
        self._nodes: list[_Node] = []
        self._consumed = False

    def __enter__(self) -> "GradTape":
        if self._consumed:
            raise TapeError("tape already consumed")
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _tape_stack().pop()
        assert popped is self

    def _record(self, node: _Node) -> None:
        if self._consumed:
            raise TapeError("cannot record on a consumed tape")
        self._nodes.append(node)
        counters.tape_nodes += 1

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(tensor) into .grad for every tensor on the tape."""
        if self._consumed:
            raise TapeError("tape already consumed")
        self._consumed = True
        if loss.size != 1:
            raise TapeError("backward requires a scalar loss")
        _accumulate(loss, np.ones_like(loss.data))
        for node in reversed(self._nodes):
            gout = node.out.grad
            if gout is None:
                continue
            grads = node.backward(gout)
            for t, g in zip(node.inputs, grads):
                if g is not None and t.requires_grad:
                    _accumulate(t, g)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if g.shape != t.data.shape:
        raise TensorError(f"gradient shape {g.shape} != tensor shape {t.data.shape}")
    _ensure_finite(g, "backward gradient")
    if t.grad is None:
        counters.grad_buffer_allocs += 1
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _apply(name: str, inputs: tuple, out_data: np.ndarray, backward) -> Tensor:
    _ensure_finite(out_data, name)
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(out_data, needs)
    if needs:
        tape._record(_Node(out, inputs, backward))
    return out


def _check_same_dtype(name: str, *tensors: Tensor) -> None:
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) > 1:
        raise TensorError(f"{name}: mixed dtypes {sorted(map(str, dtypes))}")


# --------------------------------------------------------------------------
# elementwise / structural ops
# --------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise TensorError(f"add: shape mismatch {a.shape} vs {b.shape}")
    _check_same_dtype("add", a, b)

    def backward(g):
        return g, g

    return _apply("add", (a, b), a.data + b.data, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise TensorError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    _check_same_dtype("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return g * bd, g * ad

    return _apply("mul", (a, b), ad * bd, backward)


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        return (g * np.asarray(c, dtype=g.dtype),)

    return _apply("scalar_mul", (a,), a.data * np.asarray(c, dtype=a.data.dtype), backward)


def tsum(a: Tensor) -> Tensor:
    shape = a.shape

    def backward(g):
        return (np.broadcast_to(g.reshape(()), shape).copy(),)

    return _apply("tsum", (a,), a.data.sum(dtype=a.data.dtype).reshape(()), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise TensorError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    _check_same_dtype("matmul", a, b)
    ad, bd = a.data, b.data
    needs_a, needs_b = a.requires_grad, b.requires_grad

    def backward(g):
        ga = g @ bd.T if needs_a else None
        gb = ad.T @ g if needs_b else None
        return ga, gb

    return _apply("matmul", (a, b), ad @ bd, backward)


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise TensorError(f"bias_add: incompatible shapes {x.shape} + {b.shape}")
    _check_same_dtype("bias_add", x, b)

    def backward(g):
        return g, g.sum(axis=0)

    return _apply("bias_add", (x, b), x.data + b.data, backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _apply("relu", (x,), np.where(mask, x.data, x.data.dtype.type(0)), backward)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if len(tensors) == 0:
        raise TensorError("concat: empty tensor list")
    _check_same_dtype("concat", *tensors)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, offsets, axis=axis))

    return _apply("concat", tuple(tensors), np.concatenate([t.data for t in tensors], axis=axis), backward)


# --------------------------------------------------------------------------
# convolution / pooling
# --------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: Optional[int] = None) -> Tensor:
    """2D convolution. Activations are channels-last (N, H, W, C) and weights
    are (k, k, Cin, Cout); k in {1, 3}, stride in {1, 2}. The layout keeps the
    im2col matrix contiguous so the whole op is one GEMM each way."""
    if x.ndim != 4 or w.ndim != 4:
        raise TensorError("conv2d: expected 4-D input and weight")
    _check_same_dtype("conv2d", x, w)
    n, h, wd, c = x.shape
    kh, kw, cin, cout = w.shape
    if kh != kw or kh not in (1, 3):
        raise TensorError(f"conv2d: unsupported kernel {kh}x{kw}")
    if stride not in (1, 2):
        raise TensorError(f"conv2d: unsupported stride {stride}")
    if cin != c:
        raise TensorError(f"conv2d: input has {c} channels, weight expects {cin}")
    if padding is None:
        padding = 1 if kh == 3 else 0
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise TensorError("conv2d: output would be empty")

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x.data
    wmat = w.data.reshape(kh * kw * c, cout)
    if kh == 1 and stride == 1:
        mat = x.data.reshape(n * oh * ow, c)
    else:
        cols = np.empty((n, oh, ow, kh * kw * c), dtype=x.data.dtype)
        pos = 0
        for i in range(kh):
            for j in range(kw):
                cols[:, :, :, pos : pos + c] = xp[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :]
                pos += c
        mat = cols.reshape(n * oh * ow, kh * kw * c)
    out = (mat @ wmat).reshape(n, oh, ow, cout)

    needs_x, needs_w = x.requires_grad, w.requires_grad
    pad_shape = xp.shape

    def backward(g):
        gmat = g.reshape(n * oh * ow, cout)
        gw = (mat.T @ gmat).reshape(w.shape) if needs_w else None
        gx = None
        if needs_x:
            dcols = (gmat @ wmat.T).reshape(n, oh, ow, kh, kw, c)
            if kh == 1 and stride == 1:
                gx = np.ascontiguousarray(dcols.reshape(x.shape))
            else:
                dxp = np.zeros(pad_shape, dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :] += dcols[:, :, :, i, j]
                gx = dxp[:, padding : padding + h, padding : padding + wd, :] if padding else dxp
                gx = np.ascontiguousarray(gx)
        return gx, gw

    return _apply("conv2d", (x, w), out, backward)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise TensorError("global_avg_pool: expected (N, H, W, C) input")
    n, h, w, c = x.shape
    scale = 1.0 / (h * w)

    def backward(g):
        gx = np.broadcast_to(g[:, None, None, :], (n, h, w, c)) * np.asarray(scale, dtype=g.dtype)
        return (np.ascontiguousarray(gx),)

    return _apply("global_avg_pool", (x,), x.data.mean(axis=(1, 2)), backward)


# --------------------------------------------------------------------------
# batch normalization
# --------------------------------------------------------------------------

def batch_norm(
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch norm over (N, H, W, C). Train mode uses batch statistics
    and updates the running buffers in place: r <- momentum*r + (1-momentum)*batch.
    Normalization uses the biased batch variance."""
    if x.ndim != 4:
        raise TensorError("batch_norm: expected (N, H, W, C) input")
    c = x.shape[-1]
    if scale.shape != (c,) or shift.shape != (c,):
        raise TensorError("batch_norm: scale/shift must have shape (C,)")
    if running_mean.shape != (c,) or running_var.shape != (c,):
        raise TensorError("batch_norm: running stats must have shape (C,)")
    _check_same_dtype("batch_norm", x, scale, shift)
    xd = x.data
    dt = xd.dtype

    if training:
        mean = xd.mean(axis=(0, 1, 2))
        var = xd.var(axis=(0, 1, 2))
        running_mean[:] = momentum * running_mean + (1.0 - momentum) * mean
        running_var[:] = momentum * running_var + (1.0 - momentum) * var
    else:
        mean = running_mean.astype(dt, copy=False)
        var = running_var.astype(dt, copy=False)

    inv = (1.0 / np.sqrt(var + eps)).astype(dt)
    xhat = (xd - mean) * inv
    out = scale.data * xhat + shift.data

    needs_x = x.requires_grad
    scale_d = scale.data
    m = xd.shape[0] * xd.shape[1] * xd.shape[2]

    def backward(g):
        gshift = g.sum(axis=(0, 1, 2))
        gscale = (g * xhat).sum(axis=(0, 1, 2))
        gx = None
        if needs_x:
            dxhat = g * scale_d
            if training:
                t1 = dxhat.sum(axis=(0, 1, 2))
                t2 = (dxhat * xhat).sum(axis=(0, 1, 2))
                gx = (inv / m) * (m * dxhat - t1 - xhat * t2)
            else:
                gx = dxhat * inv
            gx = np.ascontiguousarray(gx)
        return gx, gscale, gshift

    return _apply("batch_norm", (x, scale, shift), out, backward)


# --------------------------------------------------------------------------
# softmax family and losses
# --------------------------------------------------------------------------

def _last_axis_2d(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1])


def softmax(x: Tensor) -> Tensor:
    """Numerically stable softmax along the last axis."""
    if x.size == 0 or x.shape[-1] < 1:
        raise TensorError("softmax: empty input")
    xd = x.data
    shifted = xd - xd.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - dot),)

    return _apply("softmax", (x,), p, backward)


def log_softmax(x: Tensor) -> Tensor:
    if x.size == 0 or x.shape[-1] < 1:
        raise TensorError("log_softmax: empty input")
    xd = x.data
    shifted = xd - xd.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _apply("log_softmax", (x,), y, backward)


def _validate_probs(name: str, arr: np.ndarray) -> None:
    if arr.min() < -1e-7:
        raise DomainError(f"{name}: negative probabilities")
    sums = arr.sum(axis=-1)
    if np.max(np.abs(sums - 1.0)) > 1e-4:
        raise DomainError(f"{name}: probabilities must sum to 1 within 1e-4")


def kl_div(p: Tensor, q: Tensor) -> Tensor:
    """KL(p || q) in nats. 1-D inputs give the plain divergence; 2-D inputs
    are treated as rows of distributions and averaged."""
    if p.shape != q.shape:
        raise TensorError(f"kl_div: shape mismatch {p.shape} vs {q.shape}")
    if p.ndim not in (1, 2) or p.shape[-1] < 1:
        raise TensorError("kl_div: expected nonempty 1-D or 2-D input")
    _check_same_dtype("kl_div", p, q)
    pd, qd = p.data, q.data
    _validate_probs("kl_div p", pd)
    _validate_probs("kl_div q", qd)
    support = pd > 0
    if np.any(support & (qd <= 0)):
        raise DomainError("kl_div: q is zero where p has mass")

    ratio_log = np.zeros_like(pd)
    np.log(np.where(support, pd, 1.0) / np.where(support, qd, 1.0), out=ratio_log, where=support)
    rows = pd.shape[0] if pd.ndim == 2 else 1
    value = np.asarray((pd * ratio_log).sum() / rows, dtype=pd.dtype).reshape(())
    w = 1.0 / rows

    def backward(g):
        gs = float(g.reshape(())) * w
        gp = np.where(support, ratio_log + 1.0, 0.0) * gs
        gq = np.where(support, -pd / np.where(support, qd, 1.0), 0.0) * gs
        return gp.astype(pd.dtype), gq.astype(pd.dtype)

    return _apply("kl_div", (p, q), value, backward)


def l1_distance(a: Tensor, b: Tensor) -> Tensor:
    """Sum of absolute differences; rows averaged for 2-D inputs.
    Subgradient at exact ties is 0."""
    if a.shape != b.shape:
        raise TensorError(f"l1_distance: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim not in (1, 2):
        raise TensorError("l1_distance: expected 1-D or 2-D input")
    _check_same_dtype("l1_distance", a, b)
    diff = a.data - b.data
    rows = a.shape[0] if a.ndim == 2 else 1
    value = np.asarray(np.abs(diff).sum() / rows, dtype=diff.dtype).reshape(())
    sign = np.sign(diff)

    def backward(g):
        gs = float(g.reshape(())) / rows
        return sign * np.asarray(gs, dtype=diff.dtype), sign * np.asarray(-gs, dtype=diff.dtype)

    return _apply("l1_distance", (a, b), value, backward)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    if logits.ndim != 2:
        raise TensorError("cross_entropy: expected (N, C) logits")
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise TensorError(f"cross_entropy: labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= c:
        raise TensorError("cross_entropy: label out of range")
    xd = logits.data
    shifted = xd - xd.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    value = np.asarray(-logp[np.arange(n), labels].mean(), dtype=xd.dtype).reshape(())
    p = np.exp(logp)

    def backward(g):
        gs = float(g.reshape(())) / n
        gl = p.copy()
        gl[np.arange(n), labels] -= 1.0
        return (gl * np.asarray(gs, dtype=xd.dtype),)

    return _apply("cross_entropy", (logits,), value, backward)


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------

@dataclass
class SgdConfig:
    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise TensorError("learning_rate must be > 0")
        if not (0.0 <= self.momentum < 1.0):
            raise TensorError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise TensorError("weight_decay must be >= 0")


def sgd_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    cfg: SgdConfig,
    velocity: Sequence[np.ndarray],
) -> None:
    """v <- momentum*v + (grad + weight_decay*w); w <- w - lr*v. In place."""
    if not (len(params) == len(grads) == len(velocity)):
        raise TensorError("sgd_step: params/grads/velocity length mismatch")
    counters.optimizer_steps += 1
    lr = np.float32(cfg.learning_rate)
    mom = np.float32(cfg.momentum)
    wd = np.float32(cfg.weight_decay)
    for p, g, v in zip(params, grads, velocity):
        if g.shape != p.data.shape or v.shape != p.data.shape:
            raise TensorError("sgd_step: shape mismatch")
        np.multiply(v, mom, out=v)
        v += g
        if wd:
            v += wd * p.data
        p.data -= lr * v
        _ensure_finite(p.data, "sgd_step update")


class Sgd:
    """Momentum SGD bound to a fixed parameter list."""

    def __init__(self, params: Sequence[Tensor], cfg: SgdConfig):
        self.params = list(params)
        self.cfg = cfg
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        grads = []
        for p in self.params:
            if p.grad is None:
                raise TensorError("Sgd.step: parameter has no gradient")
            grads.append(p.grad)
        sgd_step(self.params, grads, self.cfg, self.velocity)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# --------------------------------------------------------------------------
# gradient checking
# --------------------------------------------------------------------------

@dataclass
class GradCheckResult:
    max_rel_err: float
    checked: int
    excluded: int


def grad_check(
    scalar_fn: Callable[[Tensor], Tensor],
    x: np.ndarray,
    eps: float = 1e-3,
    exclude: Optional[np.ndarray] = None,
) -> GradCheckResult:
    """Compare tape gradients of scalar_fn against central finite differences.

    `exclude` marks elements to skip (e.g. relu inputs within 10*eps of the
    kink); they are counted but never contribute to the error."""
    x = np.asarray(x)
    leaf = Tensor(x.copy(), requires_grad=True)
    with GradTape() as tape:
        out = scalar_fn(leaf)
    if out.size != 1:
        raise TensorError("grad_check: scalar_fn must return a scalar")
    tape.backward(out)
    analytic = leaf.grad
    if analytic is None:
        analytic = np.zeros_like(x)

    if exclude is None:
        exclude = np.zeros(x.shape, dtype=bool)
    exclude = np.asarray(exclude, dtype=bool)
    if exclude.shape != x.shape:
        raise TensorError("grad_check: exclude mask shape mismatch")

    flat = x.reshape(-1)
    excl = exclude.reshape(-1)
    ana = np.asarray(analytic).reshape(-1)
    max_err = 0.0
    checked = 0
    for i in range(flat.size):
        if excl[i]:
            continue
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += eps
        xm[i] -= eps
        fp = scalar_fn(Tensor(xp.reshape(x.shape))).item()
        fm = scalar_fn(Tensor(xm.reshape(x.shape))).item()
        fd = (fp - fm) / (2.0 * eps)
        denom = max(abs(ana[i]), abs(fd), 1e-6)
        max_err = max(max_err, abs(ana[i] - fd) / denom)
        checked += 1
    return GradCheckResult(max_rel_err=max_err, checked=checked, excluded=int(excl.sum()))


# --------------------------------------------------------------------------
# deterministic rng derivation
# --------------------------------------------------------------------------

def rng_for(seed: int, *path) -> np.random.Generator:
    """Derive an independent generator from (seed, path). Stable across runs;
    string path elements are hashed so call sites can use readable names."""
    keys = [int(seed)]
    for part in path:
        if isinstance(part, str):
            keys.append(int.from_bytes(hashlib.sha256(part.encode()).digest()[:8], "little"))
        else:
            keys.append(int(part))
    return np.random.default_rng(np.random.SeedSequence(keys))
