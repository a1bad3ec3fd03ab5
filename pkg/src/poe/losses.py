"""Distillation losses: full-logit KD, sub-logit soft matching, raw-logit L1
scale anchoring, and their weighted combination.

Teacher logits are always detached; gradients flow only to the student input.
Losses accept a single logit vector or an (N, classes) batch; batched inputs
return the mean per-sample loss.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor, TensorError


def _teacher_probs(logits: np.ndarray, temp: float) -> np.ndarray:
    z = logits / temp
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _soft_kl(t_logits: np.ndarray, s: Tensor, temp: float) -> Tensor:
    """Mean KL(softmax(t/T) || softmax(s/T)) with gradient to s only."""
    p = _teacher_probs(t_logits.astype(np.float64), temp)
    # sum p*log p is constant w.r.t. s; log softmax keeps the s side stable
    rows = p.shape[0] if p.ndim == 2 else 1
    entropy_term = float((p * np.log(np.maximum(p, np.finfo(p.dtype).tiny))).sum() / rows)
    logq = T.log_softmax(T.scalar_mul(s, 1.0 / temp))
    cross = T.tsum(T.mul(Tensor((-p / rows).astype(s.dtype), dtype=s.dtype), logq))
    return T.add(cross, Tensor(np.asarray(entropy_term, dtype=s.dtype).reshape(()), dtype=s.dtype))


def _as_array(t) -> np.ndarray:
    return t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float32)


def loss_kd(t, s: Tensor, temp: float) -> Tensor:
    """Knowledge-distillation loss over full logits at temperature `temp`."""
    if temp <= 0:
        raise TensorError("temperature must be > 0")
    td = _as_array(t)
    if td.shape != s.shape:
        raise TensorError(f"loss_kd: teacher shape {td.shape} != student shape {s.shape}")
    return _soft_kl(td, s, float(temp))


def loss_soft(t, s_h: Tensor, task, temp: float) -> Tensor:
    """KD loss restricted to the task's sub-logit: the teacher's logits are
    sliced to task.class_indices, the student already emits |H| logits."""
    if temp <= 0:
        raise TensorError("temperature must be > 0")
    td = _as_array(t)
    idx = np.asarray(task.class_indices, dtype=np.int64)
    if td.shape[-1] < 1 or idx.size < 1:
        raise TensorError("loss_soft: empty task")
    if idx.min() < 0 or idx.max() >= td.shape[-1]:
        raise TensorError("loss_soft: class index out of range")
    t_h = td[..., idx]
    if t_h.shape != s_h.shape:
        raise TensorError(f"loss_soft: sub-logit shape {t_h.shape} != student shape {s_h.shape}")
    return _soft_kl(t_h, s_h, float(temp))


def loss_scale(t, s_h: Tensor, task) -> Tensor:
    """L1 distance between raw (unsoftened) teacher sub-logits and student
    logits; anchors the student's logit scale. Gradient to the student only."""
    td = _as_array(t)
    idx = np.asarray(task.class_indices, dtype=np.int64)
    if idx.min() < 0 or idx.max() >= td.shape[-1]:
        raise TensorError("loss_scale: class index out of range")
    t_h = td[..., idx]
    if t_h.shape != s_h.shape:
        raise TensorError(f"loss_scale: sub-logit shape {t_h.shape} != student shape {s_h.shape}")
    return T.l1_distance(s_h, Tensor(np.ascontiguousarray(t_h), dtype=s_h.dtype))


def loss_ckd(t, s_h: Tensor, task, temp: float, alpha: float) -> Tensor:
    """Conditional KD: loss_soft + alpha * loss_scale."""
    if alpha < 0:
        raise TensorError("alpha must be >= 0")
    soft = loss_soft(t, s_h, task, temp)
    if alpha == 0:
        return soft
    return T.add(soft, T.scalar_mul(loss_scale(t, s_h, task), alpha))
