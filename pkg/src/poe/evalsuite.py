"""Evaluation protocol: task-restricted accuracy, out-of-distribution
confidence histograms, loss-ablation comparison, and build-vs-train timing.

Generic models are scored with task-specific accuracy: the argmax is taken
only over logit positions that map into the queried classes, with ties broken
toward the lowest global class index.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .consolidate import ExpertPool, assemble
from .datasets import DataBundle
from .nets import predict_logits
from .tasks import CompositeQuery


class EvalError(ValueError):
    """Invalid evaluation inputs."""


@dataclass
class EvalReport:
    method: str
    per_item: Dict[str, float]  # task or combination id -> accuracy
    mean_accuracy: float
    std_accuracy: float
    params: int = 0
    flops: int = 0
    wall_time_seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "per_item": {k: float(v) for k, v in self.per_item.items()},
            "mean_accuracy": float(self.mean_accuracy),
            "std_accuracy": float(self.std_accuracy),
            "params": int(self.params),
            "flops": int(self.flops),
            "wall_time_seconds": float(self.wall_time_seconds),
            **({"extra": self.extra} if self.extra else {}),
        }


def make_report(method: str, per_item: Dict[str, float], **kw) -> EvalReport:
    accs = list(per_item.values())
    if len(accs) == 0:
        raise EvalError("report needs at least one accuracy")
    if any(not (0.0 <= a <= 1.0) for a in accs):
        raise EvalError("accuracies must lie in [0, 1]")
    return EvalReport(
        method=method,
        per_item=per_item,
        mean_accuracy=float(np.mean(accs)),
        std_accuracy=float(np.std(accs)),
        **kw,
    )


def task_specific_accuracy(model, eval_x: np.ndarray, eval_y: np.ndarray,
                           q_class_indices: Sequence[int],
                           class_map: Optional[Sequence[int]] = None,
                           batch_size: int = 512) -> float:
    """Fraction of task samples whose restricted argmax hits the true label.

    `class_map[pos]` gives the global class of logit position `pos` (identity
    when omitted). Only positions mapping into the queried classes compete;
    ties go to the lowest global class index. The eval set is filtered to
    samples whose label lies in the query."""
    q = sorted(int(c) for c in q_class_indices)
    q_set = set(q)
    mask = np.isin(eval_y, q)
    if not mask.any():
        raise EvalError("no eval samples fall inside the queried classes")
    x, y = eval_x[mask], eval_y[mask]
    logits = predict_logits(model, x, batch_size=batch_size)
    n_pos = logits.shape[1]
    cmap = list(range(n_pos)) if class_map is None else [int(c) for c in class_map]
    if len(cmap) != n_pos:
        raise EvalError(f"class_map length {len(cmap)} != logit width {n_pos}")
    # restrict to positions inside the query, ordered by global class so that
    # argmax's first-wins rule implements the lowest-index tie-break
    pairs = sorted((g, pos) for pos, g in enumerate(cmap) if g in q_set)
    if not pairs:
        raise EvalError("model has no logit positions for the queried classes")
    classes = np.array([g for g, _ in pairs])
    positions = [pos for _, pos in pairs]
    preds = classes[np.argmax(logits[:, positions], axis=1)]
    return float((preds == y).mean())


@dataclass
class ConfidenceHistogram:
    counts: list  # 10 bins over [0, 1], width 0.1; 1.0 falls in the top bin
    kind: str  # "in-distribution" | "out-of-distribution"

    @property
    def n(self) -> int:
        return int(sum(self.counts))

    def mode_bin(self) -> int:
        return int(np.argmax(self.counts))

    def to_dict(self) -> dict:
        edges = [round(0.1 * i, 1) for i in range(11)]
        return {"kind": self.kind, "bin_edges": edges, "counts": [int(c) for c in self.counts]}


def confidence_histogram(model, samples: np.ndarray, kind: str, batch_size: int = 512) -> ConfidenceHistogram:
    """Histogram of per-sample maximum softmax probability."""
    if kind not in ("in-distribution", "out-of-distribution"):
        raise EvalError(f"unknown sample kind {kind!r}")
    if len(samples) == 0:
        raise EvalError("no samples to histogram")
    logits = predict_logits(model, samples, batch_size=batch_size)
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    conf = p.max(axis=1)
    bins = np.minimum((conf * 10).astype(int), 9)
    counts = np.bincount(bins, minlength=10)
    return ConfidenceHistogram(counts=[int(c) for c in counts], kind=kind)


def consolidated_accuracy(pool: ExpertPool, query: CompositeQuery, dataset: DataBundle) -> float:
    """Task-specific accuracy of the assembled model for one composite query."""
    tm = assemble(pool, query)
    return task_specific_accuracy(
        tm.model, dataset.eval_x, dataset.eval_y,
        q_class_indices=tm.class_map, class_map=tm.class_map,
    )


def ablation_report(pools: Dict[str, ExpertPool], queries: Sequence[CompositeQuery],
                    dataset: DataBundle) -> List[EvalReport]:
    """Consolidated accuracy per loss-composition variant, grouped by n(Q)."""
    universes = {id(p.universe): p.universe.to_dict() for p in pools.values()}
    first = next(iter(pools.values())).universe.to_dict()
    if any(u != first for u in universes.values()):
        raise EvalError("ablation pools must share one task universe")
    reports = []
    for name, pool in pools.items():
        by_n: Dict[int, list] = {}
        per_item = {}
        for q in queries:
            acc = consolidated_accuracy(pool, q, dataset)
            per_item["+".join(q.task_ids)] = acc
            by_n.setdefault(q.n, []).append(acc)
        rep = make_report(name, per_item)
        rep.extra["by_n"] = {
            str(n): {"mean": float(np.mean(v)), "std": float(np.std(v)), "count": len(v)}
            for n, v in sorted(by_n.items())
        }
        reports.append(rep)
    return reports


@dataclass
class TimingResult:
    method: str
    query: str
    n_tasks: int
    curve: list  # [(seconds, accuracy)] sampled over training; one point for poe
    total_seconds: float
    best_accuracy: float

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "query": self.query,
            "n_tasks": self.n_tasks,
            "curve": [[float(s), float(a)] for s, a in self.curve],
            "total_seconds": float(self.total_seconds),
            "best_accuracy": float(self.best_accuracy),
        }


def curve_from_history(history: Sequence[dict]) -> list:
    return [(h["seconds"], h.get("eval_acc", h.get("train_acc", 0.0))) for h in history]


def timing_result(method: str, query: CompositeQuery, curve: list, total_seconds: float) -> TimingResult:
    if any(b[0] < a[0] for a, b in zip(curve, curve[1:])):
        raise EvalError("timing curve must be monotone in wall-clock time")
    best = max((a for _, a in curve), default=0.0)
    return TimingResult(
        method=method,
        query="+".join(query.task_ids),
        n_tasks=query.n,
        curve=curve,
        total_seconds=total_seconds,
        best_accuracy=best,
    )
