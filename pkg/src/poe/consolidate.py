"""Train-free knowledge consolidation: the expert pool, logit-concatenation
assembly of task-specific models, and storage-volume accounting.

Assembly never touches an optimizer or gradient buffer; it only arranges
already-trained weights into a branched model, so a pool can serve any of the
2^n task combinations while storing n experts plus one library.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from . import tensor as T
from .distill import ExpertRecord
from .nets import BranchedModel, LibraryNet, count_flops, count_params
from .tasks import CompositeQuery, TaskError, TaskUniverse
from .tensor import Tensor


class ConsolidateError(ValueError):
    """Invalid pool or query."""


class UnknownTaskError(ConsolidateError):
    """Query names a task the pool does not hold."""


class PoolIntegrityError(ConsolidateError):
    """Pool contents are mutually inconsistent (e.g. library digest mismatch)."""


@dataclass
class ExpertPool:
    """Immutable-after-load collection: one library plus per-task expert heads."""

    universe: TaskUniverse
    library: LibraryNet
    library_digest: str
    experts: Dict[str, ExpertRecord]
    hyperparams: dict
    library_bytes: int = 0
    meta: dict = field(default_factory=dict)

    def validate(self) -> None:
        for tid, rec in self.experts.items():
            task = self.universe.task(tid)
            if rec.head.num_classes != len(task):
                raise PoolIntegrityError(
                    f"expert {tid!r} emits {rec.head.num_classes} logits for a {len(task)}-class task"
                )
            if rec.library_digest != self.library_digest:
                raise PoolIntegrityError(f"expert {tid!r} references a different library")

    def task_ids(self) -> list:
        return list(self.experts.keys())

    @property
    def input_shape(self) -> tuple:
        return tuple(self.hyperparams.get("input_shape", self.library.arch.input_shape))


@dataclass
class TaskModel:
    """Assembled branched model answering one composite query."""

    model: BranchedModel
    query: CompositeQuery
    class_map: list  # unified logit position -> global class index
    params: int
    flops: int
    assembly_seconds: float

    def class_names(self, universe: TaskUniverse) -> list:
        return [universe.classes[c] for c in self.class_map]


def assemble(pool: ExpertPool, query: CompositeQuery) -> TaskModel:
    """Compose the queried experts onto the shared library. Pure function of
    (pool bytes, query): no training, no gradient buffers, deterministic."""
    t0 = time.perf_counter()
    for tid in query.task_ids:
        if tid not in pool.experts:
            raise UnknownTaskError(f"unknown task id {tid!r}")
        if pool.experts[tid].library_digest != pool.library_digest:
            raise PoolIntegrityError(f"expert {tid!r} was built against a different library")
    class_map = query.union_indices(pool.universe)
    branches = [(tid, pool.experts[tid].head) for tid in query.task_ids]
    model = BranchedModel(pool.library, branches, class_map)
    params = count_params(model)
    flops = count_flops(model, pool.input_shape)
    return TaskModel(
        model=model,
        query=query,
        class_map=list(class_map),
        params=params,
        flops=flops,
        assembly_seconds=time.perf_counter() - t0,
    )


def concat_logits(sublogits: Sequence[Tensor]) -> Tensor:
    """Order-preserving concatenation of 1-D logit vectors; no rescaling,
    recentering, or renormalization of any kind."""
    if len(sublogits) == 0:
        raise ConsolidateError("nothing to concatenate")
    for s in sublogits:
        if s.ndim != 1 or s.size == 0:
            raise ConsolidateError("sub-logits must be nonempty 1-D vectors")
    return T.concat(list(sublogits), axis=0)


# --------------------------------------------------------------------------
# volume accounting
# --------------------------------------------------------------------------

_BINARY_UNITS = (("TiB", 1024**4), ("GiB", 1024**3), ("MiB", 1024**2), ("KiB", 1024.0))
_DECIMAL_UNITS = (("TB", 1e12), ("GB", 1e9), ("MB", 1e6), ("KB", 1e3))


def _format(value: float, units) -> str:
    for name, scale in units:
        if value >= scale:
            return f"{value / scale:.2f} {name}"
    return f"{value:.0f} B"


def format_bytes_binary(value: float) -> str:
    return _format(float(value), _BINARY_UNITS)


def format_bytes_decimal(value: float) -> str:
    return _format(float(value), _DECIMAL_UNITS)


def exhaustive_estimate(n_primitives: int, min_expert_bytes: float) -> float:
    """Lower bound on storing every one of the 2^n specialized models, assuming
    each is no smaller than the smallest expert."""
    return float(2**n_primitives) * float(min_expert_bytes)


@dataclass
class VolumeReport:
    library_bytes: int
    per_expert_bytes: Dict[str, int]
    pool_total_bytes: int
    n_primitives: int
    exhaustive_estimate_bytes: float

    def to_dict(self) -> dict:
        return {
            "library_bytes": self.library_bytes,
            "per_expert_bytes": dict(self.per_expert_bytes),
            "pool_total_bytes": self.pool_total_bytes,
            "n_primitives": self.n_primitives,
            "exhaustive_estimate_bytes": self.exhaustive_estimate_bytes,
            "pool_total": {
                "binary": format_bytes_binary(self.pool_total_bytes),
                "decimal": format_bytes_decimal(self.pool_total_bytes),
            },
            "exhaustive_estimate": {
                "binary": format_bytes_binary(self.exhaustive_estimate_bytes),
                "decimal": format_bytes_decimal(self.exhaustive_estimate_bytes),
            },
        }


def pool_volume(pool: ExpertPool) -> VolumeReport:
    """Byte accounting over a serialized pool (sizes come from the artifacts)."""
    if pool.library_bytes <= 0 or any(rec.byte_size <= 0 for rec in pool.experts.values()):
        raise ConsolidateError("pool has not been serialized; byte sizes unknown")
    per = {tid: int(rec.byte_size) for tid, rec in pool.experts.items()}
    total = int(pool.library_bytes) + sum(per.values())
    return VolumeReport(
        library_bytes=int(pool.library_bytes),
        per_expert_bytes=per,
        pool_total_bytes=total,
        n_primitives=len(pool.experts),
        exhaustive_estimate_bytes=exhaustive_estimate(len(pool.experts), min(per.values())),
    )
