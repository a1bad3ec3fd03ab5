"""Desk-scale experiment pipeline over the synthetic glyph benchmark.

One `DeskConfig` pins dataset, architectures, and schedules; the functions
here train the oracle, extract the library and expert pools, run the
specialization baselines, and evaluate consolidation quality and timing.
CIFAR experiments use the same machinery through the CLI by swapping the
dataset bundle and universe.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .consolidate import ExpertPool, assemble
from .datasets import DataBundle, SyntheticSpec, generate_synthetic, synthetic_universe, task_view
from .distill import (
    DistillConfig,
    ExpertRecord,
    TrainResult,
    distill_library,
    extract_expert,
    train_baseline,
    train_oracle,
)
from .evalsuite import (
    ConfidenceHistogram,
    EvalReport,
    TimingResult,
    confidence_histogram,
    consolidated_accuracy,
    curve_from_history,
    make_report,
    task_specific_accuracy,
    timing_result,
)
from .nets import ArchConfig, count_flops, count_params
from .tasks import CompositeQuery, TaskUniverse, union_task
from .tensor import rng_for


@dataclass(frozen=True)
class DeskConfig:
    """Knobs for a complete desk-scale run (minutes of CPU per seed)."""

    seed: int = 0
    image_size: int = 12
    num_classes: int = 24
    num_primitives: int = 6
    per_class_train: int = 50
    per_class_eval: int = 40
    oracle_depth: int = 10
    oracle_widen: float = 2.0
    student_depth: int = 10
    student_widen: float = 1.0
    expert_widen: float = 0.25
    oracle_epochs: int = 15
    library_epochs: int = 20
    expert_epochs: int = 20
    baseline_epochs: int = 25
    ce_learning_rate: float = 0.1
    kd_learning_rate: float = 0.4  # KD losses carry no T^2 factor; lr compensates
    temperature: float = 4.0
    alpha: float = 0.3
    batch_size: int = 128

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            seed=self.seed,
            num_classes=self.num_classes,
            per_class_train=self.per_class_train,
            per_class_eval=self.per_class_eval,
            image_size=self.image_size,
            num_primitives=self.num_primitives,
        )

    def input_shape(self) -> tuple:
        return (3, self.image_size, self.image_size)

    def oracle_arch(self) -> ArchConfig:
        return ArchConfig(self.oracle_depth, self.oracle_widen, self.oracle_widen,
                          self.num_classes, self.input_shape())

    def student_arch(self) -> ArchConfig:
        return ArchConfig(self.student_depth, self.student_widen, self.student_widen,
                          self.num_classes, self.input_shape())

    def phase(self, epochs: int, lr: float, loss_mode: str = "ckd") -> DistillConfig:
        return DistillConfig(
            temperature=self.temperature,
            alpha=self.alpha,
            epochs=epochs,
            batch_size=self.batch_size,
            learning_rate=lr,
            seed=self.seed,
            loss_mode=loss_mode,
        )


@dataclass
class Preprocessed:
    """Everything the preprocessing phase produces for one seed."""

    desk: DeskConfig
    dataset: DataBundle
    universe: TaskUniverse
    oracle: object
    oracle_history: list
    split: object
    student_history: list
    pools: Dict[str, ExpertPool]  # loss_mode -> pool ("ckd" always present)
    expert_histories: Dict[str, Dict[str, list]] = field(default_factory=dict)
    seconds: Dict[str, float] = field(default_factory=dict)


def _build_pool(desk: DeskConfig, universe: TaskUniverse, split, records: Dict[str, ExpertRecord],
                loss_mode: str) -> ExpertPool:
    return ExpertPool(
        universe=universe,
        library=split.library,
        library_digest=split.library.digest(),
        experts=records,
        hyperparams={
            "temperature": desk.temperature,
            "alpha": desk.alpha if loss_mode != "soft" else 0.0,
            "loss_mode": loss_mode,
            "arch": split.library.arch.to_dict(),
            "head": split.head_template.to_dict(),
            "expert_widen": desk.expert_widen,
            "input_shape": list(desk.input_shape()),
        },
    )


def run_preprocessing(desk: DeskConfig, dataset: Optional[DataBundle] = None,
                      universe: Optional[TaskUniverse] = None,
                      loss_modes: Sequence[str] = ("ckd",)) -> Preprocessed:
    """Train oracle, distill the library, and extract one pool per loss mode."""
    if dataset is None:
        dataset = generate_synthetic(desk.synthetic_spec())
        universe = synthetic_universe(desk.synthetic_spec())
    assert universe is not None

    t0 = time.perf_counter()
    oracle_res = train_oracle(dataset, desk.oracle_arch(), desk.phase(desk.oracle_epochs, desk.ce_learning_rate))
    t_oracle = time.perf_counter() - t0

    t0 = time.perf_counter()
    split, student_res = distill_library(
        oracle_res.model, desk.student_arch(), dataset,
        desk.phase(desk.library_epochs, desk.kd_learning_rate),
    )
    t_library = time.perf_counter() - t0

    pools: Dict[str, ExpertPool] = {}
    expert_histories: Dict[str, Dict[str, list]] = {}
    t0 = time.perf_counter()
    for mode in loss_modes:
        cfg = desk.phase(desk.expert_epochs, desk.kd_learning_rate, loss_mode=mode)
        records: Dict[str, ExpertRecord] = {}
        histories: Dict[str, list] = {}
        for task in universe.primitives:
            rec, res = extract_expert(oracle_res.model, split, task, dataset, cfg,
                                      widen_special=desk.expert_widen)
            records[task.id] = rec
            histories[task.id] = res.history
        pools[mode] = _build_pool(desk, universe, split, records, mode)
        expert_histories[mode] = histories
    t_experts = time.perf_counter() - t0

    return Preprocessed(
        desk=desk,
        dataset=dataset,
        universe=universe,
        oracle=oracle_res.model,
        oracle_history=oracle_res.history,
        split=split,
        student_history=student_res.history,
        pools=pools,
        expert_histories=expert_histories,
        seconds={"oracle": t_oracle, "library": t_library, "experts": t_experts},
    )


# --------------------------------------------------------------------------
# specialization comparison (per-primitive-task accuracy)
# --------------------------------------------------------------------------

@dataclass
class SpecializationTable:
    per_method: Dict[str, EvalReport]
    baseline_models: Dict[str, dict] = field(default_factory=dict)

    def mean(self, method: str) -> float:
        return self.per_method[method].mean_accuracy


def run_specialization(pre: Preprocessed) -> SpecializationTable:
    """Per-task accuracy of oracle, generic KD, scratch, transfer, and the
    pool's CKD experts (specialized models use plain accuracy, generic models
    task-specific accuracy)."""
    desk, ds, uni = pre.desk, pre.dataset, pre.universe
    per: Dict[str, Dict[str, float]] = {m: {} for m in ("oracle", "kd", "scratch", "transfer", "ckd")}
    models: Dict[str, dict] = {"scratch": {}, "transfer": {}, "kd": {}}

    kd_cfg = desk.phase(desk.baseline_epochs, desk.kd_learning_rate)
    kd_res = train_baseline("kd", None, ds, kd_cfg, arch=desk.student_arch(),
                            oracle=pre.oracle, widen_special=desk.expert_widen)
    models["kd"]["generic"] = kd_res

    ce_cfg = desk.phase(desk.baseline_epochs, desk.ce_learning_rate)
    for task in uni.primitives:
        idx = list(task.class_indices)
        per["oracle"][task.id] = task_specific_accuracy(pre.oracle, ds.eval_x, ds.eval_y, idx)
        per["kd"][task.id] = task_specific_accuracy(kd_res.model, ds.eval_x, ds.eval_y, idx)

        scratch = train_baseline("scratch", task, ds, ce_cfg, arch=desk.student_arch(),
                                 widen_special=desk.expert_widen)
        models["scratch"][task.id] = scratch
        view = task_view(ds, idx)
        per["scratch"][task.id] = float(
            (predict_local(scratch.model, view.eval_x) == view.eval_y).mean()
        )

        transfer = train_baseline("transfer", task, ds, ce_cfg, split=pre.split,
                                  widen_special=desk.expert_widen)
        models["transfer"][task.id] = transfer
        per["transfer"][task.id] = transfer.history[-1]["eval_acc"]

        ckd_head = pre.pools["ckd"].experts[task.id].head
        feats = pre.split.library.forward(view.eval_x)
        per["ckd"][task.id] = float((ckd_head.forward(feats).data.argmax(axis=1) == view.eval_y).mean())

    reports = {m: make_report(m, accs) for m, accs in per.items()}
    return SpecializationTable(per_method=reports, baseline_models=models)


def predict_local(model, x: np.ndarray) -> np.ndarray:
    from .nets import predict_logits

    return predict_logits(model, x).argmax(axis=1)


# --------------------------------------------------------------------------
# out-of-distribution confidence
# --------------------------------------------------------------------------

def ood_histograms(pre: Preprocessed, table: SpecializationTable) -> Dict[str, Dict[str, ConfidenceHistogram]]:
    """Max-confidence histograms of each specialized model over eval images
    whose labels lie outside its task (within the restricted universe)."""
    ds, uni = pre.dataset, pre.universe
    out: Dict[str, Dict[str, ConfidenceHistogram]] = {"scratch": {}, "transfer": {}, "ckd": {}}
    for task in uni.primitives:
        ood_mask = ~np.isin(ds.eval_y, task.class_indices)
        samples = ds.eval_x[ood_mask]
        scratch_model = table.baseline_models["scratch"][task.id].model
        out["scratch"][task.id] = confidence_histogram(scratch_model, samples, "out-of-distribution")

        lib = pre.split.library

        class _Composed:
            def __init__(self, head):
                self.head = head

            def forward(self, x, training=False):
                return self.head.forward(lib.forward(x), training)

        transfer_head = table.baseline_models["transfer"][task.id].model
        out["transfer"][task.id] = confidence_histogram(_Composed(transfer_head), samples, "out-of-distribution")
        ckd_head = pre.pools["ckd"].experts[task.id].head
        out["ckd"][task.id] = confidence_histogram(_Composed(ckd_head), samples, "out-of-distribution")
    return out


def histogram_mode_bins(hists: Dict[str, Dict[str, ConfidenceHistogram]]) -> Dict[str, float]:
    """Mean mode bin per method across tasks (lower = less overconfident)."""
    return {m: float(np.mean([h.mode_bin() for h in per.values()])) for m, per in hists.items()}


# --------------------------------------------------------------------------
# consolidation: composite queries
# --------------------------------------------------------------------------

def sample_queries(universe: TaskUniverse, n: int, limit: int, seed: int) -> List[CompositeQuery]:
    """Up to `limit` deterministic combinations of n primitive tasks."""
    ids = universe.task_ids()
    combos = list(itertools.combinations(ids, n))
    rng = rng_for(seed, "query-combos", n)
    if len(combos) > limit:
        pick = rng.choice(len(combos), size=limit, replace=False)
        combos = [combos[i] for i in sorted(pick)]
    return [CompositeQuery(c) for c in combos]


def poe_accuracy(pre: Preprocessed, queries: Sequence[CompositeQuery], mode: str = "ckd") -> Dict[str, float]:
    pool = pre.pools[mode]
    return {"+".join(q.task_ids): consolidated_accuracy(pool, q, pre.dataset) for q in queries}


def joint_ckd_accuracy(pre: Preprocessed, queries: Sequence[CompositeQuery]) -> Dict[str, float]:
    """CKD model trained jointly on each composite task (the trained upper
    baseline for consolidation): one head of width 0.25*n(Q) per query."""
    desk = pre.desk
    out: Dict[str, float] = {}
    for q in queries:
        task = union_task(pre.universe, q)
        cfg = desk.phase(desk.expert_epochs, desk.kd_learning_rate)
        rec, _ = extract_expert(pre.oracle, pre.split, task, pre.dataset, cfg,
                                widen_special=desk.expert_widen * q.n)
        view = task_view(pre.dataset, task.class_indices)
        feats = pre.split.library.forward(view.eval_x)
        acc = float((rec.head.forward(feats).data.argmax(axis=1) == view.eval_y).mean())
        out["+".join(q.task_ids)] = acc
    return out


# --------------------------------------------------------------------------
# timing: train-per-query methods vs train-free assembly
# --------------------------------------------------------------------------

def timing_suite(pre: Preprocessed, ns: Sequence[int] = (2, 4, 6),
                 include: Sequence[str] = ("scratch", "transfer", "ckd-joint", "poe")) -> List[TimingResult]:
    """Wall-clock comparison of building M(Q) by training vs by assembly.
    Training methods follow the per-query protocol (joint architecture with a
    0.25*n(Q) head); assembly reuses the prebuilt pool."""
    desk = pre.desk
    results: List[TimingResult] = []
    for n in ns:
        queries = sample_queries(pre.universe, n, limit=1, seed=desk.seed)
        q = queries[0]
        task = union_task(pre.universe, q)
        widen = desk.expert_widen * q.n

        if "scratch" in include:
            t0 = time.perf_counter()
            res = train_baseline("scratch", task, pre.dataset,
                                 desk.phase(desk.baseline_epochs, desk.ce_learning_rate),
                                 arch=desk.student_arch(), widen_special=widen)
            results.append(timing_result("scratch", q, curve_from_history(res.history),
                                         time.perf_counter() - t0))
        if "transfer" in include:
            t0 = time.perf_counter()
            res = train_baseline("transfer", task, pre.dataset,
                                 desk.phase(desk.baseline_epochs, desk.ce_learning_rate),
                                 split=pre.split, widen_special=widen)
            results.append(timing_result("transfer", q, curve_from_history(res.history),
                                         time.perf_counter() - t0))
        if "ckd-joint" in include:
            t0 = time.perf_counter()
            cfg = desk.phase(desk.expert_epochs, desk.kd_learning_rate)
            _, res = extract_expert(pre.oracle, pre.split, task, pre.dataset, cfg, widen_special=widen)
            results.append(timing_result("ckd-joint", q, curve_from_history(res.history),
                                         time.perf_counter() - t0))
        if "poe" in include:
            from .artifact import artifact_bytes

            pool = pre.pools["ckd"]
            t0 = time.perf_counter()
            tm = assemble(pool, q)
            artifact_bytes(tm.model, "task-model")
            build_s = time.perf_counter() - t0
            acc = consolidated_accuracy(pool, q, pre.dataset)
            results.append(timing_result("poe", q, [(build_s, acc)], build_s))
    return results
