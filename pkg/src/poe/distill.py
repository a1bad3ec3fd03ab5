"""Training procedures: oracle training on hard labels, library extraction by
standard knowledge distillation, expert extraction by conditional KD against
a frozen library, and the scratch/transfer/generic-KD baselines.

Teacher outputs always come from the oracle in eval mode, so they are
deterministic for a fixed oracle; they may therefore be computed once and
cached instead of recomputed per batch (identical values either way).
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .datasets import DataBundle, task_view
from .losses import loss_ckd, loss_kd, loss_scale, loss_soft
from .nets import (
    ArchConfig,
    BlockNet,
    HeadNet,
    LibrarySplit,
    build_blocknet,
    build_head,
    predict_logits,
    split_library,
)
from .tasks import PrimitiveTask
from .tensor import GradTape, SgdConfig, Tensor, TensorError, rng_for


class DistillError(ValueError):
    """Invalid training configuration or inputs."""


LOSS_MODES = ("ckd", "soft", "scale")


@dataclass(frozen=True)
class DistillConfig:
    """Distillation hyperparameters plus the training schedule."""

    temperature: float = 4.0
    alpha: float = 0.3
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 0.1
    lr_decay: float = 0.2
    decay_milestones: tuple = (0.5, 0.75)
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    loss_mode: str = "ckd"  # "soft" drops the scale term, "scale" the soft term
    cache_teacher: bool = True

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise DistillError("temperature must be > 0")
        if self.alpha < 0:
            raise DistillError("alpha must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise DistillError("epochs and batch_size must be >= 1")
        if self.loss_mode not in LOSS_MODES:
            raise DistillError(f"loss_mode must be one of {LOSS_MODES}")

    def sgd(self, lr: Optional[float] = None) -> SgdConfig:
        return SgdConfig(self.learning_rate if lr is None else lr, self.momentum, self.weight_decay)

    def lr_at(self, epoch: int) -> float:
        lr = self.learning_rate
        for frac in self.decay_milestones:
            if epoch >= int(frac * self.epochs):
                lr *= self.lr_decay
        return lr

    def digest(self) -> str:
        blob = json.dumps(
            {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()},
            sort_keys=True,
        ).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_overrides(self, **kw) -> "DistillConfig":
        return replace(self, **kw)


@dataclass
class ExpertRecord:
    """A trained per-task head plus the provenance needed to compose it."""

    task_id: str
    head: HeadNet
    library_digest: str
    provenance: str  # DistillConfig digest
    byte_size: int = 0
    artifact_digest: str = ""

    def __post_init__(self) -> None:
        if self.head.num_classes < 1:
            raise DistillError("expert head must emit at least one logit")


@dataclass
class TrainResult:
    model: object
    history: list  # per-epoch {epoch, lr, loss, train_acc, eval_acc, seconds}


class _Loop:
    """Shared minibatch loop: shuffled epochs, milestone lr decay, momentum SGD."""

    def __init__(self, params: Sequence[Tensor], cfg: DistillConfig, tag: str):
        self.params = list(params)
        self.velocity = [np.zeros_like(p.data) for p in self.params]
        self.cfg = cfg
        self.tag = tag

    def run(self, n: int, batch_fn, eval_fn=None) -> list:
        cfg = self.cfg
        history = []
        t0 = time.perf_counter()
        for epoch in range(cfg.epochs):
            lr = cfg.lr_at(epoch)
            order = rng_for(cfg.seed, self.tag, "shuffle", epoch).permutation(n)
            losses = []
            correct = 0
            for lo in range(0, n, cfg.batch_size):
                idx = order[lo : lo + cfg.batch_size]
                with GradTape() as tape:
                    loss, n_correct = batch_fn(idx)
                tape.backward(loss)
                grads = []
                for p in self.params:
                    grads.append(p.grad if p.grad is not None else np.zeros_like(p.data))
                T.sgd_step(self.params, grads, SgdConfig(lr, cfg.momentum, cfg.weight_decay), self.velocity)
                for p in self.params:
                    p.grad = None
                losses.append(loss.item())
                correct += n_correct
            entry = {
                "epoch": epoch,
                "lr": lr,
                "loss": float(np.mean(losses)),
                "train_acc": correct / n,
                "seconds": time.perf_counter() - t0,
            }
            if eval_fn is not None:
                entry["eval_acc"] = eval_fn()
            history.append(entry)
        return history


def _check_labels(ds: DataBundle, num_classes: int) -> None:
    if len(ds.train_y) == 0:
        raise DistillError("empty training set")
    if ds.train_y.min() < 0 or ds.train_y.max() >= num_classes:
        raise DistillError(f"label out of range for {num_classes} classes")


def _plain_accuracy(model, x, y, batch_size=512) -> float:
    logits = predict_logits(model, x, batch_size=batch_size)
    return float((logits.argmax(axis=1) == y).mean())


def train_oracle(dataset: DataBundle, arch: ArchConfig, cfg: DistillConfig) -> TrainResult:
    """Cross-entropy training of the full generic model from scratch."""
    if arch.num_classes != dataset.num_classes:
        raise DistillError("oracle arch num_classes must match the dataset")
    _check_labels(dataset, arch.num_classes)
    model = build_blocknet(arch, cfg.seed)
    x, y = dataset.train_x, dataset.train_y

    def batch(idx):
        logits = model.forward(x[idx], training=True)
        loss = T.cross_entropy(logits, y[idx])
        return loss, int((logits.data.argmax(axis=1) == y[idx]).sum())

    loop = _Loop(model.params(), cfg, "oracle")
    history = loop.run(len(y), batch, eval_fn=lambda: _plain_accuracy(model, dataset.eval_x, dataset.eval_y))
    return TrainResult(model, history)


def _teacher_logits(oracle: BlockNet, x: np.ndarray, cfg: DistillConfig, batch_size: int = 512):
    """Oracle logits in eval mode; cached up front when allowed."""
    if cfg.cache_teacher:
        cached = predict_logits(oracle, x, batch_size=batch_size)
        return lambda idx: cached[idx]
    return lambda idx: predict_logits(oracle, x[idx], batch_size=batch_size)


def distill_library(oracle: BlockNet, student_arch: ArchConfig, dataset: DataBundle,
                    cfg: DistillConfig) -> tuple:
    """Standard KD from the oracle into a smaller generic student over all
    training inputs (labels unused), then split off conv1..conv3 as library.

    Returns (LibrarySplit, TrainResult for the full student)."""
    if student_arch.num_classes != dataset.num_classes:
        raise DistillError("student must cover the full class set")
    if oracle.cfg.num_classes != dataset.num_classes:
        raise DistillError("oracle class count does not match the dataset")
    student = build_blocknet(student_arch, cfg.seed)
    x = dataset.train_x
    teacher = _teacher_logits(oracle, x, cfg)

    def batch(idx):
        t_logits = teacher(idx)
        s_logits = student.forward(x[idx], training=True)
        loss = loss_kd(Tensor(t_logits), s_logits, cfg.temperature)
        return loss, int((s_logits.data.argmax(axis=1) == dataset.train_y[idx]).sum())

    loop = _Loop(student.params(), cfg, "distill-library")
    history = loop.run(len(x), batch, eval_fn=lambda: _plain_accuracy(student, dataset.eval_x, dataset.eval_y))
    return split_library(student), TrainResult(student, history)


def library_features(library, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Frozen-library forward (eval mode) over a whole array, batched."""
    parts = []
    for lo in range(0, len(x), batch_size):
        parts.append(library.forward(x[lo : lo + batch_size]).data)
    return np.concatenate(parts, axis=0)


def _expert_loss(t_logits: np.ndarray, s_logits: Tensor, task: PrimitiveTask, cfg: DistillConfig):
    t = Tensor(t_logits)
    if cfg.loss_mode == "ckd":
        return loss_ckd(t, s_logits, task, cfg.temperature, cfg.alpha)
    if cfg.loss_mode == "soft":
        return loss_soft(t, s_logits, task, cfg.temperature)
    return loss_scale(t, s_logits, task)


def extract_expert(oracle: BlockNet, split: LibrarySplit, task: PrimitiveTask,
                   dataset: DataBundle, cfg: DistillConfig,
                   widen_special: float = 0.25) -> tuple:
    """Train a fresh head on ALL training inputs against the oracle's sub-logit
    for `task`, with the library frozen (bit-identical before and after).

    Returns (ExpertRecord, TrainResult)."""
    library = split.library
    lib_digest_before = library.digest()
    head = build_head(split.head_template, seed=cfg.seed, num_classes=len(task),
                      widen_special=widen_special)
    x = dataset.train_x
    teacher = _teacher_logits(oracle, x, cfg)
    feats = library_features(library, x)  # frozen + eval mode => cacheable

    local = {g: l for l, g in enumerate(task.class_indices)}
    ev = task_view(dataset, task.class_indices)
    ev_feats = library_features(library, ev.eval_x)

    def batch(idx):
        t_logits = teacher(idx)
        s_logits = head.forward(Tensor(feats[idx]), training=True)
        loss = _expert_loss(t_logits, s_logits, task, cfg)
        # accuracy only over samples whose label lies inside the task
        labels = dataset.train_y[idx]
        mask = np.isin(labels, task.class_indices)
        if mask.any():
            pred = s_logits.data[mask].argmax(axis=1)
            want = np.array([local[int(g)] for g in labels[mask]])
            n_correct = int((pred == want).sum())
        else:
            n_correct = 0
        return loss, n_correct

    def eval_acc():
        logits = head.forward(Tensor(ev_feats)).data
        return float((logits.argmax(axis=1) == ev.eval_y).mean())

    loop = _Loop(head.params(), cfg, f"expert-{task.id}")
    history = loop.run(len(x), batch, eval_fn=eval_acc)
    # in-task accuracy is the meaningful number for the log
    in_task = np.isin(dataset.train_y, task.class_indices).sum()
    for h in history:
        h["train_acc"] = h["train_acc"] * len(x) / max(int(in_task), 1)

    if library.digest() != lib_digest_before:
        raise DistillError("library changed during expert extraction")
    record = ExpertRecord(task.id, head, lib_digest_before, cfg.digest())
    return record, TrainResult(head, history)


def train_baseline(kind: str, task: Optional[PrimitiveTask], dataset: DataBundle,
                   cfg: DistillConfig, arch: Optional[ArchConfig] = None,
                   split: Optional[LibrarySplit] = None, oracle: Optional[BlockNet] = None,
                   widen_special: float = 0.25) -> TrainResult:
    """Reference specialization methods.

    scratch:  full small net, cross-entropy, task samples only
    transfer: frozen library + fresh head, cross-entropy, task samples only
    kd:       full small net, standard KD from the oracle, all samples (generic)
    """
    if kind == "scratch":
        if arch is None or task is None:
            raise DistillError("scratch needs an architecture and a task")
        view = task_view(dataset, task.class_indices)
        if view.num_classes == 1:
            raise DistillError("degenerate single-class task: accuracy would be 1.0 by construction")
        model = build_blocknet(
            ArchConfig(arch.depth, arch.widen_common, widen_special, view.num_classes, arch.input_shape),
            cfg.seed,
        )
        _check_labels(view, view.num_classes)

        def batch(idx):
            logits = model.forward(view.train_x[idx], training=True)
            return T.cross_entropy(logits, view.train_y[idx]), int(
                (logits.data.argmax(axis=1) == view.train_y[idx]).sum()
            )

        loop = _Loop(model.params(), cfg, f"scratch-{task.id}")
        history = loop.run(len(view.train_y), batch,
                           eval_fn=lambda: _plain_accuracy(model, view.eval_x, view.eval_y))
        return TrainResult(model, history)

    if kind == "transfer":
        if split is None or task is None:
            raise DistillError("transfer requires a library")
        lib_digest_before = split.library.digest()
        view = task_view(dataset, task.class_indices)
        _check_labels(view, view.num_classes)
        head = build_head(split.head_template, seed=cfg.seed, num_classes=view.num_classes,
                          widen_special=widen_special)
        feats = library_features(split.library, view.train_x)
        ev_feats = library_features(split.library, view.eval_x)

        def batch(idx):
            logits = head.forward(Tensor(feats[idx]), training=True)
            return T.cross_entropy(logits, view.train_y[idx]), int(
                (logits.data.argmax(axis=1) == view.train_y[idx]).sum()
            )

        def eval_acc():
            return float((head.forward(Tensor(ev_feats)).data.argmax(axis=1) == view.eval_y).mean())

        loop = _Loop(head.params(), cfg, f"transfer-{task.id}")
        history = loop.run(len(view.train_y), batch, eval_fn=eval_acc)
        if split.library.digest() != lib_digest_before:
            raise DistillError("library changed during transfer training")
        return TrainResult(head, history)

    if kind == "kd":
        if arch is None or oracle is None:
            raise DistillError("kd needs the oracle and a target architecture")
        student = build_blocknet(
            ArchConfig(arch.depth, arch.widen_common, widen_special, dataset.num_classes, arch.input_shape),
            cfg.seed,
        )
        x = dataset.train_x
        teacher = _teacher_logits(oracle, x, cfg)

        def batch(idx):
            s_logits = student.forward(x[idx], training=True)
            loss = loss_kd(Tensor(teacher(idx)), s_logits, cfg.temperature)
            return loss, int((s_logits.data.argmax(axis=1) == dataset.train_y[idx]).sum())

        loop = _Loop(student.params(), cfg, "kd-generic")
        history = loop.run(len(x), batch,
                           eval_fn=lambda: _plain_accuracy(student, dataset.eval_x, dataset.eval_y))
        return TrainResult(student, history)

    raise DistillError(f"unknown baseline kind {kind!r}")
