"""Dataset ingestion: CIFAR binary records and a deterministic synthetic
glyph generator, with per-channel normalization and class-subset restriction.

All loaders produce images as float32 in [0, 1], then normalize per channel
with constants computed from the training split; the constants travel with
the bundle so a serving process can reproduce the exact preprocessing.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .tasks import PrimitiveTask, TaskUniverse
from .tensor import rng_for


class DatasetError(ValueError):
    """Missing, truncated, or malformed dataset inputs."""


CIFAR100_RECORD = 3074  # coarse label, fine label, 3072 pixel bytes
CIFAR10_RECORD = 3073  # label, 3072 pixel bytes


@dataclass
class DataBundle:
    """Normalized train/eval splits plus the bookkeeping to undo/redo them."""

    train_x: np.ndarray  # (N, 3, H, W) float32, normalized
    train_y: np.ndarray  # (N,) int64, dense labels
    eval_x: np.ndarray
    eval_y: np.ndarray
    class_names: list
    norm_mean: np.ndarray  # per-channel, computed on the training split
    norm_std: np.ndarray
    label_map: list  # dense label -> original class index
    meta: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def image_shape(self) -> tuple:
        return tuple(self.train_x.shape[1:])

    def normalization(self) -> dict:
        return {"mean": [float(v) for v in self.norm_mean], "std": [float(v) for v in self.norm_std]}


def normalize_images(x: np.ndarray, mean: Sequence[float], std: Sequence[float]) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float32).reshape(1, -1, 1, 1)
    std = np.asarray(std, dtype=np.float32).reshape(1, -1, 1, 1)
    return (x - mean) / std


def _finalize(train_x, train_y, eval_x, eval_y, class_names, label_map, meta) -> DataBundle:
    mean = train_x.mean(axis=(0, 2, 3))
    std = np.maximum(train_x.std(axis=(0, 2, 3)), 1e-6)
    return DataBundle(
        train_x=normalize_images(train_x, mean, std),
        train_y=train_y.astype(np.int64),
        eval_x=normalize_images(eval_x, mean, std),
        eval_y=eval_y.astype(np.int64),
        class_names=list(class_names),
        norm_mean=mean.astype(np.float32),
        norm_std=std.astype(np.float32),
        label_map=list(label_map),
        meta=meta,
    )


def _apply_restriction(x, y, keep: Sequence[int]):
    keep = sorted(int(k) for k in keep)
    lut = {orig: dense for dense, orig in enumerate(keep)}
    mask = np.isin(y, keep)
    x = x[mask]
    y = np.array([lut[int(v)] for v in y[mask]], dtype=np.int64)
    return x, y, keep


# --------------------------------------------------------------------------
# CIFAR binary records
# --------------------------------------------------------------------------

def _read_records(path: str, record_len: int) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) == 0 or len(raw) % record_len != 0:
        raise DatasetError(f"{path}: truncated record file ({len(raw)} bytes, record {record_len})")
    return np.frombuffer(raw, dtype=np.uint8).reshape(-1, record_len)


def _decode_cifar(recs: np.ndarray, label_col: int) -> tuple:
    labels = recs[:, label_col].astype(np.int64)
    pixels = recs[:, label_col + 1 :].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return pixels, labels


def _cifar_files(root: str, variant: str, split: str) -> list:
    if variant == "cifar-100":
        return [os.path.join(root, "train.bin" if split == "train" else "test.bin")]
    if variant == "cifar-10":
        if split == "train":
            return [os.path.join(root, f"data_batch_{i}.bin") for i in range(1, 6)]
        return [os.path.join(root, "test_batch.bin")]
    raise DatasetError(f"unknown cifar variant {variant!r}")


def load_cifar(root: str, variant: str = "cifar-100", restriction: Optional[Sequence[int]] = None) -> DataBundle:
    record = CIFAR100_RECORD if variant == "cifar-100" else CIFAR10_RECORD
    label_col = 1 if variant == "cifar-100" else 0  # cifar-100: fine label after coarse

    splits = {}
    for split in ("train", "eval"):
        parts = [_read_records(p, record) for p in _cifar_files(root, variant, split)]
        recs = np.concatenate(parts, axis=0)
        splits[split] = _decode_cifar(recs, label_col)

    (train_x, train_y), (eval_x, eval_y) = splits["train"], splits["eval"]
    n_classes = 100 if variant == "cifar-100" else 10
    keep = list(range(n_classes))
    if restriction is not None:
        train_x, train_y, keep = _apply_restriction(train_x, train_y, restriction)
        eval_x, eval_y, _ = _apply_restriction(eval_x, eval_y, restriction)
        if len(train_y) == 0:
            raise DatasetError("restriction removed every training sample")
    names = [f"class{k:03d}" for k in keep]
    return _finalize(train_x, train_y, eval_x, eval_y, names, keep,
                     {"format": "cifar-binary", "variant": variant, "root": root})


def cifar100_superclass_classes(root: str, superclasses: Sequence[int]) -> list:
    """Fine-class indices belonging to the given coarse classes, from train.bin."""
    recs = _read_records(os.path.join(root, "train.bin"), CIFAR100_RECORD)
    coarse, fine = recs[:, 0].astype(int), recs[:, 1].astype(int)
    wanted = set(int(s) for s in superclasses)
    keep = sorted({f for c, f in zip(coarse, fine) if c in wanted})
    if not keep:
        raise DatasetError("no fine classes found for requested superclasses")
    return keep


def cifar100_universe(root: str, superclasses: Sequence[int]) -> tuple:
    """Task universe whose primitives are the chosen superclasses (restricted
    and densely relabeled); returns (universe, fine_class_restriction)."""
    recs = _read_records(os.path.join(root, "train.bin"), CIFAR100_RECORD)
    coarse, fine = recs[:, 0].astype(int), recs[:, 1].astype(int)
    chosen = [int(s) for s in superclasses]
    fine_by_coarse = {c: sorted({f for cc, f in zip(coarse, fine) if cc == c}) for c in chosen}
    keep = sorted(f for fs in fine_by_coarse.values() for f in fs)
    dense = {orig: i for i, orig in enumerate(keep)}
    prims = [
        PrimitiveTask(f"super{c:02d}", f"superclass-{c}", tuple(dense[f] for f in fine_by_coarse[c]))
        for c in chosen
    ]
    names = [f"class{k:03d}" for k in keep]
    return TaskUniverse(tuple(names), tuple(prims)), keep


# --------------------------------------------------------------------------
# synthetic glyph classes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Deterministic image classes built from a shared stroke dictionary.

    Classes inside one primitive group share a hue and two base strokes and
    differ only in a single distinguishing stroke, so telling them apart needs
    fine amplitude/shape evidence; groups differ in hue and base strokes.
    Distractor strokes from the same dictionary, translation jitter, and
    per-group pixel noise control the difficulty."""

    seed: int
    num_classes: int = 24
    per_class_train: int = 50
    per_class_eval: int = 40
    image_size: int = 12
    num_primitives: int = 6
    vocab_size: int = 10
    base_strokes: int = 2
    noise_levels: tuple = (0.20, 0.26, 0.32)  # cycled across primitive groups
    jitter: int = 2
    amp_jitter: float = 0.35  # class-stroke amplitude range around 1
    distractor_amp: float = 0.6
    distractors: int = 2

    def __post_init__(self) -> None:
        if self.num_classes < 1 or self.per_class_train < 1 or self.image_size < 8:
            raise DatasetError("invalid synthetic spec")
        if self.num_classes % self.num_primitives != 0:
            raise DatasetError("num_classes must divide evenly into primitives")
        per = self.num_classes // self.num_primitives
        if self.base_strokes + per > self.vocab_size:
            raise DatasetError("vocabulary too small for base plus distinguishing strokes")


def _stroke_mask(size: int, cx: float, cy: float, angle: float, length: float, width: float) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    ux, uy = math.cos(angle), math.sin(angle)
    along = dx * ux + dy * uy
    perp = -dx * uy + dy * ux
    m = np.exp(-0.5 * (perp / width) ** 2) * (np.abs(along) <= length / 2)
    return m.astype(np.float32)


def _palette(k: int) -> np.ndarray:
    h = (k * 0.618033988749895) % 1.0
    i = int(h * 6)
    f = h * 6 - i
    p, q, t = 0.15, 1.0 - 0.85 * f, 0.15 + 0.85 * f
    rgb = [(1, t, p), (q, 1, p), (p, 1, t), (p, q, 1), (t, p, 1), (1, p, q)][i % 6]
    return np.asarray(rgb, dtype=np.float32)


def _build_vocabulary(spec: SyntheticSpec) -> np.ndarray:
    """Stroke dictionary shared by all classes (the library-learnable part)."""
    rng = rng_for(spec.seed, "synthetic-vocab")
    s = spec.image_size
    masks = []
    for _ in range(spec.vocab_size):
        angle = (rng.integers(0, 8) / 8.0) * math.pi
        cx = rng.uniform(0.2 * s, 0.8 * s)
        cy = rng.uniform(0.2 * s, 0.8 * s)
        length = rng.uniform(0.5 * s, 0.85 * s)
        width = rng.uniform(0.7, 1.0)
        masks.append(_stroke_mask(s, cx, cy, angle, length, width))
    return np.stack(masks)


class _ClassModel:
    def __init__(self, spec: SyntheticSpec, vocab: np.ndarray, c: int):
        per = spec.num_classes // spec.num_primitives
        prim, slot = divmod(c, per)
        prim_rng = rng_for(spec.seed, "synthetic-primitive", prim)
        base = np.sort(prim_rng.choice(spec.vocab_size, size=spec.base_strokes, replace=False))
        remaining = np.array([k for k in range(spec.vocab_size) if k not in base])
        distinguishing = prim_rng.choice(remaining, size=per, replace=False)
        self.stroke_ids = np.concatenate([base, distinguishing[slot : slot + 1]])
        self.hue = _palette(prim)
        self.noise = spec.noise_levels[prim % len(spec.noise_levels)]
        self.vocab = vocab

    def sample(self, spec: SyntheticSpec, c: int, index: int) -> np.ndarray:
        rng = rng_for(spec.seed, "synthetic-sample", c, index)
        s = spec.image_size
        glyph = np.zeros((s, s), dtype=np.float32)
        for k in self.stroke_ids:
            glyph += rng.uniform(1.0 - spec.amp_jitter, 1.0 + spec.amp_jitter) * self.vocab[k]
        others = [k for k in range(spec.vocab_size) if k not in self.stroke_ids]
        for k in rng.choice(len(others), size=min(spec.distractors, len(others)), replace=False):
            glyph += rng.uniform(0.0, spec.distractor_amp) * self.vocab[others[int(k)]]
        dx, dy = rng.integers(-spec.jitter, spec.jitter + 1, size=2)
        glyph = np.roll(glyph, (int(dy), int(dx)), axis=(0, 1))
        img = np.empty((3, s, s), dtype=np.float32)
        img[:] = rng.uniform(0.15, 0.35)
        img += rng.uniform(0.55, 0.9) * glyph[None, :, :] * self.hue[:, None, None]
        img += rng.normal(0.0, self.noise, size=(3, s, s)).astype(np.float32)
        return np.clip(img, 0.0, 1.0)


def generate_synthetic(spec: SyntheticSpec) -> DataBundle:
    """Reproducible from the seed alone: identical specs give identical bytes."""
    vocab = _build_vocabulary(spec)
    models = [_ClassModel(spec, vocab, c) for c in range(spec.num_classes)]
    tr_x, tr_y, ev_x, ev_y = [], [], [], []
    for c, m in enumerate(models):
        for i in range(spec.per_class_train):
            tr_x.append(m.sample(spec, c, i))
            tr_y.append(c)
        for i in range(spec.per_class_eval):
            ev_x.append(m.sample(spec, c, spec.per_class_train + i))
            ev_y.append(c)
    names = [f"glyph{c:02d}" for c in range(spec.num_classes)]
    meta = {"format": "synthetic", "spec": {k: (list(v) if isinstance(v, tuple) else v) for k, v in spec.__dict__.items()}}
    return _finalize(
        np.stack(tr_x), np.asarray(tr_y), np.stack(ev_x), np.asarray(ev_y),
        names, list(range(spec.num_classes)), meta,
    )


def synthetic_universe(spec: SyntheticSpec) -> TaskUniverse:
    per = spec.num_classes // spec.num_primitives
    prims = tuple(
        PrimitiveTask(f"p{p}", f"glyph-group-{p}", tuple(range(p * per, (p + 1) * per)))
        for p in range(spec.num_primitives)
    )
    return TaskUniverse(tuple(f"glyph{c:02d}" for c in range(spec.num_classes)), prims)


# --------------------------------------------------------------------------
# task-restricted views (for scratch/transfer baselines)
# --------------------------------------------------------------------------

def task_view(bundle: DataBundle, class_indices: Sequence[int]) -> DataBundle:
    """The bundle filtered to the given dense classes, labels remapped to
    [0, len(classes)); normalization is inherited, not recomputed."""
    keep = sorted(int(k) for k in class_indices)
    lut = {orig: i for i, orig in enumerate(keep)}
    tm = np.isin(bundle.train_y, keep)
    em = np.isin(bundle.eval_y, keep)
    return DataBundle(
        train_x=bundle.train_x[tm],
        train_y=np.array([lut[int(v)] for v in bundle.train_y[tm]], dtype=np.int64),
        eval_x=bundle.eval_x[em],
        eval_y=np.array([lut[int(v)] for v in bundle.eval_y[em]], dtype=np.int64),
        class_names=[bundle.class_names[k] for k in keep],
        norm_mean=bundle.norm_mean,
        norm_std=bundle.norm_std,
        label_map=[bundle.label_map[k] for k in keep],
        meta={**bundle.meta, "restricted_to": keep},
    )
