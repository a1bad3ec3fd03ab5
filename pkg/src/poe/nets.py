"""Wide residual network family WRN-l-(k_c, k_s) with a fixed library/head split.

The stem and first three convolution groups (conv1..conv3) form the shared
"library"; the conv4 group plus final BN and linear classifier form a "head".
Branched models attach several heads to one library and concatenate their
logits into a single vector.

Activations are channels-last (N, H, W, C); model entry points accept images
as (N, C, H, W) float arrays and transpose once. Pre-activation residual
blocks (BN -> ReLU -> conv) with 1x1 projection shortcuts wherever channel
count or stride changes.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ArchError(ValueError):
    """Invalid architecture configuration."""


def _round_width(x: float) -> int:
    # round-half-up with floor 1, for fractional widening factors
    return max(1, int(math.floor(x + 0.5)))


@dataclass(frozen=True)
class ArchConfig:
    """WRN-depth-(k_c, k_s) over `num_classes` classes and a fixed input size."""

    depth: int
    widen_common: float
    widen_special: float
    num_classes: int
    input_shape: tuple = (3, 32, 32)  # (C, H, W)

    def __post_init__(self) -> None:
        object.__setattr__(self, "depth", int(self.depth))
        object.__setattr__(self, "widen_common", float(self.widen_common))
        object.__setattr__(self, "widen_special", float(self.widen_special))
        object.__setattr__(self, "num_classes", int(self.num_classes))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        if (self.depth - 4) % 6 != 0 or self.blocks_per_group < 1:
            raise ArchError(f"depth must be 6n+4 with n >= 1, got {self.depth}")
        if self.widen_common <= 0 or self.widen_special <= 0:
            raise ArchError("widening factors must be positive")
        if self.num_classes < 1:
            raise ArchError("num_classes must be >= 1")
        if len(self.input_shape) != 3 or any(d < 1 for d in self.input_shape):
            raise ArchError(f"bad input shape {self.input_shape}")

    @property
    def blocks_per_group(self) -> int:
        return (self.depth - 4) // 6

    @property
    def channels(self) -> tuple:
        return (
            16,
            _round_width(16 * self.widen_common),
            _round_width(32 * self.widen_common),
            _round_width(64 * self.widen_special),
        )

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "widen_common": self.widen_common,
            "widen_special": self.widen_special,
            "num_classes": self.num_classes,
            "input_shape": list(self.input_shape),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(
            depth=int(d["depth"]),
            widen_common=float(d["widen_common"]),
            widen_special=float(d["widen_special"]),
            num_classes=int(d["num_classes"]),
            input_shape=tuple(int(v) for v in d["input_shape"]),
        )


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------

class Conv2d:
    def __init__(self, cin: int, cout: int, k: int, stride: int, rng: Optional[np.random.Generator]):
        self.cin, self.cout, self.k, self.stride = cin, cout, k, stride
        if rng is None:
            w = np.zeros((k, k, cin, cout), dtype=np.float32)
        else:
            std = math.sqrt(2.0 / (k * k * cin))
            w = rng.normal(0.0, std, size=(k, k, cin, cout)).astype(np.float32)
        self.w = Tensor(w, requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.w, stride=self.stride)

    def params(self) -> list:
        return [self.w]

    def named_tensors(self, prefix: str) -> list:
        return [(prefix + "w", self.w.data)]

    def flops(self, h: int, w: int) -> tuple:
        p = 1 if self.k == 3 else 0
        oh = (h + 2 * p - self.k) // self.stride + 1
        ow = (w + 2 * p - self.k) // self.stride + 1
        return 2 * self.k * self.k * self.cin * self.cout * oh * ow, (oh, ow)

    def clone(self) -> "Conv2d":
        c = Conv2d(self.cin, self.cout, self.k, self.stride, rng=None)
        c.w = Tensor(self.w.data.copy(), requires_grad=True)
        return c


class BatchNorm2d:
    def __init__(self, c: int):
        self.c = c
        self.scale = Tensor(np.ones(c, dtype=np.float32), requires_grad=True)
        self.shift = Tensor(np.zeros(c, dtype=np.float32), requires_grad=True)
        self.running_mean = np.zeros(c, dtype=np.float32)
        self.running_var = np.ones(c, dtype=np.float32)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return T.batch_norm(x, self.scale, self.shift, self.running_mean, self.running_var, training)

    def params(self) -> list:
        return [self.scale, self.shift]

    def named_tensors(self, prefix: str) -> list:
        return [
            (prefix + "scale", self.scale.data),
            (prefix + "shift", self.shift.data),
            (prefix + "running_mean", self.running_mean),
            (prefix + "running_var", self.running_var),
        ]

    def clone(self) -> "BatchNorm2d":
        b = BatchNorm2d(self.c)
        b.scale = Tensor(self.scale.data.copy(), requires_grad=True)
        b.shift = Tensor(self.shift.data.copy(), requires_grad=True)
        b.running_mean = self.running_mean.copy()
        b.running_var = self.running_var.copy()
        return b


class Linear:
    def __init__(self, cin: int, cout: int, rng: Optional[np.random.Generator]):
        self.cin, self.cout = cin, cout
        if rng is None:
            w = np.zeros((cin, cout), dtype=np.float32)
        else:
            std = math.sqrt(2.0 / cin)
            w = rng.normal(0.0, std, size=(cin, cout)).astype(np.float32)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.bias_add(T.matmul(x, self.w), self.b)

    def params(self) -> list:
        return [self.w, self.b]

    def named_tensors(self, prefix: str) -> list:
        return [(prefix + "w", self.w.data), (prefix + "b", self.b.data)]

    def flops(self) -> int:
        return 2 * self.cin * self.cout

    def clone(self) -> "Linear":
        l = Linear(self.cin, self.cout, rng=None)
        l.w = Tensor(self.w.data.copy(), requires_grad=True)
        l.b = Tensor(self.b.data.copy(), requires_grad=True)
        return l


class PreActBlock:
    """BN -> ReLU -> 3x3 conv -> BN -> ReLU -> 3x3 conv, residual add.
    Projects the shortcut with a 1x1 conv when shape changes, applied to the
    shared pre-activation."""

    def __init__(self, cin: int, cout: int, stride: int, rng: Optional[np.random.Generator]):
        self.cin, self.cout, self.stride = cin, cout, stride
        self.bn1 = BatchNorm2d(cin)
        self.conv1 = Conv2d(cin, cout, 3, stride, rng)
        self.bn2 = BatchNorm2d(cout)
        self.conv2 = Conv2d(cout, cout, 3, 1, rng)
        self.shortcut = Conv2d(cin, cout, 1, stride, rng) if (cin != cout or stride != 1) else None

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        a = T.relu(self.bn1(x, training))
        out = self.conv1(a)
        out = self.conv2(T.relu(self.bn2(out, training)))
        sc = x if self.shortcut is None else self.shortcut(a)
        return T.add(out, sc)

    def params(self) -> list:
        ps = self.bn1.params() + self.conv1.params() + self.bn2.params() + self.conv2.params()
        if self.shortcut is not None:
            ps += self.shortcut.params()
        return ps

    def named_tensors(self, prefix: str) -> list:
        out = (
            self.bn1.named_tensors(prefix + "bn1.")
            + self.conv1.named_tensors(prefix + "conv1.")
            + self.bn2.named_tensors(prefix + "bn2.")
            + self.conv2.named_tensors(prefix + "conv2.")
        )
        if self.shortcut is not None:
            out += self.shortcut.named_tensors(prefix + "shortcut.")
        return out

    def flops(self, h: int, w: int) -> tuple:
        f1, hw = self.conv1.flops(h, w)
        f2, hw = self.conv2.flops(*hw)
        total = f1 + f2
        if self.shortcut is not None:
            fs, _ = self.shortcut.flops(h, w)
            total += fs
        return total, hw

    def clone(self) -> "PreActBlock":
        b = PreActBlock.__new__(PreActBlock)
        b.cin, b.cout, b.stride = self.cin, self.cout, self.stride
        b.bn1 = self.bn1.clone()
        b.conv1 = self.conv1.clone()
        b.bn2 = self.bn2.clone()
        b.conv2 = self.conv2.clone()
        b.shortcut = self.shortcut.clone() if self.shortcut is not None else None
        return b


class BlockGroup:
    def __init__(self, cin: int, cout: int, blocks: int, stride: int, rng: Optional[np.random.Generator]):
        self.blocks = [PreActBlock(cin if i == 0 else cout, cout, stride if i == 0 else 1, rng) for i in range(blocks)]

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        for b in self.blocks:
            x = b(x, training)
        return x

    def params(self) -> list:
        return [p for b in self.blocks for p in b.params()]

    def named_tensors(self, prefix: str) -> list:
        return [nt for i, b in enumerate(self.blocks) for nt in b.named_tensors(f"{prefix}b{i}.")]

    def flops(self, h: int, w: int) -> tuple:
        total = 0
        for b in self.blocks:
            f, (h, w) = b.flops(h, w)
            total += f
        return total, (h, w)

    def clone(self) -> "BlockGroup":
        g = BlockGroup.__new__(BlockGroup)
        g.blocks = [b.clone() for b in self.blocks]
        return g


def _to_nhwc(x) -> Tensor:
    """Accept (N, C, H, W) images (array or Tensor) and yield an NHWC tensor."""
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim != 4:
        raise ArchError(f"expected batched (N, C, H, W) input, got shape {arr.shape}")
    return Tensor(np.ascontiguousarray(arr.transpose(0, 2, 3, 1)))


# --------------------------------------------------------------------------
# whole networks
# --------------------------------------------------------------------------

class BlockNet:
    """Full WRN-l-(k_c, k_s) classifier: stem conv1, groups conv2..conv4,
    final BN + ReLU + global average pool + linear head."""

    def __init__(self, cfg: ArchConfig, rng: Optional[np.random.Generator]):
        self.cfg = cfg
        c1, c2, c3, c4 = cfg.channels
        b = cfg.blocks_per_group
        cin = cfg.input_shape[0]
        self.stem = Conv2d(cin, c1, 3, 1, rng)
        self.conv2 = BlockGroup(c1, c2, b, 1, rng)
        self.conv3 = BlockGroup(c2, c3, b, 2, rng)
        self.conv4 = BlockGroup(c3, c4, b, 2, rng)
        self.head_bn = BatchNorm2d(c4)
        self.fc = Linear(c4, cfg.num_classes, rng=None)
        if rng is not None:
            # linear classifier init without the relu gain
            self.fc.w = Tensor(
                rng.normal(0.0, math.sqrt(1.0 / c4), size=(c4, cfg.num_classes)).astype(np.float32),
                requires_grad=True,
            )

    def features(self, x, training: bool = False) -> Tensor:
        h = _to_nhwc(x)
        h = self.stem(h)
        h = self.conv2(h, training)
        return self.conv3(h, training)

    def head_forward(self, f: Tensor, training: bool = False) -> Tensor:
        h = self.conv4(f, training)
        h = T.relu(self.head_bn(h, training))
        return self.fc(T.global_avg_pool(h))

    def forward(self, x, training: bool = False) -> Tensor:
        return self.head_forward(self.features(x, training), training)

    def params(self) -> list:
        return (
            self.stem.params()
            + self.conv2.params()
            + self.conv3.params()
            + self.conv4.params()
            + self.head_bn.params()
            + self.fc.params()
        )

    def named_tensors(self) -> list:
        return (
            self.stem.named_tensors("stem.")
            + self.conv2.named_tensors("conv2.")
            + self.conv3.named_tensors("conv3.")
            + self.conv4.named_tensors("conv4.")
            + self.head_bn.named_tensors("head_bn.")
            + self.fc.named_tensors("fc.")
        )

    def describe(self) -> dict:
        return {"kind": "blocknet", "arch": self.cfg.to_dict()}

    @classmethod
    def from_description(cls, desc: dict) -> "BlockNet":
        return cls(ArchConfig.from_dict(desc["arch"]), rng=None)


def build_blocknet(cfg: ArchConfig, seed: int) -> BlockNet:
    """Deterministically initialized WRN; identical seeds give identical weights."""
    return BlockNet(cfg, T.rng_for(seed, "blocknet-init"))


@dataclass(frozen=True)
class HeadTemplate:
    """Shape of the conv4-plus-classifier remainder left after the library split."""

    in_channels: int
    blocks: int
    widen_special: float
    num_classes: int

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "blocks": self.blocks,
            "widen_special": self.widen_special,
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HeadTemplate":
        return cls(int(d["in_channels"]), int(d["blocks"]), float(d["widen_special"]), int(d["num_classes"]))


class HeadNet:
    """conv4 group + final BN/ReLU/pool + linear classifier over `num_classes`."""

    def __init__(self, in_channels: int, blocks: int, widen_special: float, num_classes: int,
                 rng: Optional[np.random.Generator]):
        self.in_channels = int(in_channels)
        self.blocks = int(blocks)
        self.widen_special = float(widen_special)
        self.num_classes = int(num_classes)
        c4 = _round_width(64 * widen_special)
        self.c4 = c4
        self.conv4 = BlockGroup(in_channels, c4, blocks, 2, rng)
        self.head_bn = BatchNorm2d(c4)
        self.fc = Linear(c4, num_classes, rng=None)
        if rng is not None:
            self.fc.w = Tensor(
                rng.normal(0.0, math.sqrt(1.0 / c4), size=(c4, num_classes)).astype(np.float32),
                requires_grad=True,
            )

    def forward(self, f, training: bool = False) -> Tensor:
        if not isinstance(f, Tensor):
            f = Tensor(np.asarray(f, dtype=np.float32))
        h = self.conv4(f, training)
        h = T.relu(self.head_bn(h, training))
        return self.fc(T.global_avg_pool(h))

    def params(self) -> list:
        return self.conv4.params() + self.head_bn.params() + self.fc.params()

    def named_tensors(self) -> list:
        return (
            self.conv4.named_tensors("conv4.")
            + self.head_bn.named_tensors("head_bn.")
            + self.fc.named_tensors("fc.")
        )

    def describe(self) -> dict:
        return {
            "kind": "head",
            "in_channels": self.in_channels,
            "blocks": self.blocks,
            "widen_special": self.widen_special,
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_description(cls, desc: dict) -> "HeadNet":
        return cls(
            int(desc["in_channels"]), int(desc["blocks"]), float(desc["widen_special"]),
            int(desc["num_classes"]), rng=None,
        )

    def clone(self) -> "HeadNet":
        h = HeadNet(self.in_channels, self.blocks, self.widen_special, self.num_classes, rng=None)
        h.conv4 = self.conv4.clone()
        h.head_bn = self.head_bn.clone()
        h.fc = self.fc.clone()
        return h


class LibraryNet:
    """Frozen shared trunk: stem conv1 plus groups conv2 and conv3."""

    def __init__(self, stem: Conv2d, conv2: BlockGroup, conv3: BlockGroup, arch: ArchConfig):
        self.stem = stem
        self.conv2 = conv2
        self.conv3 = conv3
        self.arch = arch  # arch of the model the library was split from

    def forward(self, x, training: bool = False) -> Tensor:
        h = _to_nhwc(x)
        h = self.stem(h)
        h = self.conv2(h, training)
        return self.conv3(h, training)

    @property
    def out_channels(self) -> int:
        return self.arch.channels[2]

    def params(self) -> list:
        return self.stem.params() + self.conv2.params() + self.conv3.params()

    def named_tensors(self) -> list:
        return (
            self.stem.named_tensors("stem.")
            + self.conv2.named_tensors("conv2.")
            + self.conv3.named_tensors("conv3.")
        )

    def describe(self) -> dict:
        return {"kind": "library", "arch": self.arch.to_dict()}

    @classmethod
    def from_description(cls, desc: dict) -> "LibraryNet":
        cfg = ArchConfig.from_dict(desc["arch"])
        c1, c2, c3, _ = cfg.channels
        b = cfg.blocks_per_group
        return cls(
            Conv2d(cfg.input_shape[0], c1, 3, 1, None),
            BlockGroup(c1, c2, b, 1, None),
            BlockGroup(c2, c3, b, 2, None),
            cfg,
        )

    def digest(self) -> str:
        return state_digest(self.named_tensors())


@dataclass
class LibrarySplit:
    library: LibraryNet
    head_template: HeadTemplate


def split_library(model: BlockNet) -> LibrarySplit:
    """Copy conv1..conv3 into a standalone library; record the head shape."""
    lib = LibraryNet(model.stem.clone(), model.conv2.clone(), model.conv3.clone(), model.cfg)
    template = HeadTemplate(
        in_channels=model.cfg.channels[2],
        blocks=model.cfg.blocks_per_group,
        widen_special=model.cfg.widen_special,
        num_classes=model.cfg.num_classes,
    )
    return LibrarySplit(library=lib, head_template=template)


def extract_head(model: BlockNet) -> HeadNet:
    """Copy the model's own conv4 + classifier as a standalone head."""
    h = HeadNet(model.cfg.channels[2], model.cfg.blocks_per_group, model.cfg.widen_special,
                model.cfg.num_classes, rng=None)
    h.conv4 = model.conv4.clone()
    h.head_bn = model.head_bn.clone()
    h.fc = model.fc.clone()
    return h


def build_head(template: HeadTemplate, seed: int, num_classes: Optional[int] = None,
               widen_special: Optional[float] = None) -> HeadNet:
    """Fresh head from a template, optionally overriding width and class count."""
    ks = template.widen_special if widen_special is None else widen_special
    nc = template.num_classes if num_classes is None else num_classes
    return HeadNet(template.in_channels, template.blocks, ks, nc, T.rng_for(seed, "head-init"))


class BranchedModel:
    """One library trunk feeding several heads; logits concatenated in branch order."""

    def __init__(self, library: LibraryNet, branches: Sequence[tuple], class_map: Sequence[int]):
        # branches: ordered (task_id, HeadNet) pairs
        self.library = library
        self.branches = list(branches)
        self.class_map = [int(c) for c in class_map]
        width = sum(h.num_classes for _, h in self.branches)
        if width != len(self.class_map):
            raise ArchError("class_map length must equal total branch width")
        if len(set(self.class_map)) != len(self.class_map):
            raise ArchError("class_map contains duplicate classes")

    def forward(self, x, training: bool = False) -> Tensor:
        f = self.library.forward(x, training)
        return T.concat([h.forward(f, training) for _, h in self.branches], axis=1)

    def branch_logits(self, x) -> list:
        f = self.library.forward(x, False)
        return [h.forward(f, False) for _, h in self.branches]

    def params(self) -> list:
        ps = self.library.params()
        for _, h in self.branches:
            ps += h.params()
        return ps

    def named_tensors(self) -> list:
        out = [("library." + n, a) for n, a in self.library.named_tensors()]
        for i, (_, h) in enumerate(self.branches):
            out += [(f"branch{i}." + n, a) for n, a in h.named_tensors()]
        return out

    def describe(self) -> dict:
        return {
            "kind": "branched",
            "library": self.library.describe(),
            "branches": [{"task_id": tid, "head": h.describe()} for tid, h in self.branches],
            "class_map": self.class_map,
        }

    @classmethod
    def from_description(cls, desc: dict) -> "BranchedModel":
        lib = LibraryNet.from_description(desc["library"])
        branches = [(b["task_id"], HeadNet.from_description(b["head"])) for b in desc["branches"]]
        return cls(lib, branches, desc["class_map"])


# --------------------------------------------------------------------------
# accounting and state
# --------------------------------------------------------------------------

def count_params(model) -> int:
    """Number of trainable scalars (conv, linear, BN scale/shift); running stats excluded."""
    if isinstance(model, LibrarySplit):
        model = model.library
    return int(sum(p.size for p in model.params()))


def count_flops(model, input_shape: Sequence[int]) -> int:
    """2 x multiply-accumulates of conv and linear layers for one input of
    (C, H, W); BN, ReLU, pooling and biases are not counted."""
    _, h, w = input_shape

    def lib_flops(lib_like, h, w):
        f0, hw = lib_like.stem.flops(h, w)
        f1, hw = lib_like.conv2.flops(*hw)
        f2, hw = lib_like.conv3.flops(*hw)
        return f0 + f1 + f2, hw

    def head_flops(head_like, h, w):
        f3, _ = head_like.conv4.flops(h, w)
        return f3 + head_like.fc.flops()

    if isinstance(model, BlockNet):
        f, hw = lib_flops(model, h, w)
        return int(f + head_flops(model, *hw))
    if isinstance(model, LibrarySplit):
        model = model.library
    if isinstance(model, LibraryNet):
        f, _ = lib_flops(model, h, w)
        return int(f)
    if isinstance(model, HeadNet):
        return int(head_flops(model, h, w))
    if isinstance(model, BranchedModel):
        f, hw = lib_flops(model.library, h, w)
        return int(f + sum(head_flops(hd, *hw) for _, hd in model.branches))
    raise ArchError(f"count_flops: unsupported model type {type(model).__name__}")


def head_internal_conv_params(head: HeadNet) -> int:
    """Parameters of head convs whose input AND output widths scale with k_s.
    These are the quadratic term behind the branched-architecture size claim:
    widening one head by n multiplies them by n^2, while n separate branches
    only multiply total head size by n."""
    c4 = head.c4
    total = 0
    for block in head.conv4.blocks:
        for conv in (block.conv1, block.conv2, block.shortcut):
            if conv is not None and conv.cin == c4 and conv.cout == c4:
                total += conv.w.size
    return int(total)


def state_digest(named: Sequence[tuple]) -> str:
    """Content digest over ordered (name, array) pairs; identifies a component."""
    h = hashlib.sha256()
    for name, arr in named:
        h.update(name.encode())
        h.update(str(list(arr.shape)).encode())
        h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return h.hexdigest()


def load_named_tensors(model, entries: dict) -> None:
    """Fill a model's tensors in place from {name: array}; shapes must match."""
    for name, arr in model.named_tensors():
        if name not in entries:
            raise ArchError(f"missing tensor {name!r}")
        src = np.asarray(entries[name], dtype=arr.dtype)
        if src.shape != arr.shape:
            raise ArchError(f"tensor {name!r} shape {src.shape} != expected {arr.shape}")
        arr[:] = src


def predict_logits(model, x: np.ndarray, batch_size: int = 256, workers: int = 1) -> np.ndarray:
    """Eval-mode forward over (N, C, H, W) inputs in batches. Results are
    independent of `workers` because batches are computed separately and
    reassembled in order."""
    fwd = model.forward
    n = x.shape[0]
    spans = [(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]
    if workers <= 1:
        parts = [fwd(x[a:b]).data for a, b in spans]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ab: fwd(x[ab[0]:ab[1]]).data, spans))
    return np.concatenate(parts, axis=0)
