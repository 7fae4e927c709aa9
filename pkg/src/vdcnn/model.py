"""Very deep character-level convolutional network assembly."""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional

import numpy as np

from .autodiff import Parameter, ShapeError, Tensor, add, relu, reshape
from .init import he_init, uniform_init
from .ops import (
    BatchNormState,
    ConvWeights,
    PoolKind,
    embedding_lookup,
    fully_connected,
    half_k_max_pool,
    k_max_pool,
    pool_output_length,
    temporal_batch_norm,
    temporal_conv,
    temporal_max_pool,
)

BASE_WIDTHS = (64, 128, 256, 512)
N_DOWNSAMPLE = 3

# blocks per level (64, 128, 256, 512) for the four published depths
DEPTH_BLOCKS = {
    9: (1, 1, 1, 1),
    17: (2, 2, 2, 2),
    29: (5, 5, 2, 2),
    49: (8, 8, 5, 3),
}


class SpecError(ValueError):
    """An ArchSpec violates one of its invariants."""


def depth_of(block_counts) -> int:
    """Number of convolutional layers: two per block plus the first conv."""
    counts = tuple(int(c) for c in block_counts)
    if len(counts) != 4 or any(c < 1 for c in counts):
        raise SpecError(f"block_counts must be four integers >= 1, got {block_counts}")
    return 2 * sum(counts) + 1


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(value).limit_denominator(1 << 16)
    return Fraction(value)


def _yes(value) -> bool:
    if isinstance(value, str):
        key = value.strip().lower()
        if key in ("enabled", "true", "yes", "1", "on"):
            return True
        if key in ("none", "false", "no", "0", "off", "disabled"):
            return False
        raise SpecError(f"shortcut must be 'none' or 'enabled', got {value!r}")
    return bool(value)


@dataclass(frozen=True)
class ArchSpec:
    block_counts: tuple = (2, 2, 2, 2)
    width_multiplier: Fraction = Fraction(1)
    pool_kind: PoolKind = PoolKind.MAXPOOL
    shortcut: bool = False
    seq_len: int = 1024
    n_classes: int = 2
    embed_dim: int = 16
    kmax_k: int = 8
    fc_hidden: int = 2048
    vocab_size: int = 69

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "block_counts", tuple(int(c) for c in self.block_counts))
        set_(self, "width_multiplier", _as_fraction(self.width_multiplier))
        set_(self, "pool_kind", PoolKind.parse(self.pool_kind))
        set_(self, "shortcut", _yes(self.shortcut))
        depth_of(self.block_counts)
        wm = self.width_multiplier
        if wm <= 0 or (BASE_WIDTHS[0] * wm).denominator != 1:
            raise SpecError(f"width_multiplier {wm} must be positive with 64*wm an integer "
                            "so that widths double exactly at every level")
        for name in ("embed_dim", "kmax_k", "fc_hidden", "vocab_size", "seq_len"):
            if int(getattr(self, name)) < 1:
                raise SpecError(f"{name} must be >= 1")
        if self.n_classes < 2:
            raise SpecError(f"n_classes must be >= 2, got {self.n_classes}")
        if min(self.level_lengths()) < self.kmax_k:
            raise SpecError(
                f"seq_len {self.seq_len} is too short for {N_DOWNSAMPLE} halvings followed by "
                f"{self.kmax_k}-max pooling; minimal legal length is {self.min_seq_len()}"
            )

    @property
    def depth(self) -> int:
        return depth_of(self.block_counts)

    @property
    def widths(self) -> tuple:
        return tuple(int(b * self.width_multiplier) for b in BASE_WIDTHS)

    @property
    def classifier_input(self) -> int:
        return self.widths[-1] * self.kmax_k

    def level_lengths(self, seq_len: Optional[int] = None) -> list:
        s = self.seq_len if seq_len is None else seq_len
        lengths = [s]
        for _ in range(N_DOWNSAMPLE):
            s = pool_output_length(s, self.pool_kind)
            lengths.append(s)
        return lengths

    def min_seq_len(self) -> int:
        s = 1
        while min(self.level_lengths(s)) < self.kmax_k:
            s += 1
        return s

    def with_(self, **changes) -> "ArchSpec":
        return replace(self, **changes)

    def to_text(self) -> str:
        wm = self.width_multiplier
        lines = [
            f"block_counts={','.join(map(str, self.block_counts))}",
            f"width_multiplier={wm.numerator}/{wm.denominator}",
            f"pool_kind={self.pool_kind.value}",
            f"shortcut={'enabled' if self.shortcut else 'none'}",
            f"seq_len={self.seq_len}",
            f"n_classes={self.n_classes}",
            f"embed_dim={self.embed_dim}",
            f"kmax_k={self.kmax_k}",
            f"fc_hidden={self.fc_hidden}",
            f"vocab_size={self.vocab_size}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ArchSpec":
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise SpecError(f"malformed spec line {line!r}")
            kv[key.strip()] = value.strip()
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(kv) - known
        if unknown:
            raise SpecError(f"unknown spec keys: {sorted(unknown)}")
        args = {}
        for key, value in kv.items():
            if key == "block_counts":
                args[key] = tuple(int(v) for v in value.split(","))
            elif key == "width_multiplier":
                args[key] = Fraction(value)
            elif key in ("pool_kind", "shortcut"):
                args[key] = value
            else:
                args[key] = int(value)
        return cls(**args)


class ConvBlock:
    """conv -> BN -> ReLU -> conv -> BN (+ shortcut) -> ReLU."""

    def __init__(self, name: str, c_in: int, c_out: int, stride: int, shortcut: bool, rng):
        self.name = name
        self.stride = stride
        self.conv1 = ConvWeights(Parameter(he_init((c_out, c_in, 3), c_in * 3, rng).data, f"{name}.conv1.weight"))
        self.bn1 = BatchNormState.create(c_out, f"{name}.bn1")
        self.conv2 = ConvWeights(Parameter(he_init((c_out, c_out, 3), c_out * 3, rng).data, f"{name}.conv2.weight"))
        self.bn2 = BatchNormState.create(c_out, f"{name}.bn2")
        self.projection: Optional[ConvWeights] = None
        self.identity = False
        if shortcut:
            if c_in == c_out and stride == 1:
                self.identity = True
            else:
                # zero-initialised: at init the block equals its main path
                self.projection = ConvWeights(
                    Parameter(np.zeros((c_out, c_in, 1)), f"{name}.shortcut.weight"),
                    Parameter(np.zeros(c_out), f"{name}.shortcut.bias"),
                )

    def shortcut(self, x: Tensor) -> Optional[Tensor]:
        if self.identity:
            return x
        if self.projection is not None:
            return temporal_conv(x, self.projection, stride=self.stride, pad=0)
        return None

    def forward(self, x: Tensor, mode: str) -> Tensor:
        h = temporal_conv(x, self.conv1, stride=self.stride, pad=1)
        h = relu(temporal_batch_norm(h, self.bn1, mode))
        h = temporal_conv(h, self.conv2, stride=1, pad=1)
        h = temporal_batch_norm(h, self.bn2, mode)
        short = self.shortcut(x)
        if short is not None:
            h = add(h, short)
        return relu(h)

    def parameters(self) -> list:
        out = self.conv1.parameters() + self.bn1.parameters() + self.conv2.parameters() + self.bn2.parameters()
        if self.projection is not None:
            out += self.projection.parameters()
        return out

    def batch_norms(self) -> list:
        return [(f"{self.name}.bn1", self.bn1), (f"{self.name}.bn2", self.bn2)]


class VDCNN:
    """Parameters and layer sequence produced from an :class:`ArchSpec`.

    Construction draws every weight from one generator seeded with ``seed`` in
    a fixed order, so equal seeds give bit-identical models.
    """

    def __init__(self, spec: ArchSpec, seed: int = 0):
        self.spec = spec
        rng = np.random.default_rng(seed)
        widths = spec.widths
        f0 = spec.embed_dim

        self.embedding = Parameter(uniform_init((spec.vocab_size, f0), 0.05, rng).data, "embedding.table")
        self.conv0 = ConvWeights(
            Parameter(he_init((widths[0], f0, 3), f0 * 3, rng).data, "conv0.weight"),
            Parameter(np.zeros(widths[0]), "conv0.bias"),
        )
        strided = spec.pool_kind is PoolKind.STRIDED_CONV
        self.levels: list[list[ConvBlock]] = []
        c_in = widths[0]
        for li, (n_blocks, c_out) in enumerate(zip(spec.block_counts, widths)):
            blocks = []
            for bi in range(n_blocks):
                stride = 2 if (strided and li > 0 and bi == 0) else 1
                blocks.append(ConvBlock(f"level{li + 1}.block{bi + 1}", c_in, c_out, stride, spec.shortcut, rng))
                c_in = c_out
            self.levels.append(blocks)

        dims = [spec.classifier_input, spec.fc_hidden, spec.fc_hidden, spec.n_classes]
        self.fc = []
        for i in range(3):
            W = Parameter(he_init((dims[i + 1], dims[i]), dims[i], rng).data, f"fc{i + 1}.weight")
            b = Parameter(np.zeros(dims[i + 1]), f"fc{i + 1}.bias")
            self.fc.append((W, b))

    @property
    def depth(self) -> int:
        return self.spec.depth

    def parameters(self) -> list:
        params = [self.embedding] + self.conv0.parameters()
        for blocks in self.levels:
            for block in blocks:
                params += block.parameters()
        for W, b in self.fc:
            params += [W, b]
        return params

    def batch_norms(self) -> list:
        return [item for blocks in self.levels for block in blocks for item in block.batch_norms()]

    def buffers(self) -> dict:
        out = {}
        for name, bn in self.batch_norms():
            out[f"{name}.running_mean"] = bn.running_mean
            out[f"{name}.running_var"] = bn.running_var
        return out

    def state(self) -> dict:
        """All named arrays (parameters then running statistics), in a fixed order."""
        out = {p.name: p.data for p in self.parameters()}
        out.update(self.buffers())
        return out

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def _downsample(self, x: Tensor) -> Tensor:
        kind = self.spec.pool_kind
        if kind is PoolKind.MAXPOOL:
            return temporal_max_pool(x)
        if kind is PoolKind.HALF_KMAX:
            return half_k_max_pool(x)
        return x  # strided conv: the next block's first conv halves the length

    def features(self, ids, mode: str = "train") -> Tensor:
        """Convolutional encoder output before k-max pooling, shape (m, C4, s_d)."""
        ids = np.asarray(ids)
        if ids.ndim == 1:
            ids = ids[None]
        if ids.ndim != 2 or ids.shape[1] != self.spec.seq_len:
            raise ShapeError(f"expected ids of shape (m, {self.spec.seq_len}), got {ids.shape}")
        h = embedding_lookup(ids, self.embedding)
        h = temporal_conv(h, self.conv0, stride=1, pad=1)
        for li, blocks in enumerate(self.levels):
            if li > 0:
                h = self._downsample(h)
            for block in blocks:
                h = block.forward(h, mode)
        return h

    def forward(self, ids, mode: str = "train") -> Tensor:
        """Logits of shape (m, n_classes)."""
        h = self.features(ids, mode)
        h = k_max_pool(h, self.spec.kmax_k)
        h = reshape(h, (h.shape[0], -1))
        for i, (W, b) in enumerate(self.fc):
            h = fully_connected(h, W, b)
            if i < 2:
                h = relu(h)
        return h

    __call__ = forward

    def layer_report(self) -> list:
        """(name, output shape as (C, s), parameter count) for each layer."""
        spec = self.spec
        lengths = spec.level_lengths()
        widths = spec.widths
        rows = [("embedding", (spec.embed_dim, spec.seq_len), self.embedding.size),
                ("conv0", (widths[0], spec.seq_len), sum(p.size for p in self.conv0.parameters()))]
        for li, blocks in enumerate(self.levels):
            if li > 0 and spec.pool_kind is not PoolKind.STRIDED_CONV:
                rows.append((f"pool{li}[{spec.pool_kind.value}]", (widths[li - 1], lengths[li]), 0))
            for block in blocks:
                rows.append((block.name, (widths[li], lengths[li]), sum(p.size for p in block.parameters())))
        rows.append((f"kmax[k={spec.kmax_k}]", (widths[-1], spec.kmax_k), 0))
        rows.append(("flatten", (spec.classifier_input,), 0))
        for i, (W, b) in enumerate(self.fc):
            rows.append((f"fc{i + 1}", (W.shape[0],), W.size + b.size))
        return rows


def build(spec: ArchSpec, seed: int = 0) -> VDCNN:
    return VDCNN(spec, seed)


def forward(model: VDCNN, batch, mode: str = "train") -> Tensor:
    return model.forward(batch, mode)


def count_params(model: VDCNN) -> dict:
    """Exact parameter counts per category.

    ``conv`` counts kernel weights plus biases (first conv and 1x1 shortcut
    projections carry biases); ``conv_weights`` is kernel weights alone; ``fc``
    counts weights and biases; ``batchnorm`` counts gamma and beta. Running
    statistics are not parameters.
    """
    counts = {"conv": 0, "conv_weights": 0, "fc": 0, "batchnorm": 0, "embedding": 0}
    for p in model.parameters():
        name = p.name
        if name.startswith("embedding"):
            counts["embedding"] += p.size
        elif name.startswith("fc"):
            counts["fc"] += p.size
        elif ".bn" in name:
            counts["batchnorm"] += p.size
        else:
            counts["conv"] += p.size
            if name.endswith(".weight"):
                counts["conv_weights"] += p.size
    counts["total"] = counts["conv"] + counts["fc"] + counts["batchnorm"] + counts["embedding"]
    return counts
