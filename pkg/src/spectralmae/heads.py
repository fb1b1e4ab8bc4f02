"""Downstream task heads over encoder latents, and their losses.

The segmentation/change heads first fuse the gs spectral-group tokens of
each spatial site into one vector, then decode with two rounds of
(nearest x2 upsample, 3x3 conv, GELU) and a 1x1 projection to class
logits. When the token side p exceeds 4, a final non-learned nearest
resize closes the remaining gap to pixel resolution. Convolutions are
built from gather + matmul: out-of-bounds neighbors index one appended
zero row, which is exactly zero padding.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DataError, ShapeError
from .model import GridDims
from .rng import CounterRng
from .tensor import Parameter, ParameterSet

INIT_STD = 0.02


def combine_params(*sets: ParameterSet) -> ParameterSet:
    merged = ParameterSet()
    for ps in sets:
        for name, p in ps.items():
            merged.add(name, p)
    return merged


# ---------------------------------------------------------------- losses

def cross_entropy(logits: T.Tensor, labels) -> T.Tensor:
    """Mean negative log-likelihood of integer labels under softmax logits."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    b, c = logits.shape
    if labels.shape[0] != b:
        raise ShapeError(f"{labels.shape[0]} labels for {b} logit rows")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DataError(f"label outside [0, {c})")
    onehot = np.zeros((b, c), dtype=logits.data.dtype)
    onehot[np.arange(b), labels] = 1.0
    picked = T.sum_all(T.mul(T.log_softmax_lastaxis(logits), T.Tensor(onehot)))
    return T.scale(picked, -1.0 / b)


def nll_from_log_probs(log_probs: T.Tensor, labels) -> T.Tensor:
    """Mean NLL when the head already outputs log-probabilities."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    b, c = log_probs.shape
    if labels.shape[0] != b:
        raise ShapeError(f"{labels.shape[0]} labels for {b} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DataError(f"label outside [0, {c})")
    onehot = np.zeros((b, c), dtype=log_probs.data.dtype)
    onehot[np.arange(b), labels] = 1.0
    return T.scale(T.sum_all(T.mul(log_probs, T.Tensor(onehot))), -1.0 / b)


def multilabel_soft_margin(logits: T.Tensor, labels) -> T.Tensor:
    """-mean over B*C of y*log sigmoid(x) + (1-y)*log sigmoid(-x)."""
    labels = np.asarray(labels)
    if labels.shape != logits.shape:
        raise ShapeError(f"labels {labels.shape} vs logits {logits.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise DataError("multi-label targets must be binary")
    y = T.Tensor(labels.astype(logits.data.dtype))
    ones = T.Tensor(np.ones_like(labels, dtype=logits.data.dtype))
    pos = T.mul(y, T.logsigmoid(logits))
    neg = T.mul(T.sub(ones, y), T.logsigmoid(T.scale(logits, -1.0)))
    return T.scale(T.mean_all(T.add(pos, neg)), -1.0)


# ---------------------------------------------------------------- heads

class ClassifierHead:
    """Average-pool over all tokens, then a two-layer MLP to class logits."""

    def __init__(self, d: int, hidden: int, classes: int, rng: CounterRng,
                 dtype=np.float32, prefix: str = "head"):
        ps = ParameterSet()
        self.params = ps
        self.fc1_w = ps.add(f"{prefix}.fc1.weight", Parameter(
            rng.child(prefix, "fc1").truncated_normal_array((d, hidden), INIT_STD).astype(dtype)))
        self.fc1_b = ps.add(f"{prefix}.fc1.bias", Parameter(np.zeros(hidden, dtype)))
        self.fc2_w = ps.add(f"{prefix}.fc2.weight", Parameter(
            rng.child(prefix, "fc2").truncated_normal_array((hidden, classes), INIT_STD).astype(dtype)))
        self.fc2_b = ps.add(f"{prefix}.fc2.bias", Parameter(np.zeros(classes, dtype)))

    def forward(self, latents: T.Tensor) -> T.Tensor:
        pooled = T.mean_rows(latents)
        hidden = T.gelu(T.add_rowvec(T.matmul(pooled, self.fc1_w), self.fc1_b))
        return T.add_rowvec(T.matmul(hidden, self.fc2_w), self.fc2_b)


_NEIGHBOR_CACHE: dict[tuple[int, int], np.ndarray] = {}
_UPSAMPLE_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _neighbor_indices(h: int, w: int) -> np.ndarray:
    """3x3 neighborhood row indices into an (h*w + 1)-row array; h*w = zero pad."""
    key = (h, w)
    if key not in _NEIGHBOR_CACHE:
        ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        rows = []
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                ny, nx = ys + dy, xs + dx
                idx = ny * w + nx
                idx[(ny < 0) | (ny >= h) | (nx < 0) | (nx >= w)] = h * w
                rows.append(idx.reshape(-1))
        _NEIGHBOR_CACHE[key] = np.stack(rows, axis=1).reshape(-1)  # (h*w*9,)
    return _NEIGHBOR_CACHE[key]


def _upsample2_indices(h: int, w: int) -> np.ndarray:
    key = (h, w)
    if key not in _UPSAMPLE_CACHE:
        ys = np.repeat(np.arange(h), 2)
        xs = np.repeat(np.arange(w), 2)
        _UPSAMPLE_CACHE[key] = (ys[:, None] * w + xs[None, :]).reshape(-1)
    return _UPSAMPLE_CACHE[key]


def _resize_nearest_rows(x: T.Tensor, h: int, w: int, new_h: int, new_w: int) -> T.Tensor:
    ys = np.clip(np.round(np.linspace(0, h - 1, new_h)).astype(np.int64), 0, h - 1)
    xs = np.clip(np.round(np.linspace(0, w - 1, new_w)).astype(np.int64), 0, w - 1)
    return T.gather_rows(x, (ys[:, None] * w + xs[None, :]).reshape(-1))


def conv3x3(x: T.Tensor, h: int, w: int, weight: T.Tensor, bias: T.Tensor) -> T.Tensor:
    """3x3 same-size convolution on (h*w, C) rows; weight is (9*C, C_out)."""
    c = x.shape[1]
    padded = T.concat_rows([x, T.Tensor(np.zeros((1, c), x.data.dtype))])
    patches = T.reshape(T.gather_rows(padded, _neighbor_indices(h, w)), (h * w, 9 * c))
    return T.add_rowvec(T.matmul(patches, weight), bias)


class _FuseDecode:
    """Shared machinery: site fusion + 2 upsample/conv stages + 1x1 head."""

    def __init__(self, d: int, gs: int, classes: int, rng: CounterRng,
                 dtype=np.float32, prefix: str = "head"):
        ps = ParameterSet()
        self.params = ps
        self.d = d
        self.gs = gs
        self.classes = classes

        def w(name, shape):
            data = rng.child(prefix, name).truncated_normal_array(shape, INIT_STD)
            return ps.add(f"{prefix}.{name}", Parameter(data.astype(dtype)))

        def zeros(name, shape):
            return ps.add(f"{prefix}.{name}", Parameter(np.zeros(shape, dtype)))

        self.fuse_w, self.fuse_b = w("fuse.weight", (gs * d, d)), zeros("fuse.bias", d)
        self.conv1_w, self.conv1_b = w("conv1.weight", (9 * d, d)), zeros("conv1.bias", d)
        self.conv2_w, self.conv2_b = w("conv2.weight", (9 * d, d)), zeros("conv2.bias", d)
        self.out_w, self.out_b = w("out.weight", (d, classes)), zeros("out.bias", classes)

    def fuse(self, latents: T.Tensor, dims: GridDims) -> T.Tensor:
        if latents.shape != (dims.n_tokens, self.d):
            raise ShapeError(f"latents {latents.shape} do not match grid "
                             f"({dims.n_tokens}, {self.d})")
        if dims.gs != self.gs:
            raise ShapeError(f"head fuses {self.gs} spectral groups, grid has {dims.gs}")
        sites = T.reshape(latents, (dims.n_sites, self.gs * self.d))
        return T.add_rowvec(T.matmul(sites, self.fuse_w), self.fuse_b)

    def decode(self, fused: T.Tensor, dims: GridDims, out_hw: tuple[int, int]) -> T.Tensor:
        h, w = dims.gh, dims.gw
        z = fused
        for cw, cb in ((self.conv1_w, self.conv1_b), (self.conv2_w, self.conv2_b)):
            z = T.gather_rows(z, _upsample2_indices(h, w))
            h, w = 2 * h, 2 * w
            z = T.gelu(conv3x3(z, h, w, cw, cb))
        logits = T.add_rowvec(T.matmul(z, self.out_w), self.out_b)
        if (h, w) != out_hw:
            logits = _resize_nearest_rows(logits, h, w, out_hw[0], out_hw[1])
        return logits  # (H*W, classes)


class SegmentationHead(_FuseDecode):
    def forward(self, latents: T.Tensor, dims: GridDims,
                out_hw: tuple[int, int]) -> T.Tensor:
        return self.decode(self.fuse(latents, dims), dims, out_hw)


class ChangeHead(_FuseDecode):
    """Two-image head: per-site feature difference, two-class log-probs."""

    def __init__(self, d: int, gs: int, rng: CounterRng, dtype=np.float32,
                 signed_difference: bool = False, prefix: str = "head"):
        super().__init__(d, gs, 2, rng, dtype, prefix)
        self.signed_difference = signed_difference

    def forward(self, latents_a: T.Tensor, latents_b: T.Tensor, dims: GridDims,
                out_hw: tuple[int, int]) -> T.Tensor:
        diff = T.sub(self.fuse(latents_a, dims), self.fuse(latents_b, dims))
        if not self.signed_difference:
            diff = T.abs_val(diff)
        return T.log_softmax_lastaxis(self.decode(diff, dims, out_hw))
