"""End-to-end fine-tuning and evaluation for the four downstream tasks.

Each protocol loads a manifest, normalizes bands to [0, 1] with the
manifest's dataset-level min/max, trains encoder + head jointly under
AdamW with the warmup/cosine schedule, and reports task metrics on the
held-out split. Raw prediction scores ride along in `extras` so metric
values can be re-derived by independent oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError
from .heads import (ChangeHead, ClassifierHead, SegmentationHead, combine_params,
                    cross_entropy, multilabel_soft_margin, nll_from_log_probs)
from .manifest import DatasetManifest, load_manifest, split
from .metrics import (MetricsReport, confusion_matrix, iou_per_class, macro_map,
                      mean_iou, micro_map, overall_accuracy, precision_recall_f1)
from .model import GridDims, SpectralCubeAutoencoder
from .optim import AdamW, Schedule, lr_at
from .raster import normalize_bands, read_raster
from .rng import CounterRng
from .tokenizer import SpectralImage


@dataclass
class FinetuneConfig:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 2e-3
    weight_decay: float = 0.0
    seed: int = 0
    hidden: int = 64
    train_fraction: float = 1.0
    split_fractions: tuple[float, float] = (0.8, 0.2)
    crop: int | None = None
    warmup_frac: float = 0.1


def _load_image(manifest: DatasetManifest, path: str) -> SpectralImage:
    return normalize_bands(read_raster(path), manifest.band_min, manifest.band_max)


def _load_mask(path: str) -> np.ndarray:
    return read_raster(path).values[:, :, 0].astype(np.int64)


def _resolve_splits(manifest, val_manifest, cfg: FinetuneConfig):
    if isinstance(manifest, str):
        manifest = load_manifest(manifest)
    if val_manifest is None:
        return split(manifest, cfg.split_fractions, manifest.split_seed)
    if isinstance(val_manifest, str):
        val_manifest = load_manifest(val_manifest)
    return manifest, val_manifest


def _subset(samples: list, fraction: float, seed: int) -> list:
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"train fraction {fraction} outside (0, 1]")
    if fraction == 1.0:
        return list(samples)
    count = int(fraction * len(samples))
    if count == 0:
        raise DataError(f"train fraction {fraction} selects no samples")
    keep = sorted(CounterRng(seed).child("fraction").permutation(len(samples))[:count].tolist())
    return [samples[i] for i in keep]


def _grid_dims(model: SpectralCubeAutoencoder, img: SpectralImage) -> GridDims:
    cfg = model.config
    return GridDims(img.height // cfg.p, img.width // cfg.p, img.bands // cfg.k)


def _train_loop(params, batches_per_epoch, cfg: FinetuneConfig, run_batch) -> None:
    """Shared optimizer loop: run_batch(epoch, step) -> loss Tensor (pre-scaled)."""
    total = cfg.epochs * batches_per_epoch
    sched = Schedule(int(cfg.warmup_frac * total), total, cfg.lr)
    opt = AdamW(params, base_lr=cfg.lr, weight_decay=cfg.weight_decay)
    step = 0
    for epoch in range(cfg.epochs):
        for b in range(batches_per_epoch):
            params.zero_grads()
            run_batch(epoch, b)
            opt.step(lr_at(sched, step))
            step += 1


# ---------------------------------------------------------------- loaders

def load_classify_samples(man: DatasetManifest, samples: list) -> list:
    out = [(_load_image(man, s["raster"]), int(s["label"])) for s in samples]
    for _, label in out:
        if not 0 <= label < man.n_classes:
            raise DataError(f"label {label} outside [0, {man.n_classes})")
    return out


def load_multilabel_samples(man: DatasetManifest, samples: list) -> list:
    return [(_load_image(man, s["raster"]), np.asarray(s["labels"], np.int64))
            for s in samples]


def load_segment_samples(man: DatasetManifest, samples: list) -> list:
    out = []
    for s in samples:
        img = _load_image(man, s["raster"])
        mask = _load_mask(s["mask"])
        if mask.max() >= man.n_classes:
            raise DataError(f"mask class id {mask.max()} >= {man.n_classes}")
        out.append((img, mask))
    return out


def load_change_samples(man: DatasetManifest, samples: list) -> list:
    out = []
    for s in samples:
        a = _load_image(man, s["raster_a"])
        b = _load_image(man, s["raster_b"])
        if a.values.shape != b.values.shape:
            raise DataError(f"pair size mismatch {a.values.shape} vs {b.values.shape}")
        out.append((a, b, _load_mask(s["mask"])))
    return out


# ---------------------------------------------------------------- classification

def finetune_classify(model: SpectralCubeAutoencoder, manifest, cfg: FinetuneConfig,
                      val_manifest=None, head: ClassifierHead | None = None) -> MetricsReport:
    train_man, val_man = _resolve_splits(manifest, val_manifest, cfg)
    n_classes = train_man.n_classes
    train = load_classify_samples(
        train_man, _subset(train_man.samples, cfg.train_fraction, cfg.seed))
    val = load_classify_samples(val_man, val_man.samples)
    head = head or ClassifierHead(model.config.embed_dim, cfg.hidden, n_classes,
                                  CounterRng(cfg.seed).child("head"), model.config.np_dtype)
    params = combine_params(model.parameters(), head.params)
    order_rng = CounterRng(cfg.seed).child("order")
    batches = max(1, len(train) // cfg.batch_size)

    def run_batch(epoch, b):
        order = order_rng.child(epoch).permutation(len(train))
        chosen = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
        if chosen.size == 0:
            chosen = order[:cfg.batch_size]
        rows = [head.forward(model.forward_full(train[int(i)][0])) for i in chosen]
        logits = T.concat_rows(rows)
        labels = [train[int(i)][1] for i in chosen]
        T.scale(cross_entropy(logits, labels), 1.0).backward()

    _train_loop(params, batches, cfg, run_batch)
    report = eval_classify(model, head, val)
    report.counts["train_used"] = len(train)
    return report


def eval_classify(model, head, val: list) -> MetricsReport:
    scores = np.asarray([head.forward(model.forward_full(img)).data[0]
                         for img, _ in val])
    labels = np.asarray([label for _, label in val])
    accuracy = float((scores.argmax(axis=1) == labels).mean())
    return MetricsReport(
        task="classify", values={"accuracy": accuracy},
        counts={"val": len(val)},
        extras={"scores": scores, "labels": labels})


def finetune_multilabel(model: SpectralCubeAutoencoder, manifest, cfg: FinetuneConfig,
                        val_manifest=None, head: ClassifierHead | None = None) -> MetricsReport:
    train_man, val_man = _resolve_splits(manifest, val_manifest, cfg)
    train = load_multilabel_samples(
        train_man, _subset(train_man.samples, cfg.train_fraction, cfg.seed))
    val = load_multilabel_samples(val_man, val_man.samples)
    n_classes = train_man.n_classes
    head = head or ClassifierHead(model.config.embed_dim, cfg.hidden, n_classes,
                                  CounterRng(cfg.seed).child("head"), model.config.np_dtype)
    params = combine_params(model.parameters(), head.params)
    order_rng = CounterRng(cfg.seed).child("order")
    batches = max(1, len(train) // cfg.batch_size)

    def run_batch(epoch, b):
        order = order_rng.child(epoch).permutation(len(train))
        chosen = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
        if chosen.size == 0:
            chosen = order[:cfg.batch_size]
        rows = [head.forward(model.forward_full(train[int(i)][0])) for i in chosen]
        logits = T.concat_rows(rows)
        targets = np.stack([train[int(i)][1] for i in chosen])
        multilabel_soft_margin(logits, targets).backward()

    _train_loop(params, batches, cfg, run_batch)
    report = eval_multilabel(model, head, val)
    report.counts["train_used"] = len(train)
    return report


def eval_multilabel(model, head, val: list) -> MetricsReport:
    scores = np.concatenate([head.forward(model.forward_full(img)).data for img, _ in val])
    labels = np.stack([lab for _, lab in val])
    macro, skipped = macro_map(scores, labels)
    micro = micro_map(scores, labels)
    notes = [f"macro mAP skipped class {c}: no positives" for c in skipped]
    return MetricsReport(
        task="multilabel",
        values={"macro_map": macro, "micro_map": micro},
        counts={"val": len(val)}, notes=notes,
        extras={"scores": scores, "labels": labels})


# ---------------------------------------------------------------- segmentation

def tile_starts(extent: int, crop: int) -> list[int]:
    """Crop origins with 50% overlap; the last tile is flush with the edge."""
    if crop > extent:
        raise ConfigError(f"crop {crop} larger than image extent {extent}")
    stride = max(1, crop // 2)
    starts = list(range(0, extent - crop + 1, stride))
    if starts[-1] != extent - crop:
        starts.append(extent - crop)
    return starts


def _crops(img: SpectralImage, mask: np.ndarray, crop: int):
    for y in tile_starts(img.height, crop):
        for x in tile_starts(img.width, crop):
            yield (y, x,
                   SpectralImage(img.values[y:y + crop, x:x + crop], img.band_names),
                   mask[y:y + crop, x:x + crop] if mask is not None else None)


def _stitched_logits(model, head, img: SpectralImage, crop: int, classes: int) -> np.ndarray:
    """Average overlapping crop logits in logit space, then the caller argmaxes."""
    acc = np.zeros((img.height, img.width, classes), np.float64)
    hits = np.zeros((img.height, img.width, 1), np.float64)
    for y, x, sub, _ in _crops(img, None, crop):
        dims = _grid_dims(model, sub)
        logits = head.forward(model.forward_full(sub), dims, (crop, crop)).data
        acc[y:y + crop, x:x + crop] += logits.reshape(crop, crop, classes)
        hits[y:y + crop, x:x + crop] += 1.0
    return acc / hits


def segment(model: SpectralCubeAutoencoder, manifest, cfg: FinetuneConfig,
            val_manifest=None, head: SegmentationHead | None = None) -> MetricsReport:
    train_man, val_man = _resolve_splits(manifest, val_manifest, cfg)
    n_classes = train_man.n_classes
    p = model.config.p
    train = load_segment_samples(
        train_man, _subset(train_man.samples, cfg.train_fraction, cfg.seed))
    val = load_segment_samples(val_man, val_man.samples)
    crop = cfg.crop or min(train[0][0].height, train[0][0].width)
    if crop % p:
        raise ConfigError(f"crop {crop} not divisible by token size {p}")
    head = head or SegmentationHead(model.config.embed_dim,
                                    train[0][0].bands // model.config.k, n_classes,
                                    CounterRng(cfg.seed).child("head"),
                                    model.config.np_dtype)
    params = combine_params(model.parameters(), head.params)
    pool = [(img_i, y, x) for img_i, (img, mask) in enumerate(train)
            for y, x, _, _ in _crops(img, mask, crop)]
    order_rng = CounterRng(cfg.seed).child("order")
    batches = max(1, len(pool) // cfg.batch_size)

    def run_batch(epoch, b):
        order = order_rng.child(epoch).permutation(len(pool))
        chosen = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
        if chosen.size == 0:
            chosen = order[:cfg.batch_size]
        for i in chosen:
            img_i, y, x = pool[int(i)]
            img, mask = train[img_i]
            sub = SpectralImage(img.values[y:y + crop, x:x + crop], img.band_names)
            sub_mask = mask[y:y + crop, x:x + crop]
            dims = _grid_dims(model, sub)
            logits = head.forward(model.forward_full(sub), dims, (crop, crop))
            loss = cross_entropy(logits, sub_mask.reshape(-1))
            T.scale(loss, 1.0 / len(chosen)).backward()

    _train_loop(params, batches, cfg, run_batch)
    report = eval_segment(model, head, val, crop, n_classes, train_man.class_names)
    report.counts["train_used"] = len(train)
    return report


def eval_segment(model, head, val: list, crop: int, n_classes: int,
                 class_names: list[str] | None = None) -> MetricsReport:
    cm = np.zeros((n_classes, n_classes), np.int64)
    for img, mask in val:
        logits = _stitched_logits(model, head, img, crop, n_classes)
        pred = logits.argmax(axis=2)
        cm += confusion_matrix(pred.reshape(-1), mask.reshape(-1), n_classes)
    per_class = {class_names[c] if class_names else str(c):
                 {"iou": float("nan") if v is None else v}
                 for c, v in enumerate(iou_per_class(cm))}
    return MetricsReport(
        task="segment",
        values={"overall_accuracy": overall_accuracy(cm), "mean_iou": mean_iou(cm)},
        per_class=per_class,
        counts={"val": len(val), "val_pixels": int(cm.sum())},
        extras={"confusion": cm})


# ---------------------------------------------------------------- change detection

def change_detect(model: SpectralCubeAutoencoder, manifest, cfg: FinetuneConfig,
                  val_manifest=None, head: ChangeHead | None = None) -> MetricsReport:
    train_man, val_man = _resolve_splits(manifest, val_manifest, cfg)
    train = load_change_samples(
        train_man, _subset(train_man.samples, cfg.train_fraction, cfg.seed))
    val = load_change_samples(val_man, val_man.samples)
    head = head or ChangeHead(model.config.embed_dim, train[0][0].bands // model.config.k,
                              CounterRng(cfg.seed).child("head"), model.config.np_dtype)
    params = combine_params(model.parameters(), head.params)
    order_rng = CounterRng(cfg.seed).child("order")
    batches = max(1, len(train) // cfg.batch_size)

    def run_batch(epoch, b):
        order = order_rng.child(epoch).permutation(len(train))
        chosen = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
        if chosen.size == 0:
            chosen = order[:cfg.batch_size]
        for i in chosen:
            a, bimg, mask = train[int(i)]
            dims = _grid_dims(model, a)
            logp = head.forward(model.forward_full(a), model.forward_full(bimg),
                                dims, (a.height, a.width))
            loss = nll_from_log_probs(logp, mask.reshape(-1))
            T.scale(loss, 1.0 / len(chosen)).backward()

    _train_loop(params, batches, cfg, run_batch)
    report = eval_change(model, head, val)
    report.counts["train_used"] = len(train)
    return report


def eval_change(model, head, val: list) -> MetricsReport:
    tp = fp = fn = tn = 0
    for a, bimg, mask in val:
        dims = _grid_dims(model, a)
        logp = head.forward(model.forward_full(a), model.forward_full(bimg),
                            dims, (a.height, a.width)).data
        pred = logp.argmax(axis=1).reshape(mask.shape)
        tp += int(np.sum((pred == 1) & (mask == 1)))
        fp += int(np.sum((pred == 1) & (mask == 0)))
        fn += int(np.sum((pred == 0) & (mask == 1)))
        tn += int(np.sum((pred == 0) & (mask == 0)))
    pred_flat = [1] * tp + [1] * fp + [0] * fn + [0] * tn
    true_flat = [1] * tp + [0] * fp + [1] * fn + [0] * tn
    precision, recall, f1, notes = precision_recall_f1(pred_flat, true_flat)
    return MetricsReport(
        task="change",
        values={"precision": precision, "recall": recall, "f1": f1},
        counts={"val": len(val), "tp": tp, "fp": fp, "fn": fn, "tn": tn},
        notes=notes)
