"""Pretraining drivers: single-stage loop and the progressive multi-stage run.

Every source of randomness is keyed functionally off the root stream —
batch order by (stage, epoch), masks by (stage, epoch, step, slot) — so
a run is fully determined by (seed, config, data), and resuming from an
epoch-boundary checkpoint reproduces the uninterrupted trace bitwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, EvaluationError
from .model import GridDims, SpectralCubeAutoencoder
from .objective import LossBreakdown, ObjectiveConfig, total_loss
from .optim import AdamW, Schedule, lr_at
from .rng import CounterRng
from .tokenizer import SpectralImage, build_mask, make_targets, patchify


@dataclass
class PretrainStage:
    images: list[SpectralImage]
    epochs: int
    base_lr: float
    batch_size: int
    mask_ratio: float = 0.9
    weight_decay: float = 0.0
    warmup_frac: float = 0.1
    min_lr: float = 0.0
    clip_norm: float | None = None
    name: str = "stage"


@dataclass
class EpochRecord:
    stage: int
    epoch: int
    token: float
    spectral: float
    total: float
    lr: float

    def to_json(self) -> str:
        return json.dumps({"stage": self.stage, "epoch": self.epoch,
                           "token": self.token, "spectral": self.spectral,
                           "total": self.total, "lr": self.lr}, sort_keys=True)


def stage_schedule(stage: PretrainStage) -> Schedule:
    steps_per_epoch = len(stage.images) // stage.batch_size
    total = stage.epochs * steps_per_epoch
    return Schedule(int(stage.warmup_frac * total), total, stage.base_lr, stage.min_lr)


def make_optimizer(model: SpectralCubeAutoencoder, stage: PretrainStage) -> AdamW:
    return AdamW(model.parameters(), base_lr=stage.base_lr,
                 weight_decay=stage.weight_decay, clip_norm=stage.clip_norm)


def _image_loss(model: SpectralCubeAutoencoder, img: SpectralImage,
                objective: ObjectiveConfig, ratio: float, mask_rng: CounterRng,
                band_stats=None) -> tuple[T.Tensor, LossBreakdown]:
    cfg = model.config
    grid = patchify(img, cfg.p, cfg.k)
    dims = GridDims(grid.gh, grid.gw, grid.gs)
    plan = build_mask(grid.n_tokens, ratio, mask_rng, dims.n_sites)
    if objective.target_mode == "standardized":
        if band_stats is None:
            raise ConfigError("standardized target mode needs per-band mean/std stats")
        targets, _ = make_targets(grid, "standardized", band_mean=band_stats[0],
                                  band_std=band_stats[1])
    else:
        targets, _ = make_targets(grid, objective.target_mode)
    recon = model.reconstruct(grid.tokens, plan, dims)
    return total_loss(recon, targets, plan, grid, objective)


def pretrain_stage(model: SpectralCubeAutoencoder, objective: ObjectiveConfig,
                   stage: PretrainStage, rng: CounterRng, stage_index: int = 0,
                   optimizer: AdamW | None = None, start_epoch: int = 0,
                   end_epoch: int | None = None, band_stats=None,
                   on_epoch=None) -> tuple[list[EpochRecord], AdamW]:
    """Train one stage; per-epoch mean loss records come back in order.

    The schedule always spans the full stage, so stopping at `end_epoch`
    and resuming from a checkpoint replays the uninterrupted run exactly.
    """
    n = len(stage.images)
    steps_per_epoch = n // stage.batch_size
    if steps_per_epoch == 0:
        raise ConfigError(f"batch size {stage.batch_size} exceeds dataset size {n}")
    sched = stage_schedule(stage)
    optimizer = optimizer or make_optimizer(model, stage)
    params = model.parameters()
    records: list[EpochRecord] = []
    for epoch in range(start_epoch, stage.epochs if end_epoch is None else end_epoch):
        order = rng.child("order", stage_index, epoch).permutation(n)
        sums = np.zeros(3, dtype=np.float64)
        seen = 0
        lr = 0.0
        for step in range(steps_per_epoch):
            lr = lr_at(sched, epoch * steps_per_epoch + step)
            batch = order[step * stage.batch_size:(step + 1) * stage.batch_size]
            params.zero_grads()
            for slot, img_idx in enumerate(batch):
                mask_rng = rng.child("mask", stage_index, epoch, step, slot)
                loss, bd = _image_loss(model, stage.images[int(img_idx)], objective,
                                       stage.mask_ratio, mask_rng, band_stats)
                if not np.isfinite(bd.total):
                    raise EvaluationError(
                        f"non-finite loss at stage {stage_index} epoch {epoch} step {step}")
                T.scale(loss, 1.0 / stage.batch_size).backward()
                sums += (bd.token, bd.spectral, bd.total)
                seen += 1
            optimizer.step(lr)
        record = EpochRecord(stage_index, epoch, sums[0] / seen, sums[1] / seen,
                             sums[2] / seen, lr)
        records.append(record)
        if on_epoch is not None:
            on_epoch(record, optimizer)
    return records, optimizer


def stage_grid(stage: PretrainStage, model: SpectralCubeAutoencoder) -> tuple[int, int, int]:
    h, w, d = stage.images[0].values.shape
    p, k = model.config.p, model.config.k
    if h % p or w % p or d % k:
        raise ConfigError(f"stage images {h}x{w}x{d} not divisible by p={p}, k={k}")
    for img in stage.images:
        if img.values.shape != (h, w, d):
            raise ConfigError("all images within a stage must share one size")
    return (h // p, w // p, d // k)


def progressive_pretrain(model: SpectralCubeAutoencoder, objective: ObjectiveConfig,
                         stages: list[PretrainStage], rng: CounterRng,
                         band_stats=None, on_epoch=None,
                         start_stage: int = 0, start_epoch: int = 0,
                         optimizer: AdamW | None = None) -> list[EpochRecord]:
    """Run stages in order: weights carry over, positional tables resize,
    optimizer moments reset at each boundary."""
    records: list[EpochRecord] = []
    for stage_index in range(start_stage, len(stages)):
        stage = stages[stage_index]
        model.resize_pos_tables(stage_grid(stage, model))
        first_epoch = start_epoch if stage_index == start_stage else 0
        opt = optimizer if stage_index == start_stage else None
        stage_records, _ = pretrain_stage(
            model, objective, stage, rng, stage_index=stage_index, optimizer=opt,
            start_epoch=first_epoch, band_stats=band_stats,
            on_epoch=(lambda rec, o, si=stage_index: on_epoch(rec, o)) if on_epoch else None)
        records.extend(stage_records)
    return records
