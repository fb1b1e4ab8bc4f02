"""Multi-target reconstruction loss: token MSE plus weighted spectral MSE.

The token term is an elementwise mean over either the masked tokens or
all tokens (configurable; the two readings of the loss both ship). The
spectral term rearranges the per-token rows into one row per spatial
site — the site's spectral groups concatenated in order — and takes the
elementwise mean there. Both terms being elementwise means keeps them
on the same scale whatever the token geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tokenizer import MaskPlan, TokenGrid

TOKEN_SCOPES = ("all_tokens", "masked_only")


@dataclass
class ObjectiveConfig:
    lam: float = 1.0
    token_loss_scope: str = "all_tokens"
    target_mode: str = "per_token_normalized"

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.token_loss_scope not in TOKEN_SCOPES:
            raise ValueError(f"token_loss_scope must be one of {TOKEN_SCOPES}")


@dataclass
class LossBreakdown:
    token: float
    spectral: float
    lam: float

    @property
    def total(self) -> float:
        return self.token + self.lam * self.spectral


def _as_const(targets) -> T.Tensor:
    return targets if isinstance(targets, T.Tensor) else T.Tensor(np.asarray(targets))


def token_loss(recon: T.Tensor, targets, plan: MaskPlan, scope: str = "all_tokens") -> T.Tensor:
    """Elementwise MSE over the selected token set."""
    targets = _as_const(targets)
    if recon.shape != targets.shape:
        raise ShapeError(f"recon {recon.shape} vs targets {targets.shape}")
    if scope not in TOKEN_SCOPES:
        raise ValueError(f"unknown token loss scope {scope!r}")
    if scope == "masked_only":
        if plan.m == 0:
            raise ValueError("masked_only scope with an empty mask")
        recon = T.gather_rows(recon, plan.masked)
        targets = T.gather_rows(targets, plan.masked)
    return T.mse(recon, targets)


def spectral_loss(recon: T.Tensor, targets, grid: TokenGrid) -> T.Tensor:
    """Elementwise MSE over per-site spectral rows (all sites).

    Site-major token order makes the row construction a reshape, so the
    value equals the all-token elementwise MSE; the term is kept separate
    because it generalizes to per-site weighting and documents intent.
    """
    targets = _as_const(targets)
    if recon.shape != targets.shape:
        raise ShapeError(f"recon {recon.shape} vs targets {targets.shape}")
    if recon.shape != (grid.n_tokens, grid.token_len):
        raise ShapeError(f"recon {recon.shape} does not cover all "
                         f"{grid.n_tokens} tokens of length {grid.token_len}")
    row = grid.gs * grid.token_len
    return T.mse(T.reshape(recon, (grid.n_sites, row)),
                 T.reshape(targets, (grid.n_sites, row)))


def total_loss(recon: T.Tensor, targets, plan: MaskPlan, grid: TokenGrid,
               cfg: ObjectiveConfig) -> tuple[T.Tensor, LossBreakdown]:
    """Combined loss tensor (for backward) plus its scalar breakdown."""
    tok = token_loss(recon, targets, plan, cfg.token_loss_scope)
    spec = spectral_loss(recon, targets, grid)
    combined = T.add(tok, T.scale(spec, cfg.lam))
    return combined, LossBreakdown(float(tok.data), float(spec.data), cfg.lam)
