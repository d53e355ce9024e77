"""Training objectives: soft Tversky, clamped BCE, and their weighted sum.

All three accept probabilities (not logits) and binary targets of the same
rank-4 shape. The Tversky index is computed batch-globally: one TP/FP/FN
triple over every element in the batch, not a per-sample mean, which keeps
empty-foreground tiles from destabilizing the loss. With alpha = beta = 0.5
it reduces to soft Dice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .nn import Tensor

SMOOTH = 1e-5
BCE_CLAMP = 1e-7

# false-positive / false-negative weights per cascade stage
STAGE1_TVERSKY = (0.7, 0.3)
STAGE2_TVERSKY = (0.5, 0.5)


@dataclass(frozen=True)
class TverskyParams:
    alpha: float = 0.7   # weight on false positives
    beta: float = 0.3    # weight on false negatives
    smooth: float = SMOOTH

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ConfigurationError("TverskyParams: alpha and beta must lie in [0, 1]")
        if self.smooth <= 0.0:
            raise ConfigurationError("TverskyParams: smooth must be positive")


@dataclass(frozen=True)
class CompositeLossConfig:
    tversky: TverskyParams = field(default_factory=TverskyParams)
    ce_weight: float = 0.5

    def __post_init__(self):
        if self.ce_weight < 0.0:
            raise ConfigurationError("CompositeLossConfig: ce_weight must be non-negative")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _check_pair(probs: Tensor, targets: Tensor):
    if probs.data.shape != targets.data.shape:
        raise ConfigurationError(
            f"loss: probs {probs.data.shape} and targets {targets.data.shape} differ"
        )
    if probs.data.ndim != 4:
        raise ConfigurationError(f"loss: expected rank-4 inputs, got rank {probs.data.ndim}")
    t = targets.data
    if not np.all((t == 0) | (t == 1)):
        raise ConfigurationError("loss: targets must be binary (0/1)")


def tversky_loss(probs, targets, params: TverskyParams | None = None) -> Tensor:
    """1 - (TP + s) / (TP + alpha*FP + beta*FN + s), pooled over the batch."""
    if params is None:
        params = TverskyParams()
    probs, targets = _as_tensor(probs), _as_tensor(targets)
    _check_pair(probs, targets)
    one = Tensor(np.ones_like(probs.data))
    tp = (probs * targets).sum()
    fp = (probs * (one - targets)).sum()
    fn = ((one - probs) * targets).sum()
    s = float(params.smooth)
    num = tp + s
    den = tp + params.alpha * fp + params.beta * fn + s
    return 1.0 - num / den


def bce_loss(probs, targets, clamp: float = BCE_CLAMP) -> Tensor:
    """Mean binary cross-entropy on probabilities clamped to [c, 1-c]."""
    probs, targets = _as_tensor(probs), _as_tensor(targets)
    _check_pair(probs, targets)
    p = probs.clamp(clamp, 1.0 - clamp)
    one = Tensor(np.ones_like(probs.data))
    ll = targets * p.log() + (one - targets) * (one - p).log()
    return -ll.mean()


def composite_loss(probs, targets, config: CompositeLossConfig | None = None) -> Tensor:
    """tversky + ce_weight * bce, the per-stage objective."""
    if config is None:
        config = CompositeLossConfig()
    return tversky_loss(probs, targets, config.tversky) + config.ce_weight * bce_loss(
        probs, targets
    )
