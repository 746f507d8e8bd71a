"""Composite reconstruction objective: MSE + L1 + log-domain L1.

The log term re-maps predictions and targets from the model range [-1, 1] to
[0, 1] before taking logs, which weights errors in the dark end of the RAW
histogram more heavily than the linear terms do.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch


class LossConfigError(ValueError):
    pass


@dataclass
class LossConfig:
    use_mse: bool = True
    use_l1: bool = True
    use_logl1: bool = True
    log_eps: float = 1e-4

    def __post_init__(self):
        if self.log_eps <= 0:
            raise LossConfigError("log_eps must be positive")
        if not (self.use_mse or self.use_l1 or self.use_logl1):
            raise LossConfigError("at least one loss term must be enabled")


def _check_shapes(pred, target):
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")


def loss_mse(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _check_shapes(pred, target)
    return ((pred - target) ** 2).mean()


def loss_l1(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _check_shapes(pred, target)
    return (pred - target).abs().mean()


def loss_logl1(pred: torch.Tensor, target: torch.Tensor, log_eps: float = 1e-4) -> torch.Tensor:
    """Mean absolute log difference on [0, 1]-remapped values.

    Values outside the nominal [-1, 1] model range (possible for untransformed
    noise targets) are clamped to the remapped domain so the log stays finite.
    """
    _check_shapes(pred, target)
    p = ((pred + 1.0) / 2.0).clamp(0.0, 1.0)
    q = ((target + 1.0) / 2.0).clamp(0.0, 1.0)
    return (torch.log(p + log_eps) - torch.log(q + log_eps)).abs().mean()


def loss_total(pred: torch.Tensor, target: torch.Tensor, cfg: LossConfig = LossConfig()):
    """Unweighted sum of the enabled terms; returns (total, per-term dict)."""
    terms = {}
    if cfg.use_mse:
        terms["mse"] = loss_mse(pred, target)
    if cfg.use_l1:
        terms["l1"] = loss_l1(pred, target)
    if cfg.use_logl1:
        terms["logl1"] = loss_logl1(pred, target, cfg.log_eps)
    if not terms:
        raise LossConfigError("at least one loss term must be enabled")
    total = sum(terms.values())
    return total, terms
