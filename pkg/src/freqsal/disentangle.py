"""Identity loss that pushes penultimate features to equal their own
mask-weighted version, with gradients flowing to both feature taps.

The saliency prior is built from mid-level features, collapsed over
channels, resized to the penultimate spatial grid, and multiplied in;
the loss is the scaled mean squared difference.
"""

from __future__ import annotations

from dataclasses import dataclass

from .masks import SaliencyMap, combined_mask
from .tensor import (
    Tensor,
    _as_tensor,
    add,
    cross_entropy,
    mul,
    reduce_mean,
    resize_bilinear,
    scale,
    square,
    sub,
)


class ConfigError(ValueError):
    """Invalid loss or run configuration."""


@dataclass
class LossConfig:
    lambda_mask: float = 0.1
    normalize_mask: bool = True
    resize_rule: str = "bilinear"
    channel_collapse: str = "mean"
    # ablation only: treat the mask as a constant during backprop
    stop_mask_gradient: bool = False

    def __post_init__(self):
        if self.lambda_mask < 0:
            raise ConfigError(f"lambda_mask must be >= 0, got {self.lambda_mask}")
        if self.resize_rule != "bilinear":
            raise ConfigError(f"unsupported resize_rule {self.resize_rule!r}")
        if self.channel_collapse != "mean":
            raise ConfigError(f"unsupported channel_collapse {self.channel_collapse!r}")


def transfer_mask(m: SaliencyMap, target_shape) -> SaliencyMap:
    """Collapse channels by mean and resize to the target spatial grid.

    The result is [H_p, W_p] and broadcasts over channels and time when
    applied to the target feature volume.
    """
    v = m.values
    if v.ndim == 3:
        v = reduce_mean(v, axis=0)
    out_h, out_w = int(target_shape[-2]), int(target_shape[-1])
    v = resize_bilinear(v, out_h, out_w)
    return SaliencyMap(v, m.kind, normalized=m.normalized)


def identity_loss(x_mid: Tensor, x_p: Tensor, cfg: LossConfig | None = None) -> Tensor:
    """lambda * mean((x_p - M(x_mid) * x_p)^2) as a tape-recorded scalar."""
    if cfg is None:
        cfg = LossConfig()
    x_mid, x_p = _as_tensor(x_mid), _as_tensor(x_p)
    m = combined_mask(x_mid, normalize=cfg.normalize_mask)
    if cfg.stop_mask_gradient:
        m = SaliencyMap(m.values.detach(), m.kind, m.normalized)
    mt = transfer_mask(m, x_p.shape)
    masked = mul(mt.values, x_p)
    return scale(reduce_mean(square(sub(x_p, masked))), cfg.lambda_mask)


def total_loss(logits: Tensor, label: int, x_mid: Tensor, x_p: Tensor,
               cfg: LossConfig | None = None) -> Tensor:
    """Multi-class cross entropy plus the identity loss."""
    return add(cross_entropy(logits, label), identity_loss(x_mid, x_p, cfg))
