"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .disentangle import LossConfig, total_loss
from .synth import ToyBackbone
from .tensor import Tape, Tensor

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
# entries below this magnitude are compared with an absolute floor,
# otherwise finite-difference noise dominates the ratio
REL_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def numerical_gradient(fn: Callable[[], float], leaf: Tensor, step: float = DEFAULT_STEP) -> np.ndarray:
    """Central differences of a scalar function w.r.t. one leaf tensor.

    ``fn`` must recompute the forward value from the leaf's current data.
    """
    grad = np.zeros_like(leaf.data)
    flat = leaf.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + step
        up = fn()
        flat[i] = saved - step
        down = fn()
        flat[i] = saved
        gflat[i] = (up - down) / (2.0 * step)
    return grad


@dataclass(frozen=True)
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def check_function(fn: Callable[[], Tensor], leaves: dict[str, Tensor],
                   step: float = DEFAULT_STEP, tolerance: float = DEFAULT_TOLERANCE,
                   corrupt_leaf: str | None = None) -> GradCheckReport:
    """Compare tape gradients of ``fn()`` against central differences.

    ``fn`` rebuilds the scalar loss from the leaves each time it is called;
    it is invoked once under a tape and twice per element for differences.
    ``corrupt_leaf`` perturbs that leaf's analytic gradient before the
    comparison (a negative control that must trip the check).
    """
    with Tape() as tape:
        for leaf in leaves.values():
            tape.watch(leaf)
        grads = tape.backward(fn())
    if corrupt_leaf is not None:
        grads[leaves[corrupt_leaf]] = grads[leaves[corrupt_leaf]] + 0.5
    errors = {}
    for name, leaf in leaves.items():
        numeric = numerical_gradient(lambda: fn().item(), leaf, step)
        errors[name] = relative_error(grads[leaf], numeric)
    return GradCheckReport(errors=errors, tolerance=tolerance)


def check_loss_pipeline(seed: int = 0, frames: int = 4, mid_channels: int = 2,
                        penultimate_channels: int = 3, mid_size: int = 6,
                        penultimate_size: int = 3, num_classes: int = 4,
                        step: float = DEFAULT_STEP,
                        tolerance: float = DEFAULT_TOLERANCE,
                        corrupt_leaf: str | None = None) -> GradCheckReport:
    """Check the identity-loss path gradients for x_mid and x_p directly."""
    rng = np.random.default_rng(seed)
    x_mid = Tensor(rng.uniform(-1, 1, (frames, mid_channels, mid_size, mid_size)), requires_grad=True)
    x_p = Tensor(
        rng.uniform(-1, 1, (frames, penultimate_channels, penultimate_size, penultimate_size)),
        requires_grad=True,
    )
    logits = Tensor(rng.uniform(-1, 1, num_classes), requires_grad=True)
    cfg = LossConfig()

    def fn():
        return total_loss(logits, 1, x_mid, x_p, cfg)

    leaves = {"x_mid": x_mid, "x_p": x_p, "logits": logits}
    return check_function(fn, leaves, step, tolerance, corrupt_leaf=corrupt_leaf)


def check_backbone_pipeline(seed: int = 0, frames: int = 4, size: int = 6,
                            num_classes: int = 3, step: float = DEFAULT_STEP,
                            tolerance: float = DEFAULT_TOLERANCE) -> GradCheckReport:
    """Check the full loss gradients through toy backbone weights and input."""
    rng = np.random.default_rng(seed)
    backbone = ToyBackbone(num_classes=num_classes, channels=(2, 2, 3), seed=seed + 1)
    video = Tensor(rng.uniform(-1, 1, (frames, 1, size, size)), requires_grad=True)
    label = int(rng.integers(0, num_classes))
    cfg = LossConfig()

    def fn():
        taps = backbone.forward(video)
        return total_loss(taps.logits, label, taps.mid, taps.penultimate, cfg)

    leaves = {"video": video, **backbone.params}
    return check_function(fn, leaves, step, tolerance)
