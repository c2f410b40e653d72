"""Static and dynamic temporal-frequency saliency masks.

The dynamic mask weights per-bin spectral power by squared frequency, so
it lights up where pixel intensity oscillates; the static mask weights
power by 1/(1+f^2), so it lights up where strong signal is temporally
constant. Their sum is the combined saliency prior applied to feature
volumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import frequency_vector, power, temporal_dft
from .tensor import (
    ShapeError,
    Tensor,
    _as_tensor,
    add,
    mul,
    reduce_mean,
    reduce_sum,
    shifted_reciprocal,
)

NORMALIZE_EPS = 1e-8

DYNAMIC = "dynamic"
STATIC = "static"
COMBINED = "combined"


@dataclass
class SaliencyMap:
    """Non-negative spatial saliency, [C,H,W] raw or [H,W] collapsed."""

    values: Tensor
    kind: str
    normalized: bool = False

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.values.shape[-2], self.values.shape[-1]


def _check_volume(x: Tensor) -> None:
    if x.ndim != 4:
        raise ShapeError(f"expected a [T,C,H,W] feature volume, got shape {x.shape}")


def _weighted_power_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    # weights: [T], broadcast over the frequency axis of the power spectrum
    spec_power = power(temporal_dft(x))
    w = Tensor._wrap(weights.reshape((-1,) + (1,) * (x.ndim - 1)))
    return reduce_sum(mul(spec_power, w), axis=0)


def dynamic_mask(x: Tensor) -> SaliencyMap:
    """Sum over bins of |X_k|^2 * f_k^2; zero wherever a pixel is constant."""
    x = _as_tensor(x)
    _check_volume(x)
    f = frequency_vector(x.shape[0])
    return SaliencyMap(_weighted_power_sum(x, f * f), DYNAMIC)


def static_mask(x: Tensor) -> SaliencyMap:
    """Sum over bins of |X_k|^2 / (1 + f_k^2); dominated by the DC bin."""
    x = _as_tensor(x)
    _check_volume(x)
    f = frequency_vector(x.shape[0])
    return SaliencyMap(_weighted_power_sum(x, 1.0 / (1.0 + f * f)), STATIC)


def combined_mask(x: Tensor, normalize: bool = True) -> SaliencyMap:
    """Elementwise sum of the static and dynamic masks.

    With ``normalize`` the map is divided by (mean + 1e-8), giving mean 1
    for any input whose mask is not vanishingly small; an all-zero volume
    stays all-zero thanks to the guard term.
    """
    x = _as_tensor(x)
    m = add(dynamic_mask(x).values, static_mask(x).values)
    if normalize:
        # 1/(mean + eps) expressed through the shifted-reciprocal primitive
        shifted = add(reduce_mean(m), NORMALIZE_EPS - 1.0)
        m = mul(m, shifted_reciprocal(shifted))
    return SaliencyMap(m, COMBINED, normalized=normalize)


def apply_mask(m: SaliencyMap, x: Tensor) -> Tensor:
    """Broadcast the mask over the time axis (and channels if collapsed)."""
    x = _as_tensor(x)
    _check_volume(x)
    if m.spatial_shape != (x.shape[2], x.shape[3]):
        raise ShapeError(
            f"mask spatial shape {m.spatial_shape} does not match volume {x.shape}; resize it first"
        )
    return mul(x, m.values)
