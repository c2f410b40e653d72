"""Key-frame selection over uniform video segments.

Each candidate frame is scored against the uniform frames of earlier and
later segments by distance-weighted mean squared differences of masked
features; the per-segment winner of the weighted net cost is selected.
Runs at evaluation time only and never differentiates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .masks import SaliencyMap, combined_mask
from .tensor import ShapeError, Tensor


def uniform_sample(num_frames: int, num_segments: int, uniform_index: int = 0) -> list[int]:
    """One frame per segment at a fixed within-segment offset.

    Segment length is floor(num_frames / num_segments); trailing remainder
    frames are left unassigned.
    """
    if num_segments < 1:
        raise ValueError(f"num_segments must be >= 1, got {num_segments}")
    if num_segments > num_frames:
        raise ValueError(f"cannot split {num_frames} frames into {num_segments} segments")
    per = num_frames // num_segments
    if not 0 <= uniform_index < per:
        raise ValueError(f"uniform_index {uniform_index} outside segment of {per} frames")
    return [i * per + uniform_index for i in range(num_segments)]


@dataclass(frozen=True)
class VideoSegments:
    """Per-frame features split into uniform segments.

    ``features`` is [num_frames, C, H, W]; frames beyond
    num_segments * frames_per_segment are ignored.
    """

    features: np.ndarray
    num_segments: int
    uniform_index: int = 0

    def __post_init__(self):
        if self.features.ndim != 4:
            raise ShapeError(f"features must be [N,C,H,W], got shape {self.features.shape}")
        # validates segment count and the uniform offset
        uniform_sample(self.features.shape[0], self.num_segments, self.uniform_index)

    @property
    def frames_per_segment(self) -> int:
        return self.features.shape[0] // self.num_segments

    def frame(self, segment: int, index: int) -> np.ndarray:
        """Feature map of 1-based (segment, within-segment index)."""
        return self.features[(segment - 1) * self.frames_per_segment + (index - 1)]

    def uniform_frame(self, segment: int) -> np.ndarray:
        return self.frame(segment, self.uniform_index + 1)

    def global_index(self, segment: int, index: int) -> int:
        return (segment - 1) * self.frames_per_segment + (index - 1)


@dataclass(frozen=True)
class SegmentCost:
    """Costs of candidate frame j in segment i (both 1-based)."""

    segment: int
    frame: int
    prior: float
    future: float
    weight_prior: float = 0.0
    weight_future: float = 0.0
    net: float = 0.0


def _masked(mask: SaliencyMap, feat: np.ndarray) -> np.ndarray:
    return mask.values.data * feat


def _mean_sq_diff(a: np.ndarray, b: np.ndarray) -> float:
    d = a - b
    return float((d * d).mean())


def segment_costs(seg: VideoSegments, mask: SaliencyMap, segment: int, frame: int) -> SegmentCost:
    """Distance-weighted prior/future costs of one candidate frame.

    prior = sum_{k<i} (T-i+k)/T * msd(M*x_{i,j}, M*x_{U-k}); future mirrors
    it over k>i with weights (T+i-k)/T. Empty sums are exactly zero.
    """
    t = seg.num_segments
    if not 1 <= segment <= t:
        raise ValueError(f"segment {segment} out of range 1..{t}")
    if not 1 <= frame <= seg.frames_per_segment:
        raise ValueError(f"frame {frame} out of range 1..{seg.frames_per_segment}")
    cand = _masked(mask, seg.frame(segment, frame))
    prior = 0.0
    for k in range(1, segment):
        weight = (t - segment + k) / t
        prior += weight * _mean_sq_diff(cand, _masked(mask, seg.uniform_frame(k)))
    future = 0.0
    for k in range(segment + 1, t + 1):
        weight = (t + segment - k) / t
        future += weight * _mean_sq_diff(cand, _masked(mask, seg.uniform_frame(k)))
    return SegmentCost(segment=segment, frame=frame, prior=prior, future=future)


def net_cost(entry: SegmentCost, num_segments: int, strict_paper_weights: bool = False) -> SegmentCost:
    """Weighted combination of the prior and future costs.

    weight_prior = prior/(prior+future) * i. The future weight uses the
    future cost in its numerator by default; ``strict_paper_weights``
    switches its numerator to the prior cost as well. A zero total cost
    yields net = 0 (guarded division).
    """
    total = entry.prior + entry.future
    i = entry.segment
    if total == 0.0:
        return SegmentCost(entry.segment, entry.frame, entry.prior, entry.future, 0.0, 0.0, 0.0)
    w_p = entry.prior / total * i
    numerator = entry.prior if strict_paper_weights else entry.future
    w_f = numerator / total * (num_segments - i)
    net = w_p * entry.prior + w_f * entry.future
    return SegmentCost(entry.segment, entry.frame, entry.prior, entry.future, w_p, w_f, net)


def select_frames(seg: VideoSegments, mask: SaliencyMap, mode: str = "argmax",
                  strict_paper_weights: bool = False) -> list[int]:
    """Best frame per segment by net cost; returns global frame indices.

    ``argmax`` (default) picks the highest-cost candidate, ``argmin`` the
    lowest; ties break to the smallest within-segment index.
    """
    if mode not in ("argmax", "argmin"):
        raise ValueError(f"mode must be 'argmax' or 'argmin', got {mode!r}")
    chosen = []
    for i in range(1, seg.num_segments + 1):
        nets = [
            net_cost(segment_costs(seg, mask, i, j), seg.num_segments, strict_paper_weights).net
            for j in range(1, seg.frames_per_segment + 1)
        ]
        arr = np.asarray(nets)
        j = int(np.argmax(arr) if mode == "argmax" else np.argmin(arr))
        chosen.append(seg.global_index(i, j + 1))
    return chosen


def sampling_mask(seg: VideoSegments) -> SaliencyMap:
    """Combined normalized mask of the uniform-frame volume, one per video."""
    idx = uniform_sample(seg.features.shape[0], seg.num_segments, seg.uniform_index)
    volume = Tensor._wrap(np.ascontiguousarray(seg.features[idx]))
    return combined_mask(volume, normalize=True)


def softmax(v: np.ndarray) -> np.ndarray:
    """Numerically stable softmax of a vector."""
    z = np.exp(v - np.max(v))
    return z / z.sum()


def ensemble(pred_uniform: np.ndarray, pred_sampled: np.ndarray) -> int:
    """Class index of the elementwise sum of two prediction vectors.

    Ties break to the lowest class index; symmetric in its arguments.
    """
    pred_uniform = np.asarray(pred_uniform, dtype=float)
    pred_sampled = np.asarray(pred_sampled, dtype=float)
    if pred_uniform.shape != pred_sampled.shape or pred_uniform.ndim != 1:
        raise ShapeError(
            f"prediction vectors must share one rank-1 shape, got {pred_uniform.shape} and {pred_sampled.shape}"
        )
    return int(np.argmax(pred_uniform + pred_sampled))
