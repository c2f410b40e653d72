"""Synthetic videos with ground-truth region labels, a small 3-D conv
backbone with mid/penultimate taps, and an SGD trainer for the combined
cross-entropy + identity loss.

Scenes are sums of boxed regions: dynamic regions oscillate sinusoidally,
static regions hold a constant amplitude, and everything else is zero
background plus optional Gaussian noise. Sinusoids make the expected
spectra closed-form, so mask behaviour is checkable analytically.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .disentangle import LossConfig, identity_loss
from .sampler import (
    VideoSegments,
    ensemble,
    sampling_mask,
    select_frames,
    softmax,
    uniform_sample,
)
from .tensor import (
    Tape,
    Tensor,
    add,
    conv3d,
    cross_entropy,
    mul,
    reduce_mean,
    reduce_sum,
    scale,
    softplus,
)


class SceneSpecError(ValueError):
    """Scene description violates the generator's constraints."""


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


class RegionKind(enum.Enum):
    STATIC_BACKGROUND = "static_background"
    DYNAMIC_BACKGROUND = "dynamic_background"
    STATIC_SALIENT = "static_salient"
    DYNAMIC_SALIENT = "dynamic_salient"

    @property
    def is_salient(self) -> bool:
        return self in (RegionKind.STATIC_SALIENT, RegionKind.DYNAMIC_SALIENT)

    @property
    def is_dynamic(self) -> bool:
        return self in (RegionKind.DYNAMIC_SALIENT, RegionKind.DYNAMIC_BACKGROUND)


# label-map codes; higher code wins where regions overlap
LABEL_CODES = {
    RegionKind.STATIC_BACKGROUND: 0,
    RegionKind.DYNAMIC_BACKGROUND: 1,
    RegionKind.STATIC_SALIENT: 2,
    RegionKind.DYNAMIC_SALIENT: 3,
}


@dataclass(frozen=True)
class Region:
    """Axis-aligned box, rows [top, top+height) and cols [left, left+width)."""

    kind: RegionKind
    top: int
    left: int
    height: int
    width: int
    amplitude: float
    frequency: float = 0.0  # cycles per frame; 0 for static kinds
    phase: float = 0.0

    def overlaps(self, other: "Region") -> bool:
        return not (
            self.top + self.height <= other.top
            or other.top + other.height <= self.top
            or self.left + self.width <= other.left
            or other.left + other.width <= self.left
        )


@dataclass(frozen=True)
class SceneSpec:
    height: int
    width: int
    num_frames: int
    regions: tuple[Region, ...] = ()
    noise_sigma: float = 0.0
    seed: int = 0


def _validate_scene(spec: SceneSpec) -> None:
    if spec.height < 1 or spec.width < 1 or spec.num_frames < 1:
        raise SceneSpecError(f"grid/frame extents must be >= 1, got {spec.height}x{spec.width}x{spec.num_frames}")
    if spec.noise_sigma < 0:
        raise SceneSpecError(f"noise_sigma must be >= 0, got {spec.noise_sigma}")
    salient = []
    for r in spec.regions:
        if r.height < 1 or r.width < 1:
            raise SceneSpecError(f"region box must be non-empty, got {r}")
        if r.top < 0 or r.left < 0 or r.top + r.height > spec.height or r.left + r.width > spec.width:
            raise SceneSpecError(f"region box leaves the {spec.height}x{spec.width} grid: {r}")
        if r.kind.is_dynamic and r.frequency <= 0:
            raise SceneSpecError(f"dynamic region must have frequency > 0: {r}")
        if not r.kind.is_dynamic and r.frequency != 0:
            raise SceneSpecError(f"static region must have frequency = 0: {r}")
        if r.kind.is_salient:
            salient.append(r)
    for i, a in enumerate(salient):
        for b in salient[i + 1 :]:
            if a.overlaps(b):
                raise SceneSpecError(f"salient regions overlap, labels would be ambiguous: {a} and {b}")


def generate_scene(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Render a [T,1,H,W] video and its [H,W] region label map.

    Pixel values sum the covering regions (sinusoid for dynamic, constant
    for static) plus Gaussian noise; deterministic per seed. Unclaimed
    pixels are static background.
    """
    _validate_scene(spec)
    t = np.arange(spec.num_frames, dtype=np.float64)
    video = np.zeros((spec.num_frames, 1, spec.height, spec.width))
    labels = np.full((spec.height, spec.width), LABEL_CODES[RegionKind.STATIC_BACKGROUND], dtype=np.int64)
    for r in spec.regions:
        if r.kind.is_dynamic:
            signal = r.amplitude * np.sin(2.0 * np.pi * r.frequency * t + r.phase)
        else:
            signal = np.full_like(t, r.amplitude)
        rows = slice(r.top, r.top + r.height)
        cols = slice(r.left, r.left + r.width)
        video[:, 0, rows, cols] += signal[:, None, None]
        labels[rows, cols] = np.maximum(labels[rows, cols], LABEL_CODES[r.kind])
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        video += rng.normal(0.0, spec.noise_sigma, video.shape)
    return video, labels


def _place_box(rng, grid_h, grid_w, box_h, box_w, taken: list[Region], kind, amplitude,
               frequency=0.0, phase=0.0, max_tries=200) -> Region:
    for _ in range(max_tries):
        top = int(rng.integers(0, grid_h - box_h + 1))
        left = int(rng.integers(0, grid_w - box_w + 1))
        region = Region(kind, top, left, box_h, box_w, amplitude, frequency, phase)
        if not any(region.overlaps(other) for other in taken):
            return region
    raise SceneSpecError(f"could not place a disjoint {box_h}x{box_w} box on a {grid_h}x{grid_w} grid")


def sample_scene_spec(seed: int, height: int = 16, width: int = 16, num_frames: int = 16,
                      noise_sigma: float = 0.0) -> SceneSpec:
    """Random scene containing all four region kinds on disjoint boxes."""
    rng = np.random.default_rng(seed)
    regions: list[Region] = []
    regions.append(
        _place_box(
            rng, height, width, int(rng.integers(4, 7)), int(rng.integers(4, 7)), regions,
            RegionKind.DYNAMIC_SALIENT, amplitude=float(rng.uniform(0.8, 1.2)),
            frequency=float(rng.uniform(0.1, 0.45)), phase=float(rng.uniform(0.0, 2.0 * np.pi)),
        )
    )
    regions.append(
        _place_box(
            rng, height, width, int(rng.integers(3, 6)), int(rng.integers(3, 6)), regions,
            RegionKind.STATIC_SALIENT, amplitude=float(rng.uniform(0.8, 1.2)),
        )
    )
    regions.append(
        _place_box(
            rng, height, width, int(rng.integers(3, 5)), int(rng.integers(3, 5)), regions,
            RegionKind.DYNAMIC_BACKGROUND, amplitude=float(rng.uniform(0.15, 0.3)),
            frequency=float(rng.uniform(0.1, 0.45)), phase=float(rng.uniform(0.0, 2.0 * np.pi)),
        )
    )
    return SceneSpec(height, width, num_frames, tuple(regions), noise_sigma, seed)


# ---------------------------------------------------------------------------
# labeled motion dataset
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SceneTemplate:
    """Generation parameters shared by every sample of a dataset."""

    height: int = 16
    width: int = 16
    num_frames: int = 16
    sampled_frames: int = 8  # frames consumed by the backbone after uniform sampling
    noise_sigma: float = 0.05
    amplitude: float = 1.0
    train_samples: int = 200
    eval_samples: int = 50
    seed: int = 0


@dataclass(frozen=True)
class Sample:
    video: np.ndarray  # [num_frames, 1, H, W]
    label: int


@dataclass(frozen=True)
class MotionDataset:
    train: tuple[Sample, ...]
    eval: tuple[Sample, ...]
    num_classes: int
    num_segments: int
    class_bins: tuple[int, ...]  # DFT bin of each class at the sampled length
    class_frequencies: tuple[float, ...]  # cycles per clip frame
    template: SceneTemplate


def class_frequency_bins(num_classes: int, sampled_frames: int) -> list[int]:
    """Distinct alias-free bins, spread as widely as the length allows."""
    top = sampled_frames // 2
    if num_classes > top:
        raise ValueError(f"{num_classes} classes need at least {2 * num_classes} sampled frames")
    if num_classes == 1:
        return [top]
    bins = [1 + round(c * (top - 1) / (num_classes - 1)) for c in range(num_classes)]
    if len(set(bins)) != num_classes:
        raise ValueError(f"could not assign distinct bins for {num_classes} classes at length {sampled_frames}")
    return bins


def _balanced_counts(total: int, num_classes: int) -> list[int]:
    base, extra = divmod(total, num_classes)
    return [base + (1 if c < extra else 0) for c in range(num_classes)]


def _class_scene(rng, template: SceneTemplate, frequency: float, sample_seed: int) -> SceneSpec:
    # fixed box sizes: the class signal is frequency, so box-area jitter
    # would only add multiplicative nuisance to the pooled statistics
    regions: list[Region] = []
    regions.append(
        _place_box(
            rng, template.height, template.width, 6, 6,
            regions, RegionKind.DYNAMIC_SALIENT,
            amplitude=float(template.amplitude * rng.uniform(0.9, 1.1)),
            frequency=frequency, phase=float(rng.uniform(0.0, 2.0 * np.pi)),
        )
    )
    regions.append(
        _place_box(
            rng, template.height, template.width, 4, 4,
            regions, RegionKind.STATIC_SALIENT,
            amplitude=float(template.amplitude * rng.uniform(0.9, 1.1)),
        )
    )
    regions.append(
        _place_box(
            rng, template.height, template.width, 3, 3,
            regions, RegionKind.DYNAMIC_BACKGROUND,
            amplitude=float(template.amplitude * rng.uniform(0.15, 0.2)),
            frequency=float(rng.uniform(0.1, 0.45)), phase=float(rng.uniform(0.0, 2.0 * np.pi)),
        )
    )
    return SceneSpec(
        template.height, template.width, template.num_frames, tuple(regions),
        template.noise_sigma, sample_seed,
    )


def motion_classes(num_classes: int = 4, template: SceneTemplate | None = None) -> MotionDataset:
    """Balanced labeled dataset whose classes differ only by the salient
    region's oscillation frequency.

    Frequencies are placed exactly on DFT bins of the uniformly sampled
    clip, so they stay distinct after sampling every s-th frame.
    """
    if template is None:
        template = SceneTemplate()
    stride = template.num_frames // template.sampled_frames
    if stride < 1:
        raise ValueError("sampled_frames cannot exceed num_frames")
    bins = class_frequency_bins(num_classes, template.sampled_frames)
    freqs = [b / (stride * template.sampled_frames) for b in bins]

    def build(split: str, total: int) -> tuple[Sample, ...]:
        split_tag = 0 if split == "train" else 1
        samples = []
        for label, count in enumerate(_balanced_counts(total, num_classes)):
            for i in range(count):
                sample_seed = template.seed * 1_000_003 + split_tag * 100_003 + label * 1_009 + i
                rng = np.random.default_rng([template.seed, split_tag, label, i])
                spec = _class_scene(rng, template, freqs[label], sample_seed)
                video, _ = generate_scene(spec)
                samples.append(Sample(video=video, label=label))
        return tuple(samples)

    return MotionDataset(
        train=build("train", template.train_samples),
        eval=build("eval", template.eval_samples),
        num_classes=num_classes,
        num_segments=template.sampled_frames,
        class_bins=tuple(bins),
        class_frequencies=tuple(freqs),
        template=template,
    )


# ---------------------------------------------------------------------------
# toy backbone
# ---------------------------------------------------------------------------

@dataclass
class BackboneTaps:
    logits: Tensor
    level1: Tensor
    mid: Tensor  # after block 2
    penultimate: Tensor  # after block 3


class ToyBackbone:
    """Three 3-D conv blocks with softplus, then global average pooling
    and a linear classifier head.

    Block 1 is a temporal filterbank (length-7 kernels, no spatial
    extent) with a deliberately large init gain: softplus rectification
    turns each channel's temporal filter gain into a pooled frequency
    statistic, which is what separates motion classes. Blocks 2 and 3
    are 3x3x3 with near-identity init so that contrast survives depth
    from the first step; block 3 strides 2 spatially. Penultimate
    activations are scaled down with a fixed compensating gain at the
    pooled readout, keeping the identity-loss pressure at the
    regularizer level it has on full-scale backbones without touching
    its weight.

    Mid-level features tap after block 2 and penultimate features after
    block 3. Well under 50k parameters at the default widths.
    """

    TEMPORAL_KERNEL = 7
    FILTERBANK_GAIN = 5.0
    IDENTITY_INIT_NOISE = 0.12
    PENULTIMATE_SCALE = 0.25
    READOUT_GAIN = 8.0

    @classmethod
    def _filterbank(cls, c1: int, in_channels: int) -> np.ndarray:
        # cos/sin pairs at evenly spaced temporal frequencies over (0, pi];
        # a deterministic, seed-independent starting basis
        kt = cls.TEMPORAL_KERNEL
        taps = np.arange(kt) - (kt - 1) / 2.0
        w = np.zeros((c1, in_channels, kt, 1, 1))
        pairs = (c1 + 1) // 2
        base = cls.FILTERBANK_GAIN * 2.0 / kt
        for j in range(pairs):
            omega = np.pi * (j + 1) / pairs
            w[2 * j, :, :, 0, 0] = base * np.cos(omega * taps)
            if 2 * j + 1 < c1:
                w[2 * j + 1, :, :, 0, 0] = base * np.sin(omega * taps)
        return w

    def __init__(self, num_classes: int = 4, in_channels: int = 1,
                 channels: tuple[int, int, int] = (8, 8, 8), seed: int = 0):
        self.num_classes = num_classes
        self.in_channels = in_channels
        self.channels = channels
        rng = np.random.default_rng(seed)
        c1, c2, c3 = channels

        def near_identity(k_out, c_in):
            w = rng.normal(0.0, self.IDENTITY_INIT_NOISE, (k_out, c_in, 3, 3, 3))
            for k in range(min(k_out, c_in)):
                w[k, k, 1, 1, 1] += 1.0
            return w

        self.params: dict[str, Tensor] = {
            "conv1_w": Tensor(self._filterbank(c1, in_channels), requires_grad=True),
            "conv1_b": Tensor(np.zeros((c1, 1, 1)), requires_grad=True),
            "conv2_w": Tensor(near_identity(c2, c1), requires_grad=True),
            "conv2_b": Tensor(np.zeros((c2, 1, 1)), requires_grad=True),
            "conv3_w": Tensor(near_identity(c3, c2), requires_grad=True),
            "conv3_b": Tensor(np.zeros((c3, 1, 1)), requires_grad=True),
            "head_w": Tensor(rng.normal(0.0, (1.0 / c3) ** 0.5, (num_classes, c3)), requires_grad=True),
            "head_b": Tensor(np.zeros(num_classes), requires_grad=True),
        }

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def level1(self, video: Tensor) -> Tensor:
        p = self.params
        pad = (self.TEMPORAL_KERNEL // 2, 0, 0)
        return softplus(add(conv3d(video, p["conv1_w"], padding=pad), p["conv1_b"]))

    def forward(self, video: Tensor) -> BackboneTaps:
        p = self.params
        h1 = self.level1(video)
        h2 = softplus(add(conv3d(h1, p["conv2_w"], padding=1), p["conv2_b"]))
        h3 = scale(
            softplus(add(conv3d(h2, p["conv3_w"], stride=(1, 2, 2), padding=1), p["conv3_b"])),
            self.PENULTIMATE_SCALE,
        )
        pooled = scale(reduce_mean(h3, axis=(0, 2, 3)), self.READOUT_GAIN)
        logits = add(reduce_sum(mul(p["head_w"], pooled), axis=1), p["head_b"])
        return BackboneTaps(logits=logits, level1=h1, mid=h2, penultimate=h3)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lambda_mask: float = 0.1
    epochs: int = 30
    batch_size: int = 4
    seed: int = 0
    normalize_mask: bool = True

    def __post_init__(self):
        for name in ("lr", "momentum", "weight_decay", "lambda_mask"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    cross_entropy: float
    mask_loss: float
    accuracy: float


@dataclass
class TrainResult:
    history: list[EpochStats]

    @property
    def final(self) -> EpochStats:
        return self.history[-1]


def clip_logits(backbone: ToyBackbone, clip: np.ndarray, num_segments: int,
                uniform_index: int = 0) -> np.ndarray:
    """Logits from the uniformly sampled frames of a clip."""
    idx = uniform_sample(clip.shape[0], num_segments, uniform_index)
    taps = backbone.forward(Tensor._wrap(np.ascontiguousarray(clip[idx])))
    return taps.logits.data


def evaluate(backbone: ToyBackbone, samples, num_segments: int, uniform_index: int = 0) -> float:
    """Top-1 accuracy under uniform frame sampling."""
    hits = 0
    for s in samples:
        pred = int(np.argmax(clip_logits(backbone, s.video, num_segments, uniform_index)))
        hits += pred == s.label
    return hits / len(samples)


@dataclass(frozen=True)
class EnsemblePrediction:
    uniform_class: int
    sampled_class: int
    ensemble_class: int
    selected_frames: tuple[int, ...]


def ensemble_prediction(backbone: ToyBackbone, clip: np.ndarray, num_segments: int,
                        uniform_index: int = 0, mode: str = "argmax",
                        strict_paper_weights: bool = False,
                        sum_logits: bool = False) -> EnsemblePrediction:
    """Predict from uniform frames and mask-selected frames, then sum.

    Frame selection costs run on level-1 features, with the combined
    normalized mask of the uniform-frame feature volume.
    """
    idx_u = uniform_sample(clip.shape[0], num_segments, uniform_index)
    logits_u = clip_logits(backbone, clip, num_segments, uniform_index)
    level1 = backbone.level1(Tensor._wrap(clip)).data
    seg = VideoSegments(level1, num_segments, uniform_index)
    mask = sampling_mask(seg)
    selected = select_frames(seg, mask, mode=mode, strict_paper_weights=strict_paper_weights)
    logits_s = backbone.forward(Tensor._wrap(np.ascontiguousarray(clip[selected]))).logits.data
    if sum_logits:
        pred_u, pred_s = logits_u, logits_s
    else:
        pred_u, pred_s = softmax(logits_u), softmax(logits_s)
    return EnsemblePrediction(
        uniform_class=int(np.argmax(logits_u)),
        sampled_class=int(np.argmax(logits_s)),
        ensemble_class=ensemble(pred_u, pred_s),
        selected_frames=tuple(selected),
    )


def evaluate_ensemble(backbone: ToyBackbone, samples, num_segments: int,
                      uniform_index: int = 0, mode: str = "argmax",
                      strict_paper_weights: bool = False,
                      sum_logits: bool = False) -> tuple[float, float]:
    """(uniform top-1, ensemble top-1) over a sample list."""
    hits_u = hits_e = 0
    for s in samples:
        pred = ensemble_prediction(
            backbone, s.video, num_segments, uniform_index, mode, strict_paper_weights, sum_logits
        )
        hits_u += pred.uniform_class == s.label
        hits_e += pred.ensemble_class == s.label
    return hits_u / len(samples), hits_e / len(samples)


def train(dataset: MotionDataset, backbone: ToyBackbone, cfg: TrainConfig | None = None) -> TrainResult:
    """SGD with momentum and weight decay over cross entropy + identity loss.

    Gradients are averaged over each batch in a fixed order, so runs are
    bit-reproducible for a given seed. Raises DivergenceError if the loss
    stops being finite.
    """
    if cfg is None:
        cfg = TrainConfig()
    if not dataset.train:
        raise ValueError("training dataset is empty")
    loss_cfg = LossConfig(lambda_mask=cfg.lambda_mask, normalize_mask=cfg.normalize_mask)
    rng = np.random.default_rng(cfg.seed)
    params = backbone.params
    velocity = {name: np.zeros_like(p.data) for name, p in params.items()}
    history: list[EpochStats] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset.train))
        ce_total = 0.0
        lm_total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            grad_acc = {name: np.zeros_like(p.data) for name, p in params.items()}
            for sample_pos in batch:
                sample = dataset.train[sample_pos]
                idx = uniform_sample(sample.video.shape[0], dataset.num_segments)
                x = Tensor._wrap(np.ascontiguousarray(sample.video[idx]))
                with Tape() as tape:
                    taps = backbone.forward(x)
                    ce = cross_entropy(taps.logits, sample.label)
                    lm = identity_loss(taps.mid, taps.penultimate, loss_cfg)
                    loss = add(ce, lm)
                    loss_val = loss.item()
                    if not np.isfinite(loss_val):
                        raise DivergenceError(
                            f"non-finite loss {loss_val} at epoch {epoch}, batch starting {start}"
                        )
                    grads = tape.backward(loss)
                ce_total += ce.item()
                lm_total += lm.item()
                for name, p in params.items():
                    grad_acc[name] += grads[p]
            inv = 1.0 / len(batch)
            for name, p in params.items():
                g = grad_acc[name] * inv + cfg.weight_decay * p.data
                velocity[name] = cfg.momentum * velocity[name] + g
                p.data = p.data - cfg.lr * velocity[name]
        accuracy = evaluate(backbone, dataset.eval, dataset.num_segments) if dataset.eval else 0.0
        history.append(
            EpochStats(
                epoch=epoch,
                cross_entropy=ce_total / len(order),
                mask_loss=lm_total / len(order),
                accuracy=accuracy,
            )
        )
    return TrainResult(history=history)
