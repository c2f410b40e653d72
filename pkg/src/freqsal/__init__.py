"""freqsal: temporal-frequency saliency masks, a differentiable identity
loss for feature disentanglement, and frequency-guided key-frame sampling,
on a small self-contained tensor/autodiff core.
"""

__version__ = "0.1.0"

from .tensor import (
    ShapeError,
    Tape,
    Tensor,
    add,
    broadcast_shape,
    conv3d,
    cross_entropy,
    mul,
    reduce_mean,
    reduce_sum,
    resize_bilinear,
    scale,
    shifted_reciprocal,
    square,
    sub,
    tanh,
)
from .spectral import frequency_vector, power, temporal_dft
from .masks import SaliencyMap, apply_mask, combined_mask, dynamic_mask, static_mask
from .disentangle import ConfigError, LossConfig, identity_loss, total_loss, transfer_mask
from .sampler import (
    SegmentCost,
    VideoSegments,
    ensemble,
    net_cost,
    sampling_mask,
    segment_costs,
    select_frames,
    softmax,
    uniform_sample,
)
from .synth import (
    DivergenceError,
    MotionDataset,
    Region,
    RegionKind,
    Sample,
    SceneSpec,
    SceneSpecError,
    SceneTemplate,
    ToyBackbone,
    TrainConfig,
    evaluate,
    evaluate_ensemble,
    generate_scene,
    motion_classes,
    sample_scene_spec,
    train,
)
from .container import FormatError, parse_tensor, read_tensor, tensor_bytes, write_tensor
from .config import GenSpec, RunConfig, load_gen_spec, load_run_config
