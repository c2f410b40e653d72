"""Command-line entry point: dataset generation, mask export, frame
sampling, gradient checking, training, and evaluation.

Every command is deterministic for a fixed (config, seed) pair; repeated
runs produce byte-identical outputs. Exit codes: 0 success, 2 I/O,
3 format/shape, 4 missing data, 5 gradient check failure, 6 config or
checkpoint mismatch.
"""

from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import GenSpec, RunConfig, load_gen_spec, load_run_config
from .container import FormatError, read_tensor, write_tensor
from .disentangle import ConfigError
from .gradcheck import check_backbone_pipeline, check_loss_pipeline
from .masks import combined_mask, dynamic_mask, static_mask
from .sampler import VideoSegments, sampling_mask, select_frames
from .synth import (
    MotionDataset,
    Sample,
    SceneTemplate,
    ToyBackbone,
    TrainConfig,
    evaluate,
    evaluate_ensemble,
    motion_classes,
    train,
)
from .tensor import ShapeError, Tensor

EXIT_OK = 0
EXIT_IO = 2
EXIT_FORMAT = 3
EXIT_MISSING = 4
EXIT_GRADCHECK = 5
EXIT_CONFIG = 6


class MissingDataError(FileNotFoundError):
    """Expected data files are absent."""


class CheckpointError(ValueError):
    """Checkpoint does not match the requested dataset or config."""


def _fmt(v: float) -> str:
    return f"{v:.9g}"


# ---------------------------------------------------------------------------
# dataset and checkpoint files
# ---------------------------------------------------------------------------

def _write_split(out_dir: Path, split: str, samples) -> None:
    split_dir = out_dir / split
    split_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, sample in enumerate(samples):
        rel = f"{split}/{sample.label}_{i:04d}.fvt"
        write_tensor(out_dir / rel, sample.video.astype(np.float32))
        lines.append(f"{rel}\t{sample.label}")
    (out_dir / f"{split}.tsv").write_text("\n".join(lines) + "\n")


def _read_split(data_dir: Path, split: str) -> list[Sample]:
    manifest = data_dir / f"{split}.tsv"
    if not manifest.is_file():
        raise MissingDataError(f"manifest not found: {manifest}")
    samples = []
    for lineno, line in enumerate(manifest.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rel, label = line.split("\t")
        except ValueError:
            raise FormatError(f"{manifest}:{lineno}: expected 'path<TAB>label'") from None
        path = data_dir / rel
        if not path.is_file():
            raise MissingDataError(f"sample listed in manifest is missing: {path}")
        video = read_tensor(path).astype(np.float64)
        if video.ndim != 4:
            raise FormatError(f"{path}: expected a rank-4 video volume, got shape {video.shape}")
        samples.append(Sample(video=video, label=int(label)))
    if not samples:
        raise MissingDataError(f"manifest {manifest} lists no samples")
    return samples


def _save_checkpoint(ckpt_dir: Path, backbone: ToyBackbone) -> None:
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    meta = [
        f"num_classes = {backbone.num_classes}",
        f"in_channels = {backbone.in_channels}",
        f"channels = {','.join(str(c) for c in backbone.channels)}",
    ]
    (ckpt_dir / "meta.txt").write_text("\n".join(meta) + "\n")
    for name, p in backbone.params.items():
        write_tensor(ckpt_dir / f"{name}.fvt", p.data)


def _load_checkpoint(ckpt_dir: Path) -> ToyBackbone:
    meta_path = ckpt_dir / "meta.txt"
    if not meta_path.is_file():
        raise MissingDataError(f"checkpoint meta not found: {meta_path}")
    meta = {}
    for line in meta_path.read_text().splitlines():
        if line.strip():
            key, value = line.split("=", 1)
            meta[key.strip()] = value.strip()
    try:
        backbone = ToyBackbone(
            num_classes=int(meta["num_classes"]),
            in_channels=int(meta["in_channels"]),
            channels=tuple(int(c) for c in meta["channels"].split(",")),
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint meta {meta_path}: {exc}") from None
    for name, p in backbone.params.items():
        path = ckpt_dir / f"{name}.fvt"
        if not path.is_file():
            raise MissingDataError(f"checkpoint tensor missing: {path}")
        data = read_tensor(path).astype(np.float64)
        if data.shape != p.shape:
            raise CheckpointError(f"{path}: shape {data.shape} does not match {name} {p.shape}")
        p.data = data
    return backbone


def _check_dataset_fits(samples: list[Sample], backbone: ToyBackbone, num_segments: int) -> None:
    labels = {s.label for s in samples}
    if max(labels) >= backbone.num_classes or min(labels) < 0:
        raise CheckpointError(
            f"dataset labels {sorted(labels)} do not fit a {backbone.num_classes}-class checkpoint"
        )
    for s in samples:
        if s.video.shape[1] != backbone.in_channels:
            raise CheckpointError(
                f"dataset has {s.video.shape[1]} channels, checkpoint expects {backbone.in_channels}"
            )
        if s.video.shape[0] < num_segments:
            raise CheckpointError(
                f"clip with {s.video.shape[0]} frames cannot be split into {num_segments} segments"
            )


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _cmd_gen(args) -> int:
    spec: GenSpec = load_gen_spec(args.spec)
    template = SceneTemplate(
        height=spec.height,
        width=spec.width,
        num_frames=spec.frames,
        sampled_frames=spec.sampled_frames,
        noise_sigma=spec.noise_sigma,
        amplitude=spec.amplitude,
        train_samples=spec.train_samples,
        eval_samples=spec.eval_samples,
        seed=spec.seed,
    )
    dataset = motion_classes(spec.classes, template)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_split(out_dir, "train", dataset.train)
    _write_split(out_dir, "eval", dataset.eval)
    print(f"wrote {len(dataset.train)} train and {len(dataset.eval)} eval samples to {out_dir}")
    return EXIT_OK


def _cmd_mask(args) -> int:
    volume = read_tensor(args.input)
    if volume.ndim != 4:
        raise FormatError(f"{args.input}: expected a rank-4 [T,C,H,W] volume, got shape {volume.shape}")
    x = Tensor(volume.astype(np.float64))
    if args.kind == "dynamic":
        m = dynamic_mask(x)
    elif args.kind == "static":
        m = static_mask(x)
    else:
        m = combined_mask(x, normalize=not args.no_normalize)
    values = m.values.data
    out = Path(args.out) if args.out else Path(args.input).with_suffix(".mask.fvt")
    write_tensor(out, values)
    print(f"mean={_fmt(values.mean())} max={_fmt(values.max())}")
    return EXIT_OK


_FRAME_RE = re.compile(r"^frame_(\d+)\.fvt$")


def _load_frames(frames_dir: Path) -> np.ndarray:
    if not frames_dir.is_dir():
        raise MissingDataError(f"frame directory not found: {frames_dir}")
    found: dict[int, Path] = {}
    for path in frames_dir.iterdir():
        match = _FRAME_RE.match(path.name)
        if match:
            found[int(match.group(1))] = path
    if not found:
        raise MissingDataError(f"no frame_<index>.fvt files in {frames_dir}")
    count = max(found) + 1
    missing = sorted(set(range(count)) - set(found))
    if missing:
        raise MissingDataError(f"missing frame indices {missing[:8]} in {frames_dir}")
    frames = []
    shape = None
    for i in range(count):
        feat = read_tensor(found[i]).astype(np.float64)
        if feat.ndim != 3:
            raise FormatError(f"{found[i]}: expected a rank-3 [C,H,W] feature map, got {feat.shape}")
        if shape is None:
            shape = feat.shape
        elif feat.shape != shape:
            raise FormatError(f"{found[i]}: shape {feat.shape} differs from first frame {shape}")
        frames.append(feat)
    return np.stack(frames)


def _cmd_sample(args) -> int:
    cfg: RunConfig = load_run_config(args.config)
    features = _load_frames(Path(args.frames_dir))
    if features.shape[0] < cfg.T:
        raise FormatError(f"{features.shape[0]} frames cannot fill {cfg.T} segments")
    seg = VideoSegments(features, cfg.T, uniform_index=0)
    mask = sampling_mask(seg)
    selected = select_frames(seg, mask, mode=cfg.sampler_mode,
                             strict_paper_weights=cfg.strict_paper_weights)
    text = "\n".join(str(i) for i in selected) + "\n"
    out = Path(args.out) if args.out else Path(args.frames_dir) / "selected_frames.txt"
    out.write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    corrupt = "x_p" if args.inject_error else None
    identity = check_loss_pipeline(seed=args.seed, frames=args.frames,
                                   mid_size=args.size, corrupt_leaf=corrupt)
    backbone = check_backbone_pipeline(seed=args.seed, frames=args.frames, size=args.size)
    weight_err = max(err for name, err in backbone.errors.items() if name != "video")
    print(f"x_mid max_rel_error={identity.errors['x_mid']:.3e}")
    print(f"x_p max_rel_error={identity.errors['x_p']:.3e}")
    print(f"backbone_weights max_rel_error={weight_err:.3e}")
    print(f"input max_rel_error={backbone.errors['video']:.3e}")
    worst = max(identity.max_error, backbone.max_error)
    if worst >= identity.tolerance:
        print(f"FAIL: max relative error {worst:.3e} exceeds {identity.tolerance:g}")
        return EXIT_GRADCHECK
    print(f"OK: all gradients within {identity.tolerance:g}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg: RunConfig = load_run_config(args.config)
    data_dir = Path(args.data_dir)
    train_samples = _read_split(data_dir, "train")
    eval_samples = _read_split(data_dir, "eval")
    num_classes = max(s.label for s in train_samples) + 1
    backbone = ToyBackbone(num_classes=num_classes, in_channels=train_samples[0].video.shape[1],
                           seed=cfg.seed)
    _check_dataset_fits(train_samples + eval_samples, backbone, cfg.T)
    dataset = MotionDataset(
        train=tuple(train_samples), eval=tuple(eval_samples), num_classes=num_classes,
        num_segments=cfg.T, class_bins=(), class_frequencies=(),
        template=SceneTemplate(train_samples=len(train_samples), eval_samples=len(eval_samples)),
    )
    train_cfg = TrainConfig(
        lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay,
        lambda_mask=cfg.lambda_mask, epochs=cfg.epochs, seed=cfg.seed,
        normalize_mask=cfg.normalize_mask,
    )
    result = train(dataset, backbone, train_cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [
        f"epoch={st.epoch} ce={st.cross_entropy:.6f} lmask={st.mask_loss:.6f} acc={st.accuracy:.4f}"
        for st in result.history
    ]
    (out_dir / "metrics.txt").write_text("\n".join(lines) + "\n")
    _save_checkpoint(out_dir / "checkpoint", backbone)
    if result.history:
        print(lines[-1])
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg: RunConfig = load_run_config(args.config)
    backbone = _load_checkpoint(Path(args.checkpoint))
    samples = _read_split(Path(args.data_dir), "eval")
    _check_dataset_fits(samples, backbone, cfg.T)
    if args.ensemble:
        top1_uniform, top1 = evaluate_ensemble(
            backbone, samples, cfg.T, mode=cfg.sampler_mode,
            strict_paper_weights=cfg.strict_paper_weights, sum_logits=args.sum_logits,
        )
        print(f"top1={top1:.4f}")
        print(f"top1_uniform={top1_uniform:.4f}")
    else:
        top1 = evaluate(backbone, samples, cfg.T)
        print(f"top1={top1:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freqsal",
        description="Frequency-domain saliency masks, disentanglement training, and key-frame sampling.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a labeled synthetic motion dataset")
    p.add_argument("spec", nargs="?", default=None, help="key=value generation spec (defaults apply)")
    p.add_argument("out_dir")
    p.set_defaults(handler=_cmd_gen)

    p = sub.add_parser("mask", help="compute a saliency mask for a [T,C,H,W] container")
    p.add_argument("input")
    p.add_argument("--kind", choices=("combined", "dynamic", "static"), default="combined")
    p.add_argument("--no-normalize", action="store_true", help="skip mean normalization (combined only)")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=_cmd_mask)

    p = sub.add_parser("sample", help="select the best frame per uniform segment")
    p.add_argument("frames_dir", help="directory of frame_<index>.fvt feature maps")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=_cmd_sample)

    p = sub.add_parser("gradcheck", help="verify tape gradients against finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--size", type=int, default=6)
    p.add_argument("--inject-error", action="store_true",
                   help="corrupt one analytic gradient (negative control, testing only)")
    p.set_defaults(handler=_cmd_gradcheck)

    p = sub.add_parser("train", help="train the toy backbone on a generated dataset")
    p.add_argument("data_dir")
    p.add_argument("out_dir")
    p.add_argument("--config", default=None)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("eval", help="report top-1 accuracy of a checkpoint")
    p.add_argument("data_dir")
    p.add_argument("checkpoint")
    p.add_argument("--config", default=None)
    p.add_argument("--ensemble", action="store_true",
                   help="also predict from mask-selected frames and sum the predictions")
    p.add_argument("--sum-logits", action="store_true",
                   help="ensemble raw logits instead of softmax probabilities")
    p.set_defaults(handler=_cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except MissingDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (FormatError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
