import numpy as np
import pytest

from freqsal.masks import combined_mask, dynamic_mask, static_mask
from freqsal.synth import (
    LABEL_CODES,
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
    class_frequency_bins,
    evaluate,
    generate_scene,
    motion_classes,
    sample_scene_spec,
    train,
)
from freqsal.tensor import Tensor


def region(kind, top=2, left=2, h=4, w=4, amplitude=1.0, frequency=0.0, phase=0.0):
    return Region(kind, top, left, h, w, amplitude, frequency, phase)


class TestGenerateScene:
    def test_static_region_constant_across_frames(self):
        spec = SceneSpec(8, 8, 6, (region(RegionKind.STATIC_SALIENT),))
        video, labels = generate_scene(spec)
        assert video.shape == (6, 1, 8, 8)
        assert np.all(video[:, 0, 2:6, 2:6] == 1.0)
        assert np.all(video[:, 0, 0, 0] == 0.0)
        assert np.all(labels[2:6, 2:6] == LABEL_CODES[RegionKind.STATIC_SALIENT])
        assert labels[0, 0] == LABEL_CODES[RegionKind.STATIC_BACKGROUND]

    def test_empty_scene_all_zero(self):
        video, labels = generate_scene(SceneSpec(4, 4, 3))
        assert np.all(video == 0.0)
        assert np.all(labels == LABEL_CODES[RegionKind.STATIC_BACKGROUND])

    def test_same_seed_bitwise_identical(self):
        spec = sample_scene_spec(7, noise_sigma=0.1)
        v1, l1 = generate_scene(spec)
        v2, l2 = generate_scene(spec)
        assert np.array_equal(v1, v2) and np.array_equal(l1, l2)

    def test_dynamic_region_is_sinusoidal(self):
        f = 0.25
        spec = SceneSpec(8, 8, 8, (region(RegionKind.DYNAMIC_SALIENT, frequency=f),))
        video, _ = generate_scene(spec)
        t = np.arange(8)
        assert np.allclose(video[:, 0, 3, 3], np.sin(2 * np.pi * f * t))

    def test_overlapping_salient_regions_rejected(self):
        spec = SceneSpec(
            8, 8, 4,
            (region(RegionKind.STATIC_SALIENT), region(RegionKind.DYNAMIC_SALIENT, frequency=0.25)),
        )
        with pytest.raises(SceneSpecError):
            generate_scene(spec)

    def test_salient_over_background_overlap_allowed(self):
        spec = SceneSpec(
            8, 8, 4,
            (region(RegionKind.DYNAMIC_BACKGROUND, frequency=0.25),
             region(RegionKind.STATIC_SALIENT)),
        )
        video, labels = generate_scene(spec)
        # overlap sums signals; salient label wins
        assert labels[3, 3] == LABEL_CODES[RegionKind.STATIC_SALIENT]

    def test_dynamic_region_needs_positive_frequency(self):
        with pytest.raises(SceneSpecError):
            generate_scene(SceneSpec(8, 8, 4, (region(RegionKind.DYNAMIC_SALIENT),)))

    def test_static_region_needs_zero_frequency(self):
        with pytest.raises(SceneSpecError):
            generate_scene(SceneSpec(8, 8, 4, (region(RegionKind.STATIC_SALIENT, frequency=0.1),)))

    def test_out_of_grid_rejected(self):
        with pytest.raises(SceneSpecError):
            generate_scene(SceneSpec(4, 4, 2, (region(RegionKind.STATIC_SALIENT, top=2, h=4),)))


class TestMotionClasses:
    def test_balanced_split_counts(self):
        ds = motion_classes(4, SceneTemplate(train_samples=200, eval_samples=50))
        assert len(ds.train) == 200 and len(ds.eval) == 50
        train_counts = np.bincount([s.label for s in ds.train], minlength=4)
        eval_counts = np.bincount([s.label for s in ds.eval], minlength=4)
        assert train_counts.tolist() == [50, 50, 50, 50]
        assert sorted(eval_counts.tolist()) == [12, 12, 13, 13]

    def test_same_class_different_samples_differ(self):
        ds = motion_classes(4, SceneTemplate(train_samples=8, eval_samples=4))
        a, b = ds.train[0], ds.train[1]
        assert a.label == b.label
        assert not np.array_equal(a.video, b.video)

    def test_bin_separation_at_full_length(self):
        # 16 sampled frames leave room to spread 4 classes at least 2 bins apart
        template = SceneTemplate(num_frames=16, sampled_frames=16, train_samples=8, eval_samples=4)
        ds = motion_classes(4, template)
        bins = np.array(ds.class_bins)
        assert len(set(bins.tolist())) == 4
        assert np.diff(np.sort(bins)).min() >= 2

    def test_default_bins_distinct_and_alias_free(self):
        ds = motion_classes(4, SceneTemplate(train_samples=4, eval_samples=4))
        assert sorted(ds.class_bins) == [1, 2, 3, 4]
        stride = ds.template.num_frames // ds.template.sampled_frames
        for b, f in zip(ds.class_bins, ds.class_frequencies):
            # exact bin of the sampled clip: f * stride * sampled_frames = b
            assert f * stride * ds.template.sampled_frames == pytest.approx(b)

    def test_too_many_classes_rejected(self):
        with pytest.raises(ValueError):
            class_frequency_bins(5, 8)

    def test_deterministic(self):
        t = SceneTemplate(train_samples=8, eval_samples=4)
        a = motion_classes(2, t)
        b = motion_classes(2, t)
        for s1, s2 in zip(a.train, b.train):
            assert np.array_equal(s1.video, s2.video)


class TestMaskOrderings:
    def test_salient_versus_background_on_noise_free_scenes(self):
        for seed in range(8):
            spec = sample_scene_spec(seed, noise_sigma=0.0)
            video, labels = generate_scene(spec)
            x = Tensor(video)
            combined = combined_mask(x, normalize=True).values.data[0]
            salient = (labels == LABEL_CODES[RegionKind.DYNAMIC_SALIENT]) | (
                labels == LABEL_CODES[RegionKind.STATIC_SALIENT]
            )
            background = labels == LABEL_CODES[RegionKind.STATIC_BACKGROUND]
            assert combined[salient].mean() > combined[background].mean()

    def test_dynamic_static_orderings(self):
        for seed in range(8):
            spec = sample_scene_spec(seed + 100, noise_sigma=0.0)
            video, labels = generate_scene(spec)
            x = Tensor(video)
            dyn = dynamic_mask(x).values.data[0]
            stat = static_mask(x).values.data[0]
            dyn_sal = labels == LABEL_CODES[RegionKind.DYNAMIC_SALIENT]
            stat_sal = labels == LABEL_CODES[RegionKind.STATIC_SALIENT]
            assert dyn[dyn_sal].mean() > dyn[stat_sal].mean()
            assert stat[stat_sal].mean() > stat[dyn_sal].mean()


class TestBackbone:
    def test_parameter_budget(self):
        assert ToyBackbone().parameter_count < 50_000

    def test_tap_shapes(self):
        bb = ToyBackbone(num_classes=4)
        taps = bb.forward(Tensor(np.random.default_rng(0).uniform(-1, 1, (8, 1, 16, 16))))
        assert taps.logits.shape == (4,)
        assert taps.level1.shape[0] == 8
        assert taps.mid.shape == (8, bb.channels[1], 16, 16)
        assert taps.penultimate.shape == (8, bb.channels[2], 8, 8)

    def test_deterministic_init(self):
        a, b = ToyBackbone(seed=3), ToyBackbone(seed=3)
        for name in a.params:
            assert np.array_equal(a.params[name].data, b.params[name].data)


def tiny_dataset(n_train=8, n_eval=4, seed=0):
    return motion_classes(2, SceneTemplate(train_samples=n_train, eval_samples=n_eval, seed=seed))


class TestTraining:
    def test_zero_learning_rate_keeps_parameters(self):
        ds = tiny_dataset()
        bb = ToyBackbone(num_classes=2)
        before = {k: p.data.copy() for k, p in bb.params.items()}
        train(ds, bb, TrainConfig(lr=0.0, weight_decay=0.0, lambda_mask=0.0, epochs=2))
        for k, p in bb.params.items():
            assert np.array_equal(before[k], p.data)

    def test_single_sample_memorization(self):
        ds = tiny_dataset()
        one = MotionDataset(
            train=ds.train[:1], eval=ds.train[:1], num_classes=2,
            num_segments=ds.num_segments, class_bins=ds.class_bins,
            class_frequencies=ds.class_frequencies, template=ds.template,
        )
        bb = ToyBackbone(num_classes=2)
        result = train(one, bb, TrainConfig(epochs=40, batch_size=1))
        assert result.final.cross_entropy < 0.01

    def test_bit_reproducible(self):
        cfg = TrainConfig(epochs=2)
        ds = tiny_dataset()
        bb1 = ToyBackbone(num_classes=2, seed=1)
        h1 = train(ds, bb1, cfg)
        bb2 = ToyBackbone(num_classes=2, seed=1)
        h2 = train(ds, bb2, cfg)
        assert h1.history == h2.history
        for k in bb1.params:
            assert np.array_equal(bb1.params[k].data, bb2.params[k].data)

    def test_divergence_detected(self):
        ds = tiny_dataset()
        bb = ToyBackbone(num_classes=2)
        with pytest.raises(DivergenceError):
            train(ds, bb, TrainConfig(lr=1e9, epochs=3))

    def test_negative_rates_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(lr=-0.1)

    def test_evaluate_range(self):
        ds = tiny_dataset()
        bb = ToyBackbone(num_classes=2)
        acc = evaluate(bb, ds.eval, ds.num_segments)
        assert 0.0 <= acc <= 1.0
