import numpy as np
import pytest

from freqsal.disentangle import (
    ConfigError,
    LossConfig,
    identity_loss,
    total_loss,
    transfer_mask,
)
from freqsal.masks import SaliencyMap, combined_mask
from freqsal.tensor import Tape, Tensor, cross_entropy

from oracles import central_difference


def random_taps(seed=0, frames=4):
    rng = np.random.default_rng(seed)
    x_mid = Tensor(rng.uniform(-1, 1, (frames, 2, 6, 6)), requires_grad=True)
    x_p = Tensor(rng.uniform(-1, 1, (frames, 3, 3, 3)), requires_grad=True)
    return x_mid, x_p


class TestConfig:
    def test_defaults(self):
        cfg = LossConfig()
        assert cfg.lambda_mask == 0.1
        assert cfg.normalize_mask
        assert cfg.resize_rule == "bilinear"
        assert cfg.channel_collapse == "mean"

    def test_negative_lambda_rejected(self):
        with pytest.raises(ConfigError):
            LossConfig(lambda_mask=-0.1)

    def test_unknown_rules_rejected(self):
        with pytest.raises(ConfigError):
            LossConfig(resize_rule="nearest")
        with pytest.raises(ConfigError):
            LossConfig(channel_collapse="max")


class TestTransferMask:
    def test_identity_transfer(self):
        values = np.random.default_rng(0).uniform(0, 2, (1, 5, 5))
        m = SaliencyMap(Tensor(values), "combined")
        out = transfer_mask(m, (4, 5, 5))
        assert np.allclose(out.values.data, values[0])

    def test_constant_survives_any_size(self):
        m = SaliencyMap(Tensor(np.full((2, 3, 3), 1.7)), "combined")
        out = transfer_mask(m, (8, 7, 2))
        assert out.values.shape == (7, 2)
        assert np.allclose(out.values.data, 1.7)

    def test_mean_channel_collapse(self):
        a = np.random.default_rng(1).uniform(size=(4, 4))
        m = SaliencyMap(Tensor(np.stack([a, 3 * a])), "combined")
        out = transfer_mask(m, (1, 4, 4))
        assert np.allclose(out.values.data, 2 * a)


class TestIdentityLoss:
    def test_uniform_mid_features_give_zero_loss(self):
        # spatially uniform mid features make the normalized mask 1 everywhere
        rng = np.random.default_rng(2)
        t = rng.uniform(-1, 1, 4)
        x_mid = Tensor(np.broadcast_to(t[:, None, None, None], (4, 2, 6, 6)).copy(),
                       requires_grad=True)
        x_p = Tensor(rng.uniform(-1, 1, (4, 3, 3, 3)), requires_grad=True)
        with Tape() as tape:
            loss = identity_loss(x_mid, x_p, LossConfig())
            grads = tape.backward(loss)
        assert loss.item() < 1e-12
        assert np.abs(grads[x_p]).max() < 1e-12

    def test_lambda_zero_gives_zero_loss_and_gradients(self):
        x_mid, x_p = random_taps(3)
        with Tape() as tape:
            loss = identity_loss(x_mid, x_p, LossConfig(lambda_mask=0.0))
            grads = tape.backward(loss)
        assert loss.item() == 0.0
        assert np.all(grads[x_mid] == 0.0)
        assert np.all(grads[x_p] == 0.0)

    def test_loss_non_negative_and_zero_iff_masked_identity(self):
        x_mid, x_p = random_taps(4)
        assert identity_loss(x_mid, x_p).item() >= 0.0

    def test_gradients_match_finite_differences(self):
        x_mid, x_p = random_taps(5)
        cfg = LossConfig()

        def fn():
            return identity_loss(x_mid, x_p, cfg)

        with Tape() as tape:
            grads = tape.backward(fn())
        for leaf in (x_mid, x_p):
            numeric = central_difference(lambda: fn().item(), leaf.data)
            analytic = grads[leaf]
            denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
            assert np.max(np.abs(analytic - numeric) / denom) < 1e-4

    def test_gradient_flows_to_mid_features(self):
        x_mid, x_p = random_taps(6)
        with Tape() as tape:
            grads = tape.backward(identity_loss(x_mid, x_p))
        assert np.linalg.norm(grads[x_mid]) > 0.0

    def test_stop_mask_gradient_blocks_mid_path(self):
        x_mid, x_p = random_taps(7)
        with Tape() as tape:
            grads = tape.backward(identity_loss(x_mid, x_p, LossConfig(stop_mask_gradient=True)))
        assert np.all(grads[x_mid] == 0.0)
        assert np.abs(grads[x_p]).max() > 0.0

    def test_time_shift_of_mid_features_leaves_loss_unchanged(self):
        x_mid, x_p = random_taps(8)
        base = identity_loss(x_mid, x_p).item()
        rolled = Tensor(np.roll(x_mid.data, 2, axis=0))
        assert identity_loss(rolled, x_p).item() == pytest.approx(base, abs=1e-12)

    def test_doubling_lambda_doubles_loss_and_gradients(self):
        x_mid, x_p = random_taps(9)
        with Tape() as tape:
            g1 = tape.backward(identity_loss(x_mid, x_p, LossConfig(lambda_mask=0.1)))
            g1 = {k: v.copy() for k, v in g1.items()}
        l1 = identity_loss(x_mid, x_p, LossConfig(lambda_mask=0.1)).item()
        with Tape() as tape:
            g2 = tape.backward(identity_loss(x_mid, x_p, LossConfig(lambda_mask=0.2)))
        l2 = identity_loss(x_mid, x_p, LossConfig(lambda_mask=0.2)).item()
        assert l2 == pytest.approx(2 * l1, rel=1e-12)
        assert np.allclose(g2[x_p], 2 * g1[x_p], rtol=1e-12)
        assert np.allclose(g2[x_mid], 2 * g1[x_mid], rtol=1e-12)

    def test_unnormalized_mask_option(self):
        x_mid, x_p = random_taps(10)
        a = identity_loss(x_mid, x_p, LossConfig(normalize_mask=True)).item()
        b = identity_loss(x_mid, x_p, LossConfig(normalize_mask=False)).item()
        assert a != b


class TestTotalLoss:
    def test_uniform_logits_cross_entropy(self):
        logits = Tensor(np.zeros(4))
        x_mid, x_p = random_taps(11)
        loss = total_loss(logits, 2, x_mid, x_p, LossConfig(lambda_mask=0.0))
        assert loss.item() == pytest.approx(np.log(4.0))

    def test_confident_logits_vanishing_loss(self):
        logits = np.zeros(4)
        logits[1] = 60.0
        loss = total_loss(Tensor(logits), 1, *random_taps(12), LossConfig(lambda_mask=0.0))
        assert loss.item() < 1e-12

    def test_total_gradient_is_sum_of_parts(self):
        rng = np.random.default_rng(13)
        logits = Tensor(rng.uniform(-1, 1, 4), requires_grad=True)
        x_mid, x_p = random_taps(14)
        cfg = LossConfig()
        with Tape() as tape:
            gt = tape.backward(total_loss(logits, 1, x_mid, x_p, cfg))
            gt = {k: v.copy() for k, v in gt.items()}
        with Tape() as tape:
            gc = tape.backward(cross_entropy(logits, 1))
            gc = {k: v.copy() for k, v in gc.items()}
        with Tape() as tape:
            gm = tape.backward(identity_loss(x_mid, x_p, cfg))
        assert np.abs(gt[logits] - gc[logits]).max() < 1e-12
        assert np.abs(gt[x_p] - gm[x_p]).max() < 1e-12
        assert np.abs(gt[x_mid] - gm[x_mid]).max() < 1e-12

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            total_loss(Tensor(np.zeros(3)), 3, *random_taps(15))
