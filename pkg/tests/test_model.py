import numpy as np
import pytest

from bodyseg.model import (
    CONV_CHANNELS,
    DECODER_WIDTHS,
    ENCODER_WIDTHS,
    SegNet,
    build_model,
    mc_predict,
    softmax,
)
from bodyseg.rng import RngStream


class TestArchitecture:
    def test_encoder_feature_widths(self):
        assert ENCODER_WIDTHS == [64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512]
        assert [CONV_CHANNELS[i][1] for i in range(1, 14)] == ENCODER_WIDTHS

    def test_decoder_feature_widths(self):
        assert [CONV_CHANNELS[i][1] for i in range(14, 27)] == DECODER_WIDTHS
        assert DECODER_WIDTHS[-1] == 12

    def test_channel_chain_is_consistent(self):
        # each conv consumes what the previous stage produced
        prev = 3
        for i in range(1, 27):
            cin, cout = CONV_CHANNELS[i]
            assert cin == prev
            prev = cout

    def test_classifier_weight_shape(self, shared_model):
        entries = dict(shared_model.named_entries())
        assert entries["conv26.weight"].shape == (12, 64, 3, 3)
        assert entries["conv1.weight"].shape == (64, 3, 3, 3)

    def test_exactly_two_dropout_sites(self, shared_model):
        logits = [n for n in shared_model.params if n.endswith("p_logit")]
        assert sorted(logits) == ["dropout_center.p_logit", "dropout_output.p_logit"]

    def test_initial_drop_probability(self, shared_model):
        assert np.isclose(shared_model.drop_probability("dropout_center"), 0.1)
        assert np.isclose(shared_model.drop_probability("dropout_output"), 0.1)

    def test_classifier_has_no_batchnorm(self, shared_model):
        assert "bn26.gamma" not in shared_model.params


class TestBuildModel:
    def test_same_seed_bitwise_identical(self):
        a = build_model(3)
        b = build_model(3)
        for name, arr in a.named_entries():
            assert np.array_equal(arr, dict(b.named_entries())[name]), name

    def test_different_seeds_differ(self):
        a = build_model(3)
        b = build_model(4)
        assert not np.array_equal(a.params["conv1.weight"], b.params["conv1.weight"])

    def test_fan_in_scaled_init(self):
        model = build_model(0)
        w = model.params["conv9.weight"]  # 512 -> 512
        expected_std = np.sqrt(2.0 / (512 * 9))
        assert abs(w.std() / expected_std - 1.0) < 0.02

    def test_bn_init_values(self):
        model = build_model(0)
        assert np.all(model.params["bn5.gamma"] == 1.0)
        assert np.all(model.params["bn5.beta"] == 0.0)
        assert np.all(model.stats["bn5.running_mean"] == 0.0)
        assert np.all(model.stats["bn5.running_var"] == 1.0)


class TestForward:
    @pytest.mark.parametrize("hw", [32, 64, 96])
    def test_output_shape_matches_input(self, shared_model, hw):
        x = RngStream(hw).uniform((1, 3, hw, hw))
        out = shared_model.forward(x, mode="eval")
        assert out.shape == (1, 12, hw, hw)

    def test_batch_dimension_carried(self, shared_model):
        x = RngStream(0).uniform((2, 3, 32, 32))
        assert shared_model.forward(x, mode="eval").shape == (2, 12, 32, 32)

    @pytest.mark.parametrize("hw", [(50, 50), (64, 48), (31, 32)])
    def test_indivisible_inputs_rejected(self, shared_model, hw):
        with pytest.raises(ValueError, match="divisible by 32"):
            shared_model.forward(np.zeros((1, 3, *hw)), mode="eval")

    def test_eval_mode_deterministic(self, shared_model):
        x = RngStream(1).uniform((1, 3, 32, 32))
        a = shared_model.forward(x, mode="eval")
        b = shared_model.forward(x, mode="eval")
        assert np.array_equal(a, b)

    def test_sampling_modes_require_rng(self, shared_model):
        x = np.zeros((1, 3, 32, 32))
        for mode in ("train", "mc"):
            with pytest.raises(ValueError, match="RngStream"):
                shared_model.forward(x, mode=mode)

    def test_mc_mode_differs_from_eval_and_is_seeded(self, shared_model):
        x = RngStream(2).uniform((1, 3, 32, 32))
        ev = shared_model.forward(x, mode="eval")
        mc1 = shared_model.forward(x, mode="mc", rng=RngStream(5))
        mc2 = shared_model.forward(x, mode="mc", rng=RngStream(5))
        mc3 = shared_model.forward(x, mode="mc", rng=RngStream(6))
        assert np.array_equal(mc1, mc2)
        assert not np.array_equal(mc1, mc3)
        assert not np.array_equal(mc1, ev)

    def test_unknown_mode_rejected(self, shared_model):
        with pytest.raises(ValueError, match="unknown mode"):
            shared_model.forward(np.zeros((1, 3, 32, 32)), mode="test")

    def test_train_mode_updates_running_stats_unless_frozen(self):
        model = build_model(7)
        x = RngStream(3).uniform((1, 3, 32, 32))
        before = model.stats["bn1.running_mean"].copy()
        model.forward(x, mode="train", rng=RngStream(0), update_stats=False)
        assert np.array_equal(model.stats["bn1.running_mean"], before)
        model.forward(x, mode="train", rng=RngStream(0))
        assert not np.array_equal(model.stats["bn1.running_mean"], before)

    def test_mc_mode_keeps_running_stats_fixed(self):
        model = build_model(7)
        x = RngStream(3).uniform((1, 3, 32, 32))
        before = {k: v.copy() for k, v in model.stats.items()}
        model.forward(x, mode="mc", rng=RngStream(0))
        for name, snapshot in before.items():
            assert np.array_equal(model.stats[name], snapshot), name

    def test_mc_mode_normalizes_with_running_stats(self):
        # after running stats drift away from the batch statistics, the mc
        # pass (dropout numerically off) must match eval, not train
        model = build_model(7)
        model.params["dropout_center.p_logit"][0] = -40.0
        model.params["dropout_output.p_logit"][0] = -40.0
        x = RngStream(4).uniform((1, 3, 32, 32))
        for name in model.stats:
            model.stats[name] *= 1.5
            model.stats[name] += 0.25
        ev = model.forward(x, mode="eval")
        mc = model.forward(x, mode="mc", rng=RngStream(1))
        tr = model.forward(x, mode="train", rng=RngStream(1), update_stats=False)
        assert np.allclose(mc, ev, atol=1e-10)
        assert not np.allclose(mc, tr, atol=1e-3)


class TestMcPredict:
    def test_single_pass_has_zero_variance(self, shared_model):
        x = RngStream(4).uniform((1, 3, 32, 32))
        mean, var = mc_predict(shared_model, x, 1, RngStream(0))
        assert mean.shape == (12, 32, 32)
        assert np.all(var == 0.0)

    def test_mean_prob_sums_to_one(self, shared_model):
        x = RngStream(5).uniform((1, 3, 32, 32))
        mean, var = mc_predict(shared_model, x, 5, RngStream(1))
        assert np.abs(mean.sum(axis=0) - 1.0).max() < 1e-6
        assert np.all(var >= 0.0)

    def test_dropout_disabled_collapses_to_eval(self):
        model = build_model(2)
        # push both drop probabilities to numerical zero
        model.params["dropout_center.p_logit"][0] = -40.0
        model.params["dropout_output.p_logit"][0] = -40.0
        x = RngStream(6).uniform((1, 3, 32, 32))
        mean, var = mc_predict(model, x, 4, RngStream(2))
        ev = softmax(model.forward(x, mode="eval"), axis=1)[0]
        assert np.allclose(var, 0.0, atol=1e-28)
        assert np.allclose(mean, ev, atol=1e-12)

    def test_mean_and_variance_match_stored_pass_recomputation(self, shared_model):
        x = RngStream(7).uniform((1, 3, 32, 32))
        root = RngStream(3)
        passes = [
            softmax(shared_model.forward(x, mode="mc", rng=root.child(f"pass{t}")), axis=1)[0]
            for t in range(4)
        ]
        forward_mean = np.mean(passes, axis=0)
        shuffled_mean = np.mean([passes[i] for i in (2, 0, 3, 1)], axis=0)
        library_mean, library_var = mc_predict(shared_model, x, 4, root)
        assert np.abs(forward_mean - shuffled_mean).max() < 1e-12
        assert np.abs(forward_mean - library_mean).max() < 1e-12
        assert np.abs(np.var(passes, axis=0) - library_var).max() < 1e-12

    def test_sample_count_validated(self, shared_model):
        with pytest.raises(ValueError, match=">= 1"):
            mc_predict(shared_model, np.zeros((1, 3, 32, 32)), 0, RngStream(0))

    def test_requires_single_image(self, shared_model):
        with pytest.raises(ValueError, match="single image"):
            mc_predict(shared_model, np.zeros((2, 3, 32, 32)), 1, RngStream(0))


class TestBackwardPlumbing:
    def test_backward_without_forward_rejected(self):
        model = SegNet()
        with pytest.raises(RuntimeError, match="train-mode forward"):
            model.backward(np.zeros((1, 12, 32, 32)))

    def test_grad_accumulation_shapes(self):
        model = build_model(8)
        x = RngStream(9).uniform((1, 3, 32, 32))
        model.zero_grads()
        out = model.forward(x, mode="train", rng=RngStream(1), update_stats=False)
        dx = model.backward(np.ones_like(out) / out.size)
        assert dx.shape == x.shape
        for name, p in model.params.items():
            assert model.grads[name].shape == p.shape
        # dropout logits received gradient through the relaxation
        assert model.grads["dropout_center.p_logit"][0] != 0.0
        assert model.grads["dropout_output.p_logit"][0] != 0.0
