"""Model tests: frequency bank, bases, projection, selection, axioms."""

import math

import numpy as np
import pytest

from freqlens.autodiff import Tensor, backward
from freqlens.model import (
    FreqLens,
    FrequencyBank,
    ModelConfig,
    build_bases,
    init_frequency_bank,
    load_checkpoint,
    project,
    save_checkpoint,
)


def small_config(**overrides):
    base = dict(L=16, H=8, C=2, d=8, N=8, K=4, seed=0)
    base.update(overrides)
    return ModelConfig(**base)


def random_inputs(config, batch=3, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(batch, config.L, config.C))


class TestFrequencyMapping:
    def test_theta_zero(self):
        cfg = ModelConfig(L=96, N=2, K=1, C=1)
        bank = init_frequency_bank(cfg)
        bank.theta.data[:] = 0.0
        f = bank.frequencies().data
        expected = 1.0 / 960 + (0.5 - 1.0 / 960) * 0.5
        np.testing.assert_allclose(f, expected, rtol=1e-12)

    def test_saturation_limits(self):
        cfg = ModelConfig(L=96, N=2, K=1, C=1)
        bank = init_frequency_bank(cfg)
        bank.theta.data[:] = [-100.0, 100.0]
        f = bank.frequencies().data
        assert f[0] == pytest.approx(1.0 / 960, rel=1e-9)
        assert f[1] == pytest.approx(0.5, rel=1e-9)

    def test_bounds_strict_for_extreme_theta(self):
        # 10,000 random raw parameters in [-50, 50] stay strictly inside
        cfg = ModelConfig(L=96, N=10_000, K=1, C=1)
        bank = init_frequency_bank(cfg)
        rng = np.random.default_rng(3)
        bank.theta.data[:] = rng.uniform(-50, 50, size=10_000)
        f = bank.frequencies().data
        assert np.all(f > bank.f_min)
        assert np.all(f < bank.f_max)

    def test_differentiable_in_theta(self):
        cfg = ModelConfig(L=96, N=4, K=2, C=1)
        bank = init_frequency_bank(cfg)
        bank.theta.data[:] = [-3.0, -0.5, 0.5, 3.0]
        loss = bank.frequencies().sum()
        grads = backward(loss)
        g = grads[bank.theta.node_id].data
        assert np.all(g > 0)  # strictly increasing mapping


class TestBankInit:
    def test_roundtrip_two_bases(self):
        cfg = ModelConfig(L=96, N=2, K=1, C=1)
        bank = init_frequency_bank(cfg)
        f = bank.frequencies().data
        np.testing.assert_allclose(f, [1.0 / 96, 0.5], rtol=0, atol=1e-12)

    def test_log_uniform_midpoint(self):
        cfg = ModelConfig(L=96, N=3, K=1, C=1)
        bank = init_frequency_bank(cfg)
        f = bank.frequencies().data
        assert f[1] == pytest.approx(math.sqrt((1.0 / 96) * 0.5), rel=1e-9)

    def test_phases_start_at_zero(self):
        bank = init_frequency_bank(small_config())
        np.testing.assert_array_equal(bank.phase.data, 0.0)

    def test_fixed_prior_exact(self):
        cfg = ModelConfig(L=96, N=3, K=2, C=1, freq_mode="fixed-prior", prior_periods=(12, 24, 168))
        bank = init_frequency_bank(cfg)
        np.testing.assert_array_equal(bank.frequencies().data, [1 / 12, 1 / 24, 1 / 168])
        assert not bank.theta.requires_grad
        assert not bank.phase.requires_grad

    def test_fixed_prior_rejects_sub_nyquist_period(self):
        with pytest.raises(ValueError, match="Nyquist"):
            init_frequency_bank(
                ModelConfig(L=96, N=2, K=1, C=1, freq_mode="fixed-prior", prior_periods=(24, 2))
            )


class TestBases:
    def test_quarter_frequency_values(self):
        psi, _ = build_bases(Tensor([0.25]), Tensor([0.0]), L=4)
        np.testing.assert_allclose(psi.data[0], [1.0, 0.0, -1.0, 0.0], atol=1e-12)

    def test_phase_pi_flips_sign_at_origin(self):
        psi, _ = build_bases(Tensor([0.11]), Tensor([math.pi]), L=6)
        assert psi.data[0, 0] == pytest.approx(-1.0)

    def test_rows_have_unit_norm(self):
        cfg = small_config()
        bank = init_frequency_bank(cfg)
        _, psi_bar = build_bases(bank.frequencies(), bank.phase, cfg.L)
        norms = np.linalg.norm(psi_bar.data, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-12)

    def test_degenerate_row_floored_with_warning(self):
        # phase pi/2 with a near-zero frequency makes every sample ~sin(0) = 0
        with pytest.warns(UserWarning, match="norm"):
            _, psi_bar = build_bases(Tensor([1e-300]), Tensor([math.pi / 2]), L=4)
        assert np.all(np.isfinite(psi_bar.data))


class TestProjection:
    def test_self_projection_recovers_basis(self):
        _, psi_bar = build_bases(Tensor([3.0 / 16]), Tensor([0.4]), L=16)
        hidden = Tensor(psi_bar.data[0][None, :, None])  # B=1, d=1 copy of the basis
        c, recon = project(hidden, psi_bar)
        assert c.data[0, 0, 0] == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(recon.data, hidden.data, atol=1e-12)

    def test_orthogonal_signal_has_zero_coefficient(self):
        # constant hidden vs an integer-cycle zero-mean cosine
        _, psi_bar = build_bases(Tensor([1.0 / 16]), Tensor([0.0]), L=16)
        hidden = Tensor(np.ones((1, 16, 1)))
        c, _ = project(hidden, psi_bar)
        assert abs(c.data[0, 0, 0]) < 1e-12

    def test_single_basis_reconstruction_is_its_component(self):
        _, psi_bar = build_bases(Tensor([0.2]), Tensor([0.1]), L=12)
        rng = np.random.default_rng(5)
        hidden = Tensor(rng.normal(size=(2, 12, 3)))
        c, components, recon = project(hidden, psi_bar, return_components=True)
        np.testing.assert_array_equal(recon.data, components.data[:, 0])

    def test_orthogonal_span_reconstructs_exactly(self):
        # integer-cycle cosines are mutually orthogonal over a full window
        freqs = Tensor([1.0 / 8, 2.0 / 8, 3.0 / 8])
        _, psi_bar = build_bases(freqs, Tensor(np.zeros(3)), L=8)
        rng = np.random.default_rng(6)
        coef = rng.normal(size=(3, 1))
        hidden = Tensor((psi_bar.data.T @ coef)[None, :, :])  # lies in the span
        _, recon = project(hidden, psi_bar)
        np.testing.assert_allclose(recon.data, hidden.data, atol=1e-9)


class TestSelection:
    def test_low_temperature_is_argmax(self):
        cfg = small_config(N=3, K=1, d=2)
        model = FreqLens(cfg)
        # craft raw scores via the per-basis offsets with zero coefficients
        model.scorer_bias.data[:] = [3.0, 1.0, 2.0]
        c = Tensor(np.zeros((1, 3, 2)))
        selected, weights = model.score_and_select(c, tau=1e-4, training=False)
        assert selected.tolist() == [[0]]
        np.testing.assert_allclose(weights.data, [[1.0, 0.0, 0.0]], atol=1e-12)

    def test_equal_scores_uniform_weights(self):
        cfg = small_config()
        model = FreqLens(cfg)
        c = Tensor(np.zeros((2, cfg.N, cfg.d)))
        _, weights = model.score_and_select(c, tau=0.7, training=False)
        np.testing.assert_allclose(weights.data, 1.0 / cfg.N, atol=1e-12)

    def test_k_equals_n_selects_everything(self):
        cfg = small_config(N=4, K=4)
        model = FreqLens(cfg)
        out = model.forward(random_inputs(cfg, 2))
        assert sorted(out.selected[0].tolist()) == [0, 1, 2, 3]

    def test_weights_sum_to_one(self):
        cfg = small_config()
        model = FreqLens(cfg)
        out = model.forward(random_inputs(cfg, 4))
        np.testing.assert_allclose(out.soft_weights.data.sum(axis=1), 1.0, atol=1e-12)

    def test_cold_softmax_matches_exact_topk_of_scores(self):
        cfg = small_config()
        model = FreqLens(cfg)
        x = random_inputs(cfg, 5, seed=11)
        out = model.forward(x, tau=0.1)
        # raw scores recomputed independently from the same coefficients
        c = out.coefficients.data
        h = np.maximum(c @ model.scorer_w1.data, 0.0)
        scores = (h @ model.scorer_w2.data)[:, :, 0] + model.scorer_bias.data
        for b in range(5):
            top = set(np.argsort(-scores[b], kind="stable")[: cfg.K].tolist())
            assert set(out.selected[b].tolist()) == top

    def test_training_selection_needs_rng(self):
        cfg = small_config()
        model = FreqLens(cfg)
        with pytest.raises(ValueError, match="rng"):
            model.forward(random_inputs(cfg), training=True)

    def test_temperature_must_be_positive(self):
        cfg = small_config()
        model = FreqLens(cfg)
        with pytest.raises(ValueError, match="temperature"):
            model.forward(random_inputs(cfg), tau=0.0)


class TestHeads:
    def test_zero_coefficient_gives_zero_bit_exact(self):
        model = FreqLens(small_config(seed=9))
        out = model.head_contribution(0, Tensor(np.zeros((3, 8))))
        assert np.all(out.data == 0.0)

    @pytest.mark.parametrize("scale", [0.5, 2.0])
    def test_positive_homogeneity(self, scale):
        model = FreqLens(small_config(seed=10))
        rng = np.random.default_rng(1)
        c_f = rng.normal(size=(2, 8))
        base = model.head_contribution(1, Tensor(c_f)).data
        scaled = model.head_contribution(1, Tensor(scale * c_f)).data
        np.testing.assert_allclose(scaled, scale * base, rtol=1e-12)

    def test_identical_heads_identical_outputs(self):
        model = FreqLens(small_config(seed=11))
        model.head_w1[1].data = model.head_w1[0].data.copy()
        model.head_w2[1].data = model.head_w2[0].data.copy()
        c_f = Tensor(np.random.default_rng(2).normal(size=(4, 8)))
        a = model.head_contribution(0, c_f).data
        b = model.head_contribution(1, c_f).data
        np.testing.assert_array_equal(a, b)


class TestForward:
    def test_zero_logit_gate_averages_paths(self):
        cfg = small_config()
        model = FreqLens(cfg)
        assert model.fusion_logit.data == 0.0
        out = model.forward(random_inputs(cfg))
        assert out.alpha.item() == 0.5
        np.testing.assert_allclose(
            out.y_hat.data, 0.5 * (out.y_freq.data + out.y_res.data), atol=1e-15
        )

    def test_zero_input_propagates_to_zero_prediction(self):
        cfg = small_config()
        model = FreqLens(cfg)
        out = model.forward(np.zeros((2, cfg.L, cfg.C)))
        assert np.all(out.coefficients.data == 0.0)
        assert np.all(out.y_freq.data == 0.0)
        assert np.all(out.y_hat.data == 0.0)

    @pytest.mark.parametrize("training", [False, True])
    def test_completeness_in_both_modes(self, training):
        cfg = small_config()
        model = FreqLens(cfg)
        rng = np.random.default_rng(0)
        out = model.forward(random_inputs(cfg, 4), training=training, rng=rng, tau=0.7)
        total = out.contributions.data.sum(axis=1)
        assert np.max(np.abs(total - out.y_freq.data)) < 1e-9

    def test_forced_alpha_uses_frequency_path_only(self):
        cfg = small_config(force_alpha=1.0)
        model = FreqLens(cfg)
        out = model.forward(random_inputs(cfg))
        np.testing.assert_array_equal(out.y_hat.data, out.y_freq.data)

    def test_shape_mismatch_rejected(self):
        cfg = small_config()
        model = FreqLens(cfg)
        with pytest.raises(ValueError, match="expected input"):
            model.forward(np.zeros((2, cfg.L + 1, cfg.C)))

    def test_training_gradient_reaches_scorer(self):
        # the straight-through weight routes prediction gradient into selection
        cfg = small_config()
        model = FreqLens(cfg)
        rng = np.random.default_rng(4)
        out = model.forward(random_inputs(cfg, 4), training=True, rng=rng, tau=0.8)
        loss = (out.y_hat * out.y_hat).mean()
        grads = backward(loss)
        g = grads.get(model.scorer_w1.node_id)
        assert g is not None and np.any(g.data != 0.0)

    def test_eval_mode_has_no_scorer_gradient_path(self):
        cfg = small_config()
        model = FreqLens(cfg)
        out = model.forward(random_inputs(cfg, 4))
        loss = (out.y_hat * out.y_hat).mean()
        grads = backward(loss)
        g = grads.get(model.scorer_w1.node_id)
        assert g is None or np.max(np.abs(g.data)) < 1e-12


class TestMaskedForward:
    def setup_method(self):
        self.cfg = small_config(seed=21)
        self.model = FreqLens(self.cfg)
        self.x = random_inputs(self.cfg, 3, seed=21)
        self.out = self.model.forward(self.x)

    def test_full_subset_equals_freq_prediction(self):
        # bit-exact against a forward on the same (single-sample) batch;
        # selection differs per sample, so the full set is passed per sample
        for b in range(3):
            single = self.model.forward(self.x[b : b + 1])
            mb = self.model.masked_forward(self.x[b : b + 1], single.selected, single.selected[0])
            np.testing.assert_array_equal(mb[0], single.y_freq.data[0])

    def test_full_subset_batchwise_when_selection_is_shared(self):
        cfg = small_config(N=4, K=4, seed=22)  # K = N forces a shared selection
        model = FreqLens(cfg)
        x = random_inputs(cfg, 3, seed=22)
        out = model.forward(x)
        m = model.masked_forward(x, out.selected, range(4))
        np.testing.assert_array_equal(m, out.y_freq.data)

    def test_empty_subset_is_zero(self):
        m = self.model.masked_forward(self.x, self.out.selected, [])
        np.testing.assert_array_equal(m, 0.0)

    def test_faithfulness_per_selected_frequency(self):
        contrib = self.out.contributions.data
        for b in range(3):
            sel = self.out.selected[b]
            full = self.model.masked_forward(self.x[b : b + 1], sel[None], sel)[0]
            for slot, f in enumerate(sel):
                rest = [i for i in sel if i != f]
                partial = self.model.masked_forward(self.x[b : b + 1], sel[None], rest)[0]
                np.testing.assert_allclose(full - partial, contrib[b, slot], atol=1e-9)

    def test_non_selected_index_rejected(self):
        not_selected = [i for i in range(self.cfg.N) if i not in set(self.out.selected[0])][0]
        with pytest.raises(ValueError, match="not in the selected set"):
            self.model.masked_forward(self.x, self.out.selected, [not_selected])


class TestAttribute:
    def test_attributions_sum_to_frequency_prediction(self):
        cfg = small_config(seed=31)
        model = FreqLens(cfg)
        out = model.forward(random_inputs(cfg, 4, seed=31))
        report = model.attribute(out)
        total = report.contributions.sum(axis=1)
        assert np.max(np.abs(total - report.y_freq)) < 1e-9

    def test_alpha_matches_gate(self):
        cfg = small_config(seed=32)
        model = FreqLens(cfg)
        model.fusion_logit.data = np.asarray(0.37)
        out = model.forward(random_inputs(cfg))
        report = model.attribute(out)
        assert report.alpha == pytest.approx(1.0 / (1.0 + math.exp(-0.37)), rel=1e-12)

    def test_periods_are_reciprocal_frequencies(self):
        cfg = small_config(seed=33)
        model = FreqLens(cfg)
        out = model.forward(random_inputs(cfg))
        report = model.attribute(out)
        np.testing.assert_allclose(report.periods_steps * report.frequencies, 1.0, rtol=1e-12)


class TestParameterCounts:
    def test_default_architecture_counts(self):
        model = FreqLens(ModelConfig())  # L=96, H=96, C=7, d=64, N=32, K=8
        counts = model.parameter_counts()
        assert counts["input_proj"] == 448
        assert counts["frequency_bank"] == 64
        assert counts["heads"] == 376_832
        assert counts["residual"] == 86_016
        assert counts["fusion"] == 1
        # per-basis offsets add N on top of the 2,080 shared-MLP weights
        assert counts["scorer"] == 2_112
        assert counts["scorer"] - (64 * 32 + 32) == 32

    def test_each_head_has_47104_parameters(self):
        model = FreqLens(ModelConfig())
        per_head = model.head_w1[0].size + model.head_w2[0].size
        assert per_head == 47_104


class TestCheckpoint:
    def test_roundtrip_bit_identical_forward(self, tmp_path):
        cfg = small_config(seed=41)
        model = FreqLens(cfg)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path, seed=41)
        loaded, seed = load_checkpoint(path)
        assert seed == 41
        x = random_inputs(cfg, 3, seed=41)
        np.testing.assert_array_equal(loaded.forward(x).y_hat.data, model.forward(x).y_hat.data)

    def test_identical_models_serialize_to_identical_bytes(self, tmp_path):
        cfg = small_config(seed=42)
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(FreqLens(cfg), a, seed=42)
        save_checkpoint(FreqLens(cfg), b, seed=42)
        assert a.read_bytes() == b.read_bytes()

    def test_fixed_prior_roundtrip(self, tmp_path):
        cfg = ModelConfig(L=96, H=8, C=1, d=8, N=2, K=2, freq_mode="fixed-prior", prior_periods=(24, 12))
        model = FreqLens(cfg)
        path = tmp_path / "prior.ckpt"
        save_checkpoint(model, path)
        loaded, _ = load_checkpoint(path)
        np.testing.assert_array_equal(loaded.bank.frequencies().data, [1 / 24, 1 / 12])


class TestAxiomsRandomized:
    """Attribution axioms hold for arbitrary weights, trained or not."""

    def test_axioms_on_random_models(self):
        rng = np.random.default_rng(2024)
        for trial in range(10):
            cfg = small_config(seed=int(rng.integers(0, 2**31)))
            model = FreqLens(cfg)
            x = rng.normal(size=(2, cfg.L, cfg.C))
            out = model.forward(x)
            # A1 completeness
            dev = np.abs(out.contributions.data.sum(axis=1) - out.y_freq.data).max()
            assert dev < 1e-9
            # A2 faithfulness via masked recomputation
            for b in range(2):
                sel = out.selected[b]
                full = model.masked_forward(x[b : b + 1], sel[None], sel)[0]
                for slot, f in enumerate(sel):
                    partial = model.masked_forward(
                        x[b : b + 1], sel[None], [i for i in sel if i != f]
                    )[0]
                    a2 = np.abs(full - partial - out.contributions.data[b, slot]).max()
                    assert a2 < 1e-9
            # A3 null frequency, bit exact
            zero = model.head_contribution(0, Tensor(np.zeros((1, cfg.d))))
            assert np.all(zero.data == 0.0)
            # A4 symmetry, bit exact
            model.head_w1[1].data = model.head_w1[0].data.copy()
            model.head_w2[1].data = model.head_w2[0].data.copy()
            c_f = Tensor(rng.normal(size=(2, cfg.d)))
            np.testing.assert_array_equal(
                model.head_contribution(0, c_f).data, model.head_contribution(1, c_f).data
            )
