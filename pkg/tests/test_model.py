import math

import numpy as np
import pytest

from gruclust.model import (
    ForwardTrace, GruGates, ModelConfig, ModelParams, attention_forward,
    backward, embed, forward, gru_cell_forward, init_params, load_checkpoint,
    save_checkpoint,
)
from gruclust.numerics import Rng, finite_diff_grad
from gruclust.training import loss_bce, loss_reconstruction

from conftest import random_model, reference_forward, tiny_config


def zero_gates(hidden, inp):
    z = np.zeros((hidden + inp, hidden))
    b = np.zeros(hidden)
    return GruGates(z.copy(), z.copy(), z.copy(), b.copy(), b.copy(), b.copy())


class TestGruCell:
    def test_zero_weights_halve_state(self):
        # z = r = 0.5, candidate = 0 => h = (1 - 0.5) * h_prev
        h = gru_cell_forward(np.zeros(2), np.array([1.0, 1.0]), zero_gates(2, 2))
        np.testing.assert_allclose(h, [0.5, 0.5], atol=1e-15)

    def test_zero_state_stays_zero(self):
        h = gru_cell_forward(np.zeros(3), np.zeros(4), zero_gates(4, 3))
        np.testing.assert_array_equal(h, np.zeros(4))

    def test_matches_scalar_reference(self):
        rng = Rng(31)
        hidden, inp = 3, 2
        g = GruGates(
            rng.normal((hidden + inp, hidden)), rng.normal((hidden + inp, hidden)),
            rng.normal((hidden + inp, hidden)),
            rng.normal(hidden), rng.normal(hidden), rng.normal(hidden),
        )
        x = rng.normal(inp)
        h_prev = rng.normal(hidden)
        h = gru_cell_forward(x, h_prev, g)

        # scalar-by-scalar evaluation of the four update equations
        def sig(v):
            return 1 / (1 + math.exp(-v))
        cat = list(h_prev) + list(x)
        for i in range(hidden):
            z = sig(sum(cat[a] * g.Wz[a, i] for a in range(5)) + g.bz[i])
            r = sig(sum(cat[a] * g.Wr[a, i] for a in range(5)) + g.br[i])
            cat_h = [r_j * h_j for r_j, h_j in zip(
                [sig(sum(cat[a] * g.Wr[a, j] for a in range(5)) + g.br[j]) for j in range(hidden)],
                h_prev)] + list(x)
            cand = math.tanh(sum(cat_h[a] * g.Wh[a, i] for a in range(5)) + g.bh[i])
            expected = (1 - z) * h_prev[i] + z * cand
            assert abs(h[i] - expected) < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            gru_cell_forward(np.zeros(3), np.zeros(2), zero_gates(2, 2))


class TestAttention:
    def test_single_step_weight_is_one(self):
        cfg, params = random_model(1, seq_len=1)
        H = Rng(2).normal((1, cfg.hidden_dim))
        _, weights = attention_forward(H, params, cfg)
        assert weights.shape == (cfg.heads, 1, 1)
        np.testing.assert_array_equal(weights, np.ones_like(weights))

    def test_identical_rows_give_uniform_weights(self):
        cfg, params = random_model(3, seq_len=5)
        row = Rng(4).normal(cfg.hidden_dim)
        H = np.tile(row, (5, 1))
        _, weights = attention_forward(H, params, cfg)
        np.testing.assert_allclose(weights, np.full_like(weights, 1 / 5), atol=1e-12)

    def test_hand_set_projections_match_direct_computation(self):
        cfg = tiny_config(seq_len=3, hidden_dim=2, heads=1, head_dim=2)
        params = init_params(cfg, Rng(5))
        params.att_Wq[0] = np.array([[1.0, 0.0], [0.0, 1.0]])
        params.att_Wk[0] = np.array([[0.5, -0.2], [0.3, 0.8]])
        params.att_Wv[0] = np.array([[1.0, 1.0], [0.0, -1.0]])
        H = np.array([[1.0, 0.5], [-0.3, 0.2], [0.8, -0.1]])
        _, weights = attention_forward(H, params, cfg)
        q = H @ params.att_Wq[0]
        k = H @ params.att_Wk[0]
        scores = q @ k.T / math.sqrt(2.0)
        for i in range(3):
            e = np.exp(scores[i] - scores[i].max())
            np.testing.assert_allclose(weights[0, i], e / e.sum(), atol=1e-12)

    def test_rows_sum_to_one_and_nonnegative(self):
        for seed in range(10):
            cfg, params = random_model(seed, seq_len=5)
            x = Rng(seed + 100).normal((2, cfg.seq_len, cfg.input_dim))
            trace = forward(x, params, cfg)
            sums = trace.att_weights.sum(axis=-1)
            np.testing.assert_allclose(sums, np.ones_like(sums), atol=1e-10)
            assert np.all(trace.att_weights >= 0)


class TestForward:
    def test_zero_params_give_half_probability_and_zero_recon(self):
        cfg = tiny_config()
        params = init_params(cfg, Rng(0))
        zeros = params.unflatten(np.zeros(params.flatten().size))
        x = Rng(1).normal((cfg.seq_len, cfg.input_dim))
        trace = forward(x, zeros, cfg)
        np.testing.assert_array_equal(trace.x_hat, np.zeros_like(trace.x_hat))
        np.testing.assert_allclose(trace.y_prob, [0.5], atol=1e-15)

    def test_eval_forward_deterministic(self):
        cfg, params = random_model(7)
        x = Rng(8).normal((3, cfg.seq_len, cfg.input_dim))
        t1 = forward(x, params, cfg, mode="eval")
        t2 = forward(x, params, cfg, mode="eval")
        np.testing.assert_array_equal(t1.x_hat, t2.x_hat)
        np.testing.assert_array_equal(t1.y_prob, t2.y_prob)
        np.testing.assert_array_equal(t1.embedding, t2.embedding)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("kw", [
        {},
        {"attention_enabled": False},
        {"outcome_head_enabled": False},
        {"hidden_dim": 4, "embed_dim": 4, "seq_len": 5, "heads": 1, "head_dim": 3},
    ])
    def test_losses_match_straight_line_reference(self, seed, kw):
        cfg, params = random_model(seed + 40, **kw)
        x = Rng(seed + 90).normal((cfg.seq_len, cfg.input_dim))
        y = float(seed % 2)
        trace = forward(x, params, cfg)
        ref_xhat, ref_prob, ref_emb = reference_forward(x, params, cfg)

        l_ae = loss_reconstruction(x[None], trace.x_hat, 1)
        ref_l_ae = float(np.sum((x - ref_xhat) ** 2) / x.size)
        assert abs(l_ae - ref_l_ae) < 1e-10
        np.testing.assert_allclose(trace.embedding[0], ref_emb, atol=1e-10)
        if cfg.outcome_head_enabled:
            ref_logit = math.log(ref_prob / (1 - ref_prob))
            assert abs(loss_bce(y, trace.logit) - loss_bce(y, ref_logit)) < 1e-10

    def test_embedding_width_matches_config(self):
        for p in (1, 2, 5):
            cfg, params = random_model(60 + p, embed_dim=p)
            x = Rng(p).normal((2, cfg.seq_len, cfg.input_dim))
            assert embed(x, params, cfg).shape == (2, p)

    def test_no_attention_output_ignores_attention_weights(self):
        # hidden_dim equals heads*head_dim so both configs share shapes
        cfg_att = tiny_config(hidden_dim=4, heads=2, head_dim=2, embed_dim=3)
        cfg_off = tiny_config(hidden_dim=4, heads=2, head_dim=2, embed_dim=3,
                              attention_enabled=False)
        params = init_params(cfg_att, Rng(70))
        x = Rng(71).normal((cfg_att.seq_len, cfg_att.input_dim))
        base = forward(x, params, cfg_off).x_hat
        params.att_Wq += 3.0
        params.att_Wv -= 1.0
        np.testing.assert_array_equal(forward(x, params, cfg_off).x_hat, base)

    def test_nonfinite_input_rejected(self):
        cfg, params = random_model(80)
        x = np.zeros((cfg.seq_len, cfg.input_dim))
        x[1, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            forward(x, params, cfg)

    def test_bad_mode_rejected(self):
        cfg, params = random_model(81)
        x = np.zeros((cfg.seq_len, cfg.input_dim))
        with pytest.raises(ValueError, match="mode"):
            forward(x, params, cfg, mode="training")

    def test_train_mode_requires_rng_with_dropout(self):
        cfg, params = random_model(82, dropout_rate=0.3)
        x = np.zeros((cfg.seq_len, cfg.input_dim))
        with pytest.raises(ValueError, match="rng"):
            forward(x, params, cfg, mode="train")

    def test_dropout_masks_recorded_and_applied(self):
        cfg, params = random_model(83, dropout_rate=0.5)
        x = Rng(84).normal((4, cfg.seq_len, cfg.input_dim))
        trace = forward(x, params, cfg, mode="train", rng=Rng(85))
        assert set(np.unique(trace.emb_mask)) <= {0.0, 2.0}
        np.testing.assert_array_equal(trace.emb_drop, trace.embedding * trace.emb_mask)


def _loss_fn(x, y, cfg, which, mask_seed=None):
    mode = "eval" if mask_seed is None else "train"

    def f(pvec, template):
        p = template.unflatten(pvec)
        rng = Rng(mask_seed) if mask_seed is not None else None
        trace = forward(x, p, cfg, mode=mode, rng=rng)
        if which == "ae":
            return loss_reconstruction(x, trace.x_hat, x.shape[0])
        return loss_bce(y, trace.logit)
    return f


def _grads_close(analytic, numeric, rel=1e-4, floor=1e-8):
    diff = np.abs(analytic - numeric)
    return np.all((diff <= floor) | (diff <= rel * np.maximum(np.abs(analytic), np.abs(numeric))))


class TestBackward:
    def test_bce_head_bias_gradient_identity(self):
        # at y=1 and logit=0 the head-output bias gradient is (0.5 - 1) = -0.5
        cfg = tiny_config()
        params = init_params(cfg, Rng(90))
        zeros = params.unflatten(np.zeros(params.flatten().size))
        x = Rng(91).normal((1, cfg.seq_len, cfg.input_dim))
        trace = forward(x, zeros, cfg)
        assert trace.logit[0] == 0.0
        _, g_bce = backward(trace, x, np.array([1.0]), zeros, cfg)
        np.testing.assert_allclose(g_bce.mlp_b2, [-0.5], atol=1e-15)

    def test_zero_everything_gives_zero_ae_gradient(self):
        cfg = tiny_config()
        params = init_params(cfg, Rng(92))
        zeros = params.unflatten(np.zeros(params.flatten().size))
        x = np.zeros((2, cfg.seq_len, cfg.input_dim))
        trace = forward(x, zeros, cfg)
        g_ae, _ = backward(trace, x, np.array([0.0, 0.0]), zeros, cfg)
        assert np.all(g_ae.flatten() == 0.0)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_matches_finite_differences(self, seed):
        cfg, params = random_model(seed * 3 + 200)
        x = Rng(seed + 300).normal((2, cfg.seq_len, cfg.input_dim))
        y = np.array([1.0, 0.0])
        trace = forward(x, params, cfg)
        g_ae, g_bce = backward(trace, x, y, params, cfg)
        theta = params.flatten()
        fd_ae = finite_diff_grad(lambda v: _loss_fn(x, y, cfg, "ae")(v, params), theta)
        fd_bce = finite_diff_grad(lambda v: _loss_fn(x, y, cfg, "bce")(v, params), theta)
        assert _grads_close(g_ae.flatten(), fd_ae)
        assert _grads_close(g_bce.flatten(), fd_bce)

    def test_matches_finite_differences_with_dropout_masks(self):
        cfg, params = random_model(400, dropout_rate=0.4)
        x = Rng(401).normal((3, cfg.seq_len, cfg.input_dim))
        y = np.array([1.0, 0.0, 1.0])
        trace = forward(x, params, cfg, mode="train", rng=Rng(402))
        g_ae, g_bce = backward(trace, x, y, params, cfg)
        theta = params.flatten()
        fd_ae = finite_diff_grad(lambda v: _loss_fn(x, y, cfg, "ae", mask_seed=402)(v, params), theta)
        fd_bce = finite_diff_grad(lambda v: _loss_fn(x, y, cfg, "bce", mask_seed=402)(v, params), theta)
        assert _grads_close(g_ae.flatten(), fd_ae)
        assert _grads_close(g_bce.flatten(), fd_bce)

    def test_batch_size_mismatch_rejected(self):
        cfg, params = random_model(500)
        x = Rng(501).normal((2, cfg.seq_len, cfg.input_dim))
        trace = forward(x, params, cfg)
        with pytest.raises(ValueError, match="batch size"):
            backward(trace, x[:1], np.array([1.0]), params, cfg)


class TestParamsContainer:
    def test_flatten_unflatten_roundtrip(self):
        cfg, params = random_model(600)
        vec = params.flatten()
        back = params.unflatten(vec)
        for name in params.present_fields():
            np.testing.assert_array_equal(getattr(params, name), getattr(back, name))

    def test_unflatten_length_check(self):
        cfg, params = random_model(601)
        with pytest.raises(ValueError):
            params.unflatten(np.zeros(params.flatten().size + 1))

    def test_ablated_params_absent(self):
        cfg, params = random_model(602, attention_enabled=False)
        assert params.att_Wq is None
        assert "att_Wq" not in params.present_fields()
        cfg2, params2 = random_model(603, outcome_head_enabled=False)
        assert params2.mlp_W1 is None

    def test_init_bounds(self):
        cfg, params = random_model(604)
        bound = 1.0 / math.sqrt(cfg.hidden_dim + cfg.input_dim)
        assert np.all(np.abs(params.enc_Wz) <= bound)
        assert np.all(params.enc_bz == 0.0)


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        cfg, params = random_model(700)
        path = tmp_path / "model.bin"
        save_checkpoint(path, params, cfg, {"note": 1})
        loaded, cfg2, meta = load_checkpoint(path)
        assert cfg2 == cfg
        assert meta["note"] == 1
        for name in params.present_fields():
            np.testing.assert_array_equal(getattr(params, name), getattr(loaded, name))

    def test_roundtrip_bytes_identical(self, tmp_path):
        cfg, params = random_model(701)
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        save_checkpoint(a, params, cfg)
        save_checkpoint(b, params, cfg)
        assert a.read_bytes() == b.read_bytes()

    def test_wrong_format_rejected(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError):
            load_checkpoint(p)
