import math

import numpy as np
import pytest
import torch

from codesep.btd import (BTDConfig, BTDModel, argmax_tokens, btd_batch_loss, btd_forward, disentangle, mixture_mel,
                         pi_ce_loss, train_step_btd)
from codesep.codec import CodecModel
from codesep.dsp import Waveform
from codesep.errors import ConfigurationError
from conftest import TINY_BTD, TINY_CODEC
from oracles import pi_ce_brute


def random_probs(rng, t, m):
    p = rng.random((t, m)) + 1e-3
    return p / p.sum(1, keepdims=True)


class TestPICE:
    def test_worked_example(self):
        p1 = np.array([[0.7, 0.2, 0.1]])
        p2 = np.array([[0.1, 0.2, 0.7]])
        assert pi_ce_loss(p1, p2, [3], [1]) == pytest.approx(-2 * math.log(0.7), abs=1e-12)
        assert -2 * math.log(0.7) == pytest.approx(0.7133, abs=1e-4)

    def test_uniform(self, rng):
        m = 1024
        u = np.full((5, m), 1 / m)
        t = rng.integers(1, m + 1, 5)
        assert pi_ce_loss(u, u, t, t[::-1]) == pytest.approx(2 * math.log(m), abs=1e-9)

    def test_matches_brute_force(self, rng):
        for _ in range(50):
            t, m = rng.integers(1, 6), rng.integers(2, 9)
            p1, p2 = random_probs(rng, t, m), random_probs(rng, t, m)
            a, b = rng.integers(1, m + 1, t), rng.integers(1, m + 1, t)
            assert pi_ce_loss(p1, p2, a, b) == pytest.approx(pi_ce_brute(p1, p2, a, b), abs=1e-9)
            assert pi_ce_loss(p1, p2, a, b) == pi_ce_loss(p1, p2, b, a)

    def test_bounded_by_fixed_assignment(self, rng):
        p1, p2 = random_probs(rng, 6, 4), random_probs(rng, 6, 4)
        a, b = rng.integers(1, 5, 6), rng.integers(1, 5, 6)
        straight = -np.mean(np.log(p1[np.arange(6), a - 1]) + np.log(p2[np.arange(6), b - 1]))
        assert pi_ce_loss(p1, p2, a, b) <= straight + 1e-12

    def test_equal_targets_reduce_to_plain_ce(self, rng):
        p1, p2 = random_probs(rng, 4, 3), random_probs(rng, 4, 3)
        t = rng.integers(1, 4, 4)
        plain = -np.mean(np.log(p1[np.arange(4), t - 1]) + np.log(p2[np.arange(4), t - 1]))
        assert pi_ce_loss(p1, p2, t, t) == pytest.approx(plain, abs=1e-12)

    def test_utterance_scope(self, rng):
        p1, p2 = random_probs(rng, 5, 4), random_probs(rng, 5, 4)
        a, b = rng.integers(1, 5, 5), rng.integers(1, 5, 5)
        idx = np.arange(5)
        straight = -np.sum(np.log(p1[idx, a - 1]) + np.log(p2[idx, b - 1]))
        swapped = -np.sum(np.log(p1[idx, b - 1]) + np.log(p2[idx, a - 1]))
        got = pi_ce_loss(p1, p2, a, b, scope="utterance")
        assert got == pytest.approx(min(straight, swapped) / 5, abs=1e-12)
        assert pi_ce_loss(p1, p2, a, b) <= got + 1e-12

    def test_gradient_wrt_logits(self, rng):
        logits = torch.from_numpy(rng.standard_normal((2, 6, 5))).requires_grad_()
        a, b = torch.from_numpy(rng.integers(1, 6, 6)), torch.from_numpy(rng.integers(1, 6, 6))

        def f(z):
            lp = torch.log_softmax(z, -1)
            return pi_ce_loss(lp[0], lp[1], a, b, log_probs=True)

        f(logits).backward()
        assert torch.autograd.gradcheck(f, (logits.detach().clone().requires_grad_(),), eps=1e-6, atol=1e-6,
                                        rtol=1e-3)

    @pytest.mark.parametrize("bad", [0, 6])
    def test_invalid_targets(self, rng, bad):
        p = random_probs(rng, 2, 5)
        with pytest.raises(ValueError):
            pi_ce_loss(p, p, [1, bad], [1, 1])

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            pi_ce_loss(random_probs(rng, 2, 3), random_probs(rng, 3, 3), [1, 1], [1, 1])


class TestModel:
    def test_rows_are_distributions(self, tiny_btd, rng):
        mel = rng.standard_normal((16, TINY_BTD.n_mels))
        p1, p2 = btd_forward(mel, tiny_btd)
        assert p1.shape == (8, TINY_BTD.codebook_size)
        np.testing.assert_allclose(p1.sum(1), 1, atol=1e-6)
        np.testing.assert_allclose(p2.sum(1), 1, atol=1e-6)
        assert ((p1 > 0) & (p1 < 1)).all()

    def test_equal_bias_gives_equal_outputs(self, tiny_btd, rng):
        with torch.no_grad():
            tiny_btd.delta[1] = tiny_btd.delta[0]
        p1, p2 = btd_forward(rng.standard_normal((12, TINY_BTD.n_mels)), tiny_btd)
        np.testing.assert_array_equal(p1, p2)

    def test_swapped_bias_swaps_outputs(self, tiny_btd, rng):
        mel = rng.standard_normal((12, TINY_BTD.n_mels))
        p1, p2 = btd_forward(mel, tiny_btd)
        with torch.no_grad():
            tiny_btd.delta.copy_(tiny_btd.delta.flip(0))
        q1, q2 = btd_forward(mel, tiny_btd)
        np.testing.assert_array_equal(p1, q2)
        np.testing.assert_array_equal(p2, q1)

    def test_disabled_acbg_is_frozen_zero(self):
        m = BTDModel(BTDConfig(use_acbg=False))
        assert not m.delta.requires_grad and not m.delta.any()

    def test_argmax(self):
        assert argmax_tokens(np.array([0.1, 0.7, 0.2])) == 2
        assert argmax_tokens(np.array([0.4, 0.4, 0.2])) == 1

    def test_scaled_logits_keep_tokens(self, tiny_btd, rng):
        mel = rng.standard_normal((10, TINY_BTD.n_mels))
        d1, d2 = disentangle(mel, tiny_btd)
        with torch.no_grad():
            tiny_btd.head.weight.mul_(3.0)
            tiny_btd.head.bias.mul_(3.0)
        e1, e2 = disentangle(mel, tiny_btd)
        np.testing.assert_array_equal(d1, e1)
        np.testing.assert_array_equal(d2, e2)
        assert d1.min() >= 1 and d1.max() <= TINY_BTD.codebook_size

    @pytest.mark.parametrize("n", [16, 100, 161, 400])
    def test_frame_alignment_with_codec(self, tiny_btd, tiny_codec, rng, n):
        y = torch.from_numpy(rng.standard_normal((1, n))).float()
        logits = tiny_btd.logits_for(y)
        assert logits.shape[2] == tiny_codec.tokenize_batch(y).shape[1]
        mel = mixture_mel(Waveform(y[0].double().numpy(), 8000), tiny_btd)
        assert disentangle(mel, tiny_btd)[0].shape == (logits.shape[2],)

    def test_wrong_mel_width(self, tiny_btd):
        with pytest.raises(ValueError):
            btd_forward(np.zeros((8, TINY_BTD.n_mels + 1)), tiny_btd)

    def test_paper_preset_token_hop(self):
        assert BTDConfig.paper().token_hop == 640


class TestTraining:
    def test_step_is_finite_and_codec_untouched(self, tiny_btd, tiny_codec, rng):
        y = torch.from_numpy(0.3 * rng.standard_normal((2, 320))).float()
        x1, x2 = y * 0.5, y * 0.5
        before = {k: v.clone() for k, v in tiny_codec.state_dict().items()}
        opt = torch.optim.AdamW(tiny_btd.parameters(), lr=1e-3)
        loss = train_step_btd((y + 0, x1, x2), tiny_codec, tiny_btd, opt)
        assert np.isfinite(loss) and loss >= 0
        for k, v in tiny_codec.state_dict().items():
            assert torch.equal(v, before[k])

    def test_hop_mismatch_rejected(self, tiny_codec, rng):
        model = BTDModel(BTDConfig(n_mels=12, mel_shift=4, codebook_size=TINY_CODEC.codebook_size))
        y = torch.zeros(1, 320)
        with pytest.raises(ConfigurationError):
            train_step_btd((y, y, y), tiny_codec, model, torch.optim.AdamW(model.parameters()))
        with pytest.raises(ConfigurationError):
            btd_batch_loss(model, tiny_codec, y, y, y)

    def test_loss_decreases_on_fixed_batch(self, tiny_codec, rng):
        torch.manual_seed(0)
        model = BTDModel(TINY_BTD)
        x1 = torch.from_numpy(0.3 * rng.standard_normal((4, 320))).float()
        x2 = torch.from_numpy(0.3 * rng.standard_normal((4, 320))).float()
        opt = torch.optim.AdamW(model.parameters(), lr=3e-3)
        with torch.no_grad():
            start = float(btd_batch_loss(model, tiny_codec, x1 + x2, x1, x2))
        for _ in range(60):
            train_step_btd((x1 + x2, x1, x2), tiny_codec, model, opt)
        with torch.no_grad():
            assert float(btd_batch_loss(model, tiny_codec, x1 + x2, x1, x2)) < start
