import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glotnet import model as M
from glotnet import neuralnet as nn
from glotnet.features import ConditioningMatrix
from helpers import check_grads, check_grads_sampled

DELTA = 2.0 / 65536
ALL_BINS = np.arange(-32768, 32768) / 32768.0


def small(cond_dim=3, **kw):
    return M.build_model(M.tiny_config(conditioning_dim=cond_dim, **kw))


def test_paper_receptive_field():
    assert M.WaveNetConfig().receptive_field == 3071


def test_paper_output_dim():
    assert M.WaveNetConfig(mixture_components=5).output_dim == 15


def test_single_block_receptive_field():
    assert M.WaveNetConfig(dilations=(1,), filter_width=2).receptive_field == 3


def test_config_validation():
    with pytest.raises(ValueError):
        M.WaveNetConfig(mixture_components=0)
    with pytest.raises(ValueError):
        M.WaveNetConfig(scale_floor=float("-inf"))
    with pytest.raises(ValueError):
        M.WaveNetConfig(target_domain="mel")


def test_config_dict_round_trip():
    cfg = M.tiny_config(conditioning_dim=7, target_domain="waveform")
    assert M.WaveNetConfig.from_dict(cfg.to_dict()) == cfg


def test_zero_model_output():
    m = small().zero_()
    p = M.forward(m, np.random.default_rng(0).uniform(-0.5, 0.5, 50), np.zeros((3, 50)))
    np.testing.assert_array_equal(p.logits, 0.0)
    np.testing.assert_array_equal(p.means, 0.0)
    np.testing.assert_array_equal(p.log_scales, m.config.scale_floor)
    np.testing.assert_allclose(p.weights, 0.5)


def test_log_scales_floored_and_weights_normalized():
    m = small()
    rng = np.random.default_rng(1)
    p = M.forward(m, rng.uniform(-1, 1, 200), rng.standard_normal((3, 200)) * 5)
    assert np.all(p.log_scales >= m.config.scale_floor)
    np.testing.assert_allclose(p.weights.sum(-1), 1.0, atol=1e-9)


def test_initial_log_scale():
    m = small()
    p = M.forward(m, np.zeros(20), np.zeros((3, 20)))
    np.testing.assert_allclose(p.log_scales[0, 0], m.config.init_log_scale, atol=0.5)


def test_forward_is_causal():
    m = small()
    rng = np.random.default_rng(2)
    x = rng.uniform(-0.5, 0.5, 120)
    cond = rng.standard_normal((3, 120))
    base = M.forward(m, x, cond).means
    x2 = x.copy()
    x2[70] += 0.3
    moved = M.forward(m, x2, cond).means
    np.testing.assert_array_equal(base[0, :71], moved[0, :71])
    assert not np.allclose(base[0, 71], moved[0, 71])


def test_paper_receptive_field_probe():
    m = M.build_model(M.WaveNetConfig())
    T = 3200
    t = T - 1
    x = np.random.default_rng(3).uniform(-0.3, 0.3, T)
    cond = np.zeros((432, T))
    base = M.forward(m, x, cond).means[0, t]

    def moved(lag):
        x2 = x.copy()
        x2[t - lag] += 0.5
        return M.forward(m, x2, cond).means[0, t]

    assert np.any(moved(3071) != base)
    np.testing.assert_array_equal(moved(3072), base)


def test_frame_conditioning_matches_sample_rate_path():
    m = small(cond_dim=3)
    rng = np.random.default_rng(7)
    frames = rng.standard_normal((30, 3))
    utts = [M.Utterance(f"u{i}", rng.uniform(-0.5, 0.5, 2000), ConditioningMatrix(frames, 80, 2000)) for i in range(2)]
    batch = [(0, 130), (1, 917)]
    sig, fc, prev = M._assemble(utts, batch, 600)
    rows = np.stack([utts[i].crop(s, 600)[1] for i, s in batch])
    a = M.forward_raw(m, M.teacher_inputs(sig, prev), fc).data
    b = M.forward_raw(m, M.teacher_inputs(sig, prev), rows).data
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_conditioning_dimension_checked():
    with pytest.raises(ValueError):
        M.forward(small(), np.zeros(10), np.zeros((4, 10)))


# discretized logistic mixture

def test_single_bin_probability():
    p = M.mixture_log_prob(M.MixtureParams(np.zeros(1), np.zeros(1), np.zeros(1)), 0.0)
    expected = 1 / (1 + math.exp(-DELTA / 2)) - 1 / (1 + math.exp(DELTA / 2))
    assert math.exp(p) == pytest.approx(expected, rel=1e-9)
    assert math.exp(p) == pytest.approx(7.629e-6, rel=1e-3)


def test_mixture_collapse():
    one = M.mixture_log_prob(M.MixtureParams(np.zeros(1), np.full(1, 0.1), np.full(1, -4.0)), ALL_BINS)
    five = M.mixture_log_prob(M.MixtureParams(np.zeros(5), np.full(5, 0.1), np.full(5, -4.0)), ALL_BINS)
    np.testing.assert_allclose(five, one, atol=1e-12)


@settings(max_examples=10)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_bins_sum_to_one(k, seed):
    rng = np.random.default_rng(seed)
    params = M.MixtureParams(rng.normal(0, 2, k), rng.uniform(-1.2, 1.2, k), rng.uniform(-9, 1, k))
    assert abs(np.exp(M.mixture_log_prob(params, ALL_BINS)).sum() - 1.0) < 1e-6


def test_edge_bins_take_tails():
    params = M.MixtureParams(np.zeros(1), np.array([-3.0]), np.zeros(1))
    # mean far below -1: nearly all mass is in the open-ended bottom bin
    assert math.exp(M.mixture_log_prob(params, -1.0)) > 0.8


def test_extreme_scale_is_finite():
    params = M.MixtureParams(np.zeros(2), np.array([0.0, 0.9]), np.array([-9.0, -9.0]))
    lp = M.mixture_log_prob(params, np.array([0.5, 0.0, -1.0, 1 - DELTA]))
    assert np.all(np.isfinite(lp))


def test_quantize():
    np.testing.assert_array_equal(M.quantize([0.0, 1.0, -1.0, 2.0, 0.5 + 0.4 * DELTA]), [0.0, 1 - DELTA, -1.0, 1 - DELTA, 0.5])


def test_nll_gradients():
    rng = np.random.default_rng(4)
    L = nn.Tensor(rng.standard_normal((2, 3, 6)), requires_grad=True)
    mu = nn.Tensor(rng.uniform(-0.5, 0.5, (2, 3, 6)), requires_grad=True)
    s = nn.Tensor(rng.uniform(-4, -1, (2, 3, 6)), requires_grad=True)
    targets = M.quantize(rng.uniform(-0.6, 0.6, (2, 6)))
    targets[0, 0], targets[1, 5] = -1.0, 1 - DELTA  # edge bins
    assert check_grads(lambda: M.dlm_nll(L, mu, s, targets), [L, mu, s]) < 1e-4


def test_full_model_gradients():
    m = small()
    rng = np.random.default_rng(5)
    x = rng.uniform(-0.5, 0.5, (1, 24))
    cond = rng.standard_normal((1, 3, 24))
    err = check_grads_sampled(lambda: M.model_loss(m, x, cond), list(m.params.values()), rng, per_tensor=2)
    assert err < 1e-4


def test_nonfinite_params_raise():
    bad = nn.Tensor(np.full((1, 1, 2), np.nan))
    with pytest.raises(M.NumericError):
        M.dlm_nll(bad, np.zeros((1, 1, 2)), np.zeros((1, 1, 2)), np.zeros((1, 2)))


# training

def sine_dataset(cond_dim=2, seconds=1.0):
    n = int(16000 * seconds)
    x = 0.5 * np.sin(2 * np.pi * 100 * np.arange(n) / 16000)
    cond = ConditioningMatrix(np.zeros((n // 80, cond_dim)), 80, n)
    return [M.Utterance("sine", x, cond)]


def test_sine_overfit():
    m = small(cond_dim=2)
    history = []
    opts = M.TrainOptions(epochs=200, batch_size=1, segment_length=4000, ema_decay=0.9, log_every=0)
    M.train(m, sine_dataset(), opts, history=history)
    assert len(history) == 200
    assert history[0] - min(history[-10:]) > 2.0


def test_empty_dataset():
    with pytest.raises(ValueError):
        M.train(small(), [], M.TrainOptions(epochs=1))


def test_resume_matches_uninterrupted(tmp_path):
    data = sine_dataset(seconds=0.5)
    opts = dict(batch_size=1, segment_length=1000, crops_per_utterance=3, log_every=0)
    straight = []
    M.train(small(cond_dim=2), data, M.TrainOptions(epochs=2, **opts), history=straight)
    first = []
    path = tmp_path / "run.ckpt"
    M.train(small(cond_dim=2), data, M.TrainOptions(epochs=1, **opts), checkpoint_path=path, history=first)
    ckpt = M.load_checkpoint(path)
    assert ckpt.metadata["epoch"] == 1
    assert ckpt.metadata["last_loss"] == pytest.approx(first[-1], abs=1e-6)
    rest = []
    M.train(small(cond_dim=2), data, M.TrainOptions(epochs=2, **opts), resume=ckpt, history=rest)
    assert len(first) + len(rest) == len(straight)
    np.testing.assert_allclose(first + rest, straight, atol=1e-6, rtol=0)


def test_checkpoint_round_trip(tmp_path):
    data = sine_dataset(seconds=0.25)
    ckpt = M.train(small(cond_dim=2), data, M.TrainOptions(epochs=1, batch_size=1, segment_length=500, log_every=0),
                   norm=(np.arange(2.0), np.ones(2)))
    M.save_checkpoint(tmp_path / "a.ckpt", ckpt)
    back = M.load_checkpoint(tmp_path / "a.ckpt")
    assert back.config == ckpt.config
    assert back.metadata == ckpt.metadata
    for group in ("params", "ema", "best"):
        for k, v in getattr(ckpt, group).items():
            np.testing.assert_array_equal(getattr(back, group)[k], v)
    np.testing.assert_array_equal(back.norm_mean, [0.0, 1.0])
    assert back.adam.step == ckpt.adam.step


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        M.load_checkpoint(tmp_path / "x.ckpt")


def test_training_is_deterministic():
    data = sine_dataset(seconds=0.25)
    opts = M.TrainOptions(epochs=3, batch_size=1, segment_length=500, log_every=0)
    a = M.train(small(cond_dim=2), data, opts)
    b = M.train(small(cond_dim=2), data, opts)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_scale_initialized_from_targets():
    m = small(cond_dim=2)
    target = 0.003 * np.random.default_rng(6).standard_normal(4000)
    log_s = M.init_scale_from_targets(m, [target])
    # logistic with scale s has standard deviation s * pi / sqrt(3)
    assert math.exp(log_s) * math.pi / math.sqrt(3) == pytest.approx(np.sqrt(np.mean(target**2)))
    p = M.forward(m, np.zeros(20), np.zeros((2, 20)))
    np.testing.assert_allclose(p.log_scales[0, 0], log_s, atol=0.5)


def test_scale_init_respects_floor():
    m = small(cond_dim=2)
    assert M.init_scale_from_targets(m, [np.zeros(100)]) == m.config.scale_floor
