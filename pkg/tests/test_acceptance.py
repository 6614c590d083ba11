"""Acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line that is repeated in the pytest
terminal summary. Criterion 8 trains two models and is by far the slowest;
its per-model budget comes from GLOTNET_OVERFIT_MINUTES.
"""
import os
import time

import numpy as np
import pytest
from scipy import stats

from conftest import ACCEPTANCE_LINES
from glotnet import cli, corpus, dsp, evaluation, experiment, features, generate
from glotnet import model as M
from glotnet import neuralnet as nn
from glotnet.config import ToolkitConfig
from glotnet.features import ConditioningMatrix
from helpers import check_grads, check_grads_sampled, random_stable

OVERFIT_MINUTES = float(os.environ.get("GLOTNET_OVERFIT_MINUTES", "30"))


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def tiny_paper_probe(cond_dim):
    return M.build_model(M.tiny_config(conditioning_dim=cond_dim, dilations=tuple(2**i for i in range(7)),
                                       mixture_components=2))


def test_criterion_1_gradients():
    t0 = time.perf_counter()
    rng = np.random.default_rng(100)

    def p(*shape, scale=0.5):
        return nn.Tensor(scale * rng.standard_normal(shape), requires_grad=True)

    def probe(out):
        proj = np.random.default_rng(7).standard_normal(out.shape)
        return lambda o: nn.mean(nn.mul(o, proj))

    x, y, b1 = p(2, 3, 8), p(2, 3, 8), p(1, 3, 1)
    x.data[np.abs(x.data) < 0.05] = 0.2
    x.data[np.abs(x.data + 0.3) < 0.05] = 0.2
    w, w1, w3, b = p(4, 3, 2), p(4, 3), p(4, 3, 3), p(4)
    r = p(1, 3, 10)
    blk = {"w_f": p(3, 3, 2), "w_g": p(3, 3, 2), "w_res": p(3, 3), "b_res": p(3)}
    lf, lg = p(1, 3, 10), p(1, 3, 10)
    dw = p(2, 6)
    L, mu, ls = p(2, 3, 5), p(2, 3, 5, scale=0.3), nn.Tensor(rng.uniform(-4, -1, (2, 3, 5)), requires_grad=True)
    tg = M.quantize(rng.uniform(-0.5, 0.5, (2, 5)))
    tg[0, 0], tg[1, 4] = -1.0, 1 - 2.0 / 65536

    cases = {
        "add": (lambda: nn.add(x, b1), [x, b1]),
        "mul": (lambda: nn.mul(x, y), [x, y]),
        "tanh": (lambda: nn.tanh(x), [x]),
        "sigmoid": (lambda: nn.sigmoid(x), [x]),
        "crelu": (lambda: nn.crelu(x), [x]),
        "concat": (lambda: nn.concat([x, y], axis=1), [x, y]),
        "take": (lambda: x[:, 1:], [x]),
        "clamp_min": (lambda: nn.clamp_min(x, -0.3), [x]),
        "conv1d": (lambda: nn.conv1d(x, w, b, dilation=3), [x, w, b]),
        "conv1d_noncausal": (lambda: nn.conv1d(x, w3, b, dilation=2, causal=False), [x, w3, b]),
        "conv1x1": (lambda: nn.conv1x1(x, w1, b), [x, w1, b]),
        "gated_unit": (lambda: nn.gated_unit(r, blk["w_f"], blk["w_g"], lf, lg, 2), [r, blk["w_f"], blk["w_g"], lf, lg]),
        "residual_block": (lambda: nn.concat(list(nn.residual_block(r, blk, lf, lg, 4)), axis=1),
                           [r, lf, lg, *blk.values()]),
        "crelu_dense": (lambda: nn.crelu_dense(x, dw), [x, dw]),
    }
    worst = {}
    for name, (fn, tensors) in cases.items():
        scalar = probe(fn())
        worst[name] = check_grads(lambda: scalar(fn()), tensors)
    worst["mean"] = check_grads(lambda: nn.mean(nn.mul(x, x)), [x])
    worst["dlm_nll"] = check_grads(lambda: M.dlm_nll(L, mu, ls, tg), [L, mu, ls])
    m = tiny_paper_probe(3)
    xs, cond = rng.uniform(-0.5, 0.5, (1, 32)), rng.standard_normal((1, 3, 32))
    worst["tiny_model"] = check_grads_sampled(lambda: M.model_loss(m, xs, cond), list(m.params.values()),
                                              rng, per_tensor=6)
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if not v < 1e-4}
    record(1, not bad and elapsed < 60,
           f"max rel err {max(worst.values()):.2e} over {len(worst)} checks, {elapsed:.1f} s" + (f", failing {bad}" if bad else ""))


def test_criterion_2_bins_sum_to_one():
    rng = np.random.default_rng(200)
    grid = np.arange(-32768, 32768) / 32768.0
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(1, 6))
        params = M.MixtureParams(rng.normal(0, 2, k), rng.uniform(-1.1, 1.1, k), rng.uniform(-9, 0.5, k))
        worst = max(worst, abs(np.exp(M.mixture_log_prob(params, grid)).sum() - 1.0))
    record(2, worst < 1e-6, f"max |sum - 1| = {worst:.2e} over 100 draws")


def test_criterion_3_receptive_field():
    t0 = time.perf_counter()
    m = M.build_model(M.WaveNetConfig())
    T = 3100
    t = T - 1
    x = np.random.default_rng(300).uniform(-0.3, 0.3, T)
    cond = np.zeros((432, T))

    def out(lag=None):
        x2 = x.copy()
        if lag is not None:
            x2[t - lag] += 0.5
        p = M.forward(m, x2, cond)
        return np.concatenate((p.logits[0, t], p.means[0, t], p.log_scales[0, t]))

    base = out()
    inside = np.any(out(3071) != base)
    outside = np.array_equal(out(3072), base)
    elapsed = time.perf_counter() - t0
    record(3, inside and outside and elapsed < 60 and m.receptive_field == 3071,
           f"t-3071 changes output: {inside}, t-3072 leaves it unchanged: {outside}, {elapsed:.1f} s")


def test_criterion_4_source_filter_round_trip():
    t0 = time.perf_counter()
    worst = 0.0
    for _, x in corpus.make_corpus(10, duration=1.0, seed=400):
        track, gif = features.extract_features(x)
        y = generate.synthesize_glotnet(gif.excitation, track)
        worst = max(worst, float(np.max(np.abs(y - x))))
    elapsed = time.perf_counter() - t0
    record(4, worst < 1e-6 and elapsed < 60, f"max abs error {worst:.2e} over 10 utterances, {elapsed:.1f} s")


def test_criterion_5_lsf_and_filter_round_trips():
    rng = np.random.default_rng(500)
    lsf_err, filt_err = 0.0, 0.0
    for order in (30, 10):
        for _ in range(1000):
            a = random_stable(rng, order)
            lsf_err = max(lsf_err, float(np.max(np.abs(dsp.lsf_to_lpc(dsp.lpc_to_lsf(a)) - a))))
            track = dsp.FilterTrack.static(a, 5)
            x = 0.1 * rng.standard_normal(400)
            e = dsp.inverse_filter(x, track)
            y = dsp.allpole_filter(x, track, clip=False)
            filt_err = max(filt_err, float(np.max(np.abs(dsp.allpole_filter(e, track, clip=False) - x))),
                           float(np.max(np.abs(dsp.inverse_filter(y, track) - x))))
    record(5, lsf_err < 1e-8 and filt_err < 1e-6,
           f"LSF round trip {lsf_err:.2e} (< 1e-8), filter round trip {filt_err:.2e} (< 1e-6), 2 x 1000 filters")


def test_criterion_6_sampler_ks():
    logits, means, log_s = np.array([0.5, -0.2]), np.array([-0.1, 0.25]), np.array([-2.5, -3.5])
    n = 100_000
    batch = M.MixtureParams(*(np.tile(v, (n, 1)) for v in (logits, means, log_s)))
    x = generate.sample_mixture(batch, np.random.default_rng(600))
    ks = stats.kstest(x, lambda v: generate.mixture_cdf(v, logits, means, log_s)).statistic
    record(6, ks < 0.006, f"KS statistic {ks:.4f} over 1e5 draws")


def test_criterion_7_incremental_equivalence():
    m = M.build_model(M.WaveNetConfig(seed=7))
    n = 1000
    frames = np.random.default_rng(700).standard_normal((n // 80 + 1, 432))
    cond = ConditioningMatrix(frames, 80, n)
    net = generate.IncrementalNet(m)
    gates = net.conditioning_frames(cond).rows()
    state = generate.GenerationState.zeros(m)
    rng = np.random.default_rng(701)
    prev = np.zeros(1)
    steps, xs = [], np.zeros(n)
    for t in range(n):
        p = net.step(state, prev, gates[t : t + 1])
        steps.append(np.concatenate((p.logits[0], p.means[0], p.log_scales[0])))
        prev = generate.sample_mixture(p, rng)
        xs[t] = prev[0]
    full = M.forward(m, xs, cond.rows().T)
    ref = np.concatenate((full.logits[0], full.means[0], full.log_scales[0]), axis=1)
    worst = float(np.max(np.abs(np.array(steps) - ref)))
    record(7, worst < 1e-5, f"max per-step deviation {worst:.2e} over {n} generated steps (full-size network)")


@pytest.mark.slow
def test_criterion_8_overfit_copy_synthesis():
    cfg = experiment.OverfitConfig()
    cfg.train.time_limit = OVERFIT_MINUTES * 60.0
    res = experiment.run(cfg)
    print(experiment.summary(res))
    agg = res["aggregate"]
    g = agg["glotnet"]["msd_db"]["median"]
    w = agg["wavenet"]["msd_db"]["median"]
    noise = agg["noise"]["msd_db"]["median"]
    vuv = agg["glotnet"]["vuv_error_pct"]["median"]
    a, b, c = noise - g >= 3.0, vuv < 20.0, g <= w
    record(8, a and b and c,
           f"(a) GlotNet MSD {g:.2f} dB vs noise {noise:.2f} dB, margin {noise - g:.2f} >= 3: {a}; "
           f"(b) VUV error {vuv:.1f}% < 20: {b}; (c) GlotNet {g:.2f} <= WaveNet {w:.2f}: {c}; "
           f"{OVERFIT_MINUTES:g} min per model")


def test_criterion_9_determinism(tmp_path):
    corpus.write_corpus(tmp_path / "corpus", 2, duration=0.5, seed=900)
    outputs = []
    for run in ("a", "b"):
        cfg = ToolkitConfig.from_dict({
            "paths": {"corpus_dir": str(tmp_path / "corpus"), "feature_dir": str(tmp_path / run / "f"),
                      "checkpoint_dir": str(tmp_path / run / "c"), "output_dir": str(tmp_path / run / "o")},
            "model": {"residual_channels": 8, "skip_channels": 8, "postnet_channels": 16, "embedding_dim": 8,
                      "dilations": [1, 2, 4, 8]},
            "training": {"segment_length": 2000, "batch_size": 2, "max_steps": 10, "log_every": 0},
            "split": {"valid_ratio": 0.0, "test_ratio": 0.0},
            "seed": 3,
        })
        cfg.save(tmp_path / f"{run}.json")
        args = ["--config", str(tmp_path / f"{run}.json")]
        assert cli.main(["extract", *args]) == 0
        assert cli.main(["train", *args]) == 0
        assert cli.main(["synth", *args, "--checkpoint", str(tmp_path / run / "c" / "glotnet.ckpt"), "--split", "all"]) == 0
        files = sorted((tmp_path / run / "o" / "glotnet").glob("*.wav")) + [tmp_path / run / "c" / "glotnet.ckpt"]
        outputs.append([f.read_bytes() for f in files])
    same = len(outputs[0]) == 3 and outputs[0] == outputs[1]
    record(9, same, f"checkpoint and {len(outputs[0]) - 1} generated WAVs bit-identical across two runs: {same}")


def test_criterion_10_metric_sanity():
    rng = np.random.default_rng(1000)
    signals = [x for _, x in corpus.make_corpus(3, 1.0, seed=1000)]
    signals += [0.1 * rng.standard_normal(8000), 0.5 * np.sin(2 * np.pi * 150 * np.arange(12000) / 16000)]
    worst = [0.0, 0.0, 0.0]
    for x in signals:
        r = evaluation.evaluate_pair(x, x)
        vals = (r.msd_db, r.f0_rmse_cents or 0.0, r.vuv_error_pct)
        worst = [max(a, abs(v)) for a, v in zip(worst, vals)]
    record(10, worst == [0.0, 0.0, 0.0],
           f"self-evaluation over {len(signals)} signals: MSD {worst[0]} dB, F0 RMSE {worst[1]} cents, VUV {worst[2]}%")
