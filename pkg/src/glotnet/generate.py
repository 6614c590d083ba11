"""Autoregressive sampling with incremental convolution caches, vocal tract
synthesis of generated excitation, and a pulse+noise reference vocoder."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from . import dsp, features
from .features import ConditioningMatrix, FeatureTrack
from .model import MixtureParams, WaveNetModel

log = logging.getLogger(__name__)

PCM_MAX = 1.0 - 2.0**-15


# ---------------------------------------------------------------------------
# sampling


def sample_mixture(params: MixtureParams, rng=None, u=None, temperature: float = 1.0) -> np.ndarray:
    """Draw from a logistic mixture by inverse CDF.

    ``params`` arrays are (..., K). ``u`` may supply the uniforms directly as
    an array of shape (..., 2): column 0 picks the component, column 1 is
    the logistic quantile. Samples are clamped to the PCM range.
    """
    if temperature != 1.0:
        raise ValueError("only direct sampling (temperature 1.0) is supported")
    logits = np.asarray(params.logits, dtype=np.float64)
    batch = logits.shape[:-1]
    if u is None:
        rng = rng if rng is not None else np.random.default_rng()
        u = rng.random(batch + (2,))
    u = np.asarray(u, dtype=np.float64)
    cdf = np.cumsum(params.weights, axis=-1)
    k = np.minimum((u[..., :1] >= cdf).sum(axis=-1), logits.shape[-1] - 1)[..., None]
    mu = np.take_along_axis(np.asarray(params.means), k, axis=-1)[..., 0]
    log_s = np.take_along_axis(np.asarray(params.log_scales), k, axis=-1)[..., 0]
    q = np.clip(u[..., 1], 1e-12, 1.0 - 1e-12)
    x = mu + np.exp(log_s) * (np.log(q) - np.log1p(-q))
    return np.clip(x, -1.0, PCM_MAX)


def mixture_cdf(x, logits, means, log_scales) -> np.ndarray:
    """Continuous CDF of a logistic mixture (1-D parameter vectors)."""
    x = np.asarray(x, dtype=np.float64)[..., None]
    z = np.exp(np.asarray(logits) - np.max(logits))
    w = z / z.sum()
    from scipy.special import expit

    return (w * expit((x - means) * np.exp(-np.asarray(log_scales)))).sum(axis=-1)


# ---------------------------------------------------------------------------
# incremental inference


@dataclass
class GenerationState:
    """Caches for B parallel streams.

    ``buffers[i]`` holds the last ``(filter_width - 1) * dilation`` inputs
    of block ``i`` as a ring indexed by ``t mod length``; ``history`` the
    last ``input_width - 1`` generated samples.
    """

    buffers: list
    history: np.ndarray  # (B, input_width - 1)
    t: int = 0
    rngs: list = field(default_factory=list)

    @classmethod
    def zeros(cls, model: WaveNetModel, batch: int = 1, seeds=None) -> "GenerationState":
        cfg = model.config
        R = cfg.residual_channels
        bufs = [np.zeros((batch, R, (cfg.filter_width - 1) * d)) for d in cfg.dilations]
        seeds = [0] * batch if seeds is None else list(seeds)
        if len(seeds) != batch:
            raise ValueError("need one seed per stream")
        return cls(bufs, np.zeros((batch, cfg.input_width - 1)), 0, [np.random.default_rng(s) for s in seeds])

    @property
    def batch(self) -> int:
        return self.history.shape[0]


class IncrementalNet:
    """Per-step evaluation of a WaveNetModel with fused weight layouts."""

    def __init__(self, model: WaveNetModel):
        cfg, p = model.config, model.params
        self.model = model
        self.cfg = cfg
        R, k = cfg.residual_channels, cfg.filter_width
        w_in = p["input.w"].data  # (R, 1, iw)
        self.w_in = w_in[:, 0, :]  # (R, iw); tap j sees sample t-(iw-1-j)
        self.b_in = p["input.b"].data
        self.blocks = []
        for i, d in enumerate(cfg.dilations):
            wf, wg = p[f"block{i}.w_f"].data, p[f"block{i}.w_g"].data
            # stacked gate weights: rows [f; g], columns tap-major
            w = np.concatenate((wf, wg), axis=0)  # (2R, R, k)
            w = np.transpose(w, (0, 2, 1)).reshape(2 * R, k * R)
            self.blocks.append((d, w.T.copy(), p[f"block{i}.w_res"].data.T.copy(), p[f"block{i}.b_res"].data))
        self.post1 = (p["post1.w"].data.T.copy(), p["post1.b"].data)
        self.post2 = (p["post2.w"].data.T.copy(), p["post2.b"].data)
        self.out = (p["out.w"].data.T.copy(), p["out.b"].data)

    def conditioning_frames(self, cond: ConditioningMatrix) -> ConditioningMatrix:
        """Per-block gate biases at the frame rate, (frames, n_blocks * 2R).

        All conditioning maps are affine, so they commute with the linear
        interpolation to the sample rate.
        """
        p = self.model.params
        if cond.dim != self.cfg.conditioning_dim:
            raise ValueError(f"conditioning dimension {cond.dim} != model's {self.cfg.conditioning_dim}")
        We, be = p["embed.w"].data, p["embed.b"].data
        Wc = np.concatenate([p[f"block{i}.cond_w"].data for i in range(len(self.cfg.dilations))], axis=0)
        bc = np.concatenate([p[f"block{i}.cond_b"].data for i in range(len(self.cfg.dilations))])
        return cond.map_frames(lambda s: (s @ We.T + be) @ Wc.T + bc)

    def step(self, state: GenerationState, prev: np.ndarray, gates: np.ndarray) -> MixtureParams:
        """One timestep. ``prev`` (B,) is the sample at t-1, ``gates`` the
        (B, n_blocks * 2R) conditioning biases at t."""
        cfg = self.cfg
        R, k = cfg.residual_channels, cfg.filter_width
        window = np.concatenate((state.history, prev[:, None]), axis=1)  # (B, iw)
        if state.history.shape[1]:
            state.history = window[:, 1:]
        x = window @ self.w_in.T + self.b_in
        t = state.t
        skips = []
        for i, (d, w, w_res, b_res) in enumerate(self.blocks):
            buf = state.buffers[i]
            L = buf.shape[2]
            taps = [buf[:, :, (t - (k - 1 - j) * d) % L] for j in range(k - 1)] if L else []
            taps.append(x)
            h = np.concatenate(taps, axis=1) @ w + gates[:, 2 * R * i : 2 * R * (i + 1)]
            z = np.tanh(h[:, :R]) * _sigmoid(h[:, R:])
            if L:
                buf[:, :, t % L] = x
            skips.append(z)
            x = z @ w_res + b_res + x
        h = np.concatenate(skips, axis=1)
        h = _crelu(h) @ self.post1[0] + self.post1[1]
        h = _crelu(h) @ self.post2[0] + self.post2[1]
        o = h @ self.out[0] + self.out[1]
        state.t += 1
        K = cfg.mixture_components
        log_s = np.maximum(o[:, 2 * K :] + cfg.scale_floor, cfg.scale_floor)
        return MixtureParams(o[:, :K], o[:, K : 2 * K], log_s)


def _sigmoid(x):
    from scipy.special import expit

    return expit(x)


def _crelu(x):
    return np.concatenate((np.maximum(x, 0.0), np.maximum(-x, 0.0)), axis=1)


def generate_batch(model: WaveNetModel, conditionings, seeds, chunk: int = 2000, stats: dict | None = None) -> list:
    """Generate one signal per conditioning matrix, all streams in lockstep.

    Each stream has its own RNG seeded from ``seeds``, so a stream's output
    does not depend on what else is in the batch (up to rounding in the
    batched matrix products).
    """
    conditionings = list(conditionings)
    if len(conditionings) != len(seeds):
        raise ValueError("need one seed per conditioning matrix")
    if not conditionings:
        return []
    net = IncrementalNet(model)
    frames = [net.conditioning_frames(c) for c in conditionings]
    lengths = [len(c) for c in conditionings]
    B, T = len(conditionings), max(lengths)
    state = GenerationState.zeros(model, B, seeds)
    out = np.zeros((B, T))
    prev = np.zeros(B)
    gdim = frames[0].dim
    started = time.perf_counter()
    for start in range(0, T, chunk):
        stop = min(T, start + chunk)
        gates = np.zeros((stop - start, B, gdim))
        for b, fr in enumerate(frames):
            hi = min(stop, lengths[b])
            if hi > start:
                gates[: hi - start, b] = fr.rows(start, hi)
        uniforms = np.stack([r.random((stop - start, 2)) for r in state.rngs], axis=1)  # (T', B, 2)
        for t in range(start, stop):
            params = net.step(state, prev, gates[t - start])
            prev = sample_mixture(params, u=uniforms[t - start])
            out[:, t] = prev
    elapsed = max(time.perf_counter() - started, 1e-9)
    rate = sum(lengths) / elapsed
    log.info("generated %d samples in %.1f s (%.0f samples/s)", sum(lengths), elapsed, rate)
    if stats is not None:
        stats.update(samples=sum(lengths), seconds=elapsed, samples_per_second=rate)
    return [out[b, : lengths[b]].copy() for b in range(B)]


def generate(model: WaveNetModel, conditioning: ConditioningMatrix, seed: int = 0, stats: dict | None = None) -> np.ndarray:
    """Sample a signal as long as ``conditioning`` from an all-zero history."""
    return generate_batch(model, [conditioning], [seed], stats=stats)[0]


# ---------------------------------------------------------------------------
# synthesis from features


def vt_track_of(track: FeatureTrack) -> dsp.FilterTrack:
    return dsp.FilterTrack(np.array([dsp.lsf_to_lpc(f) for f in track.vt_lsf]), track.frame_shift)


def synthesize_glotnet(excitation, track: FeatureTrack, preemphasis: float = 0.97) -> np.ndarray:
    """Filter excitation through the vocal tract given by the track's LSFs,
    then undo the pre-emphasis."""
    e = np.asarray(excitation, dtype=np.float64)
    vt = vt_track_of(track)
    vt.check_covers(e.size)
    return dsp.deemphasis(dsp.allpole_filter(e, vt), preemphasis)


def _per_sample(frames, n, hop):
    idx = np.minimum((np.arange(n) + hop // 2) // hop, len(frames) - 1)
    return np.asarray(frames)[idx]


def pulse_train(f0_samples, voiced, sample_rate: int = dsp.SAMPLE_RATE) -> np.ndarray:
    """Unit-power impulse train following a per-sample f0 contour."""
    out = np.zeros(f0_samples.size)
    phase = 0.0
    for n in range(f0_samples.size):
        if not voiced[n]:
            phase = 0.0
            continue
        phase += f0_samples[n] / sample_rate
        if phase >= 1.0 or n == 0 or not voiced[n - 1]:
            phase %= 1.0
            out[n] = np.sqrt(sample_rate / f0_samples[n])
    return out


def _band_filters(n_bands: int, sample_rate: int):
    edges = features.erb_band_edges(n_bands, sample_rate / 2)
    nyq = sample_rate / 2
    sos = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        if lo <= 0:
            sos.append(sps.butter(4, hi / nyq, "lowpass", output="sos"))
        elif hi >= nyq:
            sos.append(sps.butter(4, lo / nyq, "highpass", output="sos"))
        else:
            sos.append(sps.butter(4, [lo / nyq, hi / nyq], "bandpass", output="sos"))
    return sos


def baseline_vocoder(track: FeatureTrack, seed: int = 0, preemphasis: float = 0.97) -> np.ndarray:
    """Deterministic pulse+noise glottal vocoder on the same feature set."""
    hop, sr = track.frame_shift, track.sample_rate
    n = track.n_frames * hop
    rng = np.random.default_rng(seed)
    voiced = _per_sample(track.vuv > 0.5, n, hop)
    f0 = _per_sample(np.exp(track.lf0), n, hop)
    pulses = pulse_train(f0, voiced, sr)
    noise = rng.standard_normal(n)
    hnr = track.hnr
    mix = np.zeros(n)
    for b, sos in enumerate(_band_filters(hnr.shape[1], sr)):
        r = 10.0 ** (_per_sample(hnr[:, b], n, hop) / 10.0)
        g_h = np.where(voiced, np.sqrt(r / (1.0 + r)), 0.0)
        g_n = np.where(voiced, np.sqrt(1.0 / (1.0 + r)), 1.0)
        mix += g_h * sps.sosfiltfilt(sos, pulses) + g_n * sps.sosfiltfilt(sos, noise)
    src = dsp.FilterTrack(np.array([dsp.lsf_to_lpc(f) for f in track.source_lsf]), hop)
    excitation = dsp.allpole_filter(mix, src, clip=False)
    speech = dsp.deemphasis(dsp.allpole_filter(excitation, vt_track_of(track), clip=False), preemphasis)
    return match_energy(speech, track.energy, hop)


def match_energy(x, energy_db, hop: int = dsp.FRAME_SHIFT, frame_len: int = 400) -> np.ndarray:
    """Scale ``x`` so its framewise energy follows ``energy_db``."""
    current = features.frame_energy_db(x, frame_len, hop)[: len(energy_db)]
    gain_db = np.asarray(energy_db)[: current.size] - current
    t = np.arange(current.size) * hop
    gain = 10.0 ** (np.interp(np.arange(x.size), t, gain_db) / 20.0)
    return x * gain
