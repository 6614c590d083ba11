"""Acoustic features (48 per 5 ms frame) and sample-rate conditioning."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

from . import dsp, glottal

HNR_BANDS = 5
HNR_FLOOR = -10.0
ENERGY_FLOOR = 1e-10


def feature_blocks(vt_order: int = 30, source_order: int = 10) -> dict:
    """Name -> (start, stop) column span of each feature block."""
    spans, pos = {}, 0
    for name, width in (("vt_lsf", vt_order), ("source_lsf", source_order), ("lf0", 1),
                        ("vuv", 1), ("hnr", HNR_BANDS), ("energy", 1)):
        spans[name] = (pos, pos + width)
        pos += width
    return spans


@dataclass
class FeatureTrack:
    data: np.ndarray  # (frames, dim)
    frame_shift: int = dsp.FRAME_SHIFT
    sample_rate: int = dsp.SAMPLE_RATE
    vt_order: int = 30
    source_order: int = 10

    @property
    def blocks(self) -> dict:
        return feature_blocks(self.vt_order, self.source_order)

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    def block(self, name: str) -> np.ndarray:
        a, b = self.blocks[name]
        return self.data[:, a:b]

    @property
    def vt_lsf(self):
        return self.block("vt_lsf")

    @property
    def source_lsf(self):
        return self.block("source_lsf")

    @property
    def lf0(self):
        return self.block("lf0")[:, 0]

    @property
    def vuv(self):
        return self.block("vuv")[:, 0]

    @property
    def hnr(self):
        return self.block("hnr")

    @property
    def energy(self):
        return self.block("energy")[:, 0]

    def replace(self, **blocks) -> "FeatureTrack":
        data = self.data.copy()
        for name, value in blocks.items():
            a, b = self.blocks[name]
            data[:, a:b] = np.asarray(value, dtype=np.float64).reshape(self.n_frames, b - a)
        return FeatureTrack(data, self.frame_shift, self.sample_rate, self.vt_order, self.source_order)


# ---------------------------------------------------------------------------
# pitch


@dataclass
class PitchConfig:
    f_min: float = 60.0
    f_max: float = 400.0
    threshold: float = 0.45
    silence_db: float = -60.0
    octave_cost: float = 0.01
    median: int = 5
    periods_per_window: float = 3.0


def track_f0(audio, f_min: float = 60.0, f_max: float = 400.0, sample_rate: int = dsp.SAMPLE_RATE,
             hop: int = dsp.FRAME_SHIFT, config: PitchConfig | None = None):
    """Autocorrelation pitch tracker; returns (f0, vuv) per frame, f0 = 0 when unvoiced.

    Each frame's autocorrelation is divided by that of the analysis window,
    peaks are refined parabolically and penalized slightly toward longer
    lags to avoid octave-down errors.
    """
    cfg = config or PitchConfig(f_min=f_min, f_max=f_max)
    x = np.asarray(audio, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty audio")
    if not 0 < cfg.f_min < cfg.f_max < sample_rate / 2:
        raise ValueError("need 0 < f_min < f_max < sample_rate / 2")
    lag_min = int(math.floor(sample_rate / cfg.f_max))
    lag_max = int(math.ceil(sample_rate / cfg.f_min))
    frame_len = int(round(cfg.periods_per_window * sample_rate / cfg.f_min))
    frame_len += frame_len % 2
    frames = dsp.frame_signal(x - x.mean(), frame_len, hop, "rect")
    frames = frames - frames.mean(axis=1, keepdims=True)
    window = np.hanning(frame_len)
    nfft = 1 << (2 * frame_len - 1).bit_length()
    wspec = np.fft.rfft(window, nfft)
    r_w = np.fft.irfft(np.abs(wspec) ** 2, nfft)[: lag_max + 2]
    spec = np.fft.rfft(frames * window, nfft, axis=1)
    r = np.fft.irfft(np.abs(spec) ** 2, nfft, axis=1)[:, : lag_max + 2]
    energy = r[:, 0].copy()
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (r / r[:, :1]) / (r_w / r_w[0])
    r[~np.isfinite(r)] = 0.0

    n = frames.shape[0]
    f0 = np.zeros(n)
    strength = np.zeros(n)
    lags = np.arange(lag_min, lag_max + 1)
    rms_db = 10 * np.log10(energy / np.sum(window**2) + ENERGY_FLOOR)
    for t in range(n):
        if rms_db[t] < cfg.silence_db:
            continue
        seg = r[t, lag_min - 1 : lag_max + 2]
        inner = seg[1:-1]
        peaks = np.nonzero((inner >= seg[:-2]) & (inner > seg[2:]))[0]
        if peaks.size == 0:
            continue
        # parabolic refinement
        y0, y1, y2 = seg[peaks], seg[peaks + 1], seg[peaks + 2]
        den = y0 - 2 * y1 + y2
        shift = np.where(np.abs(den) > 1e-12, 0.5 * (y0 - y2) / np.where(den == 0, 1, den), 0.0)
        shift = np.clip(shift, -0.5, 0.5)
        peak_val = y1 - 0.25 * (y0 - y2) * shift
        lag = lags[peaks] + shift
        score = peak_val - cfg.octave_cost * np.log2(cfg.f_min * lag / sample_rate)
        best = int(np.argmax(score))
        strength[t] = peak_val[best]
        if peak_val[best] > cfg.threshold:
            f0[t] = sample_rate / lag[best]
    vuv = (f0 > 0).astype(np.float64)
    if cfg.median > 1:
        vuv = sps.medfilt(vuv, cfg.median)
        smoothed = sps.medfilt(f0, cfg.median)
        f0 = np.where(vuv > 0, np.where(smoothed > 0, smoothed, f0), 0.0)
        vuv = (f0 > 0).astype(np.float64)
    return f0, vuv


def interpolate_lf0(f0) -> np.ndarray:
    """Natural-log F0 interpolated linearly through unvoiced frames, edges held."""
    f0 = np.asarray(f0, dtype=np.float64)
    voiced = np.nonzero(f0 > 0)[0]
    if voiced.size == 0:
        return np.full(f0.size, math.log(100.0))
    return np.interp(np.arange(f0.size), voiced, np.log(f0[voiced]))


# ---------------------------------------------------------------------------
# aperiodicity


def erb_rate(f):
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f, dtype=np.float64))


def erb_band_edges(n_bands: int = HNR_BANDS, f_max: float = 8000.0) -> np.ndarray:
    e = np.linspace(0.0, erb_rate(f_max), n_bands + 1)
    return (10 ** (e / 21.4) - 1.0) / 0.00437


def compute_hnr(audio, f0, sample_rate: int = dsp.SAMPLE_RATE, hop: int = dsp.FRAME_SHIFT,
                n_bands: int = HNR_BANDS, floor: float = HNR_FLOOR) -> np.ndarray:
    """Band-wise harmonic-to-noise ratio (dB) per frame.

    Bins within f0/4 of a harmonic count as harmonic, the rest as noise. The
    Hann window spans ten pitch periods (max 4096 samples) so the main lobe
    of each harmonic stays inside its harmonic zone.
    """
    x = np.asarray(audio, dtype=np.float64)
    f0 = np.asarray(f0, dtype=np.float64)
    n = dsp.n_frames_for(x.size, hop)
    if f0.size != n:
        raise ValueError(f"f0 has {f0.size} frames, expected {n}")
    edges = erb_band_edges(n_bands, sample_rate / 2)
    out = np.full((n, n_bands), floor)
    padded = np.pad(x, 2048)
    for t in np.nonzero(f0 > 0)[0]:
        length = int(min(4096, 2 * round(5 * sample_rate / f0[t])))
        start = 2048 + t * hop - length // 2
        seg = padded[start : start + length]
        if not np.any(seg):
            continue
        nfft = 1 << (2 * length - 1).bit_length()
        power = np.abs(np.fft.rfft(seg * np.hanning(length), nfft)) ** 2
        freqs = np.fft.rfftfreq(nfft, 1.0 / sample_rate)
        k = freqs / f0[t]
        harmonic = (np.abs(k - np.round(k)) <= 0.25) & (np.round(k) >= 1)
        usable = freqs >= 0.5 * f0[t]
        for b in range(n_bands):
            band = usable & (freqs >= edges[b]) & (freqs < edges[b + 1] if b < n_bands - 1 else freqs <= edges[b + 1])
            h = power[band & harmonic].sum()
            z = power[band & ~harmonic].sum()
            if h > 0 and z > 0:
                out[t, b] = 10 * np.log10(h / z)
            elif h > 0:
                out[t, b] = 60.0
    return out


# ---------------------------------------------------------------------------
# full feature set


@dataclass
class FeatureConfig:
    glottal: glottal.GlottalConfig = field(default_factory=glottal.GlottalConfig)
    pitch: PitchConfig = field(default_factory=PitchConfig)
    energy_frame_len: int = 400


def frame_energy_db(audio, frame_len: int = 400, hop: int = dsp.FRAME_SHIFT) -> np.ndarray:
    frames = dsp.frame_signal(audio, frame_len, hop, "rect")
    return 10 * np.log10(np.mean(frames**2, axis=1) + ENERGY_FLOOR)


def extract_features(audio, config: FeatureConfig | None = None):
    """Returns (FeatureTrack, GifResult) for 16 kHz mono audio."""
    cfg = config or FeatureConfig()
    gcfg = cfg.glottal
    x = np.asarray(audio, dtype=np.float64)
    f0, vuv = track_f0(x, sample_rate=gcfg.sample_rate, hop=gcfg.frame_shift, config=cfg.pitch)
    gif = glottal.analyze(x, f0, gcfg)
    hnr = compute_hnr(x, f0, gcfg.sample_rate, gcfg.frame_shift)
    energy = frame_energy_db(x, cfg.energy_frame_len, gcfg.frame_shift)
    data = np.concatenate(
        (gif.vt_lsf, gif.source_lsf, interpolate_lf0(f0)[:, None], vuv[:, None], hnr, energy[:, None]),
        axis=1,
    )
    track = FeatureTrack(data, gcfg.frame_shift, gcfg.sample_rate, gcfg.vt_order, gcfg.source_order)
    return track, gif


# ---------------------------------------------------------------------------
# conditioning


def stack_context(frames, context: int) -> np.ndarray:
    """Concatenate frames t-C .. t+C (edge frames replicated)."""
    frames = np.asarray(frames, dtype=np.float64)
    n = frames.shape[0]
    idx = np.clip(np.arange(n)[:, None] + np.arange(-context, context + 1)[None, :], 0, n - 1)
    return frames[idx].reshape(n, -1)


@dataclass
class ConditioningMatrix:
    """Per-sample conditioning, interpolated on demand from stacked frames.

    Frame ``t`` sits at sample ``t * hop``; samples past the last frame
    center hold its value. ``rows(a, b)`` materializes samples a..b-1.
    """

    stacked: np.ndarray  # (frames, dim * (2C + 1))
    hop: int
    n_samples: int
    context: int = 0

    @property
    def dim(self) -> int:
        return self.stacked.shape[1]

    @property
    def shape(self):
        return (self.n_samples, self.dim)

    def __len__(self):
        return self.n_samples

    def weights(self, start: int, stop: int):
        n = np.arange(start, stop)
        i0 = np.minimum(n // self.hop, self.stacked.shape[0] - 1)
        i1 = np.minimum(i0 + 1, self.stacked.shape[0] - 1)
        frac = np.where(i0 == i1, 0.0, (n - i0 * self.hop) / self.hop)
        return i0, i1, frac

    def frame_weights(self, start: int, stop: int):
        """(first frame, W) with ``rows(start, stop) == (stacked[first:first + F].T @ W).T``
        where W is the (F, stop - start) interpolation matrix."""
        i0, i1, frac = self.weights(start, stop)
        first = int(i0[0])
        w = np.zeros((int(i1[-1]) - first + 1, stop - start))
        cols = np.arange(stop - start)
        np.add.at(w, (i0 - first, cols), 1.0 - frac)
        np.add.at(w, (i1 - first, cols), frac)
        return first, w

    def rows(self, start: int = 0, stop: int | None = None) -> np.ndarray:
        stop = self.n_samples if stop is None else stop
        i0, i1, frac = self.weights(start, stop)
        return interpolate_rows(self.stacked, i0, i1, frac)

    def __array__(self, dtype=None, copy=None):
        out = self.rows()
        return out if dtype is None else out.astype(dtype)

    def map_frames(self, fn) -> "ConditioningMatrix":
        """Apply a per-frame linear map before interpolation (it commutes)."""
        return ConditioningMatrix(fn(self.stacked), self.hop, self.n_samples, self.context)


def interpolate_rows(frames, i0, i1, frac) -> np.ndarray:
    f = frac[:, None]
    return (1.0 - f) * frames[i0] + f * frames[i1]


def build_conditioning(track: FeatureTrack, context: int = 4, target_rate: int | None = None,
                       n_samples: int | None = None, mean=None, std=None) -> ConditioningMatrix:
    """Stack +-``context`` frames, then interpolate linearly to the sample rate.

    Optional ``mean``/``std`` z-score the raw features before stacking.
    """
    if context < 0:
        raise ValueError("context must be non-negative")
    target_rate = target_rate or track.sample_rate
    frame_rate = track.sample_rate / track.frame_shift
    hop = target_rate / frame_rate
    if abs(hop - round(hop)) > 1e-9:
        raise ValueError("target rate must be an integer multiple of the frame rate")
    hop = int(round(hop))
    data = track.data
    if mean is not None and np.size(mean):
        data = (data - mean) / std
    n_samples = track.n_frames * hop if n_samples is None else n_samples
    return ConditioningMatrix(stack_context(data, context), hop, n_samples, context)


def normalization_stats(tracks) -> tuple:
    data = np.concatenate([t.data for t in tracks], axis=0)
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    std[std < 1e-8] = 1.0
    return mean, std


# ---------------------------------------------------------------------------
# feature files: raw little-endian float32 matrix + key=value sidecar


def save_features(path, track: FeatureTrack):
    path = Path(path)
    np.ascontiguousarray(track.data, dtype="<f4").tofile(path)
    meta = {
        "frames": track.n_frames,
        "dim": track.dim,
        "frame_shift": track.frame_shift,
        "sample_rate": track.sample_rate,
        "vt_order": track.vt_order,
        "source_order": track.source_order,
        "dtype": "float32-le",
        "layout": "row-major",
        "blocks": ",".join(f"{k}:{a}:{b}" for k, (a, b) in track.blocks.items()),
    }
    with open(meta_path(path), "w") as f:
        for k, v in meta.items():
            f.write(f"{k} = {v}\n")


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def read_meta(path) -> dict:
    out = {}
    with open(meta_path(path)) as f:
        for line in f:
            line = line.strip()
            if line and not line.startswith("#"):
                k, _, v = line.partition("=")
                out[k.strip()] = v.strip()
    return out


def load_features(path) -> FeatureTrack:
    meta = read_meta(path)
    frames, dim = int(meta["frames"]), int(meta["dim"])
    data = np.fromfile(path, dtype="<f4")
    if data.size != frames * dim:
        raise ValueError(f"{path}: expected {frames}x{dim} values, found {data.size}")
    return FeatureTrack(
        data.reshape(frames, dim).astype(np.float64),
        int(meta["frame_shift"]), int(meta["sample_rate"]), int(meta["vt_order"]), int(meta["source_order"]),
    )
