"""Synthetic single-speaker corpus built from a source-filter production model.

Voiced segments use Rosenberg glottal flow pulses (differentiated), unvoiced
segments use white noise; both pass through a time-varying formant filter
and lip radiation. Used wherever recorded speech would otherwise be needed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dsp

# F1..F5 targets (Hz) for a handful of vowels, adult voice
VOWELS = {
    "a": (730, 1090, 2440, 3400, 4400),
    "e": (530, 1840, 2480, 3500, 4500),
    "i": (300, 2200, 3000, 3700, 4600),
    "o": (570, 840, 2410, 3400, 4400),
    "u": (320, 900, 2250, 3300, 4300),
}
VOWEL_BW = (70, 90, 130, 180, 250)
FRICATIVE = ((2500, 300), (4500, 600), (6000, 900))


@dataclass
class Speaker:
    mean_f0: float = 150.0
    f0_range: float = 0.18  # relative excursion
    formant_scale: float = 1.0
    jitter: float = 0.005
    aspiration: float = 0.005
    open_quotient: float = 0.6
    speed_quotient: float = 2.5
    level: float = 0.4
    noise_floor: float = 3e-4  # background noise std after level normalization


def resonator_poly(freqs, bws, fs=dsp.SAMPLE_RATE) -> np.ndarray:
    poly = np.array([1.0])
    for f, b in zip(freqs, bws):
        r = np.exp(-np.pi * b / fs)
        poly = np.convolve(poly, [1.0, -2.0 * r * np.cos(2 * np.pi * f / fs), r * r])
    return poly


def rosenberg_derivative(period: int, oq: float, sq: float) -> np.ndarray:
    """Differentiated Rosenberg flow pulse; the closure gives a sharp negative peak."""
    n_open = max(int(round(oq * period)), 3)
    n_rise = max(int(round(n_open * sq / (1 + sq))), 1)
    n_fall = max(n_open - n_rise, 1)
    flow = np.zeros(period + 1)
    t = np.arange(n_rise)
    flow[:n_rise] = 0.5 * (1 - np.cos(np.pi * t / n_rise))
    t = np.arange(n_fall)
    flow[n_rise : n_rise + n_fall] = np.cos(0.5 * np.pi * t / n_fall)
    return np.diff(flow)


def _plan(rng, n_frames):
    """Per-frame (voicing target, vowel formants) by concatenating segments."""
    voiced = np.zeros(n_frames)
    formants = np.zeros((n_frames, 5))
    t = 0
    names = list(VOWELS)
    prev = np.array(VOWELS[names[rng.integers(len(names))]], dtype=float)
    while t < n_frames:
        kind = rng.choice(["vowel", "vowel", "vowel", "fricative", "pause"], p=[0.3, 0.25, 0.2, 0.15, 0.1])
        length = int(rng.integers(16, 50)) if kind == "vowel" else int(rng.integers(10, 26))
        stop = min(n_frames, t + length)
        target = np.array(VOWELS[names[rng.integers(len(names))]], dtype=float)
        ramp = np.linspace(0, 1, stop - t)[:, None] ** 0.5
        formants[t:stop] = prev + (target - prev) * ramp
        voiced[t:stop] = {"vowel": 1.0, "fricative": 0.0, "pause": -1.0}[kind]
        prev = target
        t = stop
    return voiced, formants


def synth_utterance(rng, duration: float = 2.0, speaker: Speaker | None = None, fs: int = dsp.SAMPLE_RATE):
    """Returns (audio, info) where info has per-frame ``voiced`` and ``f0``."""
    spk = speaker or Speaker()
    n = int(duration * fs)
    hop = dsp.FRAME_SHIFT
    n_frames = dsp.n_frames_for(n, hop)
    plan, formants = _plan(rng, n_frames)
    formants *= spk.formant_scale

    # smooth f0 contour: declination plus slow random movement
    tt = np.arange(n_frames) / n_frames
    wiggle = np.convolve(rng.standard_normal(n_frames + 40), np.hanning(41) / np.hanning(41).sum(), "valid")
    wiggle /= max(np.abs(wiggle).max(), 1e-9)
    f0_frames = spk.mean_f0 * (1 + spk.f0_range * (0.6 * wiggle + 0.4 * (0.5 - tt)))

    # gains per frame, smoothed so segments fade in and out
    kernel = np.hanning(5) / np.hanning(5).sum()
    g_voice = np.convolve(np.pad((plan == 1).astype(float), 2, mode="edge"), kernel, "valid")
    g_noise = np.convolve(np.pad((plan == 0).astype(float), 2, mode="edge"), kernel, "valid")
    idx = np.minimum(np.arange(n) // hop, n_frames - 1)
    frac = (np.arange(n) % hop) / hop
    nxt = np.minimum(idx + 1, n_frames - 1)
    lerp = lambda a: (1 - frac) * a[idx] + frac * a[nxt]

    source = np.zeros(n)
    f0_sample = lerp(f0_frames)
    gv = lerp(g_voice)
    pos = 0
    while pos < n:
        period = int(round(fs / (f0_sample[pos] * (1 + spk.jitter * rng.standard_normal()))))
        if gv[pos] > 0.01:
            pulse = rosenberg_derivative(period, spk.open_quotient, spk.speed_quotient) * gv[pos]
            stop = min(n, pos + period)
            source[pos:stop] += pulse[: stop - pos]
        pos += period
    noise = rng.standard_normal(n)
    source += spk.aspiration * gv * noise
    frication = 0.25 * lerp(g_noise) * rng.standard_normal(n)

    coeffs = np.zeros((n_frames, 12))
    fric_poly = resonator_poly(*zip(*FRICATIVE), fs=fs)
    for t in range(n_frames):
        poly = resonator_poly(formants[t], VOWEL_BW, fs)
        coeffs[t, :10] = -poly[1:]
    fric = dsp.allpole_filter(frication, dsp.FilterTrack.static(-fric_poly[1:], n_frames), clip=False)
    voiced_sig = dsp.allpole_filter(source, dsp.FilterTrack(coeffs[:, :10]), clip=False)
    speech = np.diff(np.concatenate(([0.0], voiced_sig + 0.3 * fric)))
    speech *= spk.level / max(np.abs(speech).max(), 1e-9)
    speech += spk.noise_floor * rng.standard_normal(n)
    info = {"voiced": (plan == 1).astype(float), "f0": np.where(plan == 1, f0_frames, 0.0)}
    return speech, info


def make_corpus(n_utterances: int, duration: float = 2.0, seed: int = 0, speaker: Speaker | None = None):
    """List of (name, audio) pairs for one synthetic speaker."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_utterances):
        audio, _ = synth_utterance(rng, duration, speaker)
        out.append((f"utt{i:03d}", audio))
    return out


def write_corpus(directory, n_utterances: int, duration: float = 2.0, seed: int = 0):
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, audio in make_corpus(n_utterances, duration, seed):
        path = directory / f"{name}.wav"
        dsp.write_wav(path, audio)
        paths.append(path)
    return paths
