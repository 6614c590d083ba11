"""Objective metrics: mel spectral distortion, F0 RMSE in cents, voicing error."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from . import dsp, features

MEL_BANDS = 24
EPS = 1e-10
DB_PER_NEPER = 10.0 / math.log(10.0)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(n_bands: int = MEL_BANDS, n_fft: int = 512, sample_rate: int = dsp.SAMPLE_RATE) -> np.ndarray:
    """Triangular bands with centers equally spaced in mel between 0 Hz and
    Nyquist; (n_bands, n_fft // 2 + 1)."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_bands + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


def mel_spectra(x, frame_len: int = 400, hop: int = dsp.FRAME_SHIFT, sample_rate: int = dsp.SAMPLE_RATE) -> np.ndarray:
    n_fft = 1 << (frame_len - 1).bit_length()
    frames = dsp.frame_signal(np.asarray(x, dtype=np.float64), frame_len, hop, "hann")
    mag = np.abs(np.fft.rfft(frames, n_fft, axis=1))
    return mag @ mel_filterbank(MEL_BANDS, n_fft, sample_rate).T


def _trim(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    n = min(a.shape[0], b.shape[0])
    return a[:n], b[:n]


def mel_spectral_distortion(reference, synthetic, return_frames: bool = False):
    """RMS of log mel-band magnitude differences, in dB."""
    ref, syn = _trim(reference, synthetic)
    if ref.size == 0:
        raise ValueError("empty signal")
    d = np.log(mel_spectra(ref) + EPS) - np.log(mel_spectra(syn) + EPS)
    value = DB_PER_NEPER * float(np.sqrt(np.mean(d * d)))
    return (value, d.shape[0]) if return_frames else value


def f0_rmse_from_tracks(f0_ref, f0_syn):
    """(cents or None, count) over frames voiced in both tracks."""
    a, b = _trim(f0_ref, f0_syn)
    both = (a > 0) & (b > 0)
    count = int(both.sum())
    if count == 0:
        return None, 0
    cents = 1200.0 * np.log2(b[both] / a[both])
    return float(np.sqrt(np.mean(cents**2))), count


def f0_rmse_cents(reference, synthetic, pitch: features.PitchConfig | None = None):
    """Track both signals with the same estimator and compare in cents."""
    f_ref, _ = features.track_f0(reference, config=pitch)
    f_syn, _ = features.track_f0(synthetic, config=pitch)
    return f0_rmse_from_tracks(f_ref, f_syn)


def vuv_error(reference_vuv, synthetic_vuv) -> float:
    a, b = _trim(reference_vuv, synthetic_vuv)
    if a.size == 0:
        raise ValueError("no frames to compare")
    return 100.0 * float(np.mean((a > 0.5) != (b > 0.5)))


@dataclass
class MetricsReport:
    msd_db: float
    f0_rmse_cents: float | None
    vuv_error_pct: float
    frames_compared: dict = field(default_factory=dict)
    total_frames: int = 0
    name: str = ""


def evaluate_pair(reference, synthetic, reference_vuv=None, name: str = "",
                  pitch: features.PitchConfig | None = None) -> MetricsReport:
    """All three metrics for one utterance pair.

    Without ``reference_vuv`` the reference voicing is re-estimated from the
    reference audio with the same tracker.
    """
    ref, syn = _trim(reference, synthetic)
    msd, n_msd = mel_spectral_distortion(ref, syn, return_frames=True)
    f_ref, v_ref = features.track_f0(ref, config=pitch)
    f_syn, v_syn = features.track_f0(syn, config=pitch)
    cents, n_f0 = f0_rmse_from_tracks(f_ref, f_syn)
    v_ref = v_ref if reference_vuv is None else np.asarray(reference_vuv)
    n_vuv = min(len(v_ref), len(v_syn))
    return MetricsReport(
        msd_db=msd,
        f0_rmse_cents=cents,
        vuv_error_pct=vuv_error(v_ref, v_syn),
        frames_compared={"msd": n_msd, "f0": n_f0, "vuv": n_vuv},
        total_frames=max(len(f_ref), len(f_syn)),
        name=name,
    )


def box_stats(values) -> dict:
    v = np.asarray([x for x in values if x is not None], dtype=np.float64)
    if v.size == 0:
        return {"n": 0, "q1": None, "median": None, "q3": None}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"n": int(v.size), "q1": float(q1), "median": float(med), "q3": float(q3)}


METRICS = ("msd_db", "f0_rmse_cents", "vuv_error_pct")


def aggregate(reports) -> dict:
    return {m: box_stats([getattr(r, m) for r in reports]) for m in METRICS}


def _fmt(x, width=10):
    return f"{'-':>{width}}" if x is None else f"{x:>{width}.3f}"


def format_report(reports) -> str:
    lines = [f"{'utterance':<24}{'msd_db':>10}{'f0_cents':>10}{'vuv_pct':>10}{'n_msd':>8}{'n_f0':>8}{'n_vuv':>8}"]
    for r in reports:
        fc = r.frames_compared
        lines.append(
            f"{r.name:<24}{_fmt(r.msd_db)}{_fmt(r.f0_rmse_cents)}{_fmt(r.vuv_error_pct)}"
            f"{fc.get('msd', 0):>8}{fc.get('f0', 0):>8}{fc.get('vuv', 0):>8}"
        )
    lines.append("")
    lines.append(f"{'aggregate':<24}{'q1':>10}{'median':>10}{'q3':>10}{'n':>8}")
    for m, s in aggregate(reports).items():
        lines.append(f"{m:<24}{_fmt(s['q1'])}{_fmt(s['median'])}{_fmt(s['q3'])}{s['n']:>8}")
    return "\n".join(lines) + "\n"


def write_report(reports, stem) -> dict:
    """Writes ``stem``.txt, ``stem``.csv and ``stem``.json; returns the paths."""
    from pathlib import Path

    stem = Path(stem)
    paths = {ext: stem.with_name(stem.name + "." + ext) for ext in ("txt", "csv", "json")}
    paths["txt"].write_text(format_report(reports))
    with open(paths["csv"], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["utterance", *METRICS, "frames_msd", "frames_f0", "frames_vuv", "total_frames"])
        for r in reports:
            fc = r.frames_compared
            w.writerow([r.name, r.msd_db, "" if r.f0_rmse_cents is None else r.f0_rmse_cents, r.vuv_error_pct,
                        fc.get("msd", 0), fc.get("f0", 0), fc.get("vuv", 0), r.total_frames])
    paths["json"].write_text(json.dumps(
        {"utterances": [asdict(r) for r in reports], "aggregate": aggregate(reports)}, indent=2))
    return paths
