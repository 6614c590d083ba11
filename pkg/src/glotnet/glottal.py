"""Glottal inverse filtering with quasi-closed-phase style weighted LPC.

The excitation instants are located as the largest negative peak per pitch
period of a plain-LPC residual; samples right after each instant are
down-weighted when fitting the vocal tract filter.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import dsp


class SingularWeightingWarning(RuntimeWarning):
    pass


@dataclass
class GlottalConfig:
    vt_order: int = 30
    source_order: int = 10
    frame_len: int = 400  # 25 ms
    frame_shift: int = dsp.FRAME_SHIFT
    preemphasis: float = 0.97
    ramp_fraction: float = 0.15
    dc_floor: float = 1e-5
    attenuation: float = 0.3
    max_pole_radius: float = 0.999
    sample_rate: int = dsp.SAMPLE_RATE


@dataclass
class GifResult:
    vt_track: dsp.FilterTrack
    excitation: np.ndarray
    source_envelope_track: dsp.FilterTrack
    vt_lsf: np.ndarray  # (frames, vt_order)
    source_lsf: np.ndarray  # (frames, source_order)


def weighted_lpc(frame, order: int, weights, covariance: bool = False) -> np.ndarray:
    """Minimize sum_n w[n] (x[n] - sum_k a_k x[n-k])^2 over the zero-padded frame.

    The error runs over ``len(frame) + order`` samples; weights past the frame
    end repeat the last weight, so uniform weights give exactly the
    autocorrelation method. With ``covariance=True`` only predictions made
    entirely from samples inside the frame count (``n = order .. len - 1``)
    and the first ``order`` weights are unused.
    """
    x = np.asarray(frame, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != x.shape:
        raise ValueError("weights must match the frame length")
    if np.any(w <= 0):
        raise ValueError("weights must be strictly positive")
    n = x.size
    xp = np.concatenate((x, np.zeros(order)))
    wp = np.concatenate((w, np.full(order, w[-1])))
    lagged = np.zeros((n + order, order + 1))
    for k in range(order + 1):
        lagged[k:, k] = xp[: n + order - k]
    # least squares on the sqrt-weighted data matrix rather than the normal
    # equations, which would square an already large condition number
    scaled = lagged * np.sqrt(wp)[:, None]
    if covariance:
        scaled = scaled[order:n]
    try:
        if not np.isfinite(scaled).all() or not np.any(scaled[:, 0]):
            raise linalg.LinAlgError("degenerate frame")
        a, _, rank, _ = linalg.lstsq(scaled[:, 1:], scaled[:, 0])
        if rank < order or not np.all(np.isfinite(a)):
            raise linalg.LinAlgError("rank deficient weighted system")
    except (linalg.LinAlgError, ValueError):
        warnings.warn("singular weighted normal equations, using plain LPC", SingularWeightingWarning)
        try:
            a, _ = dsp.lpc(x, order)
        except dsp.UnstableRecursionError as err:
            a = np.concatenate((err.coeffs, np.zeros(order - err.order)))
    return a


def qcp_weights(
    frame_len: int,
    f0: float,
    sample_rate: int = dsp.SAMPLE_RATE,
    ramp_fraction: float = 0.15,
    dc_floor: float = 1e-5,
    attenuation: float = 0.3,
    instants=None,
    lead: float = 0.05,
) -> np.ndarray:
    """Periodic attenuation pattern around glottal excitation instants.

    Each instant ``g`` anchors a span of ``attenuation`` periods that ends
    ``lead`` periods after ``g`` (the open phase leading into the closure
    plus the closure itself). The span falls from 1 to ``dc_floor`` and rises
    back through linear ramps of ``ramp_fraction`` periods, keeping at least
    one sample at the floor. Without explicit instants they sit at multiples
    of the period starting from sample 0. Unvoiced frames get uniform weights.
    """
    w = np.ones(frame_len)
    if not f0 or f0 <= 0:
        return w
    period = sample_rate / f0
    if instants is None:
        instants = np.round(np.arange(0.0, frame_len + period, period)).astype(int)
    span = max(int(round(attenuation * period)), 1)
    ramp = min(max(int(round(ramp_fraction * period)), 0), (span - 1) // 2)
    r = np.arange(1, ramp + 1) / (ramp + 1)
    shape = np.full(span, dc_floor)
    shape[:ramp] = 1.0 - (1.0 - dc_floor) * r
    shape[span - ramp :] = dc_floor + (1.0 - dc_floor) * r
    n = np.arange(frame_len)
    for g in instants:
        start = g + int(round(lead * period)) - span
        inside = (n >= start) & (n < start + span)
        w[inside] = np.minimum(w[inside], shape[n[inside] - start])
    return w


def excitation_instants(residual, period: float) -> np.ndarray:
    """Largest negative residual peak in each consecutive pitch period."""
    residual = np.asarray(residual)
    step = max(int(round(period)), 1)
    out = []
    for start in range(0, residual.size, step):
        seg = residual[start : start + step]
        if seg.size < step // 2:
            break
        out.append(start + int(np.argmin(seg)))
    return np.asarray(out, dtype=int)


def _canonical(a, max_radius):
    """Stabilize and pass through the LSF domain so coefficients match what
    the feature track reproduces later."""
    a = dsp.stabilize(a, max_radius)
    try:
        lsf = dsp.lpc_to_lsf(a)
    except (ValueError, ArithmeticError):
        a = dsp.stabilize(a * 0.98 ** np.arange(1, a.size + 1), max_radius)
        lsf = dsp.lpc_to_lsf(a)
    return dsp.lsf_to_lpc(lsf), lsf


def _frame_segments(x, cfg: GlottalConfig, n_frames: int):
    """Unwindowed analysis segments (same geometry as dsp.frame_signal)."""
    return dsp.frame_signal(x, cfg.frame_len, cfg.frame_shift, "rect")[:n_frames]


def analyze(audio, f0_track, config: GlottalConfig | None = None, uniform: bool = False) -> GifResult:
    """Split speech into a vocal tract filter track and glottal excitation.

    ``uniform=True`` skips the QCP weighting (plain LPC inverse filtering).
    """
    cfg = config or GlottalConfig()
    x = np.asarray(audio, dtype=np.float64)
    n_frames = dsp.n_frames_for(x.size, cfg.frame_shift)
    f0_track = np.asarray(f0_track, dtype=np.float64)
    if f0_track.size != n_frames:
        raise ValueError(f"f0 track has {f0_track.size} frames, expected {n_frames}")
    xp = dsp.preemphasis(x, cfg.preemphasis)
    window = dsp.get_window("hann", cfg.frame_len)
    segs = _frame_segments(xp, cfg, n_frames)

    first_pass = np.zeros((n_frames, cfg.vt_order))
    for t, seg in enumerate(segs):
        first_pass[t] = _plain_lpc(seg * window, cfg.vt_order)
    residual = None
    if not uniform and np.any(f0_track > 0):
        residual = dsp.inverse_filter(xp, dsp.FilterTrack(first_pass, cfg.frame_shift))
        residual_segs = _frame_segments(residual, cfg, n_frames)

    vt = np.zeros((n_frames, cfg.vt_order))
    vt_lsf = np.zeros_like(vt)
    for t, seg in enumerate(segs):
        f0 = f0_track[t]
        if residual is None or f0 <= 0:
            a = first_pass[t]
        else:
            period = cfg.sample_rate / f0
            inst = excitation_instants(residual_segs[t], period)
            w = qcp_weights(
                cfg.frame_len, f0, cfg.sample_rate, cfg.ramp_fraction, cfg.dc_floor,
                cfg.attenuation, instants=inst,
            )
            # unwindowed frame, so predictions that would reach into the
            # zero padding are left out altogether
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", SingularWeightingWarning)
                a = weighted_lpc(seg, cfg.vt_order, w, covariance=True)
        vt[t], vt_lsf[t] = _canonical(a, cfg.max_pole_radius)
    vt_track = dsp.FilterTrack(vt, cfg.frame_shift)
    excitation = dsp.inverse_filter(xp, vt_track)

    src = np.zeros((n_frames, cfg.source_order))
    src_lsf = np.zeros_like(src)
    for t, seg in enumerate(_frame_segments(excitation, cfg, n_frames)):
        src[t], src_lsf[t] = _canonical(_plain_lpc(seg * window, cfg.source_order), cfg.max_pole_radius)
    return GifResult(vt_track, excitation, dsp.FilterTrack(src, cfg.frame_shift), vt_lsf, src_lsf)


def _plain_lpc(frame, order):
    try:
        a, _ = dsp.lpc(frame, order)
    except dsp.UnstableRecursionError as err:
        a = np.concatenate((err.coeffs, np.zeros(order - err.order)))
    return a
