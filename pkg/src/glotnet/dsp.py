"""Classical signal-processing primitives.

Conventions used throughout the package:

* audio is a 1-D float64 numpy array with amplitudes in [-1, 1)
* AR coefficients follow the predictor convention A(z) = 1 - sum_k a_k z^-k,
  so ``x[n] = sum_k a_k x[n-k] + e[n]``
* analysis frame ``t`` is centered at sample ``t * hop``
"""
from __future__ import annotations

import logging
import math
import wave
from dataclasses import dataclass

import numpy as np
from scipy import signal

log = logging.getLogger(__name__)

SAMPLE_RATE = 16000
FRAME_SHIFT = 80  # 5 ms at 16 kHz


class UnstableRecursionError(ValueError):
    """Levinson recursion hit a reflection coefficient with magnitude >= 1.

    ``coeffs`` and ``order`` hold the last valid (partial) solution.
    """

    def __init__(self, message, coeffs, order, error):
        super().__init__(message)
        self.coeffs = coeffs
        self.order = order
        self.error = error


@dataclass
class FilterTrack:
    """Piecewise-constant AR filter, one coefficient vector per frame."""

    coeffs: np.ndarray  # (frames, order)
    frame_shift: int = FRAME_SHIFT

    def __post_init__(self):
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=np.float64))

    @property
    def order(self) -> int:
        return self.coeffs.shape[1]

    @property
    def n_frames(self) -> int:
        return self.coeffs.shape[0]

    def frame_of_sample(self, n_samples: int) -> np.ndarray:
        """Index of the frame whose center is nearest to each sample."""
        n = np.arange(n_samples)
        idx = (n + self.frame_shift // 2) // self.frame_shift
        return np.minimum(idx, self.n_frames - 1)

    def check_covers(self, n_samples: int):
        needed = math.ceil(n_samples / self.frame_shift)
        if abs(needed - self.n_frames) > 1:
            raise ValueError(
                f"filter track has {self.n_frames} frames, audio of {n_samples} samples "
                f"needs {needed}"
            )

    @classmethod
    def static(cls, coeffs, n_frames: int, frame_shift: int = FRAME_SHIFT) -> "FilterTrack":
        coeffs = np.asarray(coeffs, dtype=np.float64)
        return cls(np.tile(coeffs, (n_frames, 1)), frame_shift)


# ---------------------------------------------------------------------------
# framing


def get_window(name: str, length: int) -> np.ndarray:
    if name == "rect":
        return np.ones(length)
    if name == "hann":
        return np.hanning(length)
    if name == "hamming":
        return np.hamming(length)
    raise ValueError(f"unknown window {name!r}")


def n_frames_for(n_samples: int, hop: int) -> int:
    return math.ceil(n_samples / hop)


def frame_signal(x, frame_len: int, hop: int, window: str = "hann") -> np.ndarray:
    """Slice ``x`` into centered, windowed frames of shape (ceil(len/hop), frame_len)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("audio must be a non-empty 1-D array")
    if hop < 1 or hop > frame_len:
        raise ValueError(f"need frame_len >= hop >= 1, got frame_len={frame_len}, hop={hop}")
    count = n_frames_for(x.size, hop)
    left = frame_len // 2
    right = (count - 1) * hop + frame_len - left - x.size
    padded = np.pad(x, (left, max(right, 0)))
    frames = np.lib.stride_tricks.sliding_window_view(padded, frame_len)[::hop][:count]
    return frames * get_window(window, frame_len)


# ---------------------------------------------------------------------------
# linear prediction


def autocorrelation(frame, order: int) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    n = frame.size
    nfft = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(frame, nfft)
    r = np.fft.irfft(spec.real**2 + spec.imag**2, nfft)[: order + 1]
    if r.size < order + 1:
        r = np.pad(r, (0, order + 1 - r.size))
    return r


def levinson(r, order: int | None = None):
    """Solve the Toeplitz normal equations by the Levinson-Durbin recursion.

    Returns ``(a, err)`` with ``a`` in predictor convention and ``err`` the
    final prediction error power.
    """
    r = np.asarray(r, dtype=np.float64)
    if order is None:
        order = r.size - 1
    if r.size < order + 1:
        raise ValueError("autocorrelation vector shorter than order + 1")
    if not r[0] > 0:
        raise ValueError("r[0] must be positive")
    a = np.zeros(order)
    err = r[0]
    for i in range(order):
        acc = r[i + 1] - np.dot(a[:i], r[i:0:-1])
        k = acc / err
        if abs(k) >= 1.0:
            raise UnstableRecursionError(
                f"reflection coefficient {k:.6g} at step {i + 1}", a[:i].copy(), i, err
            )
        a[:i] = a[:i] - k * a[:i][::-1]
        a[i] = k
        err *= 1.0 - k * k
    return a, max(err, 0.0)


def lpc(frame, order: int, lag_window: float = 0.0):
    """Autocorrelation-method LPC of one (already windowed) frame."""
    r = autocorrelation(frame, order)
    if r[0] <= 0:
        return np.zeros(order), 0.0
    if lag_window:
        r = r.copy()
        r[0] *= 1.0 + lag_window
    return levinson(r, order)


def polynomial(a) -> np.ndarray:
    """Coefficients of A(z) = 1 - sum a_k z^-k, lowest power of z^-1 first."""
    return np.concatenate(([1.0], -np.asarray(a, dtype=np.float64)))


def pole_radius(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(np.roots(polynomial(a)))))


def is_minimum_phase(a) -> bool:
    return pole_radius(a) < 1.0


def stabilize(a, max_radius: float = 0.999) -> np.ndarray:
    """Reflect poles outside the unit circle inward and cap their radius."""
    a = np.asarray(a, dtype=np.float64)
    roots = np.roots(polynomial(a))
    mag = np.abs(roots)
    if mag.size == 0 or mag.max() <= max_radius:
        return a
    outside = mag > 1.0
    roots[outside] = 1.0 / np.conj(roots[outside])
    mag = np.abs(roots)
    big = mag > max_radius
    roots[big] *= max_radius / mag[big]
    poly = np.real(np.poly(roots))
    return -poly[1:]


# ---------------------------------------------------------------------------
# line spectral frequencies

_LSF_BISECTIONS = 10
_LSF_NEWTON_STEPS = 6


def _phase_of(roots, w, order: int):
    """Unwrapped phase of exp(j(p+1)w/2) A(e^jw) and its derivative.

    For a minimum-phase A this rises monotonically from 0 at w = 0 to
    (p+1) pi / 2 at w = pi; LSF number k sits where it crosses k pi / 2.
    Working from the factored form keeps the evaluation accurate when poles
    crowd the unit circle, where the sum and difference polynomials lose
    most of their digits to cancellation.
    """
    u = roots[None, :] * np.exp(-1j * w)[:, None]
    phase = 0.5 * (order + 1) * w + np.angle(1.0 - u).sum(axis=1)
    slope = 0.5 * (order + 1) + np.real(u / (1.0 - u)).sum(axis=1)
    return phase, slope


def lpc_to_lsf(a) -> np.ndarray:
    """Convert minimum-phase AR coefficients to line spectral frequencies."""
    a = np.asarray(a, dtype=np.float64)
    order = a.size
    if order == 0:
        return np.zeros(0)
    roots = np.roots(polynomial(a))
    if np.max(np.abs(roots)) >= 1.0:
        raise ValueError("predictor polynomial is not minimum phase")
    target = np.arange(1, order + 1) * (0.5 * np.pi)
    lo, hi = np.zeros(order), np.full(order, np.pi)
    for _ in range(_LSF_BISECTIONS):
        mid = 0.5 * (lo + hi)
        below = _phase_of(roots, mid, order)[0] < target
        lo, hi = np.where(below, mid, lo), np.where(below, hi, mid)
    lsf = 0.5 * (lo + hi)
    for _ in range(_LSF_NEWTON_STEPS):
        phase, slope = _phase_of(roots, lsf, order)
        lsf = np.clip(lsf - (phase - target) / slope, lo, hi)
    if not np.all(np.diff(lsf) > 0) or lsf[0] <= 0 or lsf[-1] >= np.pi:
        raise ArithmeticError("LSF roots failed to interleave")
    return lsf


def _from_angles(w) -> np.ndarray:
    poly = np.array([1.0])
    for wk in w:
        poly = np.convolve(poly, [1.0, -2.0 * np.cos(wk), 1.0])
    return poly


def lsf_to_lpc(lsf) -> np.ndarray:
    """Rebuild predictor coefficients from strictly increasing LSFs in (0, pi)."""
    lsf = np.asarray(lsf, dtype=np.float64)
    order = lsf.size
    if order == 0:
        return np.zeros(0)
    if not (np.all(np.diff(lsf) > 0) and lsf[0] > 0 and lsf[-1] < np.pi):
        raise ValueError("LSFs must be strictly increasing within (0, pi)")
    P = _from_angles(lsf[0::2])
    Q = _from_angles(lsf[1::2])
    if order % 2 == 0:
        P = np.convolve(P, [1.0, 1.0])
        Q = np.convolve(Q, [1.0, -1.0])
    else:
        Q = np.convolve(Q, [1.0, 0.0, -1.0])
    A = 0.5 * (P + Q)
    return -A[1 : order + 1]


def flat_lsf(order: int) -> np.ndarray:
    return np.arange(1, order + 1) * np.pi / (order + 1)


# ---------------------------------------------------------------------------
# time-varying filtering


def _segments(track: FilterTrack, n_samples: int):
    """Yield (start, stop, coeffs) runs of constant per-sample coefficients."""
    idx = track.frame_of_sample(n_samples)
    bounds = np.concatenate(([0], np.nonzero(np.diff(idx))[0] + 1, [n_samples]))
    for start, stop in zip(bounds[:-1], bounds[1:]):
        yield start, stop, track.coeffs[idx[start]]


def allpole_filter(excitation, track: FilterTrack, clip: bool = True, return_clipped: bool = False):
    """All-pole synthesis ``y[n] = sum_k a_k(n) y[n-k] + e[n]`` from zero state.

    Clipping to [-1, 1) applies to the returned signal only; the recursion
    runs on the unclipped values.
    """
    e = np.asarray(excitation, dtype=np.float64)
    track.check_covers(e.size)
    order = track.order
    y = np.zeros(e.size)
    hist = np.zeros(order)  # y[n-1], y[n-2], ...
    for start, stop, a in _segments(track, e.size):
        den = polynomial(a)
        zi = signal.lfiltic([1.0], den, hist) if order else None
        seg = e[start:stop]
        if order:
            y[start:stop], _ = signal.lfilter([1.0], den, seg, zi=zi)
        else:
            y[start:stop] = seg
        recent = y[max(0, stop - order) : stop][::-1]
        if recent.size < order:
            hist = np.concatenate((recent, hist[: order - recent.size]))
        else:
            hist = recent
    n_clipped = 0
    if clip:
        over = (y < -1.0) | (y >= 1.0)
        n_clipped = int(over.sum())
        if n_clipped:
            log.warning("allpole_filter clipped %d samples", n_clipped)
            y = np.clip(y, -1.0, 1.0 - 2.0**-15)
    if return_clipped:
        return y, n_clipped
    return y


def _lagged(x, order: int) -> np.ndarray:
    """Matrix of past samples, column k-1 holds x[n-k]."""
    out = np.zeros((x.size, order))
    for k in range(1, order + 1):
        out[k:, k - 1] = x[:-k]
    return out


def inverse_filter(x, track: FilterTrack) -> np.ndarray:
    """FIR inverse ``e[n] = x[n] - sum_k a_k(n) x[n-k]`` from zero state."""
    x = np.asarray(x, dtype=np.float64)
    track.check_covers(x.size)
    if track.order == 0:
        return x.copy()
    coeffs = track.coeffs[track.frame_of_sample(x.size)]
    return x - np.einsum("nk,nk->n", coeffs, _lagged(x, track.order))


def preemphasis(x, coef: float = 0.97) -> np.ndarray:
    return signal.lfilter([1.0, -coef], [1.0], np.asarray(x, dtype=np.float64))


def deemphasis(x, coef: float = 0.97) -> np.ndarray:
    return signal.lfilter([1.0], [1.0, -coef], np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# WAV i/o (PCM16 mono)


def read_wav(path):
    with wave.open(str(path), "rb") as f:
        if f.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM")
        if f.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio")
        sr = f.getframerate()
        raw = f.readframes(f.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2")
    return pcm.astype(np.float64) / 32768.0, sr


def write_wav(path, x, sample_rate: int = SAMPLE_RATE):
    pcm = np.clip(np.round(np.asarray(x, dtype=np.float64) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(sample_rate)
        f.writeframes(pcm.tobytes())
