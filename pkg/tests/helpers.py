"""Shared oracles and signal generators for the test suite."""
import numpy as np

from glotnet import dsp

SR = dsp.SAMPLE_RATE


def random_stable(rng, order, r_min=0.2, r_max=0.97):
    """Random minimum-phase predictor built from conjugate pole pairs (plus
    one real pole for odd orders)."""
    roots = []
    for _ in range(order // 2):
        r = rng.uniform(r_min, r_max)
        w = rng.uniform(0.05, np.pi - 0.05)
        roots += [r * np.exp(1j * w), r * np.exp(-1j * w)]
    if order % 2:
        roots.append(rng.uniform(-r_max, r_max))
    poly = np.real(np.poly(roots)) if roots else np.array([1.0])
    return -poly[1:]


def formant_filter(formants, bandwidths, fs=SR):
    """Predictor coefficients of a cascade of second-order resonators."""
    poly = np.array([1.0])
    for f, b in zip(formants, bandwidths):
        r = np.exp(-np.pi * b / fs)
        poly = np.convolve(poly, [1.0, -2.0 * r * np.cos(2 * np.pi * f / fs), r * r])
    return -poly[1:]


# 15 resonances -> order 30, a plausible adult vowel plus higher-frequency structure
VOWEL_FORMANTS = (700, 1220, 2600, 3300, 3750, 4300, 4900, 5400, 5900, 6300, 6700, 7000, 7300, 7600, 7850)
VOWEL_BANDWIDTHS = (80, 90, 120, 150, 200, 220, 250, 280, 300, 320, 350, 380, 400, 420, 450)


def log_envelope_db(a, n_freq=512):
    """20 log10 |1 / A(e^jw)| on a uniform grid over [0, pi)."""
    w = np.linspace(0, np.pi, n_freq, endpoint=False)
    z = np.exp(-1j * np.outer(w, np.arange(len(a) + 1)))
    return -20 * np.log10(np.abs(z @ dsp.polynomial(a)))


def spectral_distortion(a_true, a_est):
    d = log_envelope_db(a_true) - log_envelope_db(a_est)
    return float(np.sqrt(np.mean(d**2)))


def sine(f0, seconds=1.0, amp=1.0, fs=SR):
    t = np.arange(int(seconds * fs)) / fs
    return amp * np.sin(2 * np.pi * f0 * t)


def impulse_train(f0, n, fs=SR):
    x = np.zeros(n)
    x[:: int(round(fs / f0))] = 1.0
    return x


def toeplitz_autocorr(rng, order, n=256):
    """Valid autocorrelation sequence of a random signal."""
    x = rng.standard_normal(n)
    return dsp.autocorrelation(x, order)


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)


def check_grads(build, tensors, h=1e-5):
    """Largest relative error between backprop and finite differences.

    ``build()`` returns a scalar Tensor computed from ``tensors``."""
    out = build()
    for t in tensors:
        t.grad = None
    out.backward()
    analytic = [t.grad.copy() for t in tensors]
    worst = 0.0
    for t, g in zip(tensors, analytic):
        num = numeric_grad(lambda: float(build().data), t.data, h)
        worst = max(worst, rel_error(g, num))
    return worst


def check_grads_sampled(build, tensors, rng, per_tensor=4, h=1e-5):
    """Like ``check_grads`` but only probes a few random entries of each tensor."""
    out = build()
    for t in tensors:
        t.grad = None
    out.backward()
    analytic, numeric = [], []
    for t in tensors:
        # parameters that never reach the output get no gradient at all
        g = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        for flat in rng.choice(t.data.size, size=min(per_tensor, t.data.size), replace=False):
            i = np.unravel_index(flat, t.data.shape)
            old = t.data[i]
            t.data[i] = old + h
            fp = float(build().data)
            t.data[i] = old - h
            fm = float(build().data)
            t.data[i] = old
            analytic.append(g[i])
            numeric.append((fp - fm) / (2 * h))
    return rel_error(np.array(analytic), np.array(numeric))
