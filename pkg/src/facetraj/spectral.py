"""Detrending and high-frequency power share of trajectory rows."""
import numpy as np
from scipy import signal

from .errors import NyquistViolation, TooShort
from .traj import normalize

DEFAULT_CUTOFF = 6.0


def detrend(x) -> np.ndarray:
    """Remove the least-squares line, then z-score (flat input maps to zeros)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise TooShort("detrending needs at least two samples")
    return normalize(signal.detrend(x, axis=-1, type="linear"))


def power_spectrum(x, fs):
    """One-sided power ``|X_k|^2 / N`` with interior bins doubled.

    With this convention ``power.sum() == (x ** 2).sum()`` (Parseval).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    X = np.fft.rfft(x, axis=-1)
    p = (X.real**2 + X.imag**2) / n
    if n % 2 == 0:
        p[..., 1:-1] *= 2.0
    else:
        p[..., 1:] *= 2.0
    return np.fft.rfftfreq(n, d=1.0 / fs), p


def hf_ratio(x, fs, cutoff=DEFAULT_CUTOFF):
    """Share of non-DC power at frequencies above ``cutoff``.

    Expects an already detrended series; works row-wise on 2-D input.
    Returns 0 when the non-DC power is below 1e-12.
    """
    if fs <= 2.0 * cutoff:
        raise NyquistViolation(f"sampling rate {fs} Hz cannot resolve {cutoff} Hz")
    freqs, p = power_spectrum(x, fs)
    total = p[..., 1:].sum(axis=-1)
    high = p[..., freqs > cutoff].sum(axis=-1)
    out = np.where(total < 1e-12, 0.0, high / np.where(total < 1e-12, 1.0, total))
    return float(out) if out.ndim == 0 else out


def series_hf_ratio(values, fs, cutoff=DEFAULT_CUTOFF):
    """Mean over rows of the high-frequency share of each detrended row."""
    return float(np.mean(hf_ratio(detrend(values), fs, cutoff)))
