"""Spectral helpers on the uniform periodic grid u_j = pi*j/N, j = 0..2N-1.

Functions on symmetric circles are stored on the half grid k = 0..N and
mirrored to the full grid as even or odd functions of u.
"""

from __future__ import annotations

from math import comb

import numpy as np


def mirror_even(half: np.ndarray) -> np.ndarray:
    half = np.asarray(half)
    return np.concatenate([half, half[-2:0:-1]])


def mirror_odd(half: np.ndarray) -> np.ndarray:
    half = np.asarray(half)
    return np.concatenate([half, -half[-2:0:-1]])


def _wavenumbers(m: int) -> np.ndarray:
    return np.fft.fftfreq(m, d=1.0 / m)


def derivative(full: np.ndarray, order: int = 1) -> np.ndarray:
    """Spectral derivative of a periodic sample on [0, 2pi)."""
    full = np.asarray(full)
    m = full.shape[0]
    k = _wavenumbers(m)
    mult = (1j * k) ** order
    if m % 2 == 0 and order % 2 == 1:
        mult[m // 2] = 0.0
    out = np.fft.ifft(np.fft.fft(full) * mult)
    return out.real if np.isrealobj(full) else out


def antiderivative(full: np.ndarray) -> np.ndarray:
    """Periodic primitive F with F(0) = 0; the mean of the input is ignored."""
    full = np.asarray(full)
    m = full.shape[0]
    k = _wavenumbers(m)
    spec = np.fft.fft(full)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(k != 0, spec / (1j * k), 0.0)
    if m % 2 == 0:
        g[m // 2] = 0.0
    out = np.fft.ifft(g)
    out = out - out[0]
    return out.real if np.isrealobj(full) else out


class TrigInterpolant:
    """Trigonometric interpolant of a periodic sample, evaluable anywhere."""

    def __init__(self, full: np.ndarray):
        full = np.asarray(full)
        self.m = full.shape[0]
        self.real = np.isrealobj(full)
        self.coef = np.fft.fft(full) / self.m
        self.k = _wavenumbers(self.m)
        self.nyq = self.m // 2 if self.m % 2 == 0 else None
        if self.nyq is not None:
            self.c_nyq = self.coef[self.nyq]
            self.coef = self.coef.copy()
            self.coef[self.nyq] = 0.0

    def _finish(self, val):
        return val.real if self.real else val

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        ph = np.exp(1j * np.multiply.outer(v, self.k))
        val = ph @ self.coef
        if self.nyq is not None:
            val = val + self.c_nyq * np.cos(self.nyq * v)
        return self._finish(val)

    def deriv(self, v):
        v = np.asarray(v, dtype=float)
        ph = np.exp(1j * np.multiply.outer(v, self.k))
        val = ph @ (1j * self.k * self.coef)
        if self.nyq is not None:
            val = val - self.nyq * self.c_nyq * np.sin(self.nyq * v)
        return self._finish(val)


_GREGORY = (1 / 12, 1 / 24, 19 / 720, 3 / 160, 863 / 60480, 275 / 24192)


def gregory_weights(n_intervals: int, h: float, order: int = 6) -> np.ndarray:
    """Gregory (endpoint corrected trapezoid) weights for n_intervals + 1 nodes.

    Uses forward differences at the left end and backward differences at the
    right end up to ``order``; exact for polynomials of degree <= order.
    """
    n = n_intervals
    order = min(order, len(_GREGORY), n // 2)
    w = np.ones(n + 1)
    w[0] = w[-1] = 0.5
    for k in range(1, order + 1):
        fwd = np.zeros(n + 1)
        bwd = np.zeros(n + 1)
        for j in range(k + 1):
            fwd[j] += (-1) ** (k - j) * comb(k, j)
            bwd[n - j] += (-1) ** j * comb(k, j)
        w -= _GREGORY[k - 1] * (bwd + (-1) ** k * fwd)
    return h * w
