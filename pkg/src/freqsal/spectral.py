"""Discrete Fourier transform along the temporal axis of a feature volume.

Power-of-two lengths take an iterative radix-2 fast path; other lengths
use a direct matrix path. The unnormalized forward convention is used
throughout: X_k = sum_t x_t * exp(-2*pi*i*k*t/T), so Parseval reads
sum_t x_t^2 = (1/T) * sum_k |X_k|^2.
"""

from __future__ import annotations

import numpy as np

from .tensor import COMPLEX_DTYPE, Tensor, _as_tensor, _finish


def frequency_vector(n_frames: int) -> np.ndarray:
    """Per-bin temporal frequency magnitudes in cycles/frame.

    f_k = min(k, T-k) / T, so f_0 = 0, values peak at 0.5 (Nyquist), and
    f_k = f_{T-k} for 0 < k < T.
    """
    if n_frames < 1:
        raise ValueError(f"temporal length must be >= 1, got {n_frames}")
    k = np.arange(n_frames)
    return np.minimum(k, n_frames - k) / n_frames


def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_radix2(col: np.ndarray) -> np.ndarray:
    # col: complex [n, m] with n a power of two; transforms axis 0
    n, m = col.shape
    a = col[_bit_reversal(n)]
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)[None, :, None]
        blocks = a.reshape(n // size, size, m)
        top = blocks[:, :half, :]
        bot = blocks[:, half:, :] * twiddle
        a = np.concatenate([top + bot, top - bot], axis=1).reshape(n, m)
        size *= 2
    return a


def _dft_direct(col: np.ndarray) -> np.ndarray:
    # O(T^2) matrix path for general lengths
    n = col.shape[0]
    k = np.arange(n)
    w = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return w @ col


def _dft_array(arr: np.ndarray) -> np.ndarray:
    """Unnormalized forward transform of a real or complex array, axis 0."""
    n = arr.shape[0]
    col = arr.reshape(n, -1).astype(COMPLEX_DTYPE)
    if n & (n - 1) == 0:
        out = _fft_radix2(col)
    else:
        out = _dft_direct(col)
    return out.reshape(arr.shape)


def _idft_unnormalized(arr: np.ndarray) -> np.ndarray:
    """sum_k g_k * exp(+2*pi*i*k*t/T), via conjugation of the forward path."""
    return np.conj(_dft_array(np.conj(arr)))


def temporal_dft(x) -> Tensor:
    """Spectrum of a real volume along axis 0, independently per location.

    Returns a complex tensor of the same shape. Differentiable: the
    gradient of the transform is the real part of the unnormalized
    inverse applied to the incoming complex cotangent.
    """
    x = _as_tensor(x)
    if x.is_complex:
        raise TypeError("temporal_dft expects a real input volume")
    if x.ndim < 1:
        raise ValueError("temporal_dft requires at least one axis")
    out = Tensor._wrap(_dft_array(x.data))
    return _finish(out, (x, lambda g: _idft_unnormalized(g).real))


def power(spectrum) -> Tensor:
    """Per-bin squared magnitude re^2 + im^2 of a complex spectrum."""
    spectrum = _as_tensor(spectrum)
    sd = spectrum.data
    out = Tensor._wrap(sd.real**2 + sd.imag**2)
    return _finish(out, (spectrum, lambda g: 2.0 * g * sd))
