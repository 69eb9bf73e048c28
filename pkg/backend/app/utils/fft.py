"""Radix-2 Cooley-Tukey FFT used by the spectral solver and the energy spectrum.

Convention (same as numpy): the forward transform is unnormalised, the inverse
carries 1/N, so Parseval reads ``sum|x|^2 == sum|X|^2 / N``.
"""
from functools import lru_cache

import numpy as np

from app.exceptions import DomainError


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=None)
def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(size: int) -> np.ndarray:
    half = size // 2
    return np.exp(-2j * np.pi * np.arange(half) / size)


def fft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Forward DFT along ``axis``; any leading/trailing axes are batched."""
    x = np.moveaxis(np.asarray(x, dtype=np.complex128), axis, -1)
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise DomainError(f"FFT length must be a power of two, got {n}")
    lead = x.shape[:-1]
    out = x[..., _bit_reverse_indices(n)]
    size = 2
    while size <= n:
        half = size // 2
        blocks = out.reshape(*lead, n // size, size)
        even = blocks[..., :half]
        odd = blocks[..., half:] * _twiddles(size)
        out = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        size *= 2
    return np.moveaxis(out, -1, axis)


def ifft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[axis]
    return np.conj(fft(np.conj(x), axis=axis)) / n


def fft2(x: np.ndarray) -> np.ndarray:
    """2D DFT over the last two axes (H, W)."""
    return fft(fft(x, axis=-1), axis=-2)


def ifft2(x: np.ndarray) -> np.ndarray:
    return ifft(ifft(x, axis=-1), axis=-2)


def naive_dft2(x: np.ndarray) -> np.ndarray:
    """O(N^2) reference transform over the last two axes (test oracle)."""
    x = np.asarray(x, dtype=np.complex128)
    h, w = x.shape[-2:]
    fh = np.exp(-2j * np.pi * np.outer(np.arange(h), np.arange(h)) / h)
    fw = np.exp(-2j * np.pi * np.outer(np.arange(w), np.arange(w)) / w)
    return fh @ x @ fw.T


def wavenumbers(h: int, w: int):
    """Integer wavenumber grids (ky, kx) of shape (H, W) for the [0, 2pi)^2 box."""
    ky = np.concatenate([np.arange(0, h // 2), np.arange(-h // 2, 0)]).astype(np.float64)
    kx = np.concatenate([np.arange(0, w // 2), np.arange(-w // 2, 0)]).astype(np.float64)
    return np.meshgrid(ky, kx, indexing="ij")
