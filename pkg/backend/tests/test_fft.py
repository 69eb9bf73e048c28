import numpy as np
import pytest

from app.exceptions import DomainError
from app.utils.fft import fft, fft2, ifft, ifft2, is_power_of_two, naive_dft2


@pytest.mark.parametrize("n", [1, 2, 4, 16, 64])
def test_fft_matches_direct_dft(n):
    rng = np.random.default_rng(n)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    k = np.arange(n)
    direct = np.exp(-2j * np.pi * np.outer(k, k) / n) @ x
    np.testing.assert_allclose(fft(x), direct, atol=1e-10)


def test_fft_batches_over_other_axes():
    x = np.random.default_rng(0).standard_normal((3, 8, 5))
    np.testing.assert_allclose(fft(x, axis=1), np.fft.fft(x, axis=1), atol=1e-12)


def test_fft2_matches_naive_2d_dft():
    x = np.random.default_rng(1).standard_normal((2, 8, 16))
    np.testing.assert_allclose(fft2(x), naive_dft2(x), atol=1e-9)


def test_parseval():
    x = np.random.default_rng(2).standard_normal((16, 16))
    energy = np.sum(np.abs(x) ** 2)
    np.testing.assert_allclose(np.sum(np.abs(fft2(x)) ** 2) / x.size, energy, rtol=1e-12)


def test_inverse_recovers_input():
    x = np.random.default_rng(3).standard_normal((8, 8))
    np.testing.assert_allclose(ifft2(fft2(x)).real, x, atol=1e-12)
    np.testing.assert_allclose(ifft(fft(x[0])).real, x[0], atol=1e-12)


def test_non_power_of_two_rejected():
    assert not is_power_of_two(12)
    with pytest.raises(DomainError):
        fft(np.ones(12))
