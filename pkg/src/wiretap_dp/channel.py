"""Power normalization and complex AWGN for the Bob and Eve links."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ChannelConfig:
    """AWGN link settings.

    ``power`` is the average power per complex symbol, and
    ``SNR = power / noise_var``.
    """

    snr_db: float = 20.0
    power: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.power > 0:
            raise ValueError(f"power must be > 0, got {self.power}")

    @property
    def noise_var(self) -> float:
        """Complex noise variance; each real component gets half."""
        if self.snr_db == float("inf"):
            return 0.0
        return self.power / 10.0 ** (self.snr_db / 10.0)


def _symbol_power(v: np.ndarray) -> np.ndarray:
    # Mean power per complex symbol = 2 * mean power per real component.
    n = v.shape[-1]
    return 2.0 * np.sum(v**2, axis=-1) / (n + (n % 2))


def power_normalize(z2, power: float = 1.0) -> tuple[np.ndarray, float | np.ndarray]:
    """Scale a real vector so its mean power per complex symbol equals ``power``.

    Returns ``(normalized, gain)`` with ``normalized = gain * z2``; the receiver
    divides by ``gain``. A batch ``(N, n)`` is normalized row by row and gets a
    gain array of shape ``(N,)``.
    """
    v = np.asarray(z2, dtype=np.float64)
    if v.shape[-1] == 0:
        raise ValueError("cannot power-normalize an empty vector")
    p = _symbol_power(v)
    if np.any(p == 0):
        raise ValueError("cannot power-normalize an all-zero vector (gain undefined)")
    gain = np.sqrt(power / p)
    out = v * (gain[..., None] if v.ndim > 1 else gain)
    return out, (float(gain) if v.ndim == 1 else gain)


def pack_complex(x: np.ndarray) -> np.ndarray:
    """Consecutive real pairs to complex symbols; odd lengths get one zero pad."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] % 2:
        pad = np.zeros(x.shape[:-1] + (1,))
        x = np.concatenate([x, pad], axis=-1)
    return x[..., 0::2] + 1j * x[..., 1::2]


def unpack_complex(s: np.ndarray, length: int) -> np.ndarray:
    out = np.empty(s.shape[:-1] + (2 * s.shape[-1],))
    out[..., 0::2] = s.real
    out[..., 1::2] = s.imag
    return out[..., :length]


def complex_noise(shape, noise_var: float, rng: np.random.Generator) -> np.ndarray:
    """Circular complex Gaussian noise, ``noise_var / 2`` per real component."""
    std = np.sqrt(noise_var / 2.0)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return std * re + 1j * (std * im)


def transmit(z2, cfg: ChannelConfig, rng_seed: int) -> np.ndarray:
    """Send a real vector over one AWGN link and return the received reals.

    Bob and Eve call this with the same ``cfg`` (same SNR) and different seeds.
    """
    x = np.asarray(z2, dtype=np.float64)
    n = x.shape[-1]
    sym = pack_complex(x)
    var = cfg.noise_var
    if var > 0:
        sym = sym + complex_noise(sym.shape, var, np.random.default_rng(rng_seed))
    return unpack_complex(sym, n)


def empirical_snr_db(signal, received) -> float:
    """``10 log10(signal power / noise power)`` measured on real arrays."""
    s = np.asarray(signal, dtype=np.float64)
    noise = np.asarray(received, dtype=np.float64) - s
    return float(10.0 * np.log10(np.sum(s**2) / np.sum(noise**2)))
