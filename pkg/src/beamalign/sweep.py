"""Noisy probing sweeps, power feedback, SNR and spectral efficiency."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codebook import Codebook
from .config import SystemConfig


@dataclass
class Measurement:
    z: np.ndarray
    noise_seed: int = 0
    tier_tag: str = "coarse"

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        if np.any(self.z < 0):
            raise ValueError("received powers must be nonnegative")
        if self.tier_tag not in ("coarse", "fine"):
            raise ValueError(f"unknown tier tag {self.tier_tag!r}")

    def __len__(self):
        return len(self.z)


def _weights(beams) -> np.ndarray:
    return beams.weights if isinstance(beams, Codebook) else np.asarray(beams, dtype=np.complex128)


def complex_noise(rng: np.random.Generator, shape, noise_var: float) -> np.ndarray:
    """Draws from CN(0, noise_var); exact zeros when noise_var == 0."""
    if noise_var == 0:
        return np.zeros(shape, dtype=np.complex128)
    scale = np.sqrt(noise_var / 2)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def rx_signal_miso(h: np.ndarray, beams, cfg: SystemConfig, rng: np.random.Generator | None = None,
                   noise: np.ndarray | None = None) -> np.ndarray:
    """y_i = sqrt(rho) h^H v_i s + n_i for every column v_i of ``beams``.

    ``noise`` overrides the draw from ``rng`` (used to replay a sweep).
    """
    h = np.asarray(h).reshape(-1)
    w = _weights(beams)
    if w.shape[0] != h.shape[0]:
        raise ValueError(f"beam length {w.shape[0]} != channel length {h.shape[0]}")
    if noise is None:
        noise = complex_noise(rng, w.shape[1], cfg.noise_var)
    return np.sqrt(cfg.tx_power_w) * (h.conj() @ w) * cfg.pilot + noise


def rx_signal_mimo(H: np.ndarray, tx_beams, rx_beams, cfg: SystemConfig,
                   rng: np.random.Generator | None = None, noise: np.ndarray | None = None) -> np.ndarray:
    """y_i = sqrt(rho) w_i^H H^H v_i s + w_i^H n_i for paired columns.

    ``noise`` has shape (n_pairs, m_r): a fresh CN(0, sigma^2 I) vector per pair.
    """
    H = np.asarray(H)
    v = _weights(tx_beams)
    w = _weights(rx_beams)
    if v.shape[1] != w.shape[1]:
        raise ValueError("transmit and receive beam counts differ")
    if H.shape != (v.shape[0], w.shape[0]):
        raise ValueError(f"channel {H.shape} does not match beams ({v.shape[0]}, {w.shape[0]})")
    if noise is None:
        noise = complex_noise(rng, (v.shape[1], w.shape[0]), cfg.noise_var)
    hv = H.conj().T @ v  # (m_r, n): column i is H^H v_i
    signal = np.sum(w.conj() * hv, axis=0)
    return np.sqrt(cfg.tx_power_w) * signal * cfg.pilot + np.sum(w.conj().T * noise, axis=1)


def power_feedback(y: np.ndarray, tier_tag: str = "coarse", noise_seed: int = 0) -> Measurement:
    y = np.asarray(y)
    return Measurement(z=y.real ** 2 + y.imag ** 2, noise_seed=noise_seed, tier_tag=tier_tag)


def beam_gain(h: np.ndarray, v: np.ndarray, w: np.ndarray | None = None) -> float:
    """Noise-free |h^H v|^2, or |w^H H^H v|^2 when a receive beam is given."""
    h = np.asarray(h)
    if w is None:
        return float(np.abs(np.vdot(h.reshape(-1), v)) ** 2)
    return float(np.abs(np.vdot(w, h.conj().T @ v)) ** 2)


def snr(h: np.ndarray, cfg: SystemConfig, v: np.ndarray, w: np.ndarray | None = None) -> float:
    if cfg.noise_var == 0:
        raise ZeroDivisionError("SNR undefined for a noiseless link; use beam_gain")
    if w is None and h.ndim == 2 and h.shape[1] > 1:
        raise ValueError("MIMO channel needs a receive beam")
    if w is None:
        h = h.reshape(-1)
        if v.shape[0] != h.shape[0]:
            raise ValueError("beam length does not match the channel")
    elif h.shape != (v.shape[0], w.shape[0]):
        raise ValueError("beam pair does not match the channel")
    return cfg.tx_power_w * beam_gain(h, v, w) / cfg.noise_var


def spectral_efficiency(snr_linear) -> float | np.ndarray:
    snr_linear = np.asarray(snr_linear, dtype=float)
    if np.any(snr_linear < 0):
        raise ValueError("SNR must be nonnegative")
    out = np.log2(1.0 + snr_linear)
    return float(out) if out.ndim == 0 else out
