"""System parameters shared by every module."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    """Array sizes, codebook sizes and link budget of one BS-UE link.

    ``noise_psd_dbm_hz=None`` describes a noiseless link (sigma_n^2 = 0).
    """

    m_t: int = 64
    m_r: int = 1
    n_t: int = 128
    n_r: int = 1
    spacing_over_lambda: float = 0.5
    tx_power_dbm: float = 10.0
    noise_psd_dbm_hz: float | None = -161.0
    bandwidth_hz: float = 100e6
    pilot: complex = field(default=1 + 0j, init=False)

    def __post_init__(self):
        if self.m_t < 2:
            raise ValueError(f"m_t must be >= 2, got {self.m_t}")
        if self.m_r < 1:
            raise ValueError(f"m_r must be >= 1, got {self.m_r}")
        if self.n_t < self.m_t:
            raise ValueError(f"n_t={self.n_t} under-samples m_t={self.m_t}")
        if self.m_r > 1 and self.n_r < self.m_r:
            raise ValueError(f"n_r={self.n_r} under-samples m_r={self.m_r}")
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth_hz must be positive")
        # cached derived quantities; frozen dataclass needs object.__setattr__
        object.__setattr__(self, "_tx_power_w", dbm_to_watts(self.tx_power_dbm))
        if self.noise_psd_dbm_hz is None:
            noise = 0.0
        else:
            noise = dbm_to_watts(self.noise_psd_dbm_hz + 10.0 * math.log10(self.bandwidth_hz))
        object.__setattr__(self, "_noise_var", noise)

    @property
    def mimo(self) -> bool:
        return self.m_r > 1

    @property
    def tx_power_w(self) -> float:
        return self._tx_power_w

    @property
    def noise_var(self) -> float:
        return self._noise_var

    def replace(self, **changes) -> "SystemConfig":
        d = self.to_dict()
        d.update(changes)
        return SystemConfig.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("pilot")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        d = {k: v for k, v in d.items() if k != "pilot"}
        return cls(**d)


# Full-size presets and the reduced ones used by fast tests.
MISO_PRESET = SystemConfig(m_t=64, m_r=1, n_t=128, n_r=1, tx_power_dbm=10.0)
MIMO_PRESET = SystemConfig(m_t=64, m_r=16, n_t=128, n_r=32, tx_power_dbm=5.0)
DESK_MISO = SystemConfig(m_t=16, m_r=1, n_t=32, n_r=1, tx_power_dbm=10.0)
DESK_MIMO = SystemConfig(m_t=16, m_r=4, n_t=32, n_r=8, tx_power_dbm=5.0)

PRESETS = {
    "miso": MISO_PRESET,
    "mimo": MIMO_PRESET,
    "desk-miso": DESK_MISO,
    "desk-mimo": DESK_MIMO,
}
