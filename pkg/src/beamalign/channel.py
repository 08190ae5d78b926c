"""Geometric multipath channels and the BFCH dataset file format."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import SystemConfig

SPLITS = ("train", "val", "test")

BFCH_MAGIC = b"BFCH"
BFCH_VERSION = 1
# magic, version u16, m_t u32, m_r u32, n_samples u64, flags u32
_HEADER = struct.Struct("<4sHIIQI")
FLAG_METADATA = 1


class DatasetFormatError(ValueError):
    pass


class BadMagicError(DatasetFormatError):
    def __init__(self, found: bytes):
        super().__init__(f"bad magic: {found!r}")


class VersionMismatchError(DatasetFormatError):
    def __init__(self, found: int):
        super().__init__(f"version mismatch: file has {found}, reader supports {BFCH_VERSION}")


class TruncatedPayloadError(DatasetFormatError):
    def __init__(self, what: str):
        super().__init__(f"truncated payload: {what}")


@dataclass(frozen=True)
class Scenario:
    """Knobs of the synthetic site.

    UEs sit in angular clusters seen from the BS, each cluster given as
    ``(center_sin, spread_sin, weight)``.  A LoS path exists with probability
    ``los_prob``; the remaining paths are NLoS reflections with directions
    drawn uniformly in ``nlos_sin_range`` and mean power ``nlos_rel_db``
    below the LoS path.  Large-scale path loss is uniform over
    ``path_loss_db``.  On the UE side the LoS arrival sine tracks the
    departure sine with jitter ``aoa_jitter``.
    """

    n_paths: int = 3
    los_prob: float = 0.9
    clusters: tuple = ((-0.62, 0.06, 1.0), (-0.18, 0.05, 1.0), (0.22, 0.06, 1.0), (0.64, 0.05, 1.0))
    nlos_sin_range: tuple = (-0.95, 0.95)
    nlos_rel_db: float = -9.0
    path_loss_db: tuple = (85.0, 95.0)
    aoa_jitter: float = 0.05

    def validate(self):
        if self.n_paths < 1:
            raise ValueError("scenario needs at least one path")
        if not self.clusters:
            raise ValueError("scenario has an empty angle range (no clusters)")
        lo, hi = self.nlos_sin_range
        if not (-1.0 <= lo < hi <= 1.0):
            raise ValueError(f"empty or invalid NLoS sine range {self.nlos_sin_range}")
        for c, s, w in self.clusters:
            if not -1.0 <= c <= 1.0 or s < 0 or w <= 0:
                raise ValueError(f"invalid cluster {(c, s, w)}")
        if not 0.0 <= self.los_prob <= 1.0:
            raise ValueError("los_prob must lie in [0, 1]")
        pl_lo, pl_hi = self.path_loss_db
        if pl_lo > pl_hi:
            raise ValueError("path_loss_db range is reversed")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        if "clusters" in d:
            d["clusters"] = tuple(tuple(c) for c in d["clusters"])
        for key in ("nlos_sin_range", "path_loss_db"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class ChannelSample:
    h: np.ndarray  # (m_t, m_r) complex128
    path_angles: list = field(default_factory=list)  # [(aod_rad, aoa_rad, gain)]
    sample_id: int = 0

    @property
    def vector(self) -> np.ndarray:
        """The MISO channel as a flat length-m_t vector."""
        return self.h[:, 0]

    def __eq__(self, other):
        if not isinstance(other, ChannelSample):
            return NotImplemented
        return (
            self.sample_id == other.sample_id
            and self.h.shape == other.h.shape
            and np.array_equal(self.h, other.h)
            and [tuple(p) for p in self.path_angles] == [tuple(p) for p in other.path_angles]
        )


@dataclass
class ChannelDataset:
    config: SystemConfig
    samples: list
    split: np.ndarray  # uint8 per sample, index into SPLITS

    def __post_init__(self):
        self.split = np.asarray(self.split, dtype=np.uint8)
        if len(self.split) != len(self.samples):
            raise ValueError("one split tag per sample required")

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, ChannelDataset):
            return NotImplemented
        return (
            self.config == other.config
            and np.array_equal(self.split, other.split)
            and self.samples == other.samples
        )

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == SPLITS.index(split))

    def channels(self, split: str | None = None) -> np.ndarray:
        """Stacked channels, shape (n, m_t, m_r)."""
        idx = range(len(self.samples)) if split is None else self.indices(split)
        return np.stack([self.samples[i].h for i in idx])


def array_response(m: int, sin_angle: float, spacing_over_lambda: float = 0.5) -> np.ndarray:
    """Unnormalized ULA response; entry k is exp(j 2 pi d k sin(angle))."""
    k = np.arange(m)
    return np.exp(1j * 2 * np.pi * spacing_over_lambda * k * sin_angle)


def channel_from_paths(cfg: SystemConfig, paths, sample_id: int = 0) -> ChannelSample:
    """h = sum_l g_l a_t(aod_l) a_r(aoa_l)^H for explicit paths."""
    paths = [(float(a), float(b), complex(g)) for a, b, g in paths]
    if not paths:
        raise ValueError("at least one path required")
    h = np.zeros((cfg.m_t, cfg.m_r), dtype=np.complex128)
    d = cfg.spacing_over_lambda
    for aod, aoa, g in paths:
        a_t = array_response(cfg.m_t, math.sin(aod), d)
        a_r = array_response(cfg.m_r, math.sin(aoa), d)
        h += g * np.outer(a_t, a_r.conj())
    if not np.all(np.isfinite(h)):
        raise ValueError("channel has non-finite entries")
    if not np.any(h != 0):
        raise ValueError("all-zero channel")
    return ChannelSample(h=h, path_angles=paths, sample_id=sample_id)


def _draw_paths(scenario: Scenario, rng: np.random.Generator) -> list:
    centers = np.array([c[0] for c in scenario.clusters])
    spreads = np.array([c[1] for c in scenario.clusters])
    weights = np.array([c[2] for c in scenario.clusters], dtype=float)
    k = rng.choice(len(centers), p=weights / weights.sum())
    pl = rng.uniform(*scenario.path_loss_db)
    los_amp = 10.0 ** (-pl / 20.0)
    nlos_amp = los_amp * 10.0 ** (scenario.nlos_rel_db / 20.0)

    paths = []
    has_los = rng.random() < scenario.los_prob
    lo, hi = scenario.nlos_sin_range
    n_nlos = scenario.n_paths - 1 if has_los else scenario.n_paths
    if has_los:
        s_t = float(np.clip(centers[k] + spreads[k] * rng.standard_normal(), -0.99, 0.99))
        s_r = float(np.clip(s_t + scenario.aoa_jitter * rng.standard_normal(), -0.99, 0.99))
        g = los_amp * np.exp(1j * rng.uniform(0, 2 * np.pi))
        paths.append((math.asin(s_t), math.asin(s_r), complex(g)))
    for _ in range(n_nlos):
        s_t = rng.uniform(lo, hi)
        s_r = rng.uniform(lo, hi)
        g = nlos_amp * (rng.standard_normal() + 1j * rng.standard_normal()) / math.sqrt(2)
        paths.append((math.asin(s_t), math.asin(s_r), complex(g)))
    return paths


def synth_channel(cfg: SystemConfig, rng: np.random.Generator, scenario: Scenario,
                  sample_id: int = 0) -> ChannelSample:
    scenario.validate()
    sample = channel_from_paths(cfg, _draw_paths(scenario, rng), sample_id)
    # in-memory values are kept representable in the 32-bit file format
    sample.h = sample.h.astype(np.complex64).astype(np.complex128)
    return sample


def split_counts(n: int, fractions=(0.6, 0.2, 0.2)) -> tuple[int, int, int]:
    """Floor for val/test, remainder to train."""
    if abs(sum(fractions) - 1.0) > 1e-12:
        raise ValueError("split fractions must sum to 1")
    n_val = int(math.floor(n * fractions[1] + 1e-9))
    n_test = int(math.floor(n * fractions[2] + 1e-9))
    return n - n_val - n_test, n_val, n_test


def gen_dataset(cfg: SystemConfig, seed: int, scenario: Scenario, n_samples: int) -> ChannelDataset:
    """Draw ``n_samples`` channels; sample i uses the sub-stream (seed, i)."""
    if n_samples < 10:
        raise ValueError("n_samples must be >= 10")
    scenario.validate()
    samples = [
        synth_channel(cfg, np.random.default_rng([seed, i]), scenario, sample_id=i)
        for i in range(n_samples)
    ]
    n_train, n_val, _ = split_counts(n_samples)
    order = np.random.default_rng([seed, 0x5EED]).permutation(n_samples)
    split = np.full(n_samples, 2, dtype=np.uint8)
    split[order[:n_train]] = 0
    split[order[n_train:n_train + n_val]] = 1
    return ChannelDataset(config=cfg, samples=samples, split=split)


def save_dataset(ds: ChannelDataset, path) -> None:
    path = Path(path)
    m_t, m_r = ds.config.m_t, ds.config.m_r
    flags = FLAG_METADATA
    parts = [_HEADER.pack(BFCH_MAGIC, BFCH_VERSION, m_t, m_r, len(ds), flags)]
    for s in ds.samples:
        if s.h.shape != (m_t, m_r):
            raise ValueError(f"sample {s.sample_id} has shape {s.h.shape}")
        # column-major: all transmit entries of receive antenna 0, then 1, ...
        h32 = np.asarray(s.h.T, dtype=np.complex64).reshape(-1)
        parts.append(h32.astype("<c8").tobytes())
    parts.append(ds.split.astype(np.uint8).tobytes())
    meta = bytearray()
    for s in ds.samples:
        meta += struct.pack("<QH", s.sample_id, len(s.path_angles))
        for aod, aoa, g in s.path_angles:
            meta += struct.pack("<4d", aod, aoa, g.real, g.imag)
    parts.append(bytes(meta))
    footer = json.dumps({"config": ds.config.to_dict()}, sort_keys=True)
    parts.append(footer.encode("utf-8"))
    path.write_bytes(b"".join(parts))


def load_dataset(path) -> ChannelDataset:
    buf = Path(path).read_bytes()
    if len(buf) < 4 or buf[:4] != BFCH_MAGIC:
        raise BadMagicError(buf[:4])
    if len(buf) < _HEADER.size:
        raise TruncatedPayloadError("header")
    _, version, m_t, m_r, n, flags = _HEADER.unpack_from(buf, 0)
    if version != BFCH_VERSION:
        raise VersionMismatchError(version)
    off = _HEADER.size
    per = m_t * m_r * 8
    if len(buf) < off + n * per + n:
        raise TruncatedPayloadError("channel entries / split tags")
    data = np.frombuffer(buf, dtype="<c8", count=n * m_t * m_r, offset=off)
    hs = data.reshape(n, m_r, m_t).transpose(0, 2, 1).astype(np.complex128)
    off += n * per
    split = np.frombuffer(buf, dtype=np.uint8, count=n, offset=off).copy()
    off += n
    ids = list(range(n))
    paths = [[] for _ in range(n)]
    if flags & FLAG_METADATA:
        try:
            for i in range(n):
                sid, n_p = struct.unpack_from("<QH", buf, off)
                off += 10
                ids[i] = sid
                for _ in range(n_p):
                    aod, aoa, gr, gi = struct.unpack_from("<4d", buf, off)
                    off += 32
                    paths[i].append((aod, aoa, complex(gr, gi)))
        except struct.error:
            raise TruncatedPayloadError("sample metadata") from None
    footer = buf[off:]
    if not footer:
        raise TruncatedPayloadError("config footer")
    cfg = SystemConfig.from_dict(json.loads(footer.decode("utf-8"))["config"])
    if (cfg.m_t, cfg.m_r) != (m_t, m_r):
        raise DatasetFormatError("footer config disagrees with header dimensions")
    samples = [ChannelSample(h=hs[i].copy(), path_angles=paths[i], sample_id=ids[i]) for i in range(n)]
    return ChannelDataset(config=cfg, samples=samples, split=split)
