"""Steering vectors, DFT codebooks and classical hierarchical codebooks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

KINDS = ("dft", "oversampled", "wide", "probing", "ideal")


@dataclass
class Codebook:
    """Beams stored column-wise: ``weights[:, i]`` is beam i."""

    weights: np.ndarray
    kind: str = "dft"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.complex128)
        if self.weights.ndim != 2 or self.weights.shape[1] == 0:
            raise ValueError("codebook must be a nonempty (m, n) matrix")
        if self.kind not in KINDS:
            raise ValueError(f"unknown codebook kind {self.kind!r}")

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    def __len__(self):
        return self.weights.shape[1]

    def __getitem__(self, i) -> np.ndarray:
        return self.weights[:, i]

    def subset(self, idx) -> "Codebook":
        return Codebook(self.weights[:, np.atleast_1d(idx)], self.kind)

    def to_json(self) -> str:
        beams = [[[float(w.real), float(w.imag)] for w in self.weights[:, i]] for i in range(len(self))]
        return json.dumps({"kind": self.kind, "m": self.m, "beams": beams})

    @classmethod
    def from_json(cls, text: str) -> "Codebook":
        d = json.loads(text)
        w = np.array([[complex(re, im) for re, im in beam] for beam in d["beams"]]).T
        return cls(w, d["kind"])


@dataclass
class HierarchicalCodebook:
    """Tiers from coarse to fine; ``child_map[t][b]`` lists the tier t+1
    children of beam b in tier t.  The last tier is the DFT codebook."""

    tiers: list
    child_map: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.child_map) != len(self.tiers) - 1:
            raise ValueError("need one child map per non-leaf tier")
        for t, groups in enumerate(self.child_map):
            if len(groups) != len(self.tiers[t]):
                raise ValueError(f"tier {t}: one child group per beam required")
            flat = np.sort(np.concatenate([np.asarray(g, dtype=int) for g in groups]))
            if not np.array_equal(flat, np.arange(len(self.tiers[t + 1]))):
                raise ValueError(f"tier {t}: child groups do not partition the next tier")

    @property
    def leaf(self) -> Codebook:
        return self.tiers[-1]

    def leaves_under(self, tier: int, beam: int) -> np.ndarray:
        """Leaf indices reachable from ``beam`` of ``tier``."""
        nodes = np.array([beam])
        for t in range(tier, len(self.tiers) - 1):
            nodes = np.concatenate([np.asarray(self.child_map[t][b], dtype=int) for b in nodes])
        return np.sort(nodes)


def steering_vector(m: int, omega: float) -> np.ndarray:
    """Unit-norm beam with entry k equal to exp(j k omega) / sqrt(m)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return np.exp(1j * omega * np.arange(m)) / np.sqrt(m)


def dft_sines(n: int) -> np.ndarray:
    """Steering sines of the n-beam grid, (2(i-1) - n)/n for i = 1..n."""
    return (2.0 * np.arange(n) - n) / n


def dft_codebook(m: int, n: int, spacing_over_lambda: float = 0.5, kind: str = "dft") -> Codebook:
    if n < m:
        raise ValueError(f"codebook size n={n} under-samples m={m} antennas")
    omegas = 2 * np.pi * spacing_over_lambda * dft_sines(n)
    w = np.exp(1j * np.outer(np.arange(m), omegas)) / np.sqrt(m)
    return Codebook(w, kind)


def oversampled_codebook(m: int, n: int, factor: int = 4, spacing_over_lambda: float = 0.5) -> Codebook:
    return dft_codebook(m, factor * n, spacing_over_lambda, kind="oversampled")


def beam_pattern(w: np.ndarray, sines: np.ndarray, spacing_over_lambda: float = 0.5) -> np.ndarray:
    """Gain |a(s)^H w|^2 with a(s) the unnormalized array response."""
    m = w.shape[0]
    a = np.exp(1j * 2 * np.pi * spacing_over_lambda * np.outer(sines, np.arange(m)))
    return np.abs(a.conj() @ w) ** 2


def constant_modulus_error(w: np.ndarray) -> float:
    w = np.asarray(w)
    m = w.shape[0]
    return float(np.max(np.abs(np.abs(w) * np.sqrt(m) - 1.0)))


def _ripple_db(gain: np.ndarray) -> float:
    lo = gain.min()
    return np.inf if lo <= 0 else float(10 * np.log10(gain.max() / lo))


def wide_beam_synthesize(m: int, sector, iters: int = 100, rng: np.random.Generator | None = None,
                         spacing_over_lambda: float = 0.5, restarts: int = 4,
                         tol_db: float = 1.0) -> np.ndarray:
    """Constant-modulus beam covering the sine interval ``sector``.

    Alternates between the constant-modulus set and a magnitude target on a
    4x oversampled sine grid: flat (within a ``tol_db`` band around the
    current in-sector level) inside the sector, zero outside.  The first
    start is a linear-FM chirp sweeping the sector, later ones random
    phases.  Returns the iterate with the lowest in-sector ripple.
    """
    lo, hi = map(float, sector)
    if not (-1.0 <= lo < hi <= 1.0):
        raise ValueError(f"empty or invalid sector {sector}")
    rng = np.random.default_rng(0) if rng is None else rng
    k_grid = 4 * m
    sines = -1.0 + 2.0 * np.arange(k_grid) / k_grid
    inside = (sines >= lo) & (sines <= hi)
    if not inside.any():
        # sector narrower than the grid: use the nearest grid point
        inside[np.argmin(np.abs(sines - 0.5 * (lo + hi)))] = True
    a = np.exp(1j * 2 * np.pi * spacing_over_lambda * np.outer(sines, np.arange(m))).conj()
    a_pinv = np.linalg.pinv(a)
    band = 10.0 ** (tol_db / 40.0)

    k = np.arange(m)
    omega = 2 * np.pi * spacing_over_lambda * (lo + (hi - lo) * k / max(m - 1, 1))
    chirp = np.concatenate([[0.0], np.cumsum(omega[:-1])])
    best, best_ripple = None, np.inf
    for r in range(max(restarts, 1)):
        phase = chirp if r == 0 else rng.uniform(0, 2 * np.pi, m)
        w = np.exp(1j * phase) / np.sqrt(m)
        for _ in range(iters):
            p = a @ w
            mag = np.abs(p)
            level = np.sqrt(np.mean(mag[inside] ** 2))
            target = np.where(inside, np.clip(mag, level / band, level * band), 0.0)
            w = a_pinv @ (target * np.exp(1j * np.angle(p)))
            w = np.exp(1j * np.angle(w)) / np.sqrt(m)
            ripple = _ripple_db(np.abs(a @ w)[inside] ** 2)
            if ripple < best_ripple:
                best, best_ripple = w, ripple
    return best


def _wrapped_index(n_t: int) -> np.ndarray:
    """Leaf positions on the (-1, 1] sine circle: beam 0 (sine -1) is the
    same steering vector as sine +1 at half-wavelength spacing, so it sits
    at the top end."""
    i = np.arange(n_t)
    i[0] = n_t
    return i


def _leaf_sector(leaves: np.ndarray, n_t: int) -> tuple[float, float]:
    s = (2.0 * _wrapped_index(n_t)[leaves] - n_t) / n_t
    return max(-1.0, s.min() - 1.0 / n_t), min(1.0, s.max() + 1.0 / n_t)


def sector_groups(n_t: int, n_wide: int) -> list:
    """Assign each leaf to the equal sine sector containing its steering sine.

    Sector k covers (-1 + k w, -1 + (k+1) w] with w = 2/n_wide; a sine on a
    boundary goes to the lower sector and sine -1 counts as +1.  Exact
    integer arithmetic; group sizes differ by at most one.
    """
    i = _wrapped_index(n_t)
    # (s + 1) / w = i * n_wide / n_t ; sector = ceil(that) - 1
    k = -((-i * n_wide) // n_t) - 1
    return [np.flatnonzero(k == g) for g in range(n_wide)]


def build_two_tier(m: int, n_t: int, n_wide: int, spacing_over_lambda: float = 0.5,
                   iters: int = 100, seed: int = 0) -> HierarchicalCodebook:
    if not 1 <= n_wide <= n_t:
        raise ValueError("need 1 <= n_wide <= n_t")
    leaf = dft_codebook(m, n_t, spacing_over_lambda)
    groups = sector_groups(n_t, n_wide)
    rng = np.random.default_rng(seed)
    wide = np.stack([
        wide_beam_synthesize(m, _leaf_sector(g, n_t), iters, rng, spacing_over_lambda)
        if len(g) > 1 else leaf[int(g[0])]
        for g in groups
    ], axis=1)
    return HierarchicalCodebook([Codebook(wide, "wide"), leaf], [groups])


def build_binary(m: int, n_t: int, spacing_over_lambda: float = 0.5,
                 iters: int = 100, seed: int = 0) -> HierarchicalCodebook:
    if n_t < 2 or n_t & (n_t - 1):
        raise ValueError(f"binary search needs a power-of-two codebook, got {n_t}")
    depth = n_t.bit_length() - 1
    rng = np.random.default_rng(seed)
    tiers, child_map = [], []
    for t in range(1, depth):
        n_beams = 2 ** t
        span = n_t // n_beams
        beams = [
            wide_beam_synthesize(m, _leaf_sector(np.arange(b * span, (b + 1) * span), n_t),
                                 iters, rng, spacing_over_lambda)
            for b in range(n_beams)
        ]
        tiers.append(Codebook(np.stack(beams, axis=1), "wide"))
        child_map.append([np.array([2 * b, 2 * b + 1]) for b in range(n_beams)])
    tiers.append(dft_codebook(m, n_t, spacing_over_lambda))
    return HierarchicalCodebook(tiers, child_map)
