"""Ground-truth labels: optimal DFT beams and sine-space channel groups.

Indices are 0-based throughout (beam i here is beam i+1 in 1-based notation).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codebook import Codebook, dft_sines


@dataclass
class BeamLabel:
    i_star: int
    j_star: int | None = None
    n_t: int = 0
    n_r: int = 0

    @property
    def onehot_t(self) -> np.ndarray:
        return np.eye(self.n_t)[self.i_star]

    @property
    def onehot_r(self) -> np.ndarray | None:
        return None if self.j_star is None else np.eye(self.n_r)[self.j_star]


@dataclass
class ClusterLabel:
    group: int
    onehot: np.ndarray
    features: np.ndarray


@dataclass
class ClusterModel:
    g: int
    centers: np.ndarray  # (g, dim), sorted
    inertia: float
    history: list = field(default_factory=list)  # inertia after each assignment step
    labels: np.ndarray | None = None  # final assignment of the fitted points

    @property
    def dim(self) -> int:
        return self.centers.shape[1]


def _as_batch(h: np.ndarray) -> np.ndarray:
    """(m_t,), (m_t, m_r) or (n, m_t, m_r) -> (n, m_t, m_r)."""
    h = np.asarray(h)
    if h.ndim == 1:
        return h[None, :, None]
    if h.ndim == 2:
        return h[None]
    return h


def pair_gains(H: np.ndarray, tx: Codebook, rx: Codebook | None = None) -> np.ndarray:
    """Noise-free gains.  MISO: (n, N_t) of |h^H v_i|^2.  MIMO: (n, N_t, N_r)
    of |w_j^H H^H v_i|^2."""
    H = _as_batch(H)
    if rx is None:
        return np.abs(np.einsum("bk,ki->bi", H[:, :, 0].conj(), tx.weights)) ** 2
    # w_j^H H^H v_i = sum_{k,l} conj(w[l,j]) conj(H[k,l]) v[k,i]
    a = np.einsum("bkl,ki->bil", H.conj(), tx.weights)
    return np.abs(np.einsum("bil,lj->bij", a, rx.weights.conj())) ** 2


def optimal_beams(H: np.ndarray, tx: Codebook, rx: Codebook | None = None):
    """Batched argmax; ties resolve to the lowest (i, then j) index.

    Returns an int array (n,) for MISO or a pair of arrays for MIMO.
    """
    g = pair_gains(H, tx, rx)
    if rx is None:
        return np.argmax(g, axis=1)
    flat = np.argmax(g.reshape(len(g), -1), axis=1)
    return np.unravel_index(flat, g.shape[1:])


def optimal_beam(sample, tx: Codebook, rx: Codebook | None = None) -> BeamLabel:
    h = sample.h if hasattr(sample, "h") else np.asarray(sample)
    if rx is None:
        i = int(optimal_beams(h, tx)[0])
        return BeamLabel(i_star=i, n_t=len(tx))
    i, j = optimal_beams(h, tx, rx)
    return BeamLabel(i_star=int(i[0]), j_star=int(j[0]), n_t=len(tx), n_r=len(rx))


def beam_directions(H: np.ndarray, tx_over: Codebook, rx_over: Codebook | None = None) -> np.ndarray:
    """Sines of the noise-free best oversampled beam (pair): (n, 1) or (n, 2)."""
    s_t = dft_sines(len(tx_over))
    if rx_over is None:
        return s_t[optimal_beams(H, tx_over)][:, None]
    i, j = optimal_beams(H, tx_over, rx_over)
    return np.stack([s_t[i], dft_sines(len(rx_over))[j]], axis=1)


def beam_direction(sample, tx_over: Codebook, rx_over: Codebook | None = None) -> np.ndarray:
    h = sample.h if hasattr(sample, "h") else np.asarray(sample)
    return beam_directions(h, tx_over, rx_over)[0]


def _as_points(features) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _sort_centers(centers: np.ndarray) -> np.ndarray:
    # lexicographic on (dim 0, dim 1, ...); np.lexsort keys go last-first
    order = np.lexsort(centers.T[::-1])
    return centers[order]


def kmeans(features, g: int, rng: np.random.Generator, max_iters: int = 100) -> ClusterModel:
    """Lloyd's algorithm in sine space with farthest-point seeding."""
    x = _as_points(features)
    if g < 1:
        raise ValueError("g must be >= 1")
    if len(np.unique(x, axis=0)) < g:
        raise ValueError(f"fewer than g={g} distinct points")

    centers = [x[rng.integers(len(x))]]
    d2 = _sq_dists(x, np.array(centers)).min(axis=1)
    while len(centers) < g:
        centers.append(x[int(np.argmax(d2))])
        d2 = np.minimum(d2, ((x - centers[-1]) ** 2).sum(axis=1))
    centers = np.array(centers, dtype=float)

    history = []
    labels = None
    for _ in range(max_iters):
        d2 = _sq_dists(x, centers)
        new = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(len(x)), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for k in range(g):
            members = x[labels == k]
            if len(members):
                centers[k] = members.mean(axis=0)
            else:
                # empty cluster: move it onto the worst-served point
                far = int(np.argmax(d2[np.arange(len(x)), labels]))
                centers[k] = x[far]
    centers = _sort_centers(centers)
    d2 = _sq_dists(x, centers)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(len(x)), labels].sum())
    return ClusterModel(g=g, centers=centers, inertia=inertia, history=history, labels=labels)


def elbow_select_g(features, g_candidates, rng: np.random.Generator, max_iters: int = 100) -> int:
    """Knee of the inertia curve: the candidate with the largest second
    difference; ties go to the smaller g."""
    cands = list(g_candidates)
    if len(cands) < 3 or cands != sorted(cands):
        raise ValueError("need at least 3 ascending candidates")
    inertia = [kmeans(features, g, rng, max_iters).inertia for g in cands]
    best, best_d2 = cands[1], -np.inf
    for i in range(1, len(cands) - 1):
        d2 = inertia[i - 1] - 2 * inertia[i] + inertia[i + 1]
        if d2 > best_d2:
            best, best_d2 = cands[i], d2
    return best


def assign_clusters(model: ClusterModel, features) -> np.ndarray:
    x = _as_points(features)
    if x.shape[1] != model.dim:
        raise ValueError(f"feature dimension {x.shape[1]} != model dimension {model.dim}")
    return np.argmin(_sq_dists(x, model.centers), axis=1)


def assign_cluster(model: ClusterModel, features) -> ClusterLabel:
    x = np.atleast_1d(np.asarray(features, dtype=float))
    group = int(assign_clusters(model, x[None, :])[0])
    return ClusterLabel(group=group, onehot=np.eye(model.g)[group], features=x)


def write_label_sidecar(path, sample_ids, groups, i_star, j_star=None) -> None:
    with Path(path).open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["sample_id", "group", "i_star", "j_star"])
        for n, sid in enumerate(sample_ids):
            j = "" if j_star is None else int(j_star[n])
            out.writerow([int(sid), int(groups[n]), int(i_star[n]), j])


def read_label_sidecar(path):
    ids, groups, i_star, j_star = [], [], [], []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            ids.append(int(row["sample_id"]))
            groups.append(int(row["group"]))
            i_star.append(int(row["i_star"]))
            j_star.append(int(row["j_star"]) if row["j_star"] else -1)
    j = np.array(j_star)
    return np.array(ids), np.array(groups), np.array(i_star), (None if np.all(j < 0) else j)
