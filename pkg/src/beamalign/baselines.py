"""Classical codebook searches and learned baselines.

Every search returns a ``BaselineResult`` whose ``sweep_count`` is the
scheduled number of probing slots for the configuration (the closed form),
while ``measurements`` holds the powers actually observed.  Singleton child
groups skip their redundant fine sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codebook import (
    Codebook,
    HierarchicalCodebook,
    dft_codebook,
    sector_groups,
    wide_beam_synthesize,
)
from .config import SystemConfig
from .hban import (
    EvalResult,
    HbanModel,
    NotTrainedError,
    TrainConfig,
    TrainLog,
    link_spectral_efficiency,
    train_coarse,
    train_fine,
    train_joint_one_tier,
)
from .labels import ClusterModel
from .sweep import power_feedback, rx_signal_mimo, rx_signal_miso


@dataclass
class BaselineResult:
    i_hat: int
    j_hat: int | None
    sweep_count: int
    measurements: np.ndarray = field(default_factory=lambda: np.zeros(0))


def noise_stream(seed: int, sample_id: int) -> np.random.Generator:
    """Per-sample generator shared by all searches so comparisons are paired."""
    return np.random.default_rng([seed, 0xBA5E, int(sample_id)])


# ---------------------------------------------------------------------------
# closed-form sweep counts


def exhaustive_count(n_t: int, n_r: int = 1) -> int:
    return n_t * n_r


def two_tier_count(n_t: int, n_wide: int) -> int:
    child = -(-n_t // n_wide)
    return n_wide + (child if child > 1 else 0)


def binary_count(n_t: int, n_r: int = 1) -> int:
    lt = n_t.bit_length() - 1
    if n_r == 1:
        return 2 * lt
    lr = n_r.bit_length() - 1
    return 4 * lr + 2 * (lt - lr)


def two_tier_joint_count(n_t: int, n_r: int, nw_t: int, nw_r: int) -> int:
    return nw_t * nw_r + -(-(n_t * n_r) // (nw_t * nw_r))


def two_tier_hybrid_count(n_t: int, n_r: int, nw_t: int, nw_r: int) -> int:
    return nw_t * nw_r + -(-n_t // nw_t) + -(-n_r // nw_r)


# ---------------------------------------------------------------------------
# searches on one sample


def _h(sample):
    return sample.h if hasattr(sample, "h") else np.asarray(sample)


def _miso_powers(h, beams, cfg, rng):
    return power_feedback(rx_signal_miso(h, beams, cfg, rng)).z


def _pair_powers(H, v, w, cfg, rng):
    return power_feedback(rx_signal_mimo(H, v, w, cfg, rng)).z


def exhaustive_search(sample, tx: Codebook, cfg: SystemConfig, rng: np.random.Generator,
                      rx: Codebook | None = None) -> BaselineResult:
    H = _h(sample)
    if rx is None:
        z = _miso_powers(H, tx, cfg, rng)
        return BaselineResult(int(np.argmax(z)), None, len(tx), z)
    n_t, n_r = len(tx), len(rx)
    # pair (i, j) at flat position i * n_r + j
    v = np.repeat(tx.weights, n_r, axis=1)
    w = np.tile(rx.weights, (1, n_t))
    z = _pair_powers(H, v, w, cfg, rng)
    i, j = divmod(int(np.argmax(z)), n_r)
    return BaselineResult(i, j, n_t * n_r, z)


def two_tier_search(sample, book: HierarchicalCodebook, cfg: SystemConfig,
                    rng: np.random.Generator) -> BaselineResult:
    if len(book.tiers) != 2:
        raise ValueError("two-tier search needs a two-tier hierarchy")
    h = _h(sample)
    wide, leaf = book.tiers
    z_w = _miso_powers(h, wide, cfg, rng)
    children = np.asarray(book.child_map[0][int(np.argmax(z_w))])
    count = two_tier_count(len(leaf), len(wide))
    if len(children) == 1:
        return BaselineResult(int(children[0]), None, count, z_w)
    z_c = _miso_powers(h, leaf.subset(children), cfg, rng)
    return BaselineResult(int(children[np.argmax(z_c)]), None, count, np.concatenate([z_w, z_c]))


def _binary_children(book: HierarchicalCodebook, tier: int, node: int | None) -> np.ndarray:
    if node is None:
        return np.arange(len(book.tiers[0]))
    return np.asarray(book.child_map[tier - 1][node])


def binary_search(sample, book: HierarchicalCodebook, cfg: SystemConfig, rng: np.random.Generator,
                  rx_book: HierarchicalCodebook | None = None) -> BaselineResult:
    """Descend the binary tree, sweeping the two children of the current node.

    MIMO: while the receive tree still has tiers, the 2x2 child pairs are
    swept jointly; afterwards the receive beam stays on its leaf and only the
    transmit side descends.
    """
    H = _h(sample)
    zs = []
    node_t = None
    if rx_book is None:
        for t, tier in enumerate(book.tiers):
            cand = _binary_children(book, t, node_t)
            z = _miso_powers(H, tier.subset(cand), cfg, rng)
            zs.append(z)
            node_t = int(cand[np.argmax(z)])
        return BaselineResult(node_t, None, binary_count(len(book.leaf)), np.concatenate(zs))

    node_r = None
    depth_r = len(rx_book.tiers)
    for t, tier in enumerate(book.tiers):
        cand_t = _binary_children(book, t, node_t)
        if t < depth_r:
            cand_r = _binary_children(rx_book, t, node_r)
            ct, cr = np.repeat(cand_t, len(cand_r)), np.tile(cand_r, len(cand_t))
            z = _pair_powers(H, tier.weights[:, ct], rx_book.tiers[t].weights[:, cr], cfg, rng)
            best = int(np.argmax(z))
            node_t, node_r = int(ct[best]), int(cr[best])
        else:
            w = np.repeat(rx_book.leaf.weights[:, [node_r]], len(cand_t), axis=1)
            z = _pair_powers(H, tier.weights[:, cand_t], w, cfg, rng)
            node_t = int(cand_t[np.argmax(z)])
        zs.append(z)
    return BaselineResult(node_t, node_r, binary_count(len(book.leaf), len(rx_book.leaf)),
                          np.concatenate(zs))


def _wide_pairs(H, book_t, book_r, cfg, rng):
    wt, wr = book_t.tiers[0], book_r.tiers[0]
    nt, nr = len(wt), len(wr)
    z = _pair_powers(H, np.repeat(wt.weights, nr, axis=1), np.tile(wr.weights, (1, nt)), cfg, rng)
    a, b = divmod(int(np.argmax(z)), nr)
    return a, b, z


def two_tier_joint(sample, book_t: HierarchicalCodebook, book_r: HierarchicalCodebook,
                   cfg: SystemConfig, rng: np.random.Generator) -> BaselineResult:
    """All wide pairs, then all child pairs of the best wide pair."""
    H = _h(sample)
    a, b, z_w = _wide_pairs(H, book_t, book_r, cfg, rng)
    ct = np.asarray(book_t.child_map[0][a])
    cr = np.asarray(book_r.child_map[0][b])
    pt, pr = np.repeat(ct, len(cr)), np.tile(cr, len(ct))
    z_c = _pair_powers(H, book_t.leaf.weights[:, pt], book_r.leaf.weights[:, pr], cfg, rng)
    best = int(np.argmax(z_c))
    count = two_tier_joint_count(len(book_t.leaf), len(book_r.leaf), len(book_t.tiers[0]),
                                 len(book_r.tiers[0]))
    return BaselineResult(int(pt[best]), int(pr[best]), count, np.concatenate([z_w, z_c]))


def two_tier_hybrid(sample, book_t: HierarchicalCodebook, book_r: HierarchicalCodebook,
                    cfg: SystemConfig, rng: np.random.Generator) -> BaselineResult:
    """All wide pairs; the UE then holds its wide beam while the BS sweeps
    its children, and finally the BS holds its narrow beam while the UE
    sweeps its children."""
    H = _h(sample)
    a, b, z_w = _wide_pairs(H, book_t, book_r, cfg, rng)
    ct = np.asarray(book_t.child_map[0][a])
    cr = np.asarray(book_r.child_map[0][b])
    w_wide = np.repeat(book_r.tiers[0].weights[:, [b]], len(ct), axis=1)
    z_t = _pair_powers(H, book_t.leaf.weights[:, ct], w_wide, cfg, rng)
    i = int(ct[np.argmax(z_t)])
    v = np.repeat(book_t.leaf.weights[:, [i]], len(cr), axis=1)
    z_r = _pair_powers(H, v, book_r.leaf.weights[:, cr], cfg, rng)
    j = int(cr[np.argmax(z_r)])
    count = two_tier_hybrid_count(len(book_t.leaf), len(book_r.leaf), len(book_t.tiers[0]),
                                  len(book_r.tiers[0]))
    return BaselineResult(i, j, count, np.concatenate([z_w, z_t, z_r]))


# ---------------------------------------------------------------------------
# batch evaluation of a classical search


def run_search(search, H: np.ndarray, sample_ids, seed: int, *args, **kwargs):
    """Apply ``search(sample, *args, cfg-like..., rng)`` per sample with paired noise.

    ``search`` is called as ``search(h, *args, rng=...)``.
    """
    res = [search(h, *args, rng=noise_stream(seed, sid), **kwargs) for h, sid in zip(H, sample_ids)]
    i_hat = np.array([r.i_hat for r in res])
    j_hat = None if res[0].j_hat is None else np.array([r.j_hat for r in res])
    return i_hat, j_hat, res


def score(cfg: SystemConfig, H, i_hat, j_hat, i_star, j_star, sweep_count: int) -> EvalResult:
    hit_t = np.asarray(i_hat) == np.asarray(i_star)
    acc_t = acc_r = None
    hit = hit_t
    if j_hat is not None:
        hit_r = np.asarray(j_hat) == np.asarray(j_star)
        hit = hit_t & hit_r
        acc_t, acc_r = float(hit_t.mean()), float(hit_r.mean())
    se = float(np.mean(link_spectral_efficiency(cfg, H, np.asarray(i_hat),
                                                None if j_hat is None else np.asarray(j_hat))))
    return EvalResult(float(hit.mean()), se, sweep_count, acc_t, acc_r)


# ---------------------------------------------------------------------------
# learned baselines


def one_tier_pc(cfg: SystemConfig, n_probe: int, H_train, i_train, j_train, H_val, i_val, j_val,
                tc: TrainConfig, seed: int = 0):
    """Learnable single probing codebook of ``n_probe`` beams (pairs) plus one predictor."""
    model = HbanModel(cfg, n_probe, 0, 1, seed=seed, joint_coarse=True)
    log = train_joint_one_tier(model, H_train, i_train, j_train, H_val, i_val, j_val, tc)
    return model, log


def cluster_sectors(clusters: ClusterModel, axis: int = 0) -> list:
    """Sine interval owned by each cluster: the 1-D Voronoi cell of its center
    along ``axis`` (midpoints between sorted neighbouring centers)."""
    c = np.sort(clusters.centers[:, axis])
    edges = np.concatenate([[-1.0], 0.5 * (c[1:] + c[:-1]), [1.0]])
    order = np.argsort(np.argsort(clusters.centers[:, axis]))
    return [(edges[r], edges[r + 1]) for r in order]


def _tile(lo: float, hi: float, n: int) -> list:
    e = np.linspace(lo, hi, n + 1)
    return list(zip(e[:-1], e[1:]))


def _wide_book(m: int, sectors, d: float, iters: int, rng) -> np.ndarray:
    return np.stack([wide_beam_synthesize(m, s, iters, rng, d) for s in sectors], axis=1)


def quasi_omni(m: int, spacing_over_lambda: float = 0.5, iters: int = 100, seed: int = 0) -> np.ndarray:
    return wide_beam_synthesize(m, (-1.0, 1.0), iters, np.random.default_rng(seed), spacing_over_lambda)


def amcf_model(cfg: SystemConfig, n1: int, n2: int, clusters: ClusterModel, seed: int = 0,
               iters: int = 100) -> HbanModel:
    """HBAN whose probing codebooks are frozen wide beams.

    Coarse: ``n1`` equal sectors over the whole sine range.  Fine codebook k:
    ``n2`` equal sectors tiling cluster k's sine interval.  On the receive side
    every probing beam is the quasi-omni pattern.
    """
    model = HbanModel(cfg, n1, n2, clusters.g, seed=seed)
    rng = np.random.default_rng([seed, 0xA3CF])
    d = cfg.spacing_over_lambda
    model.coarse_t.set_beams(_wide_book(cfg.m_t, _tile(-1.0, 1.0, n1), d, iters, rng))
    for k, (lo, hi) in enumerate(cluster_sectors(clusters)):
        model.fine_t[k].set_beams(_wide_book(cfg.m_t, _tile(lo, hi, n2), d, iters, rng))
    if cfg.mimo:
        omni = quasi_omni(cfg.m_r, d, iters, seed)
        model.coarse_r.set_beams(np.repeat(omni[:, None], n1, axis=1))
        for layer in model.fine_r:
            layer.set_beams(np.repeat(omni[:, None], n2, axis=1))
    model.fixed_probing = True
    return model


def train_hban(model: HbanModel, H_train, groups_train, i_train, j_train, H_val, groups_val, i_val,
               j_val, tc: TrainConfig) -> TrainLog:
    log = train_coarse(model, H_train, groups_train, H_val, groups_val, tc)
    return train_fine(model, H_train, i_train, j_train, H_val, i_val, j_val, tc, log)


# -- separate HBAN-MISO for MIMO links ---------------------------------------


def side_config(cfg: SystemConfig, side: str) -> SystemConfig:
    """MISO view of one end of a MIMO link."""
    if side == "transmit":
        return cfg.replace(m_r=1, n_r=1)
    return cfg.replace(m_t=cfg.m_r, n_t=cfg.n_r, m_r=1, n_r=1)


def bs_effective(H: np.ndarray, w: np.ndarray) -> np.ndarray:
    """(n, m_t, 1) channel seen by the BS while the UE holds combiner w."""
    return np.einsum("bkl,l->bk", H, w)[:, :, None]


def ue_effective(H: np.ndarray, v: np.ndarray) -> np.ndarray:
    """(n, m_r, 1) channel seen by the UE while the BS holds beams v (m_t, n).

    |x^H w| = |w^H x| with x = H^H v, so x acts as a MISO channel for w.
    """
    return np.einsum("bkl,kb->bl", H.conj(), v)[:, :, None]


@dataclass
class SeparateHban:
    """BS-side HBAN-MISO under a quasi-omni UE, then UE-side HBAN-MISO
    towards the BS beam chosen in the first stage."""

    cfg: SystemConfig
    bs: HbanModel
    ue: HbanModel
    omni: np.ndarray

    @property
    def sweep_count(self) -> int:
        return self.bs.sweep_count + self.ue.sweep_count

    def infer(self, H, rng, forced_groups=None):
        if not (self.bs.fine_trained and self.ue.fine_trained):
            raise NotTrainedError("separate model has not completed training")
        H = np.asarray(H)
        i_hat, _, _ = self.bs.infer(bs_effective(H, self.omni), rng)
        v = dft_codebook(self.cfg.m_t, self.cfg.n_t, self.cfg.spacing_over_lambda).weights[:, i_hat]
        j_hat, _, _ = self.ue.infer(ue_effective(H, v), rng)
        return i_hat, j_hat


def train_separate(cfg: SystemConfig, budgets_t, budgets_r, clusters_t: ClusterModel,
                   clusters_r: ClusterModel, data: dict, tc: TrainConfig, seed: int = 0) -> SeparateHban:
    """``data`` maps split -> dict(H, i, j, feat) with ``feat`` the (n, 2) sine labels.

    The UE stage trains on the BS beams the trained BS stage actually picks.
    """
    from .labels import assign_clusters

    omni = quasi_omni(cfg.m_r, cfg.spacing_over_lambda, seed=seed)
    cfg_t, cfg_r = side_config(cfg, "transmit"), side_config(cfg, "receive")
    tr, va = data["train"], data["val"]
    g_t = {s: assign_clusters(clusters_t, data[s]["feat"][:, :1]) for s in ("train", "val")}
    g_r = {s: assign_clusters(clusters_r, data[s]["feat"][:, 1:]) for s in ("train", "val")}

    bs = HbanModel(cfg_t, *budgets_t, clusters_t.g, seed=seed)
    Hb = {s: bs_effective(data[s]["H"], omni) for s in ("train", "val")}
    train_hban(bs, Hb["train"], g_t["train"], tr["i"], None, Hb["val"], g_t["val"], va["i"], None, tc)

    book = dft_codebook(cfg.m_t, cfg.n_t, cfg.spacing_over_lambda).weights
    rng = np.random.default_rng([seed, 0x5E9])
    Hu = {}
    for s in ("train", "val"):
        i_hat, _, _ = bs.infer(Hb[s], rng)
        Hu[s] = ue_effective(data[s]["H"], book[:, i_hat])
    ue = HbanModel(cfg_r, *budgets_r, clusters_r.g, seed=seed + 1)
    train_hban(ue, Hu["train"], g_r["train"], tr["j"], None, Hu["val"], g_r["val"], va["j"], None, tc)
    return SeparateHban(cfg, bs, ue, omni)


def evaluate_separate(model: SeparateHban, H, i_star, j_star, trials: int = 1, seed: int = 0) -> EvalResult:
    accs, acc_t, acc_r, ses = [], [], [], []
    for t in range(trials):
        rng = np.random.default_rng([seed, 7, t])
        i_hat, j_hat = model.infer(H, rng)
        ht, hr = i_hat == np.asarray(i_star), j_hat == np.asarray(j_star)
        accs.append(np.mean(ht & hr))
        acc_t.append(ht.mean())
        acc_r.append(hr.mean())
        ses.append(np.mean(link_spectral_efficiency(model.cfg, H, i_hat, j_hat)))
    return EvalResult(float(np.mean(accs)), float(np.mean(ses)), model.sweep_count,
                      float(np.mean(acc_t)), float(np.mean(acc_r)))


def ideal_sector_codebook(m: int, n_t: int, groups, spacing_over_lambda: float = 0.5) -> Codebook:
    """Test fixture: normalized sum of the DFT beams in each group.

    With n_t = m the DFT beams are orthogonal, so every beam in a group sees
    the same gain from the sector beam (flat over the grid points).
    Not constant-modulus.
    """
    leaf = dft_codebook(m, n_t, spacing_over_lambda).weights
    cols = []
    for g in groups:
        w = leaf[:, np.asarray(g)].sum(axis=1)
        cols.append(w / np.linalg.norm(w))
    return Codebook(np.stack(cols, axis=1), "ideal")


def ideal_hierarchy(m: int, n_t: int, n_wide: int | None = None, binary: bool = False,
                    spacing_over_lambda: float = 0.5) -> HierarchicalCodebook:
    leaf = dft_codebook(m, n_t, spacing_over_lambda)
    if not binary:
        groups = sector_groups(n_t, n_wide)
        return HierarchicalCodebook([ideal_sector_codebook(m, n_t, groups, spacing_over_lambda), leaf],
                                    [groups])
    depth = n_t.bit_length() - 1
    tiers, cmap = [], []
    for t in range(1, depth):
        span = n_t // 2 ** t
        groups = [np.arange(b * span, (b + 1) * span) for b in range(2 ** t)]
        tiers.append(ideal_sector_codebook(m, n_t, groups, spacing_over_lambda))
        cmap.append([np.array([2 * b, 2 * b + 1]) for b in range(2 ** t)])
    tiers.append(leaf)
    return HierarchicalCodebook(tiers, cmap)

