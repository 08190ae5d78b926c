import math

import numpy as np
import pytest

from beamalign.baselines import (
    amcf_model,
    binary_count,
    binary_search,
    bs_effective,
    cluster_sectors,
    evaluate_separate,
    exhaustive_count,
    exhaustive_search,
    ideal_hierarchy,
    noise_stream,
    one_tier_pc,
    quasi_omni,
    run_search,
    score,
    train_hban,
    train_separate,
    two_tier_count,
    two_tier_hybrid,
    two_tier_hybrid_count,
    two_tier_joint,
    two_tier_joint_count,
    two_tier_search,
    ue_effective,
)
from beamalign.channel import channel_from_paths
from beamalign.codebook import constant_modulus_error, dft_codebook, dft_sines
from beamalign.config import SystemConfig
from beamalign.hban import TrainConfig, evaluate
from beamalign.labels import optimal_beams

QUIET_MISO = SystemConfig(m_t=16, n_t=16, noise_psd_dbm_hz=None)
QUIET_MIMO = SystemConfig(m_t=16, m_r=4, n_t=16, n_r=4, noise_psd_dbm_hz=None)


def test_closed_form_counts():
    assert exhaustive_count(128) == 128
    assert two_tier_count(128, 11) == 23
    assert binary_count(128) == 14
    assert exhaustive_count(128, 32) == 4096
    assert two_tier_joint_count(128, 32, 16, 4) == 128
    assert two_tier_hybrid_count(128, 32, 16, 4) == 80
    assert binary_count(128, 32) == 24


@pytest.mark.parametrize("n", [4, 16, 128])
def test_degenerate_two_tier(n):
    assert two_tier_count(n, n) == n


def _on_grid(cfg, i, j=None):
    s_t = dft_sines(cfg.n_t)[i]
    s_r = 0.0 if j is None else dft_sines(cfg.n_r)[j]
    return channel_from_paths(cfg, [(math.asin(s_t), math.asin(s_r), 1e-4)]).h


def test_searches_report_counts(rng):
    h = _on_grid(QUIET_MISO, 3)
    tt = two_tier_search(h, ideal_hierarchy(16, 16, 4), QUIET_MISO, rng)
    assert tt.sweep_count == 8 == len(tt.measurements)
    b = binary_search(h, ideal_hierarchy(16, 16, binary=True), QUIET_MISO, rng)
    assert b.sweep_count == 8 == len(b.measurements)
    e = exhaustive_search(h, dft_codebook(16, 16), QUIET_MISO, rng)
    assert e.sweep_count == 16
    single = two_tier_search(h, ideal_hierarchy(16, 16, 16), QUIET_MISO, rng)
    assert single.sweep_count == 16 == len(single.measurements) and single.i_hat == 3


def test_mimo_search_counts(rng):
    H = _on_grid(QUIET_MIMO, 5, 2)
    bt, br = ideal_hierarchy(16, 16, 4), ideal_hierarchy(4, 4, 2)
    j = two_tier_joint(H, bt, br, QUIET_MIMO, rng)
    y = two_tier_hybrid(H, bt, br, QUIET_MIMO, rng)
    assert j.sweep_count == two_tier_joint_count(16, 4, 4, 2) == len(j.measurements)
    assert y.sweep_count == two_tier_hybrid_count(16, 4, 4, 2) == len(y.measurements)
    b = binary_search(H, ideal_hierarchy(16, 16, binary=True), QUIET_MIMO, rng,
                      rx_book=ideal_hierarchy(4, 4, binary=True))
    assert b.sweep_count == binary_count(16, 4) == len(b.measurements)
    e = exhaustive_search(H, dft_codebook(16, 16), QUIET_MIMO, rng, rx=dft_codebook(4, 4))
    assert e.sweep_count == 64


def test_ideal_sectors_recover_oracle_miso(rng):
    tiers = ideal_hierarchy(16, 16, 4)
    tree = ideal_hierarchy(16, 16, binary=True)
    for i in range(16):
        h = _on_grid(QUIET_MISO, i)
        assert two_tier_search(h, tiers, QUIET_MISO, rng).i_hat == i
        assert binary_search(h, tree, QUIET_MISO, rng).i_hat == i
        assert exhaustive_search(h, dft_codebook(16, 16), QUIET_MISO, rng).i_hat == i


def test_ideal_sectors_recover_oracle_mimo(rng):
    bt, br = ideal_hierarchy(16, 16, 4), ideal_hierarchy(4, 4, 2)
    tt, tr = ideal_hierarchy(16, 16, binary=True), ideal_hierarchy(4, 4, binary=True)
    for i in range(16):
        for j in range(4):
            H = _on_grid(QUIET_MIMO, i, j)
            assert (two_tier_joint(H, bt, br, QUIET_MIMO, rng).i_hat,
                    two_tier_joint(H, bt, br, QUIET_MIMO, rng).j_hat) == (i, j)
            r = two_tier_hybrid(H, bt, br, QUIET_MIMO, rng)
            assert (r.i_hat, r.j_hat) == (i, j)
            r = binary_search(H, tt, QUIET_MIMO, rng, rx_book=tr)
            assert (r.i_hat, r.j_hat) == (i, j)


def test_two_tier_not_worse_than_binary_los():
    rng = np.random.default_rng(2)
    sines = rng.uniform(-1, 1, 300)
    H = np.stack([channel_from_paths(QUIET_MISO, [(math.asin(s), 0.0, 1e-4)]).h for s in sines])
    labels = optimal_beams(H, dft_codebook(16, 16))
    ids = np.arange(len(H))
    tt, _, _ = run_search(two_tier_search, H, ids, 0, ideal_hierarchy(16, 16, 4), QUIET_MISO)
    bb, _, _ = run_search(binary_search, H, ids, 0, ideal_hierarchy(16, 16, binary=True), QUIET_MISO)
    assert np.mean(tt == labels) >= np.mean(bb == labels)


def test_exhaustive_noise_trend(small_miso):
    te = small_miso.splits["test"]
    book = dft_codebook(small_miso.cfg.m_t, small_miso.cfg.n_t)
    accs = []
    for psd in (None, -171.0, -161.0, -151.0, -141.0):
        cfg = small_miso.cfg.replace(noise_psd_dbm_hz=psd)
        i_hat, _, _ = run_search(exhaustive_search, te["H"], te["ids"], 0, book, cfg)
        accs.append(score(cfg, te["H"], i_hat, None, te["i"], None, len(book)).accuracy)
    assert accs[0] == 1.0
    assert all(b <= a + 0.01 for a, b in zip(accs, accs[1:]))
    assert accs[-1] < accs[0]


def test_noise_streams_paired():
    a = noise_stream(3, 17).standard_normal(4)
    assert np.array_equal(a, noise_stream(3, 17).standard_normal(4))
    assert not np.array_equal(a, noise_stream(3, 18).standard_normal(4))


def test_one_tier_reduction(small_miso):
    tr, va = small_miso.splits["train"], small_miso.splits["val"]
    model, log = one_tier_pc(small_miso.cfg, 5, tr["H"][:300], tr["i"][:300], None, va["H"][:100],
                             va["i"][:100], None, TrainConfig(epochs=1), seed=0)
    assert model.sweep_count == 5 and model.g == 1 and model.n2 == 0
    assert model.pred_t[0].sizes == [5, 10, 15, small_miso.cfg.n_t]
    assert log.rows[0][0] == "one-tier"


def test_one_tier_capacity_ceiling(small_miso):
    cfg = small_miso.cfg.replace(noise_psd_dbm_hz=None)
    tr, va, te = (small_miso.splits[s] for s in ("train", "val", "test"))
    tc = TrainConfig(epochs=60, lr=3e-3, patience=10, noisy=False, batch_size=64)
    model, _ = one_tier_pc(cfg, cfg.n_t, tr["H"], tr["i"], None, va["H"], va["i"], None, tc)
    assert evaluate(model, te["H"], te["i"]).accuracy >= 0.85


def test_quasi_omni_constant_modulus():
    w = quasi_omni(8)
    assert constant_modulus_error(w[:, None]) < 1e-12


def test_amcf_frozen_probing(small_miso):
    data = small_miso
    tr, va = data.splits["train"], data.splits["val"]
    model = amcf_model(data.cfg, 3, 5, data.clusters, iters=30)
    thetas = [p.value.copy() for p in model.probing_params()]
    assert all(p not in model.coarse_params() for p in model.probing_params())
    train_hban(model, tr["H"][:400], tr["groups"][:400], tr["i"][:400], None, va["H"][:100],
               va["groups"][:100], va["i"][:100], None, TrainConfig(epochs=2))
    assert all(np.array_equal(a, p.value) for a, p in zip(thetas, model.probing_params()))
    sectors = cluster_sectors(data.clusters)
    assert len(sectors) == data.clusters.g
    assert sorted(sectors)[0][0] == -1.0 and sorted(sectors)[-1][1] == 1.0


def test_effective_channels(rng):
    H = rng.standard_normal((3, 6, 2)) + 1j * rng.standard_normal((3, 6, 2))
    v = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
    w = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    direct = np.array([abs(w.conj() @ H[b].conj().T @ v[:, b]) for b in range(3)])
    via_ue = np.abs(np.einsum("l,bl->b", w.conj(), ue_effective(H, v)[:, :, 0]))
    assert np.allclose(direct, via_ue)
    h_bs = bs_effective(H, w)[:, :, 0]
    via_bs = np.array([abs(h_bs[b].conj() @ v[:, b]) for b in range(3)])
    assert np.allclose(direct, via_bs)


def test_separate_sweep_count(small_mimo):
    data = small_mimo
    split = {s: {k: data.splits[s][k][:300] for k in ("H", "i", "j", "feat")} for s in ("train", "val")}
    model = train_separate(data.cfg, (2, 5), (2, 3), data.clusters_t, data.clusters_r, split,
                           TrainConfig(epochs=1))
    assert model.sweep_count == 12
    te = data.splits["test"]
    res = evaluate_separate(model, te["H"][:100], te["i"][:100], te["j"][:100])
    assert res.sweep_count == 12 and res.accuracy <= min(res.accuracy_t, res.accuracy_r)
