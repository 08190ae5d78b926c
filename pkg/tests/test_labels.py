import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beamalign.channel import array_response, channel_from_paths
from beamalign.codebook import dft_codebook, dft_sines, oversampled_codebook
from beamalign.config import SystemConfig
from beamalign.labels import (
    assign_cluster,
    assign_clusters,
    beam_direction,
    elbow_select_g,
    kmeans,
    optimal_beam,
    optimal_beams,
    read_label_sidecar,
    write_label_sidecar,
)


def _brute_force(H, tx, rx):
    best, arg = -1.0, None
    for i in range(tx.shape[1]):
        for j in range(rx.shape[1]):
            g = abs(rx[:, j].conj() @ H.conj().T @ tx[:, i]) ** 2
            if g > best:
                best, arg = g, (i, j)
    return arg


def test_oracle_miso_and_mimo(rng):
    tx, rx = dft_codebook(8, 16), dft_codebook(4, 8)
    for _ in range(50):
        h = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        assert optimal_beam(h, tx).i_star == _brute_force(h[:, None], tx.weights, np.ones((1, 1)))[0]
        H = rng.standard_normal((8, 4)) + 1j * rng.standard_normal((8, 4))
        lab = optimal_beam(H, tx, rx)
        assert (lab.i_star, lab.j_star) == _brute_force(H, tx.weights, rx.weights)


def test_onehots():
    lab = optimal_beam(array_response(4, 0.0), dft_codebook(4, 8), None)
    assert lab.onehot_t.sum() == 1 and lab.onehot_t[lab.i_star] == 1 and lab.onehot_r is None


def test_ties_go_low():
    tx = dft_codebook(4, 4)
    book = tx.weights
    # a channel equally matched to beams 1 and 3
    h = (book[:, 1] + book[:, 3]) * 2
    assert optimal_beams(h, tx)[0] == 1


def test_on_grid_rank_one():
    cfg = SystemConfig(m_t=8, m_r=4, n_t=16, n_r=8)
    st_, sr = dft_sines(16)[5], dft_sines(8)[6]
    s = channel_from_paths(cfg, [(math.asin(st_), math.asin(sr), 1.0)])
    lab = optimal_beam(s, dft_codebook(8, 16), dft_codebook(4, 8))
    assert (lab.i_star, lab.j_star) == (5, 6)


def test_direction_on_grid_zero():
    cfg = SystemConfig(m_t=8, n_t=8)
    s = channel_from_paths(cfg, [(0.0, 0.0, 1.0)])
    assert beam_direction(s, oversampled_codebook(8, 8))[0] == 0.0


@settings(max_examples=60, deadline=None)
@given(st.floats(-0.99, 0.99), st.floats(-0.99, 0.99))
def test_direction_quantization(s_t, s_r):
    cfg = SystemConfig(m_t=8, m_r=4, n_t=8, n_r=4)
    sample = channel_from_paths(cfg, [(math.asin(s_t), math.asin(s_r), 1.0)])
    ot, orr = oversampled_codebook(8, 8), oversampled_codebook(4, 4)
    d = beam_direction(sample, ot, orr)
    # grid steps 2/32 and 2/16; wrap at the +-1 alias
    for got, true, n in ((d[0], s_t, 32), (d[1], s_r, 16)):
        err = abs(got - true)
        assert min(err, 2 - err) <= 1.0 / n + 1e-12


def test_kmeans_examples(rng):
    m = kmeans([-0.9, -0.8, 0.8, 0.9], 2, rng)
    assert np.allclose(m.centers[:, 0], [-0.85, 0.85])
    x = rng.uniform(-1, 1, 50)
    one = kmeans(x, 1, rng)
    assert one.centers[0, 0] == pytest.approx(x.mean())
    assert one.inertia == pytest.approx(x.var() * len(x))
    with pytest.raises(ValueError):
        kmeans([0.1, 0.1, 0.1], 2, rng)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 2))
def test_kmeans_inertia_monotone(seed, g, dim):
    r = np.random.default_rng(seed)
    x = r.uniform(-1, 1, (80, dim))
    m = kmeans(x, g, r)
    assert all(b <= a + 1e-12 for a, b in zip(m.history, m.history[1:]))
    assert m.inertia >= 0 and np.all(np.isfinite(m.centers))
    order = np.lexsort(m.centers.T[::-1])
    assert np.array_equal(order, np.arange(g))


def _blobs(rng, centers, n=100, spread=0.02):
    return np.concatenate([c + spread * rng.standard_normal((n, len(np.atleast_1d(c)))) for c in centers])


def test_elbow_blobs(rng):
    x1 = _blobs(rng, [np.array([c]) for c in (-0.7, -0.2, 0.3, 0.8)])
    assert elbow_select_g(x1, range(2, 9), rng) == 4
    x2 = _blobs(rng, [np.array(c) for c in ((-0.5, -0.5), (0.5, 0.0), (-0.3, 0.6))])
    assert elbow_select_g(x2, range(2, 9), rng) == 3


def test_elbow_uniform_tie_rule():
    x = np.linspace(-1, 1, 400)
    assert elbow_select_g(x, [2, 3, 4], np.random.default_rng(0)) in (2, 3)
    with pytest.raises(ValueError):
        elbow_select_g(x, [3, 2, 4], np.random.default_rng(0))


def test_assign_cluster(rng):
    m = kmeans([-0.9, -0.8, 0.8, 0.9], 2, rng)
    lab = assign_cluster(m, [0.7])
    assert lab.group == 1 and list(lab.onehot) == [0, 1]
    with pytest.raises(ValueError):
        assign_clusters(m, np.zeros((3, 2)))


def test_sidecar_roundtrip(tmp_path):
    p = tmp_path / "labels.csv"
    write_label_sidecar(p, [3, 1, 2], [0, 1, 1], [5, 6, 7], [1, 2, 3])
    ids, g, i, j = read_label_sidecar(p)
    assert list(ids) == [3, 1, 2] and list(g) == [0, 1, 1] and list(i) == [5, 6, 7] and list(j) == [1, 2, 3]
    write_label_sidecar(p, [0], [0], [4])
    assert read_label_sidecar(p)[3] is None
