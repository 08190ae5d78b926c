"""Acceptance checks.  Each test records one PASS/FAIL line; conftest prints
them at the end of the session.  Run alone with ``pytest tests/test_acceptance.py``."""

import time

import numpy as np
import pytest

from beamalign import baselines as bl
from beamalign.channel import Scenario, gen_dataset, load_dataset, save_dataset
from beamalign.codebook import build_binary, build_two_tier, constant_modulus_error, dft_codebook
from beamalign.config import DESK_MISO, MIMO_PRESET, MISO_PRESET, SystemConfig
from beamalign.harness import DESK_SCHEDULE, ExperimentConfig, run_experiment
from beamalign.hban import HbanModel, TrainConfig, train_coarse, train_fine
from beamalign.labels import kmeans, optimal_beam
from beamalign.neural import Mlp, ProbingLayer, ce_loss, finite_diff_check, mlp_forward, weighted_ce_loss

GRAD_TOL = 1e-4
PCS_TOL = 0.01
ONE_TIER_TOL = 0.005
ONE_TIER_MARGIN = 0.01
INVERSION_DEPTH = 0.01
NOISE_TOL = 0.02
CM_TOL = 1e-9
SOFTMAX_TOL = 1e-12

SEEDS = [0, 1, 2]
N_SAMPLES = 20000
TRAIN = {"epochs": 150, "lr": 3e-3, "patience": 10}
MIMO_BUDGET = (4, 8)
NOISE_PSDS = [None, -171.0, -161.0, -151.0]
NOISE_BUDGET = [6, 8]

RESULTS = {}


def record(n, ok, detail, seconds):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail} [{seconds:.1f}s]"
    RESULTS[n] = line
    print(line)
    assert ok, line


def _mean(report, method, budget=None, psd="any"):
    cells = [c for c in report.cells if c["method"] == method and c["status"] == "ok"
             and (budget is None or c["budget"] == budget) and (psd == "any" or c["noise_psd"] == psd)]
    return float(np.mean([c["accuracy"] for c in cells]))


# -- 1 -----------------------------------------------------------------------


def _jitter(model, rng):
    for mlp in [model.selector] + model.pred_t + model.pred_r:
        for _, b in mlp.layers:
            b.value = 0.1 * rng.standard_normal(b.value.shape)


def _toy_losses(mimo):
    cfg = SystemConfig(m_t=4, m_r=2 if mimo else 1, n_t=8, n_r=4 if mimo else 1)
    rng = np.random.default_rng(21)
    model = HbanModel(cfg, 2, 3, 2, seed=3)
    _jitter(model, rng)
    shape = (3, 4, cfg.m_r)
    H = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * 3e-5
    model.set_input_scale(H)
    groups = np.eye(2)[[0, 1, 1]]
    q_t = np.eye(cfg.n_t)[[1, 5, 6]]
    q_r = np.eye(4)[[0, 3, 2]] if mimo else None
    z_c = model.coarse_measure(H, np.random.default_rng(9))

    def coarse(tape):
        z = model.coarse_measure(H, np.random.default_rng(9), tape)
        return ce_loss(model.selector_probs(z, tape), groups, 2, tape)

    def fine(tape):
        z_f = model.fine_measure(1, H, np.random.default_rng(10), tape)
        p_t, p_r = model.predictor_probs(1, z_c, z_f, tape)
        if mimo:
            return weighted_ce_loss(p_t, q_t, p_r, q_r, 0.7, tape)
        return ce_loss(p_t, q_t, cfg.n_t, tape)

    return model, coarse, fine


def test_c1_gradients():
    t0 = time.perf_counter()
    errs = {}
    for mimo in (False, True):
        model, coarse, fine = _toy_losses(mimo)
        tag = "mimo" if mimo else "miso"
        errs[f"{tag}-coarse"] = finite_diff_check(coarse, model.coarse_params(), rng=np.random.default_rng(0))
        errs[f"{tag}-fine"] = finite_diff_check(fine, model.fine_params(1), rng=np.random.default_rng(0))
        theta_only = [model.coarse_t.theta] + ([model.coarse_r.theta] if mimo else [])
        errs[f"{tag}-theta"] = finite_diff_check(coarse, theta_only, rng=np.random.default_rng(1))
    dt = time.perf_counter() - t0
    worst = max(errs.values())
    record(1, worst <= GRAD_TOL and dt < 10, f"max rel. err {worst:.2e} (tol {GRAD_TOL:g})", dt)


# -- 2 -----------------------------------------------------------------------


def test_c2_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    tx, rx = dft_codebook(16, 32), dft_codebook(4, 8)
    bad = 0
    for _ in range(200):
        h = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        gains = [abs(np.vdot(h, tx.weights[:, i])) ** 2 for i in range(32)]
        bad += optimal_beam(h, tx).i_star != int(np.argmax(gains))
        H = rng.standard_normal((16, 4)) + 1j * rng.standard_normal((16, 4))
        best, arg = -1.0, None
        for i in range(32):
            for j in range(8):
                g = abs(rx.weights[:, j].conj() @ H.conj().T @ tx.weights[:, i]) ** 2
                if g > best:
                    best, arg = g, (i, j)
        lab = optimal_beam(H, tx, rx)
        bad += (lab.i_star, lab.j_star) != arg
    dt = time.perf_counter() - t0
    record(2, bad == 0 and dt < 10, f"{bad} mismatches over 200 MISO + 200 MIMO samples", dt)


# -- 3 -----------------------------------------------------------------------


def test_c3_sweep_counts():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    c, m = MISO_PRESET, MIMO_PRESET
    h = rng.standard_normal(c.m_t) + 1j * rng.standard_normal(c.m_t)
    H = rng.standard_normal((m.m_t, m.m_r)) + 1j * rng.standard_normal((m.m_t, m.m_r))
    two = build_two_tier(c.m_t, c.n_t, 11, iters=3)
    tx_bin = build_binary(c.m_t, c.n_t, iters=3)
    tx_two = build_two_tier(m.m_t, m.n_t, 16, iters=3)
    rx_two = build_two_tier(m.m_r, m.n_r, 4, iters=3)
    rx_bin = build_binary(m.m_r, m.n_r, iters=3)
    hban_miso = HbanModel(c, 6, 8, 2).sweep_count
    hban_mimo = HbanModel(m, 4, 16, 2).sweep_count
    got = {
        "miso hban": (hban_miso, 14),
        "miso exhaustive": (bl.exhaustive_search(h, dft_codebook(c.m_t, c.n_t), c, rng).sweep_count, 128),
        "miso two-tier": (bl.two_tier_search(h, two, c, rng).sweep_count, 23),
        "miso binary": (bl.binary_search(h, tx_bin, c, rng).sweep_count, 14),
        "mimo hban": (hban_mimo, 20),
        "mimo exhaustive": (bl.exhaustive_search(H, dft_codebook(m.m_t, m.n_t), m, rng,
                                                 rx=dft_codebook(m.m_r, m.n_r)).sweep_count, 4096),
        "mimo joint": (bl.two_tier_joint(H, tx_two, rx_two, m, rng).sweep_count, 128),
        "mimo hybrid": (bl.two_tier_hybrid(H, tx_two, rx_two, m, rng).sweep_count, 80),
        "mimo binary": (bl.binary_search(H, build_binary(m.m_t, m.n_t, iters=3), m, rng,
                                         rx_book=rx_bin).sweep_count, 24),
    }
    wrong = {k: v for k, v in got.items() if v[0] != v[1]}
    dt = time.perf_counter() - t0
    record(3, not wrong, f"{len(got) - len(wrong)}/{len(got)} counts exact {wrong or ''}".strip(), dt)


# -- 4, 5, 6 -----------------------------------------------------------------


@pytest.fixture(scope="module")
def miso_sweep(tmp_path_factory):
    exp = ExperimentConfig(preset="desk-miso", n_samples=N_SAMPLES, methods=["hban", "hban-pcs", "one-tier"],
                           budgets=[list(b) for b in DESK_SCHEDULE], seeds=SEEDS, train=dict(TRAIN),
                           output_dir=str(tmp_path_factory.mktemp("miso")), save_checkpoints=False)
    t0 = time.perf_counter()
    report = run_experiment(exp)
    return report, time.perf_counter() - t0


BUDGETS = [a + b for a, b in DESK_SCHEDULE]


@pytest.mark.slow
def test_c4_pcs_dominance(miso_sweep):
    report, dt = miso_sweep
    gaps = {b: _mean(report, "hban-pcs", b) - _mean(report, "hban", b) for b in BUDGETS}
    ok = not report.failed and all(g >= -PCS_TOL for g in gaps.values()) and dt < 600
    detail = ", ".join(f"b={b}: {_mean(report, 'hban-pcs', b):.3f} vs {_mean(report, 'hban', b):.3f}"
                       for b in BUDGETS)
    record(4, ok, f"PCS vs HBAN {detail}", dt)


@pytest.mark.slow
def test_c5_hierarchy_beats_one_tier(miso_sweep):
    report, dt = miso_sweep
    h = [_mean(report, "hban", b) for b in BUDGETS]
    o = [_mean(report, "one-tier", b) for b in BUDGETS]
    ok = all(a >= b - ONE_TIER_TOL for a, b in zip(h, o)) and h[-1] - o[-1] >= ONE_TIER_MARGIN
    detail = ", ".join(f"b={b}: {a:.3f} vs {c:.3f}" for b, a, c in zip(BUDGETS, h, o))
    record(5, ok and dt < 1200, f"HBAN vs one-tier {detail}", dt)


@pytest.mark.slow
def test_c6_budget_trend(miso_sweep):
    report, dt = miso_sweep
    h = [_mean(report, "hban", b) for b in BUDGETS]
    drops = [a - b for a, b in zip(h, h[1:]) if b < a]
    ok = len(drops) <= 1 and all(d <= INVERSION_DEPTH for d in drops)
    record(6, ok, "HBAN accuracy " + " -> ".join(f"{a:.3f}" for a in h), dt)


# -- 7 -----------------------------------------------------------------------


@pytest.mark.slow
def test_c7_joint_beats_separate(tmp_path):
    exp = ExperimentConfig(preset="desk-mimo", n_samples=N_SAMPLES, methods=["hban", "separate"],
                           budgets=[list(MIMO_BUDGET)], seeds=SEEDS, train=dict(TRAIN),
                           output_dir=str(tmp_path), save_checkpoints=False)
    t0 = time.perf_counter()
    report = run_experiment(exp)
    dt = time.perf_counter() - t0
    joint, sep = _mean(report, "hban"), _mean(report, "separate")
    ok = not report.failed and joint >= sep and dt < 1800
    record(7, ok, f"budget {sum(MIMO_BUDGET)}: HBAN-MIMO {joint:.3f} vs separate {sep:.3f}", dt)


# -- 8 -----------------------------------------------------------------------


@pytest.mark.slow
def test_c8_noise_trend(tmp_path):
    methods = ["hban", "hban-pcs", "one-tier", "amcf", "exhaustive", "two-tier", "binary"]
    exp = ExperimentConfig(preset="desk-miso", n_samples=N_SAMPLES, methods=methods, noise_psds=NOISE_PSDS,
                           noise_budget=NOISE_BUDGET, seeds=[0], train=dict(TRAIN),
                           output_dir=str(tmp_path), save_checkpoints=False)
    t0 = time.perf_counter()
    from beamalign.harness import noise_sweep
    report = noise_sweep(exp)
    dt = time.perf_counter() - t0
    bad = []
    for m in methods:
        accs = [_mean(report, m, psd=p) for p in NOISE_PSDS]
        if any(b > a + NOISE_TOL for a, b in zip(accs, accs[1:])):
            bad.append((m, [round(a, 3) for a in accs]))
    quiet = _mean(report, "exhaustive", psd=None)
    ok = not report.failed and not bad and quiet == 1.0
    record(8, ok, f"zero-noise exhaustive {quiet:.3f}; violations {bad or 'none'}", dt)


# -- 9 -----------------------------------------------------------------------


def test_c9_invariants(tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    checks = {}

    layer = ProbingLayer(16, 8, rng)
    layer.theta.value = rng.standard_normal((16, 8)) * 50
    wide = build_two_tier(16, 32, 6, iters=20).tiers[0].weights
    checks["constant modulus"] = max(constant_modulus_error(layer.beams), constant_modulus_error(wide)) <= CM_TOL

    mlp = Mlp([5, 7, 9], rng)
    p = mlp_forward(mlp, rng.standard_normal((64, 5)) * 10).value
    checks["softmax"] = np.abs(p.sum(axis=1) - 1).max() <= SOFTMAX_TOL

    hist = kmeans(rng.uniform(-1, 1, (300, 2)), 5, rng).history
    checks["k-means inertia"] = all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))

    ds = gen_dataset(DESK_MISO, 4, Scenario(), 400)
    save_dataset(ds, tmp_path / "a.bfch")
    back = load_dataset(tmp_path / "a.bfch")
    save_dataset(back, tmp_path / "b.bfch")
    checks["dataset round-trip"] = back == ds and (tmp_path / "a.bfch").read_bytes() == (tmp_path / "b.bfch").read_bytes()

    H = np.stack([s.h for s in ds.samples])
    i = np.array([optimal_beam(h, dft_codebook(16, 32)).i_star for h in H])
    g = (i >= 16).astype(int)
    model = HbanModel(DESK_MISO, 2, 3, 2, seed=1)
    tc = TrainConfig(epochs=2)
    train_coarse(model, H, g, H, g, tc)
    frozen = [p.value.tobytes() for p in model.coarse_params()]
    train_fine(model, H, i, None, H, i, None, tc)
    checks["freeze contract"] = frozen == [p.value.tobytes() for p in model.coarse_params()]

    model.save(tmp_path / "m.bfnn")
    again = HbanModel.load(tmp_path / "m.bfnn")
    again.save(tmp_path / "n.bfnn")
    checks["checkpoint round-trip"] = (tmp_path / "m.bfnn").read_bytes() == (tmp_path / "n.bfnn").read_bytes()

    def run():
        exp = ExperimentConfig(preset="desk-mimo", n_samples=500, methods=["hban", "two-tier-joint"],
                               budgets=[[2, 3]], seeds=[0], g=2, train={"epochs": 2},
                               output_dir=str(tmp_path / "run"), save_checkpoints=False, wide_iters=10)
        return run_experiment(exp).cells

    checks["run determinism"] = run() == run()
    dt = time.perf_counter() - t0
    failed = [k for k, v in checks.items() if not v]
    record(9, not failed and dt < 120, f"{len(checks) - len(failed)}/{len(checks)} invariants hold"
           + (f" (failed: {failed})" if failed else ""), dt)
