"""Hierarchical beam alignment networks (MISO and MIMO) and their two-step training."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .codebook import dft_codebook
from .config import SystemConfig
from .neural import (
    AdamState,
    Mlp,
    ProbingLayer,
    Tape,
    adam_step,
    ce_loss,
    concat,
    load_checkpoint,
    mlp_forward,
    power_layer,
    probing_forward,
    save_checkpoint,
    scale,
    weighted_ce_loss,
)
from .sweep import complex_noise, spectral_efficiency


class NotTrainedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 256
    epochs: int = 50
    lr: float = 1e-3
    xi: float = 0.7
    patience: int = 5
    noisy: bool = True
    normalize_input: bool = False  # divide each z by its own mean

    def __post_init__(self):
        if not 0.0 <= self.xi <= 1.0:
            raise ValueError(f"xi must lie in [0, 1], got {self.xi}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AlignmentResult:
    i_hat: int
    j_hat: int | None
    k_star: int
    z_coarse: np.ndarray
    z_fine: np.ndarray
    sweep_count: int


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # (stage, epoch, loss, val_acc)

    def add(self, stage, epoch, loss, acc):
        self.rows.append((stage, epoch, float(loss), float(acc)))

    def to_csv(self) -> str:
        lines = ["stage,epoch,loss,val_accuracy"]
        lines += [f"{s},{e},{l:.10g},{a:.10g}" for s, e, l, a in self.rows]
        return "\n".join(lines) + "\n"


def _predictor_sizes(n_in: int, n_out: int) -> list:
    return [n_in, 2 * n_in, 3 * n_in, n_out]


class HbanModel:
    """Two tiers of learnable probing codebooks, a selector and G predictors.

    With ``m_r > 1`` every probing codeword is a (transmit, receive) beam pair
    and each predictor has a transmit head (N_t outputs) and a receive head
    (N_r outputs).  ``n2 = 0`` with ``g = 1`` and ``joint_coarse=True``
    gives the one-tier probing baseline: the single probing codebook is
    trained together with the predictor.
    """

    def __init__(self, cfg: SystemConfig, n1: int, n2: int, g: int, seed: int = 0,
                 joint_coarse: bool = False):
        if n1 < 1 or n2 < 0 or g < 1:
            raise ValueError("need n1 >= 1, n2 >= 0, g >= 1")
        if n2 and n1 > n2:
            raise ValueError(f"fine codebooks must be no smaller than the coarse one ({n1} > {n2})")
        self.cfg = cfg
        self.n1, self.n2, self.g = n1, n2, g
        self.joint_coarse = joint_coarse
        self.seed = seed
        self.mimo = cfg.mimo
        rng = np.random.default_rng(seed)
        m_t, m_r = cfg.m_t, cfg.m_r
        self.coarse_t = ProbingLayer(m_t, n1, rng, "coarse.theta")
        self.coarse_r = ProbingLayer(m_r, n1, rng, "coarse.phi", "receive") if self.mimo else None
        self.fine_t, self.fine_r = [], []
        for k in range(g):
            if n2:
                self.fine_t.append(ProbingLayer(m_t, n2, rng, f"fine{k}.theta"))
                if self.mimo:
                    self.fine_r.append(ProbingLayer(m_r, n2, rng, f"fine{k}.phi", "receive"))
        self.selector = Mlp([n1, n1, g], rng, "selector")
        width = n1 + n2
        self.pred_t = [Mlp(_predictor_sizes(width, cfg.n_t), rng, f"pred{k}.t") for k in range(g)]
        self.pred_r = ([Mlp(_predictor_sizes(width, cfg.n_r), rng, f"pred{k}.r") for k in range(g)]
                       if self.mimo else [])
        self.input_scale = 1.0
        self.input_shift = -1.0  # an isotropic beam maps to 0
        self.normalize_input = False
        self.coarse_trained = False
        self.fine_trained = False
        self.fixed_probing = False

    # -- bookkeeping ----------------------------------------------------

    @property
    def sweep_count(self) -> int:
        return self.n1 + self.n2

    def probing_params(self) -> list:
        ps = [self.coarse_t.theta] + ([self.coarse_r.theta] if self.mimo else [])
        for k in range(self.g):
            if self.n2:
                ps.append(self.fine_t[k].theta)
                if self.mimo:
                    ps.append(self.fine_r[k].theta)
        return ps

    def coarse_params(self) -> list:
        ps = [] if self.fixed_probing else [self.coarse_t.theta]
        if self.mimo and not self.fixed_probing:
            ps.append(self.coarse_r.theta)
        return ps + self.selector.params

    def fine_params(self, k: int) -> list:
        ps = []
        if self.n2 and not self.fixed_probing:
            ps.append(self.fine_t[k].theta)
            if self.mimo:
                ps.append(self.fine_r[k].theta)
        ps += self.pred_t[k].params
        if self.mimo:
            ps += self.pred_r[k].params
        return ps

    def all_params(self) -> list:
        ps = self.selector.params[:]
        for k in range(self.g):
            ps += self.pred_t[k].params + (self.pred_r[k].params if self.mimo else [])
        return self.probing_params() + ps

    def state_dict(self) -> dict:
        return {p.name: p.value.copy() for p in self.all_params()}

    def load_state_dict(self, state: dict) -> None:
        for p in self.all_params():
            if p.value.shape != state[p.name].shape:
                raise ValueError(f"shape mismatch for {p.name}")
            p.value = np.array(state[p.name], dtype=np.float64)

    def meta(self) -> dict:
        return {
            "config": self.cfg.to_dict(),
            "n1": self.n1, "n2": self.n2, "g": self.g, "seed": self.seed,
            "joint_coarse": self.joint_coarse,
            "input_scale": self.input_scale,
            "input_shift": self.input_shift,
            "normalize_input": self.normalize_input,
            "coarse_trained": self.coarse_trained,
            "fine_trained": self.fine_trained,
            "fixed_probing": self.fixed_probing,
        }

    def save(self, path) -> None:
        save_checkpoint(path, self.state_dict(), self.meta())

    @classmethod
    def load(cls, path) -> "HbanModel":
        tensors, meta = load_checkpoint(path)
        model = cls(SystemConfig.from_dict(meta["config"]), meta["n1"], meta["n2"], meta["g"],
                    meta["seed"], meta["joint_coarse"])
        model.load_state_dict(tensors)
        for key in ("input_scale", "input_shift", "normalize_input", "coarse_trained", "fine_trained", "fixed_probing"):
            setattr(model, key, meta[key])
        return model

    # -- forward pieces -------------------------------------------------

    def _noise(self, rng, batch: int, n: int, noisy: bool = True) -> np.ndarray:
        var = self.cfg.noise_var if noisy else 0.0
        shape = (batch, n, self.cfg.m_r) if self.mimo else (batch, n)
        return complex_noise(rng, shape, var)

    def _features(self, z, tape):
        """Network input from raw powers (watts)."""
        if self.normalize_input:
            mean = np.maximum(z.value.mean(axis=1, keepdims=True), 1e-300)
            return scale(z, 1.0 / mean, tape, self.input_shift)
        return scale(z, self.input_scale, tape, self.input_shift)

    def _probe(self, tx: ProbingLayer, rx: ProbingLayer | None, H, noise, tape):
        h = H if self.mimo else H[:, :, 0]
        y = probing_forward(tx, h, noise, self.cfg.tx_power_w, tape, rx_layer=rx)
        return power_layer(y, tape)

    def coarse_measure(self, H, rng, tape=None, noisy=True):
        noise = self._noise(rng, len(H), self.n1, noisy)
        return self._probe(self.coarse_t, self.coarse_r, H, noise, tape)

    def fine_measure(self, k: int, H, rng, tape=None, noisy=True):
        noise = self._noise(rng, len(H), self.n2, noisy)
        rx = self.fine_r[k] if self.mimo else None
        return self._probe(self.fine_t[k], rx, H, noise, tape)

    def selector_probs(self, z_c, tape=None):
        return mlp_forward(self.selector, self._features(z_c, tape), tape)

    def predictor_probs(self, k: int, z_c, z_f, tape=None):
        x = z_c if z_f is None else concat([z_c, z_f], tape)
        x = self._features(x, tape)
        p_t = mlp_forward(self.pred_t[k], x, tape)
        p_r = mlp_forward(self.pred_r[k], x, tape) if self.mimo else None
        return p_t, p_r

    def set_input_scale(self, H_train: np.ndarray) -> None:
        """Fixed input unit: the mean received power of an isotropic beam."""
        power = np.mean(np.sum(np.abs(H_train) ** 2, axis=(1, 2)))
        ref = self.cfg.tx_power_w * power / (self.cfg.m_t * self.cfg.m_r)
        self.input_scale = 1.0 / ref

    # -- batched inference ------------------------------------------------

    def infer(self, H, rng, noisy=True, forced_groups=None):
        """Predict beam indices for a batch of channels.

        Returns (i_hat, j_hat or None, k_star).  ``forced_groups`` replaces
        the selector's decision (perfect coarse search).
        """
        if not self.fine_trained:
            raise NotTrainedError("model has not completed training")
        H = np.asarray(H)
        z_c = self.coarse_measure(H, rng, noisy=noisy)
        if forced_groups is None:
            k_star = select_codebook_batch(self.selector_probs(z_c).value)
        else:
            k_star = np.asarray(forced_groups, dtype=int)
        # fine noise drawn for the whole batch so results do not depend on grouping
        fine_noise = self._noise(rng, len(H), self.n2, noisy) if self.n2 else None
        i_hat = np.zeros(len(H), dtype=int)
        j_hat = np.zeros(len(H), dtype=int) if self.mimo else None
        for k in range(self.g):
            idx = np.flatnonzero(k_star == k)
            if not len(idx):
                continue
            zc_k = _rows(z_c, idx)
            zf_k = None
            if self.n2:
                rx = self.fine_r[k] if self.mimo else None
                zf_k = self._probe(self.fine_t[k], rx, H[idx], fine_noise[idx], None)
            p_t, p_r = self.predictor_probs(k, zc_k, zf_k)
            i_hat[idx] = np.argmax(p_t.value, axis=1)
            if self.mimo:
                j_hat[idx] = np.argmax(p_r.value, axis=1)
        return i_hat, j_hat, k_star


def _rows(node, idx):
    from .neural import Node
    return Node(node.value[idx])


def select_codebook_batch(probs: np.ndarray) -> np.ndarray:
    return np.argmax(probs, axis=1)


def select_codebook(model: HbanModel, z_c) -> int:
    """Index of the fine codebook chosen from one coarse measurement."""
    z_c = np.asarray(z_c, dtype=float).reshape(1, -1)
    if z_c.shape[1] != model.n1:
        raise ValueError(f"coarse measurement has {z_c.shape[1]} entries, expected {model.n1}")
    from .neural import Node
    return int(select_codebook_batch(model.selector_probs(Node(z_c)).value)[0])


def predict_beam(model: HbanModel, z_c, z_f, k_star: int):
    if not 0 <= k_star < model.g:
        raise ValueError(f"k_star {k_star} outside [0, {model.g})")
    from .neural import Node
    zc = Node(np.asarray(z_c, dtype=float).reshape(1, -1))
    zf = None if model.n2 == 0 else Node(np.asarray(z_f, dtype=float).reshape(1, -1))
    p_t, p_r = model.predictor_probs(k_star, zc, zf)
    i_hat = int(np.argmax(p_t.value[0]))
    if model.mimo:
        return i_hat, int(np.argmax(p_r.value[0]))
    return i_hat


def align(model: HbanModel, sample, rng: np.random.Generator) -> AlignmentResult:
    """Coarse sweep, codebook selection, fine sweep, prediction for one UE."""
    if not model.fine_trained:
        raise NotTrainedError("model has not completed training")
    h = sample.h if hasattr(sample, "h") else np.asarray(sample)
    H = h.reshape(1, model.cfg.m_t, model.cfg.m_r)
    z_c = model.coarse_measure(H, rng)
    k_star = select_codebook(model, z_c.value[0])
    z_f = np.zeros(0)
    if model.n2:
        z_f = model.fine_measure(k_star, H, rng).value[0]
    pred = predict_beam(model, z_c.value[0], z_f, k_star)
    i_hat, j_hat = pred if model.mimo else (pred, None)
    return AlignmentResult(i_hat=i_hat, j_hat=j_hat, k_star=k_star, z_coarse=z_c.value[0],
                           z_fine=z_f, sweep_count=len(z_c.value[0]) + len(z_f))


# ---------------------------------------------------------------------------
# training


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _onehot(idx, n):
    return np.eye(n)[np.asarray(idx, dtype=int)]


def selector_accuracy(model: HbanModel, H, groups, rng, noisy=True) -> float:
    z_c = model.coarse_measure(H, rng, noisy=noisy)
    k = select_codebook_batch(model.selector_probs(z_c).value)
    return float(np.mean(k == np.asarray(groups)))


def train_coarse(model: HbanModel, H_train, groups_train, H_val, groups_val, tc: TrainConfig,
                 log: TrainLog | None = None) -> TrainLog:
    """Step one: coarse probing codebook and selector with the CE loss (1/G)."""
    groups_train = np.asarray(groups_train)
    if groups_train.min() < 0 or groups_train.max() >= model.g:
        raise ValueError(f"cluster labels outside [0, {model.g})")
    log = TrainLog() if log is None else log
    model.normalize_input = tc.normalize_input
    model.set_input_scale(H_train)
    rng = np.random.default_rng([tc.seed, 1])
    eval_rng_seed = [tc.seed, 2]
    params = model.coarse_params()
    opt = AdamState(params, lr=tc.lr)
    best_acc, best_state, stale = -1.0, None, 0
    for epoch in range(tc.epochs):
        losses = []
        for idx in _batches(len(H_train), tc.batch_size, rng):
            opt.zero_grad()
            tape = Tape()
            z_c = model.coarse_measure(H_train[idx], rng, tape, noisy=tc.noisy)
            p = model.selector_probs(z_c, tape)
            loss = ce_loss(p, _onehot(groups_train[idx], model.g), model.g, tape)
            tape.backward(loss)
            adam_step(opt)
            losses.append(float(loss.value))
        acc = selector_accuracy(model, H_val, groups_val, np.random.default_rng(eval_rng_seed), tc.noisy)
        log.add("coarse", epoch, np.mean(losses), acc)
        if acc > best_acc:
            best_acc, best_state, stale = acc, [p.value.copy() for p in params], 0
        else:
            stale += 1
            if stale >= tc.patience:
                break
    if best_state is not None:
        for p, v in zip(params, best_state):
            p.value = v
    model.coarse_trained = True
    return log


def _fine_loss(model, k, z_c, z_f, labels_t, labels_r, tape, n_batch, xi):
    p_t, p_r = model.predictor_probs(k, z_c, z_f, tape)
    if model.mimo:
        return weighted_ce_loss(p_t, _onehot(labels_t, model.cfg.n_t), p_r,
                                _onehot(labels_r, model.cfg.n_r), xi, tape, batch_size=n_batch)
    return ce_loss(p_t, _onehot(labels_t, model.cfg.n_t), model.cfg.n_t, tape, batch_size=n_batch)


def beam_accuracy(model: HbanModel, H, i_star, j_star=None, rng=None, noisy=True, forced_groups=None):
    i_hat, j_hat, _ = model.infer(H, rng, noisy=noisy, forced_groups=forced_groups)
    hit = i_hat == np.asarray(i_star)
    if model.mimo:
        hit &= j_hat == np.asarray(j_star)
    return float(np.mean(hit))


def train_fine(model: HbanModel, H_train, i_train, j_train, H_val, i_val, j_val, tc: TrainConfig,
               log: TrainLog | None = None) -> TrainLog:
    """Step two: fine codebooks and predictors, routed by the frozen selector.

    Coarse parameters are never touched.
    """
    if not model.coarse_trained:
        raise RuntimeError("train_coarse must run before train_fine")
    log = TrainLog() if log is None else log
    rng = np.random.default_rng([tc.seed, 3])
    eval_seed = [tc.seed, 4]
    params = [p for k in range(model.g) for p in model.fine_params(k)]
    opt = AdamState(params, lr=tc.lr)
    i_train = np.asarray(i_train)
    j_train = None if j_train is None else np.asarray(j_train)
    best_acc, best_state, stale = -1.0, None, 0
    for epoch in range(tc.epochs):
        losses = []
        for idx in _batches(len(H_train), tc.batch_size, rng):
            H = H_train[idx]
            # frozen coarse tier: no tape
            z_c = model.coarse_measure(H, rng, noisy=tc.noisy)
            k_star = select_codebook_batch(model.selector_probs(z_c).value)
            fine_noise = model._noise(rng, len(idx), model.n2, tc.noisy) if model.n2 else None
            opt.zero_grad()
            total = 0.0
            for k in range(model.g):
                sub = np.flatnonzero(k_star == k)
                if not len(sub):
                    continue
                tape = Tape()
                zc_k = _rows(z_c, sub)
                zf_k = None
                if model.n2:
                    rx = model.fine_r[k] if model.mimo else None
                    zf_k = model._probe(model.fine_t[k], rx, H[sub], fine_noise[sub], tape)
                jt = None if j_train is None else j_train[idx][sub]
                loss = _fine_loss(model, k, zc_k, zf_k, i_train[idx][sub], jt, tape, len(idx), tc.xi)
                tape.backward(loss)
                total += float(loss.value)
            adam_step(opt)
            losses.append(total)
        model.fine_trained = True
        acc = beam_accuracy(model, H_val, i_val, j_val, np.random.default_rng(eval_seed), tc.noisy)
        log.add("fine", epoch, np.mean(losses), acc)
        if acc > best_acc:
            best_acc, best_state, stale = acc, [p.value.copy() for p in params], 0
        else:
            stale += 1
            if stale >= tc.patience:
                break
    if best_state is not None:
        for p, v in zip(params, best_state):
            p.value = v
    model.fine_trained = True
    return log


def train_joint_one_tier(model: HbanModel, H_train, i_train, j_train, H_val, i_val, j_val,
                         tc: TrainConfig, log: TrainLog | None = None) -> TrainLog:
    """One probing codebook trained end to end with its predictor (G = 1, N_2 = 0)."""
    if model.g != 1 or model.n2 != 0:
        raise ValueError("one-tier training needs g=1 and n2=0")
    log = TrainLog() if log is None else log
    model.normalize_input = tc.normalize_input
    model.set_input_scale(H_train)
    rng = np.random.default_rng([tc.seed, 5])
    eval_seed = [tc.seed, 6]
    params = model.coarse_params()[:-len(model.selector.params)] + model.fine_params(0)
    opt = AdamState(params, lr=tc.lr)
    i_train = np.asarray(i_train)
    best_acc, best_state, stale = -1.0, None, 0
    model.coarse_trained = True
    for epoch in range(tc.epochs):
        losses = []
        for idx in _batches(len(H_train), tc.batch_size, rng):
            opt.zero_grad()
            tape = Tape()
            z_c = model.coarse_measure(H_train[idx], rng, tape, noisy=tc.noisy)
            jt = None if j_train is None else np.asarray(j_train)[idx]
            loss = _fine_loss(model, 0, z_c, None, i_train[idx], jt, tape, len(idx), tc.xi)
            tape.backward(loss)
            adam_step(opt)
            losses.append(float(loss.value))
        model.fine_trained = True
        acc = beam_accuracy(model, H_val, i_val, j_val, np.random.default_rng(eval_seed), tc.noisy)
        log.add("one-tier", epoch, np.mean(losses), acc)
        if acc > best_acc:
            best_acc, best_state, stale = acc, [p.value.copy() for p in params], 0
        else:
            stale += 1
            if stale >= tc.patience:
                break
    if best_state is not None:
        for p, v in zip(params, best_state):
            p.value = v
    model.fine_trained = True
    return log


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    accuracy: float
    spectral_efficiency: float
    sweep_count: int
    accuracy_t: float | None = None
    accuracy_r: float | None = None


def link_spectral_efficiency(cfg: SystemConfig, H, i_hat, j_hat=None) -> np.ndarray:
    """log2(1 + SNR) of the chosen DFT beam (pair) per sample; NaN when noiseless."""
    H = np.asarray(H)
    if cfg.noise_var == 0:
        return np.full(len(H), np.nan)
    v = dft_codebook(cfg.m_t, cfg.n_t, cfg.spacing_over_lambda).weights[:, i_hat]  # (m_t, B)
    hv = np.einsum("bkl,kb->bl", H.conj(), v)  # H^H v per sample
    if j_hat is None:
        gain = np.abs(hv[:, 0]) ** 2
    else:
        w = dft_codebook(cfg.m_r, cfg.n_r, cfg.spacing_over_lambda).weights[:, j_hat]
        gain = np.abs(np.einsum("lb,bl->b", w.conj(), hv)) ** 2
    return spectral_efficiency(cfg.tx_power_w * gain / cfg.noise_var)


def evaluate(model: HbanModel, H, i_star, j_star=None, trials: int = 1, seed: int = 0,
             forced_groups=None, cfg: SystemConfig | None = None) -> EvalResult:
    """Accuracy against noise-free labels and mean spectral efficiency of the
    chosen beams, averaged over ``trials`` independent noise draws.

    ``cfg`` overrides the link budget used for the sweep (noise sweeps).
    """
    H = np.asarray(H)
    if len(H) == 0:
        raise ValueError("empty evaluation split")
    if not model.fine_trained:
        raise NotTrainedError("model has not completed training")
    saved = model.cfg
    if cfg is not None:
        model.cfg = cfg
    try:
        accs, accs_t, accs_r, ses = [], [], [], []
        for t in range(trials):
            rng = np.random.default_rng([seed, 7, t])
            i_hat, j_hat, _ = model.infer(H, rng, forced_groups=forced_groups)
            hit_t = i_hat == np.asarray(i_star)
            hit = hit_t
            if model.mimo:
                hit_r = j_hat == np.asarray(j_star)
                hit = hit_t & hit_r
                accs_t.append(hit_t.mean())
                accs_r.append(hit_r.mean())
            accs.append(hit.mean())
            ses.append(np.mean(link_spectral_efficiency(model.cfg, H, i_hat, j_hat)))
    finally:
        model.cfg = saved
    return EvalResult(
        accuracy=float(np.mean(accs)),
        spectral_efficiency=float(np.mean(ses)),
        sweep_count=model.sweep_count,
        accuracy_t=float(np.mean(accs_t)) if accs_t else None,
        accuracy_r=float(np.mean(accs_r)) if accs_r else None,
    )


def evaluate_pcs(model: HbanModel, H, i_star, groups, j_star=None, trials: int = 1, seed: int = 0,
                 cfg: SystemConfig | None = None) -> EvalResult:
    """Evaluation with the fine codebook forced to the true cluster label."""
    return evaluate(model, H, i_star, j_star, trials, seed, forced_groups=groups, cfg=cfg)
