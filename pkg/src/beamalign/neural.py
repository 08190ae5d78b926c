"""A small reverse-mode engine covering exactly the layers HBAN needs.

Values live on ``Node`` objects.  Forward functions take an optional
``Tape``; when one is given they append a closure that pushes the output
gradient back to the inputs.  Complex nodes carry the gradient
dL/dRe + j dL/dIm.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np


class Node:
    __slots__ = ("value", "grad", "logits")

    def __init__(self, value):
        self.value = value
        self.grad = None
        self.logits = None

    @property
    def shape(self):
        return np.shape(self.value)


class Param(Node):
    __slots__ = ("name",)

    def __init__(self, value, name: str):
        super().__init__(np.asarray(value, dtype=np.float64))
        self.name = name
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)


def _acc(node: Node, g) -> None:
    if isinstance(node, Param):
        node.grad = node.grad + g
    elif node.grad is None:
        node.grad = g
    else:
        node.grad = node.grad + g


class Tape:
    def __init__(self):
        self._ops = []

    def record(self, fn) -> None:
        self._ops.append(fn)

    def __len__(self):
        return len(self._ops)

    def backward(self, loss: Node) -> None:
        if not self._ops:
            raise RuntimeError("backward called before any forward pass was recorded")
        loss.grad = np.ones_like(loss.value)
        for fn in reversed(self._ops):
            fn()
        self._ops = []


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(np.asarray(x))


# ---------------------------------------------------------------------------
# probing layers


class ProbingLayer:
    """Constant-modulus probing codebook parameterized by phases.

    Beam i is exp(j theta[:, i]) / sqrt(m) so every entry has modulus
    1/sqrt(m) for any theta.
    """

    def __init__(self, m: int, n: int, rng: np.random.Generator, name: str = "theta",
                 role: str = "transmit"):
        if role not in ("transmit", "receive"):
            raise ValueError(f"unknown role {role!r}")
        self.theta = Param(rng.uniform(0.0, 2 * np.pi, size=(m, n)), name)
        self.role = role

    @property
    def m(self) -> int:
        return self.theta.value.shape[0]

    @property
    def n(self) -> int:
        return self.theta.value.shape[1]

    @property
    def scale(self) -> float:
        return 1.0 / np.sqrt(self.m)

    @property
    def beams(self) -> np.ndarray:
        return np.exp(1j * self.theta.value) * self.scale

    def set_beams(self, w: np.ndarray) -> None:
        """Load fixed constant-modulus beams (their phases become theta)."""
        w = np.asarray(w)
        if w.shape != self.theta.value.shape:
            raise ValueError(f"beam matrix {w.shape} != {self.theta.value.shape}")
        self.theta.value = np.angle(w).astype(np.float64)


def probing_forward(layer: ProbingLayer, h, noise, tx_power: float, tape: Tape | None = None,
                    rx_layer: ProbingLayer | None = None) -> Node:
    """Received signals of a probing sweep for a batch of channels.

    MISO: ``h`` is (B, m_t) and ``noise`` (B, N).  Written in the real
    field: Re y = sqrt(rho)(Re h* C - Im h* S), Im y = sqrt(rho)(Re h* S +
    Im h* C) with C, S = cos, sin(theta)/sqrt(m_t).

    MIMO (``rx_layer`` given): ``h`` is (B, m_t, m_r), ``noise`` (B, N, m_r)
    and y_i = sqrt(rho) w_i^H H^H v_i + w_i^H n_i for the paired codewords.
    """
    h = np.asarray(h)
    noise = np.asarray(noise)
    if rx_layer is not None:
        return _probing_pair_forward(layer, rx_layer, h, noise, tx_power, tape)
    if h.ndim == 3:
        if h.shape[2] != 1:
            raise ValueError("MIMO channel batch needs a receive layer")
        h = h[:, :, 0]
    if h.ndim != 2 or h.shape[1] != layer.m:
        raise ValueError(f"channel batch {h.shape} does not match {layer.m} antennas")
    if noise.shape != (h.shape[0], layer.n):
        raise ValueError(f"noise batch {noise.shape} != {(h.shape[0], layer.n)}")
    sr = np.sqrt(tx_power)
    theta = layer.theta
    c = np.cos(theta.value) * layer.scale
    s = np.sin(theta.value) * layer.scale
    hr, hi = h.real, -h.imag  # real and imaginary parts of h*
    y_re = sr * (hr @ c - hi @ s) + noise.real
    y_im = sr * (hr @ s + hi @ c) + noise.imag
    out = Node(y_re + 1j * y_im)

    if tape is not None:
        def backward():
            if out.grad is None:
                return
            g_re, g_im = out.grad.real, out.grad.imag
            d_c = sr * (hr.T @ g_re + hi.T @ g_im)
            d_s = sr * (hr.T @ g_im - hi.T @ g_re)
            _acc(theta, -s * d_c + c * d_s)
        tape.record(backward)
    return out


def _probing_pair_forward(tx: ProbingLayer, rx: ProbingLayer, h, noise, tx_power, tape):
    if h.ndim != 3 or h.shape[1:] != (tx.m, rx.m):
        raise ValueError(f"channel batch {h.shape} does not match ({tx.m}, {rx.m})")
    if tx.n != rx.n:
        raise ValueError("transmit and receive probing layers need matched codeword counts")
    if noise.shape != (h.shape[0], tx.n, rx.m):
        raise ValueError(f"noise batch {noise.shape} != {(h.shape[0], tx.n, rx.m)}")
    sr = np.sqrt(tx_power)
    v = tx.beams  # (m_t, N)
    w = rx.beams  # (m_r, N)
    u = np.einsum("bkl,ki->bil", h.conj(), v)  # (B, N, m_r): H^H v_i per codeword
    t = sr * u + noise
    out = Node(np.einsum("li,bil->bi", w.conj(), t))

    if tape is not None:
        def backward():
            if out.grad is None:
                return
            g = out.grad  # (B, N)
            g_w = np.einsum("bi,bil->li", g.conj(), t)
            g_u = sr * w.T[None, :, :] * g[:, :, None]  # (B, N, m_r)
            g_v = np.einsum("bkl,bil->ki", h, g_u)
            _acc(tx.theta, -np.imag(v * g_v.conj()))
            _acc(rx.theta, -np.imag(w * g_w.conj()))
        tape.record(backward)
    return out


def power_layer(y: Node, tape: Tape | None = None) -> Node:
    """Received power |y|^2 = Re(y)^2 + Im(y)^2."""
    y = as_node(y)
    out = Node(y.value.real ** 2 + y.value.imag ** 2)
    if tape is not None:
        def backward():
            if out.grad is not None:
                _acc(y, 2.0 * y.value * out.grad)
        tape.record(backward)
    return out


def scale(x: Node, factor, tape: Tape | None = None, shift: float = 0.0) -> Node:
    """x * factor + shift with constant factor (scalar or per-row column vector)."""
    x = as_node(x)
    out = Node(x.value * factor + shift)
    if tape is not None:
        def backward():
            if out.grad is not None:
                _acc(x, out.grad * factor)
        tape.record(backward)
    return out


def concat(nodes, tape: Tape | None = None) -> Node:
    nodes = [as_node(n) for n in nodes]
    widths = [n.value.shape[1] for n in nodes]
    out = Node(np.concatenate([n.value for n in nodes], axis=1))
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            start = 0
            for n, k in zip(nodes, widths):
                _acc(n, out.grad[:, start:start + k])
                start += k
        tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# multilayer perceptron


class Mlp:
    """Fully connected net, ReLU hidden layers, softmax output."""

    def __init__(self, sizes, rng: np.random.Generator, name: str = "mlp"):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"bad topology {sizes}")
        self.sizes = sizes
        self.layers = []
        for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = rng.standard_normal((n_in, n_out)) * np.sqrt(2.0 / n_in)
            self.layers.append((Param(w, f"{name}.w{k}"), Param(np.zeros(n_out), f"{name}.b{k}")))

    @property
    def params(self) -> list:
        return [p for pair in self.layers for p in pair]


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _linear(x: Node, w: Param, b: Param, tape):
    out = Node(x.value @ w.value + b.value)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            _acc(w, x.value.T @ out.grad)
            _acc(b, out.grad.sum(axis=0))
            _acc(x, out.grad @ w.value.T)
        tape.record(backward)
    return out


def _relu(x: Node, tape):
    mask = x.value > 0
    out = Node(np.where(mask, x.value, 0.0))
    if tape is not None:
        def backward():
            if out.grad is not None:
                _acc(x, out.grad * mask)
        tape.record(backward)
    return out


def mlp_forward(mlp: Mlp, x, tape: Tape | None = None) -> Node:
    """Class probabilities; the returned node keeps its logits node so the
    cross-entropy can use a fused, stabilized gradient."""
    x = as_node(x)
    if x.value.ndim != 2 or x.value.shape[1] != mlp.sizes[0]:
        raise ValueError(f"input {x.value.shape} does not match width {mlp.sizes[0]}")
    a = x
    for k, (w, b) in enumerate(mlp.layers):
        a = _linear(a, w, b, tape)
        if k < len(mlp.layers) - 1:
            a = _relu(a, tape)
    logits = a
    probs = Node(_softmax(logits.value))
    probs.logits = logits
    if tape is not None:
        def backward():
            if probs.grad is None:
                return
            p, g = probs.value, probs.grad
            _acc(logits, p * (g - (g * p).sum(axis=1, keepdims=True)))
        tape.record(backward)
    return probs


def ce_loss(p: Node, onehot, divisor: float, tape: Tape | None = None,
            batch_size: int | None = None) -> Node:
    """Mean over the batch of -(1/divisor) sum_k onehot_k log p_k.

    ``batch_size`` overrides the averaging count (used when one batch is
    split across several predictor heads).
    """
    onehot = np.asarray(onehot, dtype=np.float64)
    n = len(onehot) if batch_size is None else batch_size
    if p.logits is not None:
        logp = _log_softmax(p.logits.value)
    else:
        logp = np.log(p.value)
    out = Node(np.asarray(-(onehot * logp).sum() / (divisor * n)))
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            g = float(out.grad)
            if p.logits is not None:
                soft = np.exp(logp)
                _acc(p.logits, g * (soft * onehot.sum(axis=1, keepdims=True) - onehot) / (divisor * n))
            else:
                _acc(p, -g * onehot / (p.value * divisor * n))
        tape.record(backward)
    return out


def weighted_sum(terms, weights, tape: Tape | None = None) -> Node:
    terms = [as_node(t) for t in terms]
    out = Node(np.asarray(sum(w * t.value for t, w in zip(terms, weights))))
    if tape is not None:
        def backward():
            if out.grad is not None:
                for t, w in zip(terms, weights):
                    _acc(t, w * out.grad)
        tape.record(backward)
    return out


def weighted_ce_loss(p_t: Node, q_t, p_r: Node, q_r, xi: float, tape: Tape | None = None,
                     batch_size: int | None = None) -> Node:
    """xi-weighted sum of the transmit (1/N_t) and receive (1/N_r) CE terms."""
    if not 0.0 <= xi <= 1.0:
        raise ValueError(f"xi must lie in [0, 1], got {xi}")
    n_t = np.shape(q_t)[1]
    n_r = np.shape(q_r)[1]
    lt = ce_loss(p_t, q_t, n_t, tape, batch_size)
    lr = ce_loss(p_r, q_r, n_r, tape, batch_size)
    return weighted_sum([lt, lr], [xi, 1.0 - xi], tape)


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def adam_step(state: AdamState) -> None:
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, p in enumerate(state.params):
        state.m[k] = b1 * state.m[k] + (1 - b1) * p.grad
        state.v[k] = b2 * state.v[k] + (1 - b2) * p.grad ** 2
        m_hat = state.m[k] / c1
        v_hat = state.v[k] / c2
        p.value = p.value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# gradient check


def finite_diff_check(loss_fn, params, step: float = 1e-6, rng: np.random.Generator | None = None,
                      max_coords: int = 200) -> float:
    """Largest relative error between tape gradients and central differences.

    ``loss_fn(tape)`` must rebuild the loss deterministically (frozen noise).
    At most ``max_coords`` coordinates, drawn from ``rng``, are probed.
    """
    params = list(params)
    coords = [(k, j) for k, p in enumerate(params) for j in range(p.value.size)]
    if not coords:
        return 0.0
    for p in params:
        p.zero_grad()
    tape = Tape()
    loss = loss_fn(tape)
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]

    rng = np.random.default_rng(0) if rng is None else rng
    if len(coords) > max_coords:
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in np.sort(pick)]

    a_vals, n_vals = [], []
    for k, j in coords:
        flat = params[k].value.reshape(-1)
        orig = flat[j]
        flat[j] = orig + step
        f_plus = float(loss_fn(None).value)
        flat[j] = orig - step
        f_minus = float(loss_fn(None).value)
        flat[j] = orig
        a_vals.append(analytic[k].reshape(-1)[j])
        n_vals.append((f_plus - f_minus) / (2 * step))
    a_vals, n_vals = np.array(a_vals), np.array(n_vals)
    floor = 1e-6 * max(np.abs(a_vals).max(), 1e-300)
    denom = np.maximum(np.maximum(np.abs(a_vals), np.abs(n_vals)), floor)
    return float(np.max(np.abs(a_vals - n_vals) / denom))


# ---------------------------------------------------------------------------
# checkpoints

BFNN_MAGIC = b"BFNN"
BFNN_VERSION = 1


def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> None:
    """Magic, version u16, tensor count u32, metadata JSON, then named
    little-endian float64 tensors with their shapes."""
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts = [struct.pack("<4sHII", BFNN_MAGIC, BFNN_VERSION, len(tensors), len(meta_bytes)), meta_bytes]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        key = name.encode("utf-8")
        parts.append(struct.pack("<H", len(key)) + key)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[dict, dict]:
    buf = Path(path).read_bytes()
    if buf[:4] != BFNN_MAGIC:
        raise ValueError(f"bad magic: {buf[:4]!r}")
    _, version, count, meta_len = struct.unpack_from("<4sHII", buf, 0)
    if version != BFNN_VERSION:
        raise ValueError(f"version mismatch: {version}")
    off = 14
    meta = json.loads(buf[off:off + meta_len].decode("utf-8"))
    off += meta_len
    tensors = {}
    try:
        for _ in range(count):
            (klen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + klen].decode("utf-8")
            off += klen
            (ndim,) = struct.unpack_from("<B", buf, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if off + 8 * size > len(buf):
                raise ValueError("truncated payload")
            tensors[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(shape).copy()
            off += 8 * size
    except struct.error:
        raise ValueError("truncated payload") from None
    return tensors, meta
