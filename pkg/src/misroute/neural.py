"""Minimal feed-forward network engine on numpy: exact reverse-mode gradients.

Hidden layers are ReLU; the output head is one of "linear", "relu",
"softmax" (rows sum to 1), or "l1relu" (ReLU then L1-normalized, uniform on
all-zero rows). forward() returns a one-shot gradient tape; backward()
consumes it and produces parameter gradients plus the input gradient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "MlpNet",
    "GradientTape",
    "Grads",
    "make_mlp",
    "forward",
    "backward",
    "adam_step",
    "normalize_budget",
    "normalize_budget_vjp",
    "copy_net",
    "save_params",
    "load_params",
]

HEADS = ("linear", "relu", "softmax", "l1relu")


@dataclass
class MlpNet:
    """Affine stack with ReLU hidden activations and a configurable head.

    Adam moment estimates live on the net so successive adam_step calls
    continue the same trajectory.
    """

    sizes: tuple[int, ...]
    head: str
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    adam_m_w: list[np.ndarray] = field(default_factory=list)
    adam_v_w: list[np.ndarray] = field(default_factory=list)
    adam_m_b: list[np.ndarray] = field(default_factory=list)
    adam_v_b: list[np.ndarray] = field(default_factory=list)
    adam_t: int = 0

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]


def make_mlp(sizes, head: str = "linear", rng=None) -> MlpNet:
    """Fresh net with weights uniform in +-1/sqrt(fan_in) and zero biases."""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    if any(s < 1 for s in sizes):
        raise ValueError("layer sizes must be positive")
    if head not in HEADS:
        raise ValueError(f"unknown head {head!r}, expected one of {HEADS}")
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    net = MlpNet(sizes=sizes, head=head, weights=weights, biases=biases)
    _init_adam(net)
    return net


def _init_adam(net: MlpNet) -> None:
    net.adam_m_w = [np.zeros_like(w) for w in net.weights]
    net.adam_v_w = [np.zeros_like(w) for w in net.weights]
    net.adam_m_b = [np.zeros_like(b) for b in net.biases]
    net.adam_v_b = [np.zeros_like(b) for b in net.biases]
    net.adam_t = 0


def copy_net(net: MlpNet) -> MlpNet:
    """Deep copy sharing nothing, optimizer state included."""
    out = MlpNet(
        sizes=net.sizes,
        head=net.head,
        weights=[w.copy() for w in net.weights],
        biases=[b.copy() for b in net.biases],
        adam_m_w=[m.copy() for m in net.adam_m_w],
        adam_v_w=[v.copy() for v in net.adam_v_w],
        adam_m_b=[m.copy() for m in net.adam_m_b],
        adam_v_b=[v.copy() for v in net.adam_v_b],
        adam_t=net.adam_t,
    )
    return out


@dataclass
class GradientTape:
    """Intermediates of one forward pass; consumed by exactly one backward."""

    x: np.ndarray
    preacts: list[np.ndarray]
    activations: list[np.ndarray]
    output: np.ndarray
    squeeze: bool
    used: bool = False


def _as_rows(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ValueError(f"expected 1-D or 2-D input, got shape {x.shape}")


def _apply_head(head: str, z: np.ndarray) -> np.ndarray:
    if head == "linear":
        return z.copy()
    if head == "relu":
        return np.maximum(z, 0.0)
    if head == "softmax":
        shifted = z - z.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)
    if head == "l1relu":
        u = np.maximum(z, 0.0)
        s = u.sum(axis=1, keepdims=True)
        out = np.full_like(z, 1.0 / z.shape[1])
        nz = s[:, 0] > 0
        out[nz] = u[nz] / s[nz]
        return out
    raise ValueError(f"unknown head {head!r}")


def _head_vjp(head: str, z: np.ndarray, y: np.ndarray, gout: np.ndarray) -> np.ndarray:
    if head == "linear":
        return gout.copy()
    if head == "relu":
        return gout * (z > 0)
    if head == "softmax":
        dot = (gout * y).sum(axis=1, keepdims=True)
        return y * (gout - dot)
    if head == "l1relu":
        u = np.maximum(z, 0.0)
        s = u.sum(axis=1, keepdims=True)
        g = np.zeros_like(z)
        nz = s[:, 0] > 0
        if nz.any():
            dot = (gout[nz] * y[nz]).sum(axis=1, keepdims=True)
            g[nz] = (z[nz] > 0) * (gout[nz] - dot) / s[nz]
        return g
    raise ValueError(f"unknown head {head!r}")


def forward(net: MlpNet, x) -> tuple[np.ndarray, GradientTape]:
    """Evaluate the net. Input rows are samples; 1-D input gives 1-D output."""
    rows, squeeze = _as_rows(x)
    if rows.shape[1] != net.in_dim:
        raise ValueError(f"input width {rows.shape[1]} does not match net input {net.in_dim}")
    activations = [rows]
    preacts = []
    h = rows
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        preacts.append(z)
        if i < last:
            h = np.maximum(z, 0.0)
            activations.append(h)
    y = _apply_head(net.head, preacts[-1])
    tape = GradientTape(x=rows, preacts=preacts, activations=activations, output=y, squeeze=squeeze)
    return (y[0] if squeeze else y), tape


@dataclass
class Grads:
    """Parameter and input gradients from one backward pass."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    x: np.ndarray


def backward(net: MlpNet, tape: GradientTape, gout) -> Grads:
    """Reverse-mode pass. The tape is single-use; reuse raises."""
    if tape.used:
        raise RuntimeError("gradient tape already consumed")
    tape.used = True
    g, squeeze = _as_rows(gout)
    if g.shape != tape.output.shape:
        raise ValueError(f"output gradient shape {g.shape} does not match output {tape.output.shape}")
    if squeeze != tape.squeeze:
        raise ValueError("output gradient dimensionality does not match the forward input")
    g = _head_vjp(net.head, tape.preacts[-1], tape.output, g)
    dW: list[np.ndarray] = [None] * len(net.weights)
    db: list[np.ndarray] = [None] * len(net.biases)
    for i in range(len(net.weights) - 1, -1, -1):
        a_in = tape.activations[i]
        dW[i] = a_in.T @ g
        db[i] = g.sum(axis=0)
        g = g @ net.weights[i].T
        if i > 0:
            g = g * (tape.preacts[i - 1] > 0)
    return Grads(weights=dW, biases=db, x=(g[0] if tape.squeeze else g))


def adam_step(
    net: MlpNet,
    grads: Grads,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> MlpNet:
    """One bias-corrected Adam update in place; returns the net."""
    net.adam_t += 1
    t = net.adam_t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, m, v in (
        *zip(net.weights, grads.weights, net.adam_m_w, net.adam_v_w),
        *zip(net.biases, grads.biases, net.adam_m_b, net.adam_v_b),
    ):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return net


def normalize_budget(raw, head: str, total: float) -> np.ndarray:
    """Map raw scores to a nonnegative vector summing to `total`.

    head="softmax": total * softmax(raw). head="l1relu": total * relu(raw) /
    ||relu(raw)||_1, uniform when everything clips to zero. Works on single
    vectors and on batches of rows.
    """
    if total < 0:
        raise ValueError("total must be nonnegative")
    if head not in ("softmax", "l1relu"):
        raise ValueError(f"normalization head must be softmax or l1relu, got {head!r}")
    rows, squeeze = _as_rows(raw)
    y = _apply_head(head, rows) * total
    return y[0] if squeeze else y


def normalize_budget_vjp(raw, head: str, total: float, gout) -> np.ndarray:
    """Gradient of normalize_budget with respect to raw scores."""
    rows, squeeze = _as_rows(raw)
    g, _ = _as_rows(gout)
    y = _apply_head(head, rows)
    grad = _head_vjp(head, rows, y, g * total)
    return grad[0] if squeeze else grad


def save_params(net: MlpNet, path) -> None:
    """Write parameters as flat little-endian float64 plus a JSON sidecar.

    Optimizer state is not persisted; a loaded net starts Adam fresh.
    """
    path = Path(path)
    flat = np.concatenate(
        [arr.ravel() for pair in zip(net.weights, net.biases) for arr in pair]
    ).astype("<f8")
    path.with_suffix(".bin").write_bytes(flat.tobytes())
    sidecar = {
        "sizes": list(net.sizes),
        "head": net.head,
        "count": int(flat.size),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")


def load_params(path) -> MlpNet:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    sizes = tuple(int(s) for s in sidecar["sizes"])
    head = sidecar["head"]
    raw = path.with_suffix(".bin").read_bytes()
    flat = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    if flat.size != sidecar["count"]:
        raise ValueError(
            f"parameter file holds {flat.size} values, sidecar declares {sidecar['count']}"
        )
    weights = []
    biases = []
    pos = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
        pos += fan_in * fan_out
        biases.append(flat[pos : pos + fan_out].copy())
        pos += fan_out
    if pos != flat.size:
        raise ValueError("parameter count does not match declared sizes")
    net = MlpNet(sizes=sizes, head=head, weights=weights, biases=biases)
    _init_adam(net)
    return net
