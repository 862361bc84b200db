"""Two-output ReLU multilayer perceptron with manual backprop and Adam.

Parameters are immutable values: training steps return fresh NetworkParams
rather than mutating in place, so a fitted network can be shared, serialized,
and compared without defensive copies. Layer i maps width w_i to w_{i+1}
via weights[i] of shape (w_{i+1}, w_i) and biases[i] of shape (w_{i+1},).
Hidden layers apply ReLU; the final layer is affine.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from ._io import atomic_write_text

__all__ = [
    "NetworkParams",
    "Gradients",
    "AdamState",
    "init_network",
    "forward",
    "forward_batch",
    "backward",
    "init_adam_state",
    "adam_step",
    "network_to_json",
    "network_from_json",
    "save_network",
    "load_network",
]

_FORMAT = "nccqr-network"
_VERSION = 1


def _freeze(arrays):
    out = []
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=float)
        a.flags.writeable = False
        out.append(a)
    return tuple(out)


@dataclass(frozen=True)
class NetworkParams:
    """Weights and biases of a ReLU MLP with two output units."""

    widths: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        w = self.widths
        if len(w) < 3:
            raise ValueError("widths must list input, >= 1 hidden, and output layers")
        if any(int(x) <= 0 for x in w):
            raise ValueError(f"all widths must be positive, got {w}")
        if w[-1] != 2:
            raise ValueError(f"output width must be 2, got {w[-1]}")
        if len(self.weights) != len(w) - 1 or len(self.biases) != len(w) - 1:
            raise ValueError("expected one weight matrix and bias vector per layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (w[i + 1], w[i]):
                raise ValueError(
                    f"layer {i}: weight shape {W.shape} != ({w[i + 1]}, {w[i]})"
                )
            if b.shape != (w[i + 1],):
                raise ValueError(f"layer {i}: bias shape {b.shape} != ({w[i + 1]},)")
        object.__setattr__(self, "widths", tuple(int(x) for x in w))
        object.__setattr__(self, "weights", _freeze(self.weights))
        object.__setattr__(self, "biases", _freeze(self.biases))

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))


@dataclass(frozen=True)
class Gradients:
    """Per-layer gradients, mirroring the NetworkParams layout."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]


def init_network(d: int, hidden_widths, seed: int, metadata: dict | None = None) -> NetworkParams:
    """He-style initialization: W ~ N(0, 2/fan_in), biases zero.

    Deterministic for a given seed (PCG64 stream).
    """
    if d <= 0:
        raise ValueError(f"input dimension must be >= 1, got {d}")
    hidden = [int(h) for h in hidden_widths]
    if not hidden:
        raise ValueError("at least one hidden layer is required")
    if any(h <= 0 for h in hidden):
        raise ValueError(f"hidden widths must be positive, got {hidden}")
    widths = (int(d), *hidden, 2)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for w_in, w_out in zip(widths[:-1], widths[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / w_in), size=(w_out, w_in)))
        biases.append(np.zeros(w_out))
    return NetworkParams(widths, tuple(weights), tuple(biases), metadata or {})


def _forward_pass(params: NetworkParams, X: np.ndarray):
    """Return (activations, preactivations); activations[0] is the input."""
    acts = [X]
    h = X
    last = len(params.weights) - 1
    pre = []
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W.T + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        acts.append(h)
    return acts, pre


def forward_batch(params: NetworkParams, X, bound: float | None = None) -> np.ndarray:
    """Evaluate the network on rows of X; returns an (n, 2) array.

    If bound is given, outputs are clipped to [-bound, bound].
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.widths[0]:
        raise ValueError(f"X must have shape (n, {params.widths[0]}), got {X.shape}")
    out = _forward_pass(params, X)[0][-1]
    if bound is not None:
        if bound <= 0:
            raise ValueError(f"output bound must be positive, got {bound}")
        out = np.clip(out, -bound, bound)
    return out


def forward(params: NetworkParams, x, bound: float | None = None) -> tuple[float, float]:
    """Evaluate the network at a single input vector; returns (f1, f2)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = forward_batch(params, x.reshape(1, -1), bound=bound)[0]
    return float(out[0]), float(out[1])


def backward(params: NetworkParams, X, output_grads) -> Gradients:
    """Pullback of per-sample output gradients, averaged over the batch.

    Returns the gradient with respect to the parameters of
    (1/n) * sum_i g_i . f(x_i), where g_i is row i of output_grads.
    ReLU carries subgradient 0 at exactly 0.
    """
    X = np.asarray(X, dtype=float)
    G = np.asarray(output_grads, dtype=float)
    n = X.shape[0]
    if G.shape != (n, 2):
        raise ValueError(f"output_grads must have shape ({n}, 2), got {G.shape}")
    acts, pre = _forward_pass(params, X)
    gw = [None] * len(params.weights)
    gb = [None] * len(params.biases)
    D = G
    for i in range(len(params.weights) - 1, -1, -1):
        gw[i] = D.T @ acts[i] / n
        gb[i] = D.sum(axis=0) / n
        if i > 0:
            D = (D @ params.weights[i]) * (pre[i - 1] > 0.0)
    return Gradients(tuple(gw), tuple(gb))


@dataclass(frozen=True)
class AdamState:
    """First/second moment accumulators and step count for Adam."""

    m_weights: tuple[np.ndarray, ...]
    m_biases: tuple[np.ndarray, ...]
    v_weights: tuple[np.ndarray, ...]
    v_biases: tuple[np.ndarray, ...]
    t: int
    lr: float
    beta1: float
    beta2: float
    eps: float


def init_adam_state(
    params: NetworkParams,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    zeros_w = tuple(np.zeros_like(W) for W in params.weights)
    zeros_b = tuple(np.zeros_like(b) for b in params.biases)
    return AdamState(zeros_w, zeros_b,
                     tuple(np.zeros_like(W) for W in params.weights),
                     tuple(np.zeros_like(b) for b in params.biases),
                     0, lr, beta1, beta2, eps)


def adam_step(params: NetworkParams, grads: Gradients, state: AdamState):
    """One bias-corrected Adam update; returns (new_params, new_state).

    Raises ValueError on non-finite gradients so divergence surfaces
    immediately instead of silently corrupting the parameters.
    """
    for g in (*grads.weights, *grads.biases):
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient passed to adam_step")
    t = state.t + 1
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t

    def upd(p, g, m, v):
        m_new = state.beta1 * m + (1.0 - state.beta1) * g
        v_new = state.beta2 * v + (1.0 - state.beta2) * g * g
        step = state.lr * (m_new / c1) / (np.sqrt(v_new / c2) + state.eps)
        return p - step, m_new, v_new

    new_w, new_mw, new_vw = [], [], []
    for p, g, m, v in zip(params.weights, grads.weights, state.m_weights, state.v_weights):
        a, b, c = upd(p, g, m, v)
        new_w.append(a); new_mw.append(b); new_vw.append(c)
    new_b, new_mb, new_vb = [], [], []
    for p, g, m, v in zip(params.biases, grads.biases, state.m_biases, state.v_biases):
        a, b, c = upd(p, g, m, v)
        new_b.append(a); new_mb.append(b); new_vb.append(c)

    new_params = NetworkParams(params.widths, tuple(new_w), tuple(new_b), params.metadata)
    new_state = AdamState(tuple(new_mw), tuple(new_mb), tuple(new_vw), tuple(new_vb),
                          t, state.lr, state.beta1, state.beta2, state.eps)
    return new_params, new_state


def network_to_json(params: NetworkParams) -> dict:
    """Versioned JSON-serializable dict; weights stored row-major per layer."""
    return {
        "format": _FORMAT,
        "version": _VERSION,
        "widths": list(params.widths),
        "weights": [W.ravel().tolist() for W in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "metadata": dict(params.metadata),
    }


def network_from_json(obj: dict) -> NetworkParams:
    if obj.get("format") != _FORMAT:
        raise ValueError(f"not a serialized network: format={obj.get('format')!r}")
    if obj.get("version") != _VERSION:
        raise ValueError(f"unsupported network version {obj.get('version')!r}")
    widths = tuple(int(w) for w in obj["widths"])
    weights = tuple(
        np.asarray(flat, dtype=float).reshape(widths[i + 1], widths[i])
        for i, flat in enumerate(obj["weights"])
    )
    biases = tuple(np.asarray(b, dtype=float) for b in obj["biases"])
    return NetworkParams(widths, weights, biases, dict(obj.get("metadata", {})))


def save_network(params: NetworkParams, path: str) -> None:
    atomic_write_text(path, json.dumps(network_to_json(params)))


def load_network(path: str) -> NetworkParams:
    with open(path, encoding="utf-8") as fh:
        return network_from_json(json.load(fh))
