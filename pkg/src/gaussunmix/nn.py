"""Small dense-network engine with hand-written backpropagation.

Matrices are column-per-sample (``features x batch``), matching the ``B x N``
pixel matrices used everywhere else. All arithmetic is float64.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

EPS = 1e-7
LEAKY_SLOPE = 0.01

ACTIVATIONS = ("relu", "leaky_relu", "softmax", "relu_eps", "linear")


class NumericalError(RuntimeError):
    """NaN or Inf produced during training."""


# ---------------------------------------------------------------- activations

def softmax(z: np.ndarray) -> np.ndarray:
    """Column-wise softmax with max-subtraction."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def _activate(tag: str, z: np.ndarray) -> np.ndarray:
    if tag == "linear":
        return z
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if tag == "relu_eps":
        return np.maximum(z, EPS)
    if tag == "softmax":
        return softmax(z)
    raise ValueError(f"unknown activation {tag!r}")


def _activation_backward(tag: str, z: np.ndarray, a: np.ndarray, da: np.ndarray) -> np.ndarray:
    if tag == "linear":
        return da
    if tag == "relu":
        return da * (z > 0)
    if tag == "leaky_relu":
        return da * np.where(z > 0, 1.0, LEAKY_SLOPE)
    if tag == "relu_eps":
        return da * (z > EPS)
    if tag == "softmax":
        return a * (da - np.sum(a * da, axis=0, keepdims=True))
    raise ValueError(f"unknown activation {tag!r}")


# ---------------------------------------------------------------- network

@dataclass
class DenseLayer:
    weights: np.ndarray  # out x in
    bias: np.ndarray | None
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
            if self.bias.shape[0] != self.weights.shape[0]:
                raise ValueError("bias length must equal layer output size")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.weights] if self.bias is None else [self.weights, self.bias]


def glorot_layer(rng: np.random.Generator, in_dim: int, out_dim: int,
                 bias: bool, activation: str) -> DenseLayer:
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    W = rng.uniform(-limit, limit, size=(out_dim, in_dim))
    return DenseLayer(W, np.zeros(out_dim) if bias else None, activation)


@dataclass
class Cache:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)


class DenseNetwork:
    """Ordered stack of dense layers."""

    def __init__(self, layers: list[DenseLayer]):
        if not layers:
            raise ValueError("network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(f"layer size mismatch: {prev.out_dim} -> {nxt.in_dim}")
        self.layers = layers

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dims(self) -> list[int]:
        return [self.in_dim] + [layer.out_dim for layer in self.layers]

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def copy(self) -> "DenseNetwork":
        return DenseNetwork([
            DenseLayer(l.weights.copy(), None if l.bias is None else l.bias.copy(), l.activation)
            for l in self.layers
        ])

    def forward(self, X: np.ndarray, keep_cache: bool = True):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != self.in_dim:
            raise ValueError(f"input has shape {X.shape}, network expects {self.in_dim} rows")
        cache = Cache() if keep_cache else None
        a = X
        for layer in self.layers:
            z = layer.weights @ a
            if layer.bias is not None:
                z = z + layer.bias[:, None]
            out = _activate(layer.activation, z)
            if cache is not None:
                cache.inputs.append(a)
                cache.pre.append(z)
                cache.post.append(out)
            a = out
        return a, cache

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.forward(X, keep_cache=False)[0]

    def backward(self, cache: Cache, grad_out: np.ndarray, *, grad_is_preactivation: bool = False,
                 need_input_grad: bool = False):
        """Reverse-mode gradients for all parameters, in ``params()`` order.

        ``grad_is_preactivation`` means ``grad_out`` is already taken with respect
        to the last layer's pre-activation (used by the joint softmax/CE path).
        Returns ``(grads, dX)``; ``dX`` is None unless requested.
        """
        grads: list[list[np.ndarray]] = []
        delta = np.asarray(grad_out, dtype=np.float64)
        dX = None
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if not (grad_is_preactivation and i == len(self.layers) - 1):
                delta = _activation_backward(layer.activation, cache.pre[i], cache.post[i], delta)
            layer_grads = [delta @ cache.inputs[i].T]
            if layer.bias is not None:
                layer_grads.append(delta.sum(axis=1))
            grads.append(layer_grads)
            if i > 0 or need_input_grad:
                delta = layer.weights.T @ delta
            if i == 0 and need_input_grad:
                dX = delta
        flat = [g for layer_grads in reversed(grads) for g in layer_grads]
        return flat, dX


def forward(net: DenseNetwork, X: np.ndarray):
    return net.forward(X)


def backward(net: DenseNetwork, cache: Cache, grad_out: np.ndarray):
    return net.backward(cache, grad_out)[0]


# ---------------------------------------------------------------- losses
# Each *_grad returns (loss, d loss / d prediction) for a batch of N columns.

def loss_smooth(Y: np.ndarray, Yhat: np.ndarray) -> float:
    N = Y.shape[1]
    return float(np.sum((Y - Yhat) ** 2) / N)


def loss_smooth_grad(Y, Yhat):
    N = Y.shape[1]
    diff = Yhat - Y
    return float(np.sum(diff ** 2) / N), 2.0 * diff / N


def loss_mse(Y: np.ndarray, Yhathat: np.ndarray) -> float:
    B, N = Y.shape
    return float(np.sum((Y - Yhathat) ** 2) / (N * B))


def loss_mse_grad(Y, Yhathat):
    B, N = Y.shape
    diff = Yhathat - Y
    return float(np.sum(diff ** 2) / (N * B)), 2.0 * diff / (N * B)


def loss_ce(L: np.ndarray, Lhat: np.ndarray) -> float:
    """Binary cross-entropy summed over classes, averaged over pixels."""
    N = L.shape[1]
    p = np.clip(Lhat, EPS, 1.0 - EPS)
    return float(-np.sum(L * np.log(p) + (1.0 - L) * np.log(1.0 - p)) / N)


def loss_ce_grad(L, Lhat):
    N = L.shape[1]
    p = np.clip(Lhat, EPS, 1.0 - EPS)
    inside = (Lhat > EPS) & (Lhat < 1.0 - EPS)
    g = np.where(inside, (p - L) / (p * (1.0 - p)), 0.0) / N
    return loss_ce(L, Lhat), g


def softmax_ce_logit_grad(L: np.ndarray, Lhat: np.ndarray) -> np.ndarray:
    """Gradient of ``loss_ce(L, softmax(z))`` with respect to the logits ``z``.

    Written without dividing by ``Lhat`` so tiny probabilities stay finite:
    ``Lhat_k * dloss/dLhat_k = Lhat_k(1-L_k)/(1-Lhat_k) - L_k``.
    """
    N = L.shape[1]
    p = np.clip(Lhat, EPS, 1.0 - EPS)
    inside = (Lhat > EPS) & (Lhat < 1.0 - EPS)
    t = np.where(inside, Lhat * (1.0 - L) / (1.0 - p) - L, 0.0)
    return (t - Lhat * t.sum(axis=0, keepdims=True)) / N


def _as_distributions(X: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sum(np.abs(X), axis=0, keepdims=True)
    if np.any(norms <= 0):
        j = int(np.argmin(norms))
        raise ValueError(f"{what}: column {j} has zero 1-norm")
    return X / norms, norms


def loss_psid(Yhat: np.ndarray, Yhathat: np.ndarray) -> float:
    """Symmetric KL between 1-norm normalised spectra, summed over bands, mean over pixels."""
    q, _ = _as_distributions(Yhat, "reference")
    r, _ = _as_distributions(Yhathat, "reconstruction")
    q = np.maximum(q, EPS)
    r = np.maximum(r, EPS)
    return float(np.sum((q - r) * (np.log(q) - np.log(r))) / Yhat.shape[1])


def loss_psid_grad(Yhat, Yhathat):
    """Loss and gradient with respect to the reconstruction ``Yhathat``."""
    N = Yhat.shape[1]
    q, _ = _as_distributions(Yhat, "reference")
    r, s = _as_distributions(Yhathat, "reconstruction")
    qc = np.maximum(q, EPS)
    rc = np.maximum(r, EPS)
    loss = float(np.sum((qc - rc) * (np.log(qc) - np.log(rc))) / N)
    # d/dr of (q - r)(log q - log r) for unclamped r
    g_r = np.where(r > EPS, np.log(rc) - np.log(qc) + 1.0 - qc / rc, 0.0) / N
    g_x = (g_r - np.sum(g_r * r, axis=0, keepdims=True)) / s
    return loss, g_x


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
    """In-place Adam update of ``params`` with bias-corrected moments."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


# ---------------------------------------------------------------- gradient check

def numerical_gradients(loss_fn: Callable[[], float], params: list[np.ndarray],
                        h: float = 1e-4) -> list[np.ndarray]:
    """Central finite differences of ``loss_fn`` w.r.t. each entry of ``params`` (in place)."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            up = loss_fn()
            p[idx] = orig - h
            down = loss_fn()
            p[idx] = orig
            g[idx] = (up - down) / (2.0 * h)
        out.append(g)
    return out


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> np.ndarray:
    """Entry-wise ``|a - n| / max(|a|, |n|)``; pairs both below ``floor`` count as 0."""
    a, n = np.abs(analytic), np.abs(numeric)
    scale = np.maximum(a, n)
    err = np.abs(analytic - numeric)
    return np.where(scale < floor, 0.0, err / np.where(scale < floor, 1.0, scale))


# ---------------------------------------------------------------- checkpoints

def save_network(net: DenseNetwork, stem, adam: AdamState | None = None) -> None:
    """Write ``<stem>.json`` manifest and ``<stem>.bin`` little-endian float64 payload."""
    stem = Path(stem)
    adam = adam or AdamState()
    manifest = {
        "layers": [
            {"in_dim": l.in_dim, "out_dim": l.out_dim, "bias": l.bias is not None,
             "activation": l.activation}
            for l in net.layers
        ],
        "adam": {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
                 "epsilon": adam.epsilon, "step": adam.step},
        "dtype": "<f8",
    }
    stem.with_suffix(".json").write_text(json.dumps(manifest, indent=2) + "\n")
    payload = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in net.params())
    stem.with_suffix(".bin").write_bytes(payload)


def load_network(stem) -> tuple[DenseNetwork, AdamState]:
    stem = Path(stem)
    manifest = json.loads(stem.with_suffix(".json").read_text())
    flat = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
    layers, pos = [], 0
    for spec in manifest["layers"]:
        n_w = spec["out_dim"] * spec["in_dim"]
        W = flat[pos:pos + n_w].reshape(spec["out_dim"], spec["in_dim"]).copy()
        pos += n_w
        b = None
        if spec["bias"]:
            b = flat[pos:pos + spec["out_dim"]].copy()
            pos += spec["out_dim"]
        layers.append(DenseLayer(W, b, spec["activation"]))
    if pos != flat.size:
        raise ValueError(f"{stem}: payload has {flat.size} values, manifest implies {pos}")
    a = manifest.get("adam", {})
    adam = AdamState(lr=a.get("lr", 1e-3), beta1=a.get("beta1", 0.9), beta2=a.get("beta2", 0.999),
                     epsilon=a.get("epsilon", 1e-7), step=a.get("step", 0))
    return DenseNetwork(layers), adam
