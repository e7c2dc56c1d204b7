"""Small float64 MLP with hand-written reverse mode, Adam and cosine annealing."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("relu", "siren", "hosc")


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}; step rejected")
        self.name = name


@dataclass
class MlpNet:
    """Scalar-output MLP. ``weights[l]`` has shape (fan_out, fan_in); the
    last layer is affine with no activation."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "siren"
    omega0: float = 30.0
    beta: float = 8.0
    dropout: float = 0.0
    seed: int | None = None
    # frequency of hidden sine layers; None means omega0 everywhere
    hidden_omega0: float | None = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {l}: weight/bias mismatch")
            if l and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"layer {l}: expects {w.shape[1]} inputs, previous layer gives "
                                 f"{self.weights[l - 1].shape[0]}")
        if self.weights[-1].shape[0] != 1:
            raise ValueError("output layer must have a single unit")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def depth(self) -> int:
        """Number of hidden layers."""
        return len(self.weights) - 1

    @property
    def dims(self) -> list[int]:
        return [self.input_dim] + [w.shape[0] for w in self.weights]

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{l}"] = w
            out[f"b{l}"] = b
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params().values())

    def copy(self) -> "MlpNet":
        return MlpNet([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                      self.activation, self.omega0, self.beta, self.dropout, self.seed, self.hidden_omega0)

    def layer_omega(self, l: int) -> float:
        if l == 0 or self.hidden_omega0 is None:
            return self.omega0
        return self.hidden_omega0


# Output-layer damping for periodic nets. 1 gives output std ~0.5, which
# swamps [0, 1] targets; omega0 (plain SIREN) gives ~0.015.
OUTPUT_INIT_DIV = 3.0


def init_net(dims, activation: str = "siren", seed: int = 0, *, omega0: float = 30.0,
             beta: float = 8.0, dropout: float = 0.0, hidden_omega0: float | None = None) -> MlpNet:
    """``dims`` = [input, hidden..., 1].

    SIREN and HOSC: first layer U(-1/fan_in, 1/fan_in), later sine layers
    U(-sqrt(6/fan_in)/omega0, +...), biases on the same bound. The 1/omega0
    factor cancels the omega0 inside the next sine, so the linear output
    layer, which has no sine, uses U(-sqrt(6/fan_in)/OUTPUT_INIT_DIV, +...):
    initial outputs have std ~0.15 on targets scaled to [0, 1]. ReLU: He-uniform weights, zero
    biases. HOSC needs the periodic scheme because its per-layer gain is
    beta*omega0; He-uniform makes it chaotic.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1 or dims[-1] != 1:
        raise ValueError(f"invalid layer dims {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for l, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        if activation in ("siren", "hosc"):
            w_hidden = omega0 if hidden_omega0 is None else hidden_omega0
            if l == 0:
                bound = 1.0 / fan_in
            elif l == len(dims) - 2:
                bound = math.sqrt(6.0 / fan_in) / OUTPUT_INIT_DIV
            else:
                bound = math.sqrt(6.0 / fan_in) / w_hidden
            w = rng.uniform(-bound, bound, (fan_out, fan_in))
            b = rng.uniform(-bound, bound, fan_out)
        else:
            bound = math.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, (fan_out, fan_in))
            b = np.zeros(fan_out)
        weights.append(w)
        biases.append(b)
    return MlpNet(weights, biases, activation, omega0, beta, dropout, seed, hidden_omega0)


def _act(net: MlpNet, z: np.ndarray, l: int) -> np.ndarray:
    if net.activation == "relu":
        return np.maximum(z, 0.0)
    w0 = net.layer_omega(l)
    if net.activation == "siren":
        return np.sin(w0 * z)
    return np.tanh(net.beta * np.sin(w0 * z))


def _act_grad(net: MlpNet, z: np.ndarray, l: int) -> np.ndarray:
    if net.activation == "relu":
        return (z > 0).astype(np.float64)
    w0 = net.layer_omega(l)
    if net.activation == "siren":
        return w0 * np.cos(w0 * z)
    t = np.tanh(net.beta * np.sin(w0 * z))
    return (1.0 - t * t) * net.beta * w0 * np.cos(w0 * z)


@dataclass
class Cache:
    inputs: list[np.ndarray] = field(default_factory=list)
    preacts: list[np.ndarray] = field(default_factory=list)
    drops: list[np.ndarray | None] = field(default_factory=list)
    n_layers: int = 0


def forward_batch(net: MlpNet, x: np.ndarray, train: bool = False,
                  rng: np.random.Generator | None = None) -> tuple[np.ndarray, Cache]:
    """Evaluate the net on a (B, input_dim) batch; returns (B,) outputs."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"expected input of width {net.input_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite network input")
    use_dropout = train and net.dropout > 0.0
    if use_dropout and rng is None:
        raise ValueError("train-mode dropout needs an rng")
    cache = Cache(n_layers=len(net.weights))
    a = x
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        cache.inputs.append(a)
        z = a @ w.T + b
        if l == len(net.weights) - 1:
            cache.preacts.append(z)
            return z[:, 0], cache
        cache.preacts.append(z)
        a = _act(net, z, l)
        if use_dropout:
            keep = rng.random(a.shape) >= net.dropout
            d = keep / (1.0 - net.dropout)
            a = a * d
            cache.drops.append(d)
        else:
            cache.drops.append(None)
    raise AssertionError("unreachable")


def backward_batch(net: MlpNet, cache: Cache, dout: np.ndarray,
                   need_input_grad: bool = True) -> tuple[dict[str, np.ndarray], np.ndarray | None]:
    """Reverse pass. Parameter gradients are summed over the batch; the input
    gradient is per-sample, shape (B, input_dim)."""
    if cache.n_layers != len(net.weights):
        raise ValueError("cache does not belong to this network")
    dout = np.asarray(dout, dtype=np.float64).reshape(-1)
    if dout.shape[0] != cache.inputs[0].shape[0]:
        raise ValueError("output gradient does not match cached batch")
    grads: dict[str, np.ndarray] = {}
    dz = dout[:, None]
    for l in range(len(net.weights) - 1, -1, -1):
        a_in = cache.inputs[l]
        grads[f"W{l}"] = dz.T @ a_in
        grads[f"b{l}"] = dz.sum(axis=0)
        if l == 0 and not need_input_grad:
            return grads, None
        da = dz @ net.weights[l]
        if l == 0:
            return grads, da
        if cache.drops[l - 1] is not None:
            da = da * cache.drops[l - 1]
        dz = da * _act_grad(net, cache.preacts[l - 1], l - 1)
    raise AssertionError("unreachable")


def forward(net: MlpNet, x: np.ndarray, train: bool = False,
            rng: np.random.Generator | None = None) -> tuple[float, Cache]:
    y, cache = forward_batch(net, np.asarray(x, dtype=np.float64)[None, :], train, rng)
    return float(y[0]), cache


def backward(net: MlpNet, cache: Cache, output_gradient: float = 1.0):
    grads, dx = backward_batch(net, cache, np.array([output_gradient]))
    return grads, dx[0]


def predict(net: MlpNet, x: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """Inference-mode outputs for many inputs, evaluated in chunks."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(x.shape[0])
    for s in range(0, x.shape[0], chunk):
        out[s:s + chunk] = forward_batch(net, x[s:s + chunk])[0]
    return out


def cosine_lr(t: int, lr_base: float, t_max: int | None, eta_min: float = 0.0) -> float:
    if not t_max:
        return lr_base
    t = min(max(t, 0), t_max)
    return eta_min + 0.5 * (lr_base - eta_min) * (1.0 + math.cos(math.pi * t / t_max))


@dataclass
class OptimizerState:
    lr: float = 1e-3
    t_max: int | None = None
    eta_min: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    epoch: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def current_lr(self) -> float:
        return cosine_lr(self.epoch, self.lr, self.t_max, self.eta_min)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: OptimizerState) -> dict[str, np.ndarray]:
    """One Adam update, in place. Parameters without a gradient entry are
    treated as having zero gradient."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
    state.step += 1
    lr = state.current_lr
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        v *= b2
        if g is not None:
            m += (1.0 - b1) * g
            v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def net_to_dict(net: MlpNet) -> dict:
    return {
        "dims": net.dims,
        "activation": net.activation,
        "omega0": net.omega0,
        "beta": net.beta,
        "dropout": net.dropout,
        "hidden_omega0": net.hidden_omega0,
        "seed": net.seed,
        "weights": [w.ravel().tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def net_from_dict(d: dict) -> MlpNet:
    dims = d["dims"]
    weights = [np.array(w, dtype=np.float64).reshape(o, i)
               for w, i, o in zip(d["weights"], dims[:-1], dims[1:])]
    biases = [np.array(b, dtype=np.float64) for b in d["biases"]]
    return MlpNet(weights, biases, d["activation"], d["omega0"], d["beta"], d["dropout"], d.get("seed"),
                  d.get("hidden_omega0"))


def save_net(net: MlpNet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"format": "mlpnet-v1", **net_to_dict(net)}, fh)


def load_net(path: str | Path) -> MlpNet:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if d.get("format") != "mlpnet-v1":
        raise ValueError(f"unsupported network file format {d.get('format')!r}")
    return net_from_dict(d)
