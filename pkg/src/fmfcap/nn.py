"""Small numpy MLPs with manual backprop and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def as_float(x):
    """Float array keeping an existing float dtype (e.g. longdouble for checks)."""
    x = np.asarray(x)
    return x if x.dtype.kind == "f" else x.astype(float)


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


@dataclass
class MlpModel:
    """Biased fully connected net, ReLU on hidden layers.

    ``head`` is ``"linear"`` (pre-coders) or ``"softmax"`` (detectors).
    Weights are stored ``(fan_in, fan_out)`` so a batch is ``x @ W + b``.
    """

    layer_dims: tuple
    weights: list
    biases: list
    head: str = "linear"

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("one weight matrix and bias per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[i], self.layer_dims[i + 1]) or b.shape != (self.layer_dims[i + 1],):
                raise ValueError(f"layer {i} has shape {w.shape}/{b.shape}, expected dims {self.layer_dims}")
        if self.head not in ("linear", "softmax"):
            raise ValueError(f"unknown head {self.head!r}")

    @classmethod
    def init(cls, layer_dims, rng, head="linear"):
        """He-uniform weights, zero biases."""
        ws, bs = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            lim = np.sqrt(6.0 / fan_in)
            ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
        return cls(tuple(layer_dims), ws, bs, head)

    @classmethod
    def zeros(cls, layer_dims, head="linear"):
        return cls(
            tuple(layer_dims),
            [np.zeros((a, b)) for a, b in zip(layer_dims[:-1], layer_dims[1:])],
            [np.zeros(b) for b in layer_dims[1:]],
            head,
        )

    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self, dtype=None) -> "MlpModel":
        return MlpModel(self.layer_dims, [np.array(w, dtype=dtype) for w in self.weights],
                        [np.array(b, dtype=dtype) for b in self.biases], self.head)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())


def mlp_forward(model: MlpModel, x):
    """Returns ``(output, cache)``; output is softmax probabilities for a softmax head."""
    x = as_float(x)
    if x.shape[-1] != model.layer_dims[0]:
        raise ValueError(f"input width {x.shape[-1]} != {model.layer_dims[0]}")
    acts = [x]
    pre = []
    a = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        pre.append(z)
        a = z if i == last else np.maximum(z, 0.0)
        if i != last:
            acts.append(a)
    out = softmax(a) if model.head == "softmax" else a
    return out, {"acts": acts, "pre": pre, "out": out}


def mlp_backward(model: MlpModel, cache, grad_out, wrt: str = "output"):
    """Backprop a gradient through the net.

    ``grad_out`` is dL/d(output) (``wrt="output"``) or, for softmax heads,
    dL/d(logits) (``wrt="logits"``). Gradients are summed over batch rows.
    Returns ``(param_grads, grad_input)`` with ``param_grads`` ordered like
    :meth:`MlpModel.params`.
    """
    g = as_float(grad_out)
    if model.head == "softmax" and wrt == "output":
        p = cache["out"]
        g = p * (g - (p * g).sum(axis=-1, keepdims=True))
    grads = [None] * (2 * len(model.weights))
    for i in range(len(model.weights) - 1, -1, -1):
        a_in = cache["acts"][i]
        grads[2 * i] = a_in.T @ g if g.ndim == 2 else np.outer(a_in, g)
        grads[2 * i + 1] = g.sum(axis=0) if g.ndim == 2 else g.copy()
        g = g @ model.weights[i].T
        if i > 0:
            g = g * (cache["pre"][i - 1] > 0)
    return grads, g


@dataclass
class AdamState:
    params: list
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p) for p in self.params]
            self.v = [np.zeros_like(p) for p in self.params]


def adam_step(state: AdamState, grads) -> list:
    """In-place Adam update of ``state.params`` with bias correction."""
    if len(grads) != len(state.params):
        raise ValueError("gradient list does not match parameters")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(state.params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state.params


def save_model(model: MlpModel, path) -> None:
    """Text checkpoint: header line, dims line, then one row-major line per tensor."""
    with open(path, "w") as f:
        f.write(f"# fmfcap-mlp v1 head={model.head}\n")
        f.write(" ".join(str(d) for d in model.layer_dims) + "\n")
        for p in model.params():
            f.write(" ".join(repr(float(v)) for v in p.ravel()) + "\n")


def load_model(path) -> MlpModel:
    with open(path) as f:
        header = f.readline().split()
        if header[:2] != ["#", "fmfcap-mlp"]:
            raise ValueError(f"{path}: not an MLP checkpoint")
        head = dict(kv.split("=") for kv in header[3:]).get("head", "linear")
        dims = [int(d) for d in f.readline().split()]
        lines = f.read().splitlines()
    ws, bs = [], []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        ws.append(np.array(lines[2 * i].split(), dtype=float).reshape(a, b))
        bs.append(np.array(lines[2 * i + 1].split(), dtype=float).reshape(b))
    return MlpModel(tuple(dims), ws, bs, head)
