"""Minimal fully-connected network with reverse-mode gradients.

The substrate for both policies and value functions: Xavier-uniform init with
a per-layer gain, batched forward with a gradient tape, exact reverse-mode
backward, and JSON checkpoints.  Double precision throughout so gradient
tests against finite differences can be tight.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_SCHEMA_VERSION = 1

_ACTIVATIONS = ("tanh", "identity")


@dataclass
class MlpParams:
    """Per-layer weights/biases plus an optional action log-std vector."""

    weights: list  # list of (fan_out, fan_in) arrays
    biases: list  # list of (fan_out,) arrays
    activations: list  # per-layer tag: "tanh" | "identity"
    log_std: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or \
                len(self.weights) != len(self.activations):
            raise ValueError("weights/biases/activations must align per layer")
        if not self.weights:
            raise ValueError("need at least one layer")
        for i, (W, b, act) in enumerate(zip(self.weights, self.biases,
                                            self.activations)):
            if act not in _ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {act!r}")
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {i}: weight/bias shape mismatch")
            if i > 0 and W.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: fan_in {W.shape[1]} does not "
                                 f"chain from previous fan_out "
                                 f"{self.weights[i - 1].shape[0]}")
        for a in self.weights + self.biases:
            if not np.all(np.isfinite(a)):
                raise ValueError("non-finite parameters")
        if self.log_std is not None:
            self.log_std = np.asarray(self.log_std, dtype=np.float64)
            if self.log_std.shape != (self.out_dim,):
                raise ValueError("log_std length must equal the output width")

    @property
    def sizes(self) -> list:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpParams":
        return MlpParams([W.copy() for W in self.weights],
                         [b.copy() for b in self.biases],
                         list(self.activations),
                         None if self.log_std is None else self.log_std.copy(),
                         dict(self.meta))


@dataclass
class MlpGrads:
    """Gradient arrays mirroring MlpParams (log_std gradient handled by the
    loss code, since log_std does not enter the network forward pass)."""

    weights: list
    biases: list


def init_mlp(sizes, final_layer_gain: float = 1.0, seed: int = 0,
             log_std_init: float = None) -> MlpParams:
    """Xavier-uniform parameters: gain 1 everywhere except the final layer.

    bound = gain * sqrt(6 / (fan_in + fan_out)); biases zero; hidden layers
    tanh, output layer identity.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    if any(s < 1 for s in sizes):
        raise ValueError("layer sizes must be >= 1")
    if final_layer_gain <= 0:
        raise ValueError("final_layer_gain must be > 0")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    weights, biases, acts = [], [], []
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        last = i == len(sizes) - 2
        gain = final_layer_gain if last else 1.0
        bound = gain * np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
        acts.append("identity" if last else "tanh")
    log_std = None if log_std_init is None else np.full(sizes[-1],
                                                        float(log_std_init))
    return MlpParams(weights, biases, acts, log_std)


@dataclass
class GradientTape:
    """Primal intermediates from one batched forward pass.

    `inputs[i]` is the input to layer i; `outputs[i]` its post-activation
    output.  A tape is single-use: backward consumes it.
    """

    params: MlpParams
    inputs: list
    outputs: list
    consumed: bool = False


def forward(params: MlpParams, x) -> np.ndarray:
    """Pure forward pass for a single observation vector."""
    return forward_batch(params, np.asarray(x, dtype=np.float64)[None, :])[0][0]


def forward_batch(params: MlpParams, X):
    """Batched forward pass; returns (outputs (B, out_dim), GradientTape)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.in_dim:
        raise ValueError(f"expected input shape (B, {params.in_dim}), "
                         f"got {X.shape}")
    inputs, outputs = [], []
    h = X
    for W, b, act in zip(params.weights, params.biases, params.activations):
        inputs.append(h)
        h = h @ W.T + b
        if act == "tanh":
            h = np.tanh(h)
        outputs.append(h)
    return h, GradientTape(params, inputs, outputs)


def backward(tape: GradientTape, d_out) -> tuple:
    """Reverse-mode gradients from upstream d(loss)/d(output).

    Returns (MlpGrads, d_input); the tape is consumed.
    """
    if tape.consumed:
        raise ValueError("gradient tape already consumed")
    tape.consumed = True
    d = np.asarray(d_out, dtype=np.float64)
    if d.shape != tape.outputs[-1].shape:
        raise ValueError(f"upstream gradient shape {d.shape} does not match "
                         f"output shape {tape.outputs[-1].shape}")
    params = tape.params
    gW = [None] * params.n_layers
    gb = [None] * params.n_layers
    for i in range(params.n_layers - 1, -1, -1):
        if params.activations[i] == "tanh":
            d = d * (1.0 - tape.outputs[i] ** 2)
        gW[i] = d.T @ tape.inputs[i]
        gb[i] = d.sum(axis=0)
        d = d @ params.weights[i]
    return MlpGrads(gW, gb), d


# ---------------------------------------------------------------------------
# flat-vector views (used by the optimizer and finite-difference oracles)

def flatten_params(params: MlpParams, include_log_std: bool = True) -> np.ndarray:
    parts = []
    for W, b in zip(params.weights, params.biases):
        parts += [W.ravel(), b]
    if include_log_std and params.log_std is not None:
        parts.append(params.log_std)
    return np.concatenate(parts)


def unflatten_params(params: MlpParams, flat,
                     include_log_std: bool = True) -> MlpParams:
    """New MlpParams with the same structure and values from `flat`."""
    flat = np.asarray(flat, dtype=np.float64)
    expect = flatten_params(params, include_log_std).size
    if flat.size != expect:
        raise ValueError(f"flat vector length {flat.size} != parameter "
                         f"count {expect}")
    out = params.copy()
    k = 0
    for i, (W, b) in enumerate(zip(out.weights, out.biases)):
        out.weights[i] = flat[k:k + W.size].reshape(W.shape).copy()
        k += W.size
        out.biases[i] = flat[k:k + b.size].copy()
        k += b.size
    if include_log_std and out.log_std is not None:
        out.log_std = flat[k:k + out.log_std.size].copy()
        k += out.log_std.size
    if k != flat.size:
        raise ValueError(f"flat vector length {flat.size} != parameter "
                         f"count {k}")
    return out


def flatten_grads(grads: MlpGrads, g_log_std=None) -> np.ndarray:
    parts = []
    for W, b in zip(grads.weights, grads.biases):
        parts += [W.ravel(), b]
    if g_log_std is not None:
        parts.append(np.asarray(g_log_std, dtype=np.float64))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# JSON checkpoints

def params_to_dict(params: MlpParams) -> dict:
    return {
        "version": CHECKPOINT_SCHEMA_VERSION,
        "sizes": params.sizes,
        "activations": list(params.activations),
        "weights": [W.tolist() for W in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "log_std": None if params.log_std is None else params.log_std.tolist(),
        "meta": params.meta,
    }


def params_from_dict(d: dict) -> MlpParams:
    allowed = {"version", "sizes", "activations", "weights", "biases",
               "log_std", "meta"}
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown checkpoint fields: {sorted(unknown)}")
    if d.get("version") != CHECKPOINT_SCHEMA_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
    try:
        weights = [np.asarray(W, dtype=np.float64) for W in d["weights"]]
        biases = [np.asarray(b, dtype=np.float64) for b in d["biases"]]
    except (TypeError, ValueError) as e:
        raise ValueError(f"corrupt numeric field in checkpoint: {e}")
    params = MlpParams(weights, biases, list(d["activations"]),
                       None if d.get("log_std") is None
                       else np.asarray(d["log_std"], dtype=np.float64),
                       dict(d.get("meta", {})))
    if params.sizes != [int(s) for s in d["sizes"]]:
        raise ValueError(f"checkpoint sizes field {d['sizes']} does not match "
                         f"stored arrays {params.sizes}")
    return params


def save_params(params: MlpParams, path):
    with open(path, "w") as f:
        json.dump(params_to_dict(params), f)


def load_params(path, expect_sizes=None) -> MlpParams:
    with open(path) as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"corrupt checkpoint file at offset {e.pos}: "
                             f"{e.msg}")
    params = params_from_dict(d)
    if expect_sizes is not None and params.sizes != list(expect_sizes):
        raise ValueError(f"checkpoint architecture {params.sizes} does not "
                         f"match expected {list(expect_sizes)}")
    return params
