"""Feedforward regression network written against numpy only.

Hidden layers use tanh, the output layer is linear, and inverted dropout acts
on the last hidden layer during training. Loss is the plain sum of squared
errors and gradients come from a hand-written backward pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass
class ModelParams:
    """Weights ``A_l`` (shape out x in) and biases ``b_l`` for every layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout_rate: float = 0.0

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for l, (A, b) in enumerate(zip(self.weights, self.biases)):
            if A.ndim != 2 or b.shape != (A.shape[0],):
                raise ValueError(f"layer {l}: bias shape {b.shape} does not fit weight {A.shape}")
            if l and A.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"layer {l}: input width {A.shape[1]} != previous output "
                                 f"{self.weights[l - 1].shape[0]}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [A.shape[0] for A in self.weights]

    @property
    def dropout_layer_index(self) -> int:
        """Index of the activation the dropout mask multiplies (the last hidden layer)."""
        return len(self.weights) - 1

    @property
    def size(self) -> int:
        return int(sum(A.size + b.size for A, b in zip(self.weights, self.biases)))

    def flatten(self) -> np.ndarray:
        """Layer order, weights (row-major) then bias for each layer."""
        return np.concatenate([np.concatenate([A.ravel(), b]) for A, b in zip(self.weights, self.biases)])

    def with_flat(self, flat: np.ndarray) -> ModelParams:
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.size:
            raise ValueError(f"expected {self.size} values, got {flat.size}")
        weights, biases, k = [], [], 0
        for A, b in zip(self.weights, self.biases):
            weights.append(flat[k:k + A.size].reshape(A.shape).copy())
            k += A.size
            biases.append(flat[k:k + b.size].copy())
            k += b.size
        return ModelParams(weights, biases, self.dropout_rate)

    def copy(self) -> ModelParams:
        return self.with_flat(self.flatten())

    def to_dict(self) -> dict:
        return {"layer_sizes": self.layer_sizes, "dropout_rate": self.dropout_rate,
                "layers": [{"A": A.tolist(), "b": b.tolist()}
                           for A, b in zip(self.weights, self.biases)]}

    @classmethod
    def from_dict(cls, data: dict) -> ModelParams:
        return cls([np.array(l["A"], dtype=float) for l in data["layers"]],
                   [np.array(l["b"], dtype=float) for l in data["layers"]],
                   float(data["dropout_rate"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> ModelParams:
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_params(layer_sizes: Sequence[int], dropout_rate: float = 0.0,
                seed: int = 0) -> ModelParams:
    """Uniform initialization in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    if len(layer_sizes) < 2 or layer_sizes[-1] != 1:
        raise ValueError("layer_sizes must run from the input width down to one output")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return ModelParams(weights, biases, dropout_rate)


def dropout_mask(params: ModelParams, n_rows: int, seed: int) -> np.ndarray | None:
    """Inverted-dropout mask for the last hidden layer, or None without dropout."""
    if params.dropout_rate == 0.0 or len(params.weights) < 2:
        return None
    width = params.weights[-2].shape[0]
    keep = np.random.default_rng(seed).random((n_rows, width)) >= params.dropout_rate
    return keep / (1.0 - params.dropout_rate)


def _check_input(params: ModelParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.weights[0].shape[1]:
        raise ValueError(f"input shape {X.shape} does not match width {params.weights[0].shape[1]}")
    return X


def _forward(params: ModelParams, X: np.ndarray, mask: np.ndarray | None):
    acts = [X]
    h = X
    last = len(params.weights) - 1
    for l, (A, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ A.T + b
        if l == last:
            return acts, z[:, 0]
        h = np.tanh(z)
        if l == last - 1 and mask is not None:
            h = h * mask
        acts.append(h)
    raise AssertionError("unreachable")


def forward(params: ModelParams, X: np.ndarray, training: bool = False,
            rng_seed: int = 0) -> np.ndarray:
    """Predictions, one per row; dropout only when ``training``."""
    X = _check_input(params, X)
    mask = dropout_mask(params, X.shape[0], rng_seed) if training else None
    return _forward(params, X, mask)[1]


def _check_labels(X: np.ndarray, y) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"{X.shape[0]} rows but {y.shape[0]} labels")
    return y


def loss(params: ModelParams, X: np.ndarray, y) -> float:
    """Sum of squared errors with dropout off."""
    X = _check_input(params, X)
    r = forward(params, X) - _check_labels(X, y)
    return float(r @ r)


@dataclass
class GradientUpdate:
    """Gradient of one CS's local loss at one epoch, flattened like ``ModelParams``."""

    source_cs: str
    epoch: int
    grads: np.ndarray
    loss: float = float("nan")


def gradient(params: ModelParams, X: np.ndarray, y, training_mask_seed: int | None = None,
             source_cs: str = "", epoch: int = 0) -> GradientUpdate:
    """Analytic gradient of the sum of squared errors.

    With ``training_mask_seed`` set (and a positive dropout rate) the same mask
    as ``forward(..., training=True, rng_seed=seed)`` is applied. The reported
    loss is the one of that (possibly dropped-out) forward pass.
    """
    X = _check_input(params, X)
    y = _check_labels(X, y)
    mask = None if training_mask_seed is None else dropout_mask(params, X.shape[0], training_mask_seed)
    acts, out = _forward(params, X, mask)
    resid = out - y
    delta = (2.0 * resid)[:, None]
    grads_w: list[np.ndarray] = []
    grads_b: list[np.ndarray] = []
    last = len(params.weights) - 1
    for l in range(last, -1, -1):
        h_in = acts[l]
        grads_w.append(delta.T @ h_in)
        grads_b.append(delta.sum(axis=0))
        if l == 0:
            break
        back = delta @ params.weights[l]
        if l == last and mask is not None:
            # acts[l] already carries the mask; recover tanh for the derivative
            back = back * mask
            t = np.divide(h_in, mask, out=np.zeros_like(h_in), where=mask != 0)
        else:
            t = h_in
        delta = back * (1.0 - t * t)
    flat = np.concatenate([np.concatenate([gw.ravel(), gb])
                           for gw, gb in zip(reversed(grads_w), reversed(grads_b))])
    return GradientUpdate(source_cs, epoch, flat, float(resid @ resid))


@dataclass
class AdamState:
    """Adam moments over the flattened parameters."""

    eta: np.ndarray
    delta: np.ndarray
    gamma_eta: float = 0.9
    gamma_delta: float = 0.999
    lam: float = 0.01
    epsilon: float = 1e-8
    tau: int = 0

    def __post_init__(self):
        if self.eta.shape != self.delta.shape:
            raise ValueError("moment shapes differ")
        if not (0 <= self.gamma_eta < 1 and 0 <= self.gamma_delta < 1):
            raise ValueError("decays must lie in [0, 1)")
        if self.epsilon <= 0 or self.tau < 0:
            raise ValueError("epsilon must be positive and tau nonnegative")

    @classmethod
    def zeros(cls, params: ModelParams, **kwargs) -> AdamState:
        return cls(np.zeros(params.size), np.zeros(params.size), **kwargs)


def adam_step(state: AdamState, params: ModelParams,
              grad: GradientUpdate | np.ndarray) -> tuple[AdamState, ModelParams]:
    """One bias-corrected Adam update; returns new objects and leaves inputs untouched."""
    g = grad.grads if isinstance(grad, GradientUpdate) else np.asarray(grad, dtype=float)
    if g.shape != state.eta.shape or g.size != params.size:
        raise ValueError("gradient shape does not match parameters")
    tau = state.tau + 1
    eta = state.gamma_eta * state.eta + (1.0 - state.gamma_eta) * g
    delta = state.gamma_delta * state.delta + (1.0 - state.gamma_delta) * g * g
    step = state.lam * np.sqrt(1.0 - state.gamma_delta ** tau) / (1.0 - state.gamma_eta ** tau)
    new_params = params.with_flat(params.flatten() - step * eta / (np.sqrt(delta) + state.epsilon))
    new_state = AdamState(eta, delta, state.gamma_eta, state.gamma_delta, state.lam,
                          state.epsilon, tau)
    return new_state, new_params
