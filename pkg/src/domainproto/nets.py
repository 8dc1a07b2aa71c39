"""Minimal dense-network substrate: forward/backward passes, gradient
reversal, one-vs-rest binary cross-entropy, and SGD.

This is deliberately not a general autodiff system. Networks are chains of
affine layers with a fixed activation menu; `forward` in train mode returns a
cache that `backward` consumes. Gradients accumulate into per-layer buffers
until `sgd_step` applies and clears them, so a layer can appear in several
loss terms per step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, StateError, ValidationError

ACTIVATIONS = ("identity", "relu", "leaky_relu", "sigmoid")

BCE_EPS = 1e-7


@dataclass(frozen=True)
class LayerSpec:
    """One affine layer: out = dropout(act(W x + b))."""

    in_dim: int
    out_dim: int
    activation: str = "identity"
    slope: float = 0.01  # used by leaky_relu only
    dropout_p: float = 0.0

    def __post_init__(self):
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ConfigError(f"layer dims must be positive, got {self.in_dim}x{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.activation == "leaky_relu" and self.slope <= 0:
            raise ConfigError("leaky_relu slope must be > 0")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")


def _act(z: np.ndarray, spec: LayerSpec) -> np.ndarray:
    if spec.activation == "identity":
        return z
    if spec.activation == "relu":
        return np.maximum(z, 0.0)
    if spec.activation == "leaky_relu":
        return np.where(z > 0, z, spec.slope * z)
    return 1.0 / (1.0 + np.exp(-z))  # sigmoid


def _act_grad(z: np.ndarray, a: np.ndarray, spec: LayerSpec) -> np.ndarray:
    """d act(z) / d z, reusing the forward output `a` where cheaper."""
    if spec.activation == "identity":
        return np.ones_like(z)
    if spec.activation == "relu":
        return (z > 0).astype(z.dtype)
    if spec.activation == "leaky_relu":
        return np.where(z > 0, 1.0, spec.slope)
    return a * (1.0 - a)  # sigmoid


class DenseNet:
    """A chain of LayerSpec layers with Glorot-uniform initialized weights.

    Weights: one (out_dim, in_dim) matrix and one (out_dim,) bias per layer.
    Gradient buffers mirror the parameters and accumulate across backward
    calls until cleared.
    """

    def __init__(self, specs: list[LayerSpec], rng: np.random.Generator):
        for prev, nxt in zip(specs, specs[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionError(
                    f"layer chain mismatch: {prev.out_dim} -> {nxt.in_dim}"
                )
        self.specs = list(specs)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for s in specs:
            bound = np.sqrt(6.0 / (s.in_dim + s.out_dim))
            self.weights.append(rng.uniform(-bound, bound, size=(s.out_dim, s.in_dim)))
            self.biases.append(np.zeros(s.out_dim))
        self.grad_w = [np.zeros_like(w) for w in self.weights]
        self.grad_b = [np.zeros_like(b) for b in self.biases]

    @property
    def in_dim(self) -> int:
        return self.specs[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.specs[-1].out_dim

    def forward(
        self,
        x: np.ndarray,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ):
        """Run the chain on a (batch, in_dim) array.

        Returns (output, cache); cache is None in eval mode and otherwise
        holds what `backward` needs. Train-mode dropout draws masks from
        `rng` (required if any layer has dropout_p > 0).
        """
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(
                f"expected input (*, {self.in_dim}), got {x.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise ValidationError("non-finite values in network input")

        a = x
        inputs, preacts, outputs, masks = [], [], [], []
        for spec, w, b in zip(self.specs, self.weights, self.biases):
            inputs.append(a)
            z = a @ w.T + b
            a = _act(z, spec)
            if train and spec.dropout_p > 0.0:
                if rng is None:
                    raise StateError("train-mode dropout requires an rng")
                keep = 1.0 - spec.dropout_p
                mask = (rng.random(a.shape) < keep) / keep
                a = a * mask
            else:
                mask = None
            preacts.append(z)
            outputs.append(a)
            masks.append(mask)
        cache = (inputs, preacts, outputs, masks) if train else None
        return a, cache

    def backward(self, cache, upstream: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients for one cached forward pass.

        `upstream` is dL/d(output); returns dL/d(input) for chaining.
        """
        if cache is None:
            raise StateError("backward requires a cache from a train-mode forward")
        inputs, preacts, outputs, masks = cache
        g = np.asarray(upstream, dtype=float)
        if g.shape != (inputs[0].shape[0], self.out_dim):
            raise DimensionError(
                f"upstream gradient shape {g.shape} does not match output "
                f"({inputs[0].shape[0]}, {self.out_dim})"
            )
        for i in range(len(self.specs) - 1, -1, -1):
            if masks[i] is not None:
                g = g * masks[i]
            a = outputs[i] if masks[i] is None else _act(preacts[i], self.specs[i])
            gz = g * _act_grad(preacts[i], a, self.specs[i])
            self.grad_w[i] += gz.T @ inputs[i]
            self.grad_b[i] += gz.sum(axis=0)
            g = gz @ self.weights[i]
        return g

    def zero_grads(self) -> None:
        for gw in self.grad_w:
            gw[:] = 0.0
        for gb in self.grad_b:
            gb[:] = 0.0

    def param_grad_pairs(self):
        """Yield (parameter, gradient) array pairs; arrays are updated in place."""
        for w, gw in zip(self.weights, self.grad_w):
            yield w, gw
        for b, gb in zip(self.biases, self.grad_b):
            yield b, gb

    def weight_arrays(self) -> list[np.ndarray]:
        """Weight matrices only (biases excluded), for norm regularization."""
        return list(self.weights)


def grl_forward(x: np.ndarray) -> np.ndarray:
    """Gradient reversal, forward side: the identity map."""
    return x


def grl_backward(upstream: np.ndarray, lam: float) -> np.ndarray:
    """Gradient reversal, backward side: multiply the gradient by -lam."""
    if lam <= 0:
        raise ConfigError(f"gradient reversal coefficient must be > 0, got {lam}")
    return -lam * upstream


def bce(probs: np.ndarray, targets: np.ndarray, eps: float = BCE_EPS):
    """One-vs-rest binary cross-entropy over a (batch, C) probability array.

    Averages over batch rows and the C independent binary terms.
    Probabilities are clamped to [eps, 1-eps]; the gradient is the exact
    derivative of the clamped loss (zero where the clamp is active).

    Returns (loss, dL/dprobs).
    """
    probs = np.asarray(probs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if probs.shape != targets.shape or probs.ndim != 2:
        raise DimensionError(
            f"probs {probs.shape} and one-hot targets {targets.shape} must both be (batch, C)"
        )
    p = np.clip(probs, eps, 1.0 - eps)
    loss = float(-(targets * np.log(p) + (1.0 - targets) * np.log(1.0 - p)).mean())
    grad = -(targets / p - (1.0 - targets) / (1.0 - p)) / probs.size
    grad[(probs < eps) | (probs > 1.0 - eps)] = 0.0
    return loss, grad


def sgd_step(param_grad_pairs, lr: float, weight_decay: float = 0.0) -> None:
    """p <- p - lr * (g + weight_decay * p) for every pair; gradients are zeroed.

    Accepts anything iterable of (param, grad) array pairs, e.g. chained
    `DenseNet.param_grad_pairs()` generators.
    """
    for p, g in param_grad_pairs:
        p -= lr * (g + weight_decay * p)
        g[:] = 0.0


def one_hot(labels: np.ndarray, n: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        raise ValidationError(f"labels outside [0, {n})")
    out = np.zeros((labels.shape[0], n))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out
