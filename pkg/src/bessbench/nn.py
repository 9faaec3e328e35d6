"""Minimal dense network kernel with reverse-mode gradients.

Networks are tanh MLPs with a linear or softmax head, stored as plain
numpy weight matrices.  ``forward`` records the intermediates needed for
one reverse pass; ``backward`` consumes the tape once and returns exact
gradients summed over the batch.  Softmax and log-softmax are log-sum-exp
stabilized.  All random initialization flows from an injected generator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import BessbenchError, NumericError, ValidationError

SCHEMA_TAG = "bessbench-mlp-v1"
_HEADS = ("linear", "softmax")


class Mlp:
    """Fully connected network: tanh hidden layers, linear or softmax head."""

    def __init__(self, widths: list[int], head: str = "linear", rng: np.random.Generator | None = None):
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ValidationError(f"widths must be >= 2 positive entries, got {widths}")
        if head not in _HEADS:
            raise ValidationError(f"head must be one of {_HEADS}, got {head!r}")
        self.widths = list(widths)
        self.head = head
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))  # Xavier uniform
                w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        """Weight and bias arrays in a fixed order (shared with Grads)."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_TAG,
            "widths": self.widths,
            "head": self.head,
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Mlp":
        if payload.get("schema") != SCHEMA_TAG:
            raise ValidationError(f"unknown checkpoint schema {payload.get('schema')!r}")
        net = cls(payload["widths"], head=payload["head"], rng=None)
        for i, (w, b) in enumerate(zip(payload["weights"], payload["biases"])):
            net.weights[i] = np.array(w).reshape(net.weights[i].shape)
            net.biases[i] = np.array(b)
        return net


@dataclass
class Tape:
    """Forward intermediates for one reverse pass; single use."""

    net: Mlp
    inputs: np.ndarray  # (n, d_in)
    hiddens: list[np.ndarray]  # post-tanh activations per hidden layer, (n, w)
    logits: np.ndarray  # (n, d_out), pre-head
    probs: np.ndarray | None  # softmax outputs, None for linear head
    squeeze: bool  # input was 1-D
    used: bool = False


@dataclass
class Grads:
    """Parameter gradients, shaped exactly like the network's parameters."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def as_list(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stabilized softmax; strictly positive, rows sum to 1."""
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def forward(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Run the network on a vector or a batch of rows.

    Returns (output, tape); the output is probabilities for a softmax head
    and raw values for a linear head.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.widths[0]:
        raise ValidationError(
            f"input shape {x.shape} incompatible with first width {net.widths[0]}"
        )
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite network input")

    h = x
    hiddens: list[np.ndarray] = []
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        h = np.tanh(h @ w + b)
        hiddens.append(h)
    logits = h @ net.weights[-1] + net.biases[-1]
    probs = softmax(logits) if net.head == "softmax" else None
    out = probs if probs is not None else logits
    tape = Tape(net=net, inputs=x, hiddens=hiddens, logits=logits, probs=probs, squeeze=squeeze)
    return (out[0] if squeeze else out), tape


def _check_grad_shape(tape: Tape, grad: np.ndarray) -> np.ndarray:
    grad = np.asarray(grad, dtype=np.float64)
    if tape.squeeze and grad.ndim == 1:
        grad = grad[None, :]
    if grad.shape != tape.logits.shape:
        raise ValidationError(
            f"gradient shape {grad.shape} != output shape {tape.logits.shape}"
        )
    return grad


def _backprop_layers(tape: Tape, dlogits: np.ndarray) -> Grads:
    if tape.used:
        raise BessbenchError("tape already consumed; rerun forward before backward")
    tape.used = True
    net = tape.net
    d_weights: list[np.ndarray] = [np.empty(0)] * net.n_layers
    d_biases: list[np.ndarray] = [np.empty(0)] * net.n_layers
    delta = dlogits
    for layer in range(net.n_layers - 1, -1, -1):
        below = tape.inputs if layer == 0 else tape.hiddens[layer - 1]
        d_weights[layer] = below.T @ delta
        d_biases[layer] = np.sum(delta, axis=0)
        if layer > 0:
            h = tape.hiddens[layer - 1]
            delta = (delta @ net.weights[layer].T) * (1.0 - h * h)  # tanh'
    return Grads(weights=d_weights, biases=d_biases)


def backward(tape: Tape, grad_out: np.ndarray) -> Grads:
    """Reverse pass: gradients of sum(loss over batch) given dLoss/dOutput.

    For a softmax head ``grad_out`` is the gradient w.r.t. the output
    probabilities; it is chained through the softmax Jacobian here.
    """
    grad_out = _check_grad_shape(tape, grad_out)
    if tape.probs is not None:
        p = tape.probs
        dlogits = p * (grad_out - np.sum(grad_out * p, axis=-1, keepdims=True))
    else:
        dlogits = grad_out
    return _backprop_layers(tape, dlogits)


def backward_from_logits(tape: Tape, grad_logits: np.ndarray) -> Grads:
    """Reverse pass for losses whose gradient is naturally in logit space
    (log-prob and entropy terms); skips the softmax Jacobian."""
    return _backprop_layers(tape, _check_grad_shape(tape, grad_logits))


class AdamState:
    """First/second moment accumulators for one network."""

    def __init__(self, net: Mlp, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in net.parameters()]
        self.v = [np.zeros_like(p) for p in net.parameters()]


def adam_step(net: Mlp, grads: Grads, state: AdamState, lr: float) -> Mlp:
    """In-place adaptive-moment update; raises on non-finite gradients."""
    glist = grads.as_list()
    for g in glist:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; update aborted")
    state.t += 1
    b1c = 1.0 - state.beta1**state.t
    b2c = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(net.parameters(), glist, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / b1c) / (np.sqrt(v / b2c) + state.eps)
    return net


def save_mlp(net: Mlp, path: str) -> None:
    """Checkpoint as schema-tagged JSON; floats round-trip bit-exactly."""
    with open(path, "w") as fh:
        json.dump(net.to_dict(), fh)
        fh.write("\n")


def load_mlp(path: str) -> Mlp:
    with open(path) as fh:
        return Mlp.from_dict(json.load(fh))
