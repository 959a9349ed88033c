"""Dense MLP kernel: affine layers with reverse-mode gradients, momentum SGD,
named deterministic random streams, and a finite-difference gradient checker.

Tensors are plain float64 numpy arrays in row-major order; a data matrix is
(n_rows, n_features). Arrays returned by the exported operations are new
objects, so callers may treat everything here as pure given its inputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("identity", "relu")

PARAMS_FORMAT = "fairclust-params"
PARAMS_VERSION = 1


class Rng:
    """Deterministic random streams keyed by purpose name.

    Each named stream is an independent Philox (counter-based) generator
    derived from (seed, name). Streams are cached, so repeated lookups
    continue the same sequence, and consuming one stream never perturbs
    another. Identical seeds replay identical streams.
    """

    def __init__(self, seed):
        self.seed = int(seed)
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        self._streams = {}

    def stream(self, name):
        gen = self._streams.get(name)
        if gen is None:
            digest = hashlib.blake2b(
                f"{self.seed}:{name}".encode(), digest_size=16
            ).digest()
            gen = np.random.Generator(
                np.random.Philox(key=int.from_bytes(digest, "little"))
            )
            self._streams[name] = gen
        return gen


@dataclass
class AffineLayer:
    """One dense layer: y = activation(x @ weight + bias).

    weight is (n_in, n_out), bias is (n_out,).
    """

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise ValueError("weight must be 2-d and bias 1-d")
        if self.bias.shape[0] != self.weight.shape[1]:
            raise ValueError(
                f"bias length {self.bias.shape[0]} != output width {self.weight.shape[1]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("layer parameters must be finite")

    @property
    def n_in(self):
        return self.weight.shape[0]

    @property
    def n_out(self):
        return self.weight.shape[1]

    def copy(self):
        return AffineLayer(self.weight.copy(), self.bias.copy(), self.activation)


def init_layer(n_in, n_out, activation, rng, std=None):
    """Zero-mean Gaussian weights, zero biases.

    The default std is scale aware (sqrt(2/n_in) for relu, sqrt(1/n_in)
    otherwise): a fixed small std starves narrow networks of signal and
    collapses the bottleneck.
    """
    if std is None:
        gain = 2.0 if activation == "relu" else 1.0
        std = np.sqrt(gain / n_in)
    return AffineLayer(std * rng.standard_normal((n_in, n_out)), np.zeros(n_out), activation)


class ParamSet:
    """Ordered, named collection of affine layers.

    Supports exact flatten/unflatten round trips and versioned JSON
    checkpoints. Entry order is insertion order and is preserved by
    serialization.
    """

    def __init__(self, entries=None):
        self._entries = {}
        if entries is not None:
            items = entries.items() if isinstance(entries, dict) else entries
            for name, layer in items:
                self[name] = layer

    def __len__(self):
        return len(self._entries)

    def __contains__(self, name):
        return name in self._entries

    def __getitem__(self, name):
        return self._entries[name]

    def __setitem__(self, name, layer):
        if not isinstance(layer, AffineLayer):
            raise TypeError("ParamSet entries must be AffineLayer values")
        self._entries[str(name)] = layer

    def names(self):
        return list(self._entries)

    def items(self):
        return list(self._entries.items())

    def layers(self, prefix=None):
        """Layers in insertion order, optionally filtered by name prefix."""
        if prefix is None:
            return list(self._entries.values())
        return [layer for name, layer in self._entries.items() if name.startswith(prefix)]

    def subset(self, prefix):
        return ParamSet(
            (name, layer) for name, layer in self._entries.items() if name.startswith(prefix)
        )

    def copy(self):
        return ParamSet((name, layer.copy()) for name, layer in self._entries.items())

    def zeros_like(self):
        return ParamSet(
            (name, AffineLayer(np.zeros_like(l.weight), np.zeros_like(l.bias), l.activation))
            for name, l in self._entries.items()
        )

    @property
    def n_params(self):
        return sum(l.weight.size + l.bias.size for l in self._entries.values())

    def flatten(self):
        if not self._entries:
            return np.zeros(0)
        return np.concatenate(
            [np.concatenate([l.weight.ravel(), l.bias]) for l in self._entries.values()]
        )

    def unflatten(self, vec):
        """New ParamSet with the same names/shapes, values taken from vec."""
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.n_params,):
            raise ValueError(f"expected a flat vector of length {self.n_params}")
        out = ParamSet()
        pos = 0
        for name, l in self._entries.items():
            w = vec[pos : pos + l.weight.size].reshape(l.weight.shape)
            pos += l.weight.size
            b = vec[pos : pos + l.bias.size].copy()
            pos += l.bias.size
            out[name] = AffineLayer(w.copy(), b, l.activation)
        return out

    def to_payload(self):
        return {
            "format": PARAMS_FORMAT,
            "version": PARAMS_VERSION,
            "layers": [
                {
                    "name": name,
                    "activation": l.activation,
                    "shape": [l.n_in, l.n_out],
                    "weight": l.weight.ravel().tolist(),
                    "bias": l.bias.tolist(),
                }
                for name, l in self._entries.items()
            ],
        }

    @classmethod
    def from_payload(cls, payload):
        if payload.get("format") != PARAMS_FORMAT:
            raise ValueError("not a fairclust parameter checkpoint")
        if payload.get("version") != PARAMS_VERSION:
            raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
        out = cls()
        for rec in payload["layers"]:
            n_in, n_out = rec["shape"]
            weight = np.asarray(rec["weight"], dtype=float).reshape(n_in, n_out)
            out[rec["name"]] = AffineLayer(weight, rec["bias"], rec["activation"])
        return out


def save_params(params, path):
    Path(path).write_text(json.dumps(params.to_payload()))


def load_params(path):
    return ParamSet.from_payload(json.loads(Path(path).read_text()))


@dataclass
class Tape:
    """Record of one forward pass, sufficient for reverse mode."""

    layers: list
    steps: list = field(default_factory=list)  # (layer input, pre-activation) pairs
    input_mask: np.ndarray | None = None


def forward(layers, x, noise=0.0, rng=None):
    """Run x through the layer stack, returning (output, tape).

    When noise > 0 the input is corrupted with inverted dropout: each unit
    is zeroed independently with probability `noise` and survivors are
    scaled by 1/(1-noise), so evaluation needs no rescaling. Corruption is
    only applied when a rate is passed (training mode).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("input must be a 2-d matrix")
    mask = None
    if noise:
        if not 0.0 < noise < 1.0:
            raise ValueError("noise rate must lie in (0, 1)")
        if rng is None:
            raise ValueError("dropout corruption requires an rng stream")
        mask = (rng.random(x.shape) >= noise) / (1.0 - noise)
        x = x * mask
    steps = []
    h = x
    for i, layer in enumerate(layers):
        if h.shape[1] != layer.n_in:
            raise ValueError(
                f"layer {i}: input width {h.shape[1]} does not match weight rows {layer.n_in}"
            )
        pre = h @ layer.weight + layer.bias
        steps.append((h, pre))
        h = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
    return h, Tape(layers=list(layers), steps=steps, input_mask=mask)


def backward(tape, upstream):
    """Exact reverse-mode gradients of the traced forward pass.

    Returns (per-layer [(dweight, dbias), ...] in forward order, input
    gradient). The input gradient includes the dropout mask when the
    forward pass was corrupted.
    """
    g = np.asarray(upstream, dtype=float)
    if not tape.steps:
        raise ValueError("tape is empty")
    n_out = tape.layers[-1].n_out
    if g.shape != (tape.steps[0][0].shape[0], n_out):
        raise ValueError("upstream gradient shape does not match the traced output")
    grads = [None] * len(tape.layers)
    for i in range(len(tape.layers) - 1, -1, -1):
        layer = tape.layers[i]
        h_in, pre = tape.steps[i]
        if layer.activation == "relu":
            g = g * (pre > 0)
        grads[i] = (h_in.T @ g, g.sum(axis=0))
        g = g @ layer.weight.T
    if tape.input_mask is not None:
        g = g * tape.input_mask
    return grads, g


def grads_like(params, named):
    """Gradient container aligned with params; missing names get zeros."""
    out = ParamSet()
    for name, layer in params.items():
        if name in named:
            dw, db = named[name]
            dw = np.asarray(dw, dtype=float)
            db = np.asarray(db, dtype=float)
            if dw.shape != layer.weight.shape or db.shape != layer.bias.shape:
                raise ValueError(f"gradient shape mismatch for entry {name!r}")
        else:
            dw, db = np.zeros_like(layer.weight), np.zeros_like(layer.bias)
        out[name] = AffineLayer(dw, db, layer.activation)
    return out


def clip_gradients(grads, max_norm):
    """Rescale so the global gradient norm is at most max_norm. Bounds the
    step size when a batch or a loss term spikes; 0 disables clipping."""
    if max_norm <= 0:
        return grads
    total = np.sqrt(sum(float(np.sum(g.weight**2) + np.sum(g.bias**2))
                        for _, g in grads.items()))
    if not np.isfinite(total) or total <= max_norm:
        return grads
    scale = max_norm / total
    return ParamSet(
        (name, AffineLayer(scale * g.weight, scale * g.bias, g.activation))
        for name, g in grads.items()
    )


def sgd_step(params, grads, lr, momentum=0.0, velocity=None):
    """Classic momentum update: v <- m*v + g; p <- p - lr*v.

    Pure: returns (updated params, updated velocity). Raises on non-finite
    gradients, the usual training divergence signal.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must lie in [0, 1)")
    if velocity is None:
        velocity = params.zeros_like()
    new_params, new_velocity = ParamSet(), ParamSet()
    for name, layer in params.items():
        g = grads[name]
        if not (np.all(np.isfinite(g.weight)) and np.all(np.isfinite(g.bias))):
            raise RuntimeError(f"non-finite gradient for entry {name!r}")
        v = velocity[name]
        vw = momentum * v.weight + g.weight
        vb = momentum * v.bias + g.bias
        new_velocity[name] = AffineLayer(vw, vb, layer.activation)
        new_params[name] = AffineLayer(
            layer.weight - lr * vw, layer.bias - lr * vb, layer.activation
        )
    return new_params, new_velocity


def finite_diff_check(loss_and_grad, params, h=1e-4, sample=30, rng=None):
    """Max relative error between analytic and central-difference gradients.

    loss_and_grad(params) must return (scalar loss, ParamSet gradients).
    A seeded random subset of `sample` coordinates is probed; the relative
    error denominator is max(|analytic|, |numeric|, 1e-8).
    """
    if not 1e-6 <= h <= 1e-2:
        raise ValueError("step h must lie in [1e-6, 1e-2]")
    if sample > params.n_params:
        raise ValueError("sample exceeds the parameter count")
    if rng is None:
        rng = np.random.default_rng(0)
    _, grads = loss_and_grad(params)
    flat = params.flatten()
    analytic = grads.flatten()
    idx = rng.choice(flat.size, size=sample, replace=False)
    worst = 0.0
    for i in idx:
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        up = loss_and_grad(params.unflatten(bumped))[0]
        bumped[i] = flat[i] - h
        down = loss_and_grad(params.unflatten(bumped))[0]
        numeric = (up - down) / (2.0 * h)
        err = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst


def squared_error(pred, target):
    """Mean over rows of the feature-summed squared error.

    Summing over features keeps the gradient scale independent of the
    data width, so one learning rate works across feature counts.
    """
    return float(np.mean(np.sum((pred - target) ** 2, axis=1)))


def squared_error_grad(pred, target):
    return 2.0 * (pred - target) / len(pred)
