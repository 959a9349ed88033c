"""Stacked denoising autoencoder: greedy layer-wise pretraining, global
fine-tuning, and encode/decode services.

The layer schedule lists the encoder half only (input D down to the
bottleneck d); the decoder mirrors it. Hidden layers use relu, the
bottleneck and the reconstruction output are linear.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import (
    ParamSet,
    Rng,
    backward,
    clip_gradients,
    forward,
    grads_like,
    init_layer,
    sgd_step,
    squared_error,
    squared_error_grad,
)

MOMENTUM = 0.9
CLIP_NORM = 5.0


@dataclass(frozen=True)
class AeConfig:
    dims: tuple
    layerwise_epochs: int = 150
    global_epochs: int = 100
    lr_pretrain: float = 0.1
    dropout: float = 0.2
    batch: int = 256
    seed: int = 0

    def __post_init__(self):
        dims = tuple(int(w) for w in self.dims)
        if len(dims) < 2:
            raise ValueError("dims must list at least the input width and the bottleneck")
        if any(w < 1 for w in dims):
            raise ValueError("layer widths must be positive")
        if self.layerwise_epochs < 0 or self.global_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.lr_pretrain <= 0:
            raise ValueError("lr_pretrain must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.batch < 1:
            raise ValueError("batch must be positive")
        object.__setattr__(self, "dims", dims)


def init_params(dims, rng_stream, std=None):
    """Fresh encoder + mirrored decoder. Names are enc0..encH-1, dec0..decH-1."""
    dims = tuple(dims)
    depth = len(dims) - 1
    params = ParamSet()
    for i in range(depth):
        act = "identity" if i == depth - 1 else "relu"
        params[f"enc{i}"] = init_layer(dims[i], dims[i + 1], act, rng_stream, std)
    rev = dims[::-1]
    for i in range(depth):
        act = "identity" if i == depth - 1 else "relu"
        params[f"dec{i}"] = init_layer(rev[i], rev[i + 1], act, rng_stream, std)
    return params


def encode(params, X):
    """Deterministic bottleneck representation, never corrupted."""
    z, _ = forward(params.layers("enc"), X)
    return z


def decode(params, Z):
    out, _ = forward(params.layers("dec"), Z)
    return out


def reconstruction_squared_error(params, X):
    out, _ = forward(params.layers(), np.asarray(X, dtype=float))
    return squared_error(out, X)


def _minibatches(n, batch, order):
    for start in range(0, n, batch):
        yield order[start : start + batch]


def _sgd_epoch(params, velocity, X, order, lr, batch, dropout, noise_stream):
    """One reconstruction epoch; returns (params, velocity, post-epoch loss).

    Numerical blowups surface as an infinite loss instead of an exception
    so the caller's backoff can roll the epoch back.
    """
    names = params.names()
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        try:
            for idx in _minibatches(len(X), batch, order):
                xb = X[idx]
                out, tape = forward(params.layers(), xb, noise=dropout, rng=noise_stream)
                layer_grads, _ = backward(tape, squared_error_grad(out, xb))
                grads = clip_gradients(grads_like(params, dict(zip(names, layer_grads))),
                                       CLIP_NORM)
                params, velocity = sgd_step(params, grads, lr, MOMENTUM, velocity)
            out, _ = forward(params.layers(), X)
            loss = squared_error(out, X)
        except (ValueError, RuntimeError, np.linalg.LinAlgError):
            return params, velocity, np.inf
    return params, velocity, loss if np.isfinite(loss) else np.inf


def _run_epochs(params, X, epochs, lr, batch, rng, dropout, on_epoch, diverged_msg):
    """Shared epoch loop with learning-rate backoff.

    An epoch that goes non-finite or more than doubles the previous loss
    is rolled back, the rate halved, and the epoch retried once; if the
    retry is still bad the epoch stays rolled back and the halved rate
    carries forward. A learning rate driven to the floor signals
    divergence.
    """
    velocity = params.zeros_like()
    shuffle = rng.stream("shuffle")
    noise_stream = rng.stream("dropout") if dropout else None
    out, _ = forward(params.layers(), X)
    prev = squared_error(out, X)
    on_epoch(0, prev, lr)
    for epoch in range(1, epochs + 1):
        order = shuffle.permutation(len(X))
        for attempt in (0, 1):
            trial_p, trial_v, loss = _sgd_epoch(params, velocity, X, order, lr,
                                                batch, dropout, noise_stream)
            if loss <= 2.0 * prev:
                params, velocity, prev = trial_p, trial_v, loss
                break
            lr *= 0.5
            if lr < 1e-8:
                raise RuntimeError(diverged_msg.format(epoch=epoch))
        on_epoch(epoch, prev, lr)
    return params


def _train_pair(pair, X_in, epochs, lr, dropout, batch, rng, layer_index):
    """Train one (encoder, decoder) pair as a denoising autoencoder.

    The pair input is the clean output of the layers below; only the
    pair's own input is corrupted. Logged losses are clean full-data
    reconstruction errors measured after each epoch.
    """
    log = []

    def record(epoch, loss, lr_now):
        if epoch > 0:
            log.append({"stage": "layerwise", "layer": layer_index, "epoch": epoch,
                        "loss": loss})

    pair = _run_epochs(pair, X_in, epochs, lr, batch, rng, dropout, record,
                       f"layer-wise pretraining diverged at layer {layer_index}"
                       " (epoch {epoch})")
    return pair, log


def pretrain_layerwise(X, cfg, rng=None):
    """Greedy layer-wise pretraining of the full encoder/decoder stack.

    Each layer pair trains on the clean output of the already-trained
    layers below it, corrupting only its own input with dropout noise and
    minimizing squared reconstruction error. Returns (params, log).
    """
    X = np.asarray(X, dtype=float)
    cfg = _check_input(X, cfg)
    rng = rng or Rng(cfg.seed)
    params = init_params(cfg.dims, rng.stream("init"))
    depth = len(cfg.dims) - 1
    log = []
    h = X
    for i in range(depth):
        enc_name, dec_name = f"enc{i}", f"dec{depth - 1 - i}"
        pair = ParamSet([(enc_name, params[enc_name]), (dec_name, params[dec_name])])
        pair, pair_log = _train_pair(pair, h, cfg.layerwise_epochs, cfg.lr_pretrain,
                                     cfg.dropout, cfg.batch, rng, i)
        params[enc_name] = pair[enc_name]
        params[dec_name] = pair[dec_name]
        log.extend(pair_log)
        h, _ = forward([params[enc_name]], h)
    return params, log


def finetune_global(X, params, epochs, lr, batch=256, rng=None):
    """End-to-end reconstruction training without corruption.

    Each logged loss is the full-data reconstruction error after the
    epoch (entry 0 is the starting loss). A non-finite epoch, or one that
    more than doubles the previous loss, is rolled back, the learning
    rate halved, and the epoch retried once.
    """
    X = np.asarray(X, dtype=float)
    rng = rng or Rng(0)
    log = []

    def record(epoch, loss, lr_now):
        log.append({"stage": "global", "epoch": epoch, "loss": loss, "lr": lr_now})

    params = _run_epochs(params.copy(), X, epochs, lr, batch, rng, 0.0, record,
                         "global fine-tuning diverged at epoch {epoch}")
    return params, log


def pretrain(X, cfg):
    """Layer-wise pretraining followed by global fine-tuning, one seed."""
    rng = Rng(cfg.seed)
    params, log = pretrain_layerwise(X, cfg, rng=rng)
    params, global_log = finetune_global(X, params, cfg.global_epochs,
                                         cfg.lr_pretrain, cfg.batch, rng=rng)
    return params, log + global_log


def _check_input(X, cfg):
    if X.ndim != 2:
        raise ValueError("training data must be a 2-d matrix")
    if X.shape[1] != cfg.dims[0]:
        raise ValueError(
            f"dims start at {cfg.dims[0]} but the data has {X.shape[1]} features"
        )
    return cfg
