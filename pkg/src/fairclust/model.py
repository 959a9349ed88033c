"""Fair deep clustering core: Student's-t soft assignments against cluster
centroids, fairoids (protected-group centroids), the sharpening and
smoothing self-training targets, the combined KL objective, minibatch
centroid estimation, and the joint training loop.

The objective is L = KL(P || Q) + gamma * KL(Psi || Phi), where Q compares
latent points to centroids, Phi compares centroids to fairoids, P sharpens
Q toward one-hot rows, and Psi smooths Phi toward uniform rows. The
clustering KL is a per-sample mean and the fairness KL a per-entry mean,
so gamma keeps its meaning across batch sizes and cluster counts.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import rel_entr

from . import metrics
from .autoencoder import encode
from .clustering import kmeans_pp_init, lloyd, squared_distances
from .nn import (
    AffineLayer,
    ParamSet,
    Rng,
    backward,
    clip_gradients,
    forward,
    grads_like,
    sgd_step,
    squared_error,
    squared_error_grad,
)

log = logging.getLogger(__name__)

MODEL_FORMAT = "fairclust-model"
MODEL_VERSION = 1
MOMENTUM = 0.9
CENTROIDS = "centroids"

# The combined objective sums a per-sample clustering KL and a fairness KL
# normalized per (cluster, state) entry. The extra factor fixes the scale
# of the fairness weight so its useful range spans 1e-2 (negligible) to
# 1e3 (dominant); the sum-form objective leaves this constant open.
FAIRNESS_NORM_FACTOR = 2.5


@dataclass(frozen=True)
class TrainConfig:
    K: int
    gamma: float = 0.0
    beta: float = 1000.0
    epsilon: float = 1e-9
    dof: float = 1.0
    lr: float = 0.01
    batch: int = 256
    max_epochs: int = 100
    convergence_tol: float = 0.001
    recon_weight: float = 0.0
    clip_norm: float = 5.0
    refresh: str = "incore"
    refresh_interval: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("K must be at least 2")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.beta < 2:
            raise ValueError("beta must be at least 2")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.dof <= 0:
            raise ValueError("dof must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch < 1 or self.max_epochs < 0:
            raise ValueError("batch and max_epochs must be positive")
        if self.convergence_tol < 0:
            raise ValueError("convergence_tol must be non-negative")
        if self.recon_weight < 0:
            raise ValueError("recon_weight must be non-negative")
        if self.clip_norm < 0:
            raise ValueError("clip_norm must be non-negative (0 disables clipping)")
        if self.refresh not in ("incore", "streaming"):
            raise ValueError("refresh must be 'incore' or 'streaming'")
        if self.refresh_interval < 0:
            raise ValueError("refresh_interval must be >= 0 (0 freezes the initial targets)")


def _t_kernel(d2, dof):
    return (1.0 + d2 / dof) ** (-(dof + 1.0) / 2.0)


def soft_assign(Z, centroids, dof=1.0):
    """Row-stochastic Student's-t similarities between points and centroids."""
    kernel = _t_kernel(squared_distances(Z, centroids), dof)
    return kernel / kernel.sum(axis=1, keepdims=True)


def sharpen_target(Q):
    """Self-training target that pulls Q toward one-hot rows: squared
    similarities with a cluster-frequency correction, row-normalized."""
    freq = Q.sum(axis=0)
    weighted = Q**2 / freq
    return weighted / weighted.sum(axis=1, keepdims=True)


def compute_fairoids(Z, protected, T):
    """Mean latent vector of each protected group."""
    Z = np.asarray(Z, dtype=float)
    protected = np.asarray(protected, dtype=int)
    fairoids = np.empty((T, Z.shape[1]))
    for t in range(T):
        members = protected == t
        if not members.any():
            raise ValueError(f"protected state {t} has no members")
        fairoids[t] = Z[members].mean(axis=0)
    return fairoids


def fair_assign(centroids, fairoids, dof=1.0):
    """Row-stochastic Student's-t similarities between centroids and
    fairoids. A row is uniform exactly when its centroid is equidistant
    from every fairoid."""
    return soft_assign(centroids, fairoids, dof)


def smooth_target(Phi, beta=1000.0, epsilon=1e-9):
    """Self-training target that flattens Phi rows: a beta-th root squashes
    the similarities toward 1 and an inverse-frequency correction steers
    mass away from crowded fairoids. As beta grows the rows converge to the
    normalized inverse column frequencies."""
    if beta < 2:
        raise ValueError("beta must be at least 2")
    freq = Phi.sum(axis=0)
    weighted = (Phi + epsilon) ** (1.0 / beta) / freq
    return weighted / weighted.sum(axis=1, keepdims=True)


def kl_loss(target, model_probs):
    """sum target * log(target / model) with the 0 log 0 = 0 convention."""
    target = np.asarray(target, dtype=float)
    model_probs = np.asarray(model_probs, dtype=float)
    if target.shape != model_probs.shape:
        raise ValueError("target and model matrices must share a shape")
    return float(rel_entr(target, model_probs).sum())


def batch_centroids(P, Z, ridge=0.0):
    """Least-squares centroid estimate from soft assignments: solves
    (P^T P + ridge I) M = P^T Z. With one-hot P and ridge 0 this is exactly
    the per-cluster batch mean. A singular system is retried once with
    ridge 1e-6."""
    P = np.asarray(P, dtype=float)
    Z = np.asarray(Z, dtype=float)
    gram = P.T @ P
    moment = P.T @ Z
    if ridge:
        gram = gram + ridge * np.eye(len(gram))
    try:
        M = np.linalg.solve(gram, moment)
        if not np.all(np.isfinite(M)):
            raise np.linalg.LinAlgError("non-finite solve")
    except np.linalg.LinAlgError:
        log.warning("singular centroid system; retrying with ridge 1e-6")
        M = np.linalg.solve(gram + 1e-6 * np.eye(len(gram)), moment)
    return M


def _kl_t_grads(target, probs, A, B, dof):
    """Gradients of kl_loss(target, t-kernel rows between A and B) with
    respect to A and B. Callers apply their own normalization."""
    d2 = squared_distances(A, B)
    coef = ((dof + 1.0) / dof) * (target - probs) / (1.0 + d2 / dof)
    dA = A * coef.sum(axis=1, keepdims=True) - coef @ B
    dB = B * coef.sum(axis=0)[:, None] - coef.T @ A
    return dA, dB


def fair_objective(params, X, P, Psi, fairoids, cfg):
    """Loss components and exact gradients for one batch against fixed
    targets P (rows matching X) and Psi, with fairoids held constant.

    params holds the encoder layers, the centroids entry, and (when the
    reconstruction weight is positive) the decoder layers. Returns
    (components dict, ParamSet gradients).
    """
    X = np.asarray(X, dtype=float)
    n = len(X)
    enc_layers = params.layers("enc")
    enc_names = [name for name in params.names() if name.startswith("enc")]
    M = params[CENTROIDS].weight
    K = M.shape[0]

    Z, tape = forward(enc_layers, X)
    Q = soft_assign(Z, M, cfg.dof)
    cluster = kl_loss(P, Q) / n
    Phi = fair_assign(M, fairoids, cfg.dof)
    fair_norm = FAIRNESS_NORM_FACTOR * K * fairoids.shape[0]
    fairness = kl_loss(Psi, Phi) / fair_norm

    dZ, dM = _kl_t_grads(P, Q, Z, M, cfg.dof)
    dZ /= n
    dM /= n
    dM_fair, _ = _kl_t_grads(Psi, Phi, M, fairoids, cfg.dof)
    dM = dM + (cfg.gamma / fair_norm) * dM_fair

    named = {}
    recon = 0.0
    if cfg.recon_weight > 0:
        dec_layers = params.layers("dec")
        dec_names = [name for name in params.names() if name.startswith("dec")]
        Xhat, dec_tape = forward(dec_layers, Z)
        recon = squared_error(Xhat, X)
        dec_grads, dZ_recon = backward(dec_tape, squared_error_grad(Xhat, X))
        dZ = dZ + cfg.recon_weight * dZ_recon
        named.update({name: (cfg.recon_weight * dw, cfg.recon_weight * db)
                      for name, (dw, db) in zip(dec_names, dec_grads)})

    enc_grads, _ = backward(tape, dZ)
    named.update(dict(zip(enc_names, enc_grads)))
    named[CENTROIDS] = (dM, np.zeros(M.shape[1]))

    components = {
        "loss": cluster + cfg.gamma * fairness + cfg.recon_weight * recon,
        "cluster": cluster,
        "fairness": fairness,
        "recon": recon,
    }
    return components, grads_like(params, named)


def _epoch_pass_incore(params, X, protected, T, M, cfg, refresh):
    Z = encode(params, X)
    Q = soft_assign(Z, M, cfg.dof)
    if not refresh:
        return Q, None, None
    fairoids = compute_fairoids(Z, protected, T)
    Phi = fair_assign(M, fairoids, cfg.dof)
    return Q, fairoids, Phi


def _epoch_pass_streaming(params, X, protected, T, M, cfg, refresh):
    """Out-of-core pass: batched encodes that never hold the full latent
    matrix. On refresh epochs the fairoids come from running group sums
    and the centroids behind the fairness target are re-estimated from
    per-batch least-squares solves, weighted by per-cluster batch mass so
    clusters absent from a batch contribute nothing."""
    n = len(X)
    K, d = M.shape
    Q = np.empty((n, K))
    sums = np.zeros((T, d))
    counts = np.zeros(T)
    for start in range(0, n, cfg.batch):
        sl = slice(start, start + cfg.batch)
        Zb = encode(params, X[sl])
        Q[sl] = soft_assign(Zb, M, cfg.dof)
        if refresh:
            np.add.at(sums, protected[sl], Zb)
            counts += np.bincount(protected[sl], minlength=T)
    if not refresh:
        return Q, None, None
    if (counts == 0).any():
        raise ValueError("empty protected state during refresh")
    fairoids = sums / counts[:, None]
    P = sharpen_target(Q)
    est = np.zeros((K, d))
    mass = np.zeros(K)
    for start in range(0, n, cfg.batch):
        sl = slice(start, start + cfg.batch)
        Zb = encode(params, X[sl])
        batch_mass = P[sl].sum(axis=0)
        est += batch_mass[:, None] * batch_centroids(P[sl], Zb)
        mass += batch_mass
    M_est = est / np.maximum(mass, 1e-12)[:, None]
    Phi = fair_assign(M_est, fairoids, cfg.dof)
    return Q, fairoids, Phi


def init_centroids(Z, K, rng, n_init=10):
    """Best of n_init k-means++ seedings refined by Lloyd (20 iterations,
    tol 1e-4), selected by distortion."""
    best, best_cost = None, np.inf
    for _ in range(n_init):
        M, assign = lloyd(Z, kmeans_pp_init(Z, K, rng), max_iters=20, tol=1e-4)
        cost = float(np.sum((Z - M[assign]) ** 2))
        if cost < best_cost:
            best, best_cost = M, cost
    return best


@dataclass
class TrainedModel:
    params: ParamSet
    centroids: np.ndarray
    fairoids: np.ndarray
    config: TrainConfig
    history: list = field(default_factory=list)


def train(ds, ae_params, cfg):
    """Joint training of the encoder, cluster centroids, and the fairness
    objective by minibatch momentum SGD.

    Every refresh_interval epochs the fairoids and the self-training
    targets P and Psi are recomputed from full-data encodings (interval 0
    freezes the initialization targets). Each epoch checks convergence
    (fraction of hard assignments changed below convergence_tol), then
    sweeps shuffled minibatches of the combined objective. Fairoids stay
    constant between refreshes and receive no gradient; the centroids ride
    in the parameter set and are updated by the same optimizer as the
    network.
    """
    X = ds.features
    N = len(X)
    if cfg.K > N:
        raise ValueError(f"K={cfg.K} exceeds the number of points {N}")
    if ds.T < 2:
        raise ValueError("training requires at least two protected states")

    rng = Rng(cfg.seed)
    params = ae_params.copy()
    Z0 = encode(params, X)
    if not np.all(np.isfinite(Z0)):
        raise RuntimeError("non-finite latents; the autoencoder checkpoint is unusable")
    M0 = init_centroids(Z0, cfg.K, rng.stream("kmeans"))
    params[CENTROIDS] = AffineLayer(M0, np.zeros(M0.shape[1]), "identity")
    velocity = params.zeros_like()
    epoch_pass = _epoch_pass_incore if cfg.refresh == "incore" else _epoch_pass_streaming

    shuffle = rng.stream("shuffle")
    history = []
    prev_hard = None
    P = Psi = fairoids = None
    for epoch in range(cfg.max_epochs):
        M = params[CENTROIDS].weight
        do_refresh = P is None or (cfg.refresh_interval > 0
                                   and epoch % cfg.refresh_interval == 0)
        Q, new_fairoids, Phi = epoch_pass(params, X, ds.protected, ds.T, M, cfg, do_refresh)
        if do_refresh:
            fairoids = new_fairoids
            P = sharpen_target(Q)
            Psi = smooth_target(Phi, cfg.beta, cfg.epsilon)
        hard = Q.argmax(axis=1)
        entry = _epoch_metrics(hard, ds, cfg.K)
        entry["epoch"] = epoch
        if prev_hard is not None:
            entry["assign_change"] = float(np.mean(hard != prev_hard))
            if entry["assign_change"] < cfg.convergence_tol:
                entry.update({"converged": True, "L_cl": None, "L_fr": None, "L": None})
                history.append(entry)
                break
        prev_hard = hard

        order = shuffle.permutation(N)
        totals = np.zeros(3)
        batches = 0
        for start in range(0, N, cfg.batch):
            idx = order[start : start + cfg.batch]
            try:
                components, grads = fair_objective(params, X[idx], P[idx], Psi,
                                                   fairoids, cfg)
                finite = np.isfinite(components["loss"])
                if finite:
                    grads = clip_gradients(grads, cfg.clip_norm)
                    params, velocity = sgd_step(params, grads, cfg.lr, MOMENTUM,
                                                velocity)
            except (ValueError, RuntimeError) as exc:
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {batches}: {exc}"
                )
            if not finite:
                raise RuntimeError(f"non-finite loss at epoch {epoch}, batch {batches}")
            totals += (components["cluster"], components["fairness"], components["loss"])
            batches += 1
        entry.update({
            "L_cl": totals[0] / batches,
            "L_fr": totals[1] / batches,
            "L": totals[2] / batches,
        })
        history.append(entry)

    M = params[CENTROIDS].weight.copy()
    Z = encode(params, X)
    fairoids = compute_fairoids(Z, ds.protected, ds.T)
    network = ParamSet((name, layer) for name, layer in params.items() if name != CENTROIDS)
    return TrainedModel(params=network, centroids=M, fairoids=fairoids,
                        config=cfg, history=history)


def _epoch_metrics(hard, ds, K):
    rep = metrics.report_from_assignments(hard, ds.protected, ds.T, K, labels=ds.labels)
    return {
        "fwd_mean": rep.fwd_mean,
        "fwd_max": rep.fwd_max,
        "balance_min": rep.balance_min,
        "acc": rep.acc,
        "nmi": rep.nmi,
    }


def predict(model, X):
    """Hard assignments for new data: nearest centroid under the soft
    assignment kernel, ties to the lowest index."""
    Z = encode(model.params, np.asarray(X, dtype=float))
    Q = soft_assign(Z, model.centroids, model.config.dof)
    return np.argmax(Q, axis=1)


def encode_latent(model, X):
    """Latent embeddings of X under the trained encoder."""
    return encode(model.params, np.asarray(X, dtype=float))


def save_model(model, path):
    payload = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "network": model.params.to_payload(),
        "centroids": model.centroids.tolist(),
        "fairoids": model.fairoids.tolist(),
        "config": asdict(model.config),
        "history": model.history,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_model(path):
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != MODEL_FORMAT:
        raise ValueError("not a fairclust model checkpoint")
    if payload.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {payload.get('version')}")
    return TrainedModel(
        params=ParamSet.from_payload(payload["network"]),
        centroids=np.asarray(payload["centroids"], dtype=float),
        fairoids=np.asarray(payload["fairoids"], dtype=float),
        config=TrainConfig(**payload["config"]),
        history=payload["history"],
    )
