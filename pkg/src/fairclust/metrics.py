"""Evaluation quantities: per-cluster protected histograms, the Wasserstein
fairness distance (FWD), balance and Calders-Verwer scores for binary
attributes, clustering accuracy, normalized mutual information, and the
aggregate report.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import rel_entr

from .clustering import hungarian_match

REPORT_VERSION = 1


@dataclass(frozen=True)
class ClusterHistogram:
    """Protected-state composition of one cluster."""

    counts: np.ndarray
    cluster_size: int

    @property
    def h(self):
        if self.cluster_size == 0:
            return np.zeros(len(self.counts))
        return self.counts / self.cluster_size

    @property
    def empty(self):
        return self.cluster_size == 0


def cluster_histograms(assignments, protected, K, T):
    """Per-cluster protected histograms. Empty clusters stay flagged so the
    fairness aggregates can exclude them."""
    assignments = np.asarray(assignments, dtype=int)
    protected = np.asarray(protected, dtype=int)
    if assignments.shape != protected.shape:
        raise ValueError("assignments and protected must have the same length")
    out = []
    for k in range(K):
        members = protected[assignments == k]
        counts = np.bincount(members, minlength=T)
        out.append(ClusterHistogram(counts=counts, cluster_size=int(members.size)))
    return out


def fwd(h, T=None, ordered=False):
    """Wasserstein distance between a protected histogram and uniform.

    Protected states are categorical, so the default ground metric is the
    discrete 0/1 metric, under which W1 reduces to half the L1 distance:
    0.5 * sum |h_t - 1/T|. Zero iff the histogram is uniform; the maximum
    (T-1)/T is reached by a monochromatic cluster. Pass ordered=True for
    ordinal attributes to use unit-spaced bins instead.
    """
    h = np.asarray(h, dtype=float)
    T = len(h) if T is None else T
    if len(h) != T:
        raise ValueError("histogram length does not match T")
    if abs(h.sum() - 1.0) > 1e-8:
        raise ValueError("histogram must sum to 1")
    dev = h - 1.0 / T
    if ordered:
        return float(np.abs(np.cumsum(dev)[:-1]).sum())
    return float(0.5 * np.abs(dev).sum())


def balance(counts):
    """min(N1/N2, N2/N1) for a binary protected attribute; 0 when either
    count is zero. Undefined for T != 2 (FWD covers the multi-state case)."""
    counts = np.asarray(counts, dtype=float)
    if counts.shape != (2,):
        raise ValueError("balance is defined only for T=2")
    if counts[0] == 0 or counts[1] == 0:
        return 0.0
    return float(min(counts[0] / counts[1], counts[1] / counts[0]))


def cv_score(h):
    """Calders-Verwer score |h1 - h2| for a binary histogram. Equals twice
    the discrete-metric fwd exactly."""
    h = np.asarray(h, dtype=float)
    if h.shape != (2,):
        raise ValueError("the Calders-Verwer score is defined only for T=2")
    if abs(h.sum() - 1.0) > 1e-8:
        raise ValueError("histogram must sum to 1")
    return float(abs(h[0] - h[1]))


def acc(pred, truth):
    """Clustering accuracy: matched agreement under the optimal label
    permutation, divided by N. Invariant to relabeling of pred."""
    pred = np.asarray(pred, dtype=int)
    truth = np.asarray(truth, dtype=int)
    _, agreement = hungarian_match(pred, truth)
    return agreement / len(pred)


def nmi(pred, truth):
    """Normalized mutual information with the geometric-mean normalization
    I(pred; truth) / sqrt(H(pred) H(truth)), natural log.

    Defined as 1 when both partitions are trivial (each a single class)
    and 0 when exactly one entropy vanishes.
    """
    pred = np.asarray(pred, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if pred.shape != truth.shape:
        raise ValueError("pred and truth must have the same length")
    n = len(pred)
    joint = np.zeros((pred.max() + 1, truth.max() + 1))
    np.add.at(joint, (pred, truth), 1.0)
    joint /= n
    p_pred = joint.sum(axis=1)
    p_truth = joint.sum(axis=0)

    def entropy(p):
        p = p[p > 0]
        return float(-(p * np.log(p)).sum())

    h_pred, h_truth = entropy(p_pred), entropy(p_truth)
    if h_pred == 0.0 and h_truth == 0.0:
        return 1.0
    if h_pred == 0.0 or h_truth == 0.0:
        return 0.0
    mutual = float(rel_entr(joint, np.outer(p_pred, p_truth)).sum())
    value = mutual / np.sqrt(h_pred * h_truth)
    return float(min(max(value, 0.0), 1.0))


@dataclass(frozen=True)
class MetricsReport:
    K: int
    T: int
    K_effective: int
    per_cluster: list
    fwd_mean: float
    fwd_max: float
    balance_min: float | None = None
    acc: float | None = None
    nmi: float | None = None
    schema_version: int = REPORT_VERSION
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "schema_version": self.schema_version,
            "k": self.K,
            "t": self.T,
            "k_effective": self.K_effective,
            "fwd_mean": self.fwd_mean,
            "fwd_max": self.fwd_max,
            "balance_min": self.balance_min,
            "acc": self.acc,
            "nmi": self.nmi,
            "per_cluster": self.per_cluster,
            **self.extras,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def report_from_assignments(assignments, protected, T, K, labels=None):
    """All applicable metrics for one hard clustering.

    fwd_mean is the unweighted mean over non-empty clusters, fwd_max the
    worst (unfairest) cluster. Empty clusters are excluded from the
    fairness aggregates but still counted against K_effective.
    """
    hists = cluster_histograms(assignments, protected, K, T)
    per_cluster = []
    fwd_values = []
    balance_values = []
    for k, hist in enumerate(hists):
        entry = {"cluster": k, "size": hist.cluster_size,
                 "counts": hist.counts.tolist()}
        if not hist.empty:
            h = hist.h
            entry["histogram"] = h.tolist()
            entry["fwd"] = fwd(h, T)
            fwd_values.append(entry["fwd"])
            if T == 2:
                entry["balance"] = balance(hist.counts)
                entry["cv"] = cv_score(h)
                balance_values.append(entry["balance"])
        per_cluster.append(entry)
    if not fwd_values:
        raise ValueError("no non-empty clusters")
    report = MetricsReport(
        K=K,
        T=T,
        K_effective=len(fwd_values),
        per_cluster=per_cluster,
        fwd_mean=float(np.mean(fwd_values)),
        fwd_max=float(np.max(fwd_values)),
        balance_min=float(np.min(balance_values)) if balance_values else None,
        acc=acc(assignments, labels) if labels is not None else None,
        nmi=nmi(assignments, labels) if labels is not None else None,
    )
    return report


def report(model, ds):
    """Evaluate a trained model on a dataset (nearest-centroid prediction)."""
    from .model import predict

    assignments = predict(model, ds.features)
    return report_from_assignments(assignments, ds.protected, ds.T,
                                   model.centroids.shape[0], labels=ds.labels)


def histograms_to_csv(rep, path):
    """Per-cluster histogram table for external plotting."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster", "size", "fwd"] + [f"h{t}" for t in range(rep.T)])
        for entry in rep.per_cluster:
            if entry["size"] == 0:
                continue
            writer.writerow([entry["cluster"], entry["size"], repr(entry["fwd"])]
                            + [repr(v) for v in entry["histogram"]])
    return path
