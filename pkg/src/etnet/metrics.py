"""Detector and clustering scores, plus classical distances between series."""

from __future__ import annotations

import numpy as np


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: the fraction of (anomaly, normal) pairs ranked correctly, ties counting half."""
    scores = np.asarray(scores, dtype=float).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc needs both anomalous and normal samples")
    # average ranks handle ties
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(a, b) -> float:
    """Mutual information over the arithmetic mean of the two entropies; 0/0 is 0."""
    a = np.asarray(a).reshape(-1)
    b = np.asarray(b).reshape(-1)
    if a.shape != b.shape:
        raise ValueError("partitions must have the same length")
    if a.size == 0:
        raise ValueError("partitions must be non-empty")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(table, (ia, ib), 1.0)
    n = table.sum()
    ha, hb = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    denom = 0.5 * (ha + hb)
    if denom <= 0:
        return 0.0
    joint = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / n**2
    nz = joint > 0
    mi = float((joint[nz] * np.log(joint[nz] / outer[nz])).sum())
    return min(1.0, max(0.0, mi / denom))


def ed(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size == 0 or y.size == 0:
        raise ValueError("ed needs non-empty inputs")
    if x.shape != y.shape:
        raise ValueError(f"ed needs equal lengths, got {x.size} and {y.size}")
    return float(np.sqrt(((x - y) ** 2).sum()))


def dtw(x, y, band: int | None = None) -> float:
    """DTW with ``|x_i - y_j|`` local cost; ``band`` limits ``|i - j|`` (Sakoe-Chiba)."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    n, m = x.size, y.size
    if n == 0 or m == 0:
        raise ValueError("dtw needs non-empty inputs")
    if band is not None and band < abs(n - m):
        raise ValueError(f"band {band} is narrower than the length difference {abs(n - m)}")
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    cost = np.abs(x[:, None] - y[None, :])
    for i in range(1, n + 1):
        lo, hi = 1, m
        if band is not None:
            lo, hi = max(1, i - band), min(m, i + band)
        for j in range(lo, hi + 1):
            acc[i, j] = cost[i - 1, j - 1] + min(acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1])
    return float(acc[n, m])


def edr(x, y, eps: float) -> int:
    """Edit distance with unit costs where samples match iff ``|x_i - y_j| <= eps``."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size == 0 or y.size == 0:
        raise ValueError("edr needs non-empty inputs")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    n, m = x.size, y.size
    prev = np.arange(m + 1)
    for i in range(1, n + 1):
        cur = np.empty(m + 1, dtype=int)
        cur[0] = i
        match = np.abs(x[i - 1] - y) <= eps
        for j in range(1, m + 1):
            sub = prev[j - 1] + (0 if match[j - 1] else 1)
            cur[j] = min(sub, prev[j] + 1, cur[j - 1] + 1)
        prev = cur
    return int(prev[m])


def distance_ratio(noisy_to_clean: float, clean_to_other: float) -> float:
    """Below 1 means the noisy copy stays closer to its source than the source is to another class."""
    if clean_to_other <= 0:
        raise ValueError("cross-class distance must be positive")
    return float(noisy_to_clean / clean_to_other)
