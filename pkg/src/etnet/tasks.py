"""Anomaly scores, cluster labels, and example-based attribution from a trained model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import stretch
from .gmm import energy
from .model import EtNetModel


class UsageError(ValueError):
    pass


@dataclass
class Scores:
    e_w: np.ndarray
    e_d: np.ndarray

    @property
    def y(self) -> np.ndarray:
        return np.maximum(self.e_w, self.e_d)


@dataclass
class Embedding:
    """Per-branch extended latents and memberships for a batch of windows."""

    z_w: np.ndarray
    z_d: np.ndarray
    gamma_w: np.ndarray
    gamma_d: np.ndarray

    @property
    def joint(self) -> np.ndarray:
        return np.concatenate([self.z_w, self.z_d], axis=1)


@dataclass
class AttributionResult:
    anomaly: np.ndarray
    branch: str
    alphas: np.ndarray
    indices: list[int]  # training rows, deduplicated in order
    latents: np.ndarray  # latent coordinates of those rows
    z_anomaly: np.ndarray
    z_center: np.ndarray


def _batch(windows) -> np.ndarray:
    x = np.asarray(windows, dtype=float)
    return x[None, :] if x.ndim == 1 else x


def conform(model: EtNetModel, windows) -> np.ndarray:
    """Windows as an ``(N, L)`` array at the training window length.

    Windows of another length (a different sampling interval over the same
    span, or ragged input) are stretched onto the training grid.
    """
    length = model.extra.get("window_length")
    if isinstance(windows, np.ndarray) or (len(windows) and np.ndim(windows[0]) == 0):
        x = _batch(windows)
        if length is None or x.shape[1] == length:
            return x
        rows = list(x)
    else:
        rows = [np.asarray(w, dtype=float) for w in windows]
        if length is None:
            raise UsageError("model does not record its window length; pass equal-length windows")
    return np.array([stretch(w, length) for w in rows]).reshape(len(rows), length)


def embed(model: EtNetModel, windows) -> Embedding:
    xn = model.normalize(conform(model, windows))
    z_w, g_w = model.w.latents(xn)
    z_d, g_d = model.d.latents(xn)
    return Embedding(z_w, z_d, g_w, g_d)


def branch_energies(model: EtNetModel, windows, emb: Embedding | None = None) -> Scores:
    emb = emb or embed(model, windows)
    return Scores(np.atleast_1d(energy(model.w.gmm, emb.z_w)), np.atleast_1d(energy(model.d.gmm, emb.z_d)))


def anomaly_score(model: EtNetModel, x) -> float | np.ndarray:
    """``max(E_W, E_D)``; a float for one window, an array for a batch."""
    y = branch_energies(model, x).y
    return float(y[0]) if _single(x) else y


def _single(x) -> bool:
    if isinstance(x, (list, tuple)):
        return len(x) > 0 and np.ndim(x[0]) == 0
    return np.ndim(x) == 1


def pick_label(gamma_w: np.ndarray, gamma_d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Branch whose membership is sharper wins; D labels are offset by K. Ties go to W."""
    gamma_w, gamma_d = np.atleast_2d(gamma_w), np.atleast_2d(gamma_d)
    k = gamma_w.shape[1]
    use_d = gamma_d.max(axis=1) > gamma_w.max(axis=1)
    labels = np.where(use_d, gamma_d.argmax(axis=1) + k, gamma_w.argmax(axis=1))
    return labels, np.where(use_d, "D", "W")


def cluster_label(model: EtNetModel, x) -> int | np.ndarray:
    emb = embed(model, x)
    labels, _ = pick_label(emb.gamma_w, emb.gamma_d)
    return int(labels[0]) if _single(x) else labels


def decision_threshold(model: EtNetModel, training_windows, quantile: float = 0.95) -> float:
    """Score above which a window is called anomalous."""
    if not 0 < quantile < 1:
        raise UsageError("quantile must lie strictly between 0 and 1")
    return float(np.quantile(anomaly_score(model, conform(model, training_windows)), quantile))


def reference_line(z_a: np.ndarray, z_cnt: np.ndarray, n_points: int) -> tuple[np.ndarray, np.ndarray]:
    if n_points < 2:
        raise UsageError("a reference line needs at least two points")
    alphas = np.linspace(0.0, 1.0, n_points)
    return alphas, (1.0 - alphas)[:, None] * z_a[None, :] + alphas[:, None] * z_cnt[None, :]


def nearest_along(points: np.ndarray, latents: np.ndarray) -> list[int]:
    """Index of the Euclidean-nearest latent to each point, deduplicated in order (ties: lowest index)."""
    dist = ((points[:, None, :] - latents[None, :, :]) ** 2).sum(axis=-1)
    out: list[int] = []
    for i in dist.argmin(axis=1):
        if int(i) not in out:
            out.append(int(i))
    return out


def attribute(model: EtNetModel, x_a, training_windows, n_points: int = 10, emb: Embedding | None = None) -> AttributionResult:
    """Training windows nearest to the segment from the anomaly's latent to its normal centre.

    The branch is the one giving the larger energy; the centre is the mean of
    that branch's heaviest mixture component.  ``emb`` may carry precomputed
    training embeddings.
    """
    training_windows = np.asarray(training_windows, dtype=float)
    if training_windows.size == 0:
        raise UsageError("attribution needs a non-empty training set")
    x_a = np.asarray(x_a, dtype=float)
    own = embed(model, x_a)
    scores = branch_energies(model, x_a, own)
    use_d = scores.e_d[0] > scores.e_w[0]
    branch = model.d if use_d else model.w
    z_a = (own.z_d if use_d else own.z_w)[0]
    train_emb = emb or embed(model, training_windows)
    latents = train_emb.z_d if use_d else train_emb.z_w
    z_cnt = branch.gmm.mu[int(np.argmax(branch.gmm.phi))]
    alphas, points = reference_line(z_a, z_cnt, n_points)
    idx = nearest_along(points, latents)
    return AttributionResult(x_a, branch.kind, alphas, idx, latents[idx], z_a, z_cnt)
