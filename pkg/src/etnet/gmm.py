"""Gaussian mixture over extended latents: membership network, EM refresh, sample energy."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import numerics as nx
from .numerics import Param, Var, init_uniform

LOG_2PI = float(np.log(2.0 * np.pi))
REG_EPSILON = 1e-6


class SingularCovarianceError(nx.NumericError):
    def __init__(self, component: int):
        super().__init__(f"covariance of component {component} is not positive definite")
        self.component = component


@dataclass
class MembershipNet:
    """``softmax(W2 tanh(W1 z + b1) + b2)`` giving per-component responsibilities."""

    W1: Param
    b1: Param
    W2: Param
    b2: Param

    @classmethod
    def create(cls, dim: int, k: int, rng: np.random.Generator, hidden: int = 8, prefix: str = "gm"):
        return cls(
            init_uniform(rng, (hidden, dim), dim, f"{prefix}.W1"),
            init_uniform(rng, (hidden,), dim, f"{prefix}.b1"),
            init_uniform(rng, (k, hidden), hidden, f"{prefix}.W2"),
            init_uniform(rng, (k,), hidden, f"{prefix}.b2"),
        )

    @property
    def k(self) -> int:
        return self.W2.shape[0]

    def params(self) -> list[Param]:
        return [self.W1, self.b1, self.W2, self.b2]


def membership(net: MembershipNet, z) -> Var:
    hidden = nx.tanh(nx.matvec(net.W1, z) + net.b1)
    return nx.softmax(nx.matvec(net.W2, hidden) + net.b2, axis=-1)


def log_membership(net: MembershipNet, z) -> Var:
    """``log(membership(net, z))`` without going through the softmax."""
    hidden = nx.tanh(nx.matvec(net.W1, z) + net.b1)
    logits = nx.matvec(net.W2, hidden) + net.b2
    return nx.sub(logits, nx.stack([nx.logsumexp(logits, axis=-1)], axis=-1))


def mixture_weights(gammas) -> np.ndarray:
    g = np.asarray(gammas.value if isinstance(gammas, Var) else gammas, dtype=float)
    if g.ndim != 2 or g.shape[0] == 0:
        raise ValueError("mixture_weights needs a non-empty (M, K) batch of memberships")
    return g.mean(axis=0)


@dataclass
class GmmModel:
    phi: np.ndarray  # (K,)
    mu: np.ndarray  # (K, D)
    sigma: np.ndarray  # (K, D, D), jitter already included
    reg_epsilon: float = REG_EPSILON

    @property
    def k(self) -> int:
        return self.mu.shape[0]

    @property
    def dim(self) -> int:
        return self.mu.shape[1]

    def factors(self) -> tuple[np.ndarray, np.ndarray]:
        """Inverse Cholesky factors ``(K, D, D)`` and log-determinants ``(K,)``."""
        k, d = self.mu.shape
        inv = np.empty((k, d, d))
        logdet = np.empty(k)
        for c in range(k):
            try:
                chol = np.linalg.cholesky(self.sigma[c])
            except np.linalg.LinAlgError:
                raise SingularCovarianceError(c) from None
            inv[c] = np.linalg.inv(chol)
            logdet[c] = 2.0 * np.log(np.diag(chol)).sum()
        return inv, logdet


def init_gmm(latents: np.ndarray, k: int, rng: np.random.Generator, reg_epsilon: float = REG_EPSILON) -> GmmModel:
    """Means from ``k`` distinct random latents, every covariance the global one."""
    latents = np.asarray(latents, dtype=float)
    n, d = latents.shape
    if n < k:
        raise ValueError(f"need at least {k} latents to seed {k} components, got {n}")
    idx = rng.choice(n, size=k, replace=False)
    cov = np.atleast_2d(np.cov(latents, rowvar=False, bias=True)) if n > 1 else np.zeros((d, d))
    cov = cov + reg_epsilon * np.eye(d)
    return GmmModel(np.full(k, 1.0 / k), latents[idx].copy(), np.repeat(cov[None], k, axis=0), reg_epsilon)


def component_log_density(model: GmmModel, z: np.ndarray, factors=None) -> np.ndarray:
    """``log N(z; mu_k, Sigma_k)`` for every row of ``z`` and component: ``(N, K)``."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    inv, logdet = factors if factors is not None else model.factors()
    diff = z[:, None, :] - model.mu[None, :, :]
    y = np.einsum("kij,nkj->nki", inv, diff)
    maha = (y * y).sum(axis=-1)
    return -0.5 * (maha + logdet[None, :] + model.dim * LOG_2PI)


def _logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    peak = a.max(axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    return np.squeeze(peak, axis) + np.log(np.exp(a - peak).sum(axis=axis))


def energy(model: GmmModel, z) -> np.ndarray | float:
    """Negative log-likelihood of each row of ``z``; a float for a single vector."""
    single = np.ndim(z) == 1
    with np.errstate(divide="ignore"):
        log_phi = np.log(model.phi)
    e = -_logsumexp(log_phi[None, :] + component_log_density(model, z), axis=-1)
    return float(e[0]) if single else e


def log_likelihood(model: GmmModel, z) -> float:
    return float(-np.sum(energy(model, np.atleast_2d(z))))


def responsibilities(model: GmmModel, z) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logits = np.log(model.phi)[None, :] + component_log_density(model, z)
    return np.exp(logits - _logsumexp(logits, axis=-1)[:, None])


def em_update(model: GmmModel, z_batch) -> GmmModel:
    """One E-step and one M-step on ``mu`` and ``Sigma``; ``phi`` is left as given."""
    z = np.atleast_2d(np.asarray(z_batch, dtype=float))
    n, d = z.shape
    if n < model.k:
        raise ValueError(f"em_update needs at least K={model.k} samples, got {n}")
    resp = responsibilities(model, z)
    weight = resp.sum(axis=0)
    mu = model.mu.copy()
    sigma = model.sigma.copy()
    eye = np.eye(d)
    for c in range(model.k):
        if weight[c] <= 1e-12:
            continue  # starved component keeps its previous estimate
        mu[c] = resp[:, c] @ z / weight[c]
        diff = z - mu[c]
        cov = (resp[:, c, None] * diff).T @ diff / weight[c]
        cov = 0.5 * (cov + cov.T) + model.reg_epsilon * eye
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise SingularCovarianceError(c) from None
        sigma[c] = cov
    return replace(model, mu=mu, sigma=sigma)


def log_density_var(z, model: GmmModel, factors=None) -> Var:
    """Differentiable ``log N(z; mu_k, Sigma_k)``, shape ``(..., K)``; mu and Sigma are constants."""
    inv, logdet = factors if factors is not None else model.factors()
    cols = []
    for c in range(model.k):
        y = nx.matvec(inv[c], nx.sub(z, model.mu[c]))
        maha = nx.total(nx.square(y), axis=-1)
        cols.append(maha * -0.5 + (-0.5 * (logdet[c] + model.dim * LOG_2PI)))
    return nx.stack(cols, axis=-1)


def energy_var(z, log_phi, model: GmmModel, factors=None, log_dens: Var | None = None) -> Var:
    """Differentiable per-row energy under mixture weights ``exp(log_phi)``."""
    if log_dens is None:
        log_dens = log_density_var(z, model, factors)
    return -nx.logsumexp(nx.add(log_dens, log_phi), axis=-1)
