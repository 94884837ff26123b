"""Branch losses, Adam, and the two-branch training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics as nx
from .compression import DNetwork, WNetwork, d_extended_latent, d_forward, w_extended_latent, w_forward
from .gmm import GmmModel, MembershipNet, em_update, energy_var, log_density_var, log_membership, mixture_weights
from .model import Branch, EtNetModel, TrainConfig
from .numerics import Param, Var

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, reports: list | None = None):
        super().__init__(message)
        self.reports = reports or []


@dataclass
class LossReport:
    epoch: int
    branch: str
    recon_loss: float
    energy_loss: float
    total: float


# --------------------------------------------------------------------------
# losses


def _sq_error(x: np.ndarray, recon) -> Var:
    """Sum over the batch of ``||x - recon||^2``."""
    return nx.total(nx.square(nx.sub(recon, x)))


def _batch_energy(z, member: MembershipNet, gmm: GmmModel, factors=None) -> Var:
    log_gamma = log_membership(member, z)
    log_phi = nx.log(nx.mean(nx.exp(log_gamma), axis=0))
    return energy_var(z, log_phi, gmm, factors)


def loss_w(net: WNetwork, member: MembershipNet, gmm: GmmModel, batch, lam: float) -> Var:
    """``mean_i sum_j ||x_i - x'_i(j)||^2 / N_E + lam * mean_i E(z_i)``."""
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    if len(batch) == 0:
        raise ValueError("empty batch")
    fwd = w_forward(net, batch)
    z = w_extended_latent(net, batch, forward=fwd)
    n, n_e = len(batch), len(fwd[1])
    recon = nx.total(nx.stack([_sq_error(batch, r) for r in fwd[1]])) * (1.0 / (n * n_e))
    return recon + nx.mean(_batch_energy(z, member, gmm)) * lam


def loss_d(net: DNetwork, member: MembershipNet, gmm: GmmModel, batch, lam: float) -> Var:
    """``mean_i ||x_i - x'_i||^2 + lam * mean_i E(z_i)``."""
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    if len(batch) == 0:
        raise ValueError("empty batch")
    fwd = d_forward(net, batch)
    z = d_extended_latent(net, batch, forward=fwd)
    recon = _sq_error(batch, fwd[1]) * (1.0 / len(batch))
    return recon + nx.mean(_batch_energy(z, member, gmm)) * lam


@dataclass
class StepTerms:
    objective: Var  # what the optimizer descends
    recon: float
    energy: float
    z: np.ndarray
    gamma: np.ndarray


def branch_objective(branch: Branch, batch: np.ndarray, lam: float, factors=None) -> StepTerms:
    """Reconstruction plus ``lam`` times the membership free energy.

    The free energy ``sum_k g_k (log g_k - log phi_k - log N_k)`` equals the
    sample energy plus ``KL(g || posterior)``, so its value upper-bounds the
    energy term and touches it when the membership network reproduces the
    mixture posterior.  The energy alone reaches the membership network only
    through the batch mean ``phi``, which gives every sample the same signal.
    """
    out = branch.forward(batch)
    n = len(batch)
    sq = nx.total(nx.stack([_sq_error(batch, r) for r in out.recons]))
    recon = sq * (1.0 / (n * len(out.recons)))
    gamma = nx.exp(out.log_gamma)
    # phi is held constant inside the step; differentiating through the batch
    # mean would add n * H(phi) to the objective and drive phi to one component
    log_phi = np.log(np.mean(gamma.value, axis=0))
    log_dens = log_density_var(out.z, branch.gmm, factors)
    energies = energy_var(out.z, log_phi, branch.gmm, log_dens=log_dens)
    free = nx.total(gamma * nx.sub(nx.sub(out.log_gamma, log_phi), log_dens), axis=-1)
    objective = recon + nx.mean(free) * lam
    return StepTerms(
        objective,
        float(recon.value),
        float(np.mean(energies.value)),
        out.z.value,
        gamma.value,
    )


# --------------------------------------------------------------------------
# optimizer


class AdamState:
    def __init__(self, params: list[Param], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]
        self.t = 0


def adam_step(state: AdamState, grads: dict, lr: float) -> None:
    """Bias-corrected Adam update applied in place to ``state.params``."""
    for p in state.params:
        if not np.all(np.isfinite(grads[p])):
            raise TrainingDiverged(f"non-finite gradient for {p.name}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, m, v in zip(state.params, state.m, state.v):
        g = grads[p]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# --------------------------------------------------------------------------
# training loop


def _refresh_gmm(branch: Branch, z: np.ndarray, gamma: np.ndarray, iters: int) -> None:
    branch.gmm.phi = mixture_weights(gamma)
    for _ in range(iters):
        branch.gmm = em_update(branch.gmm, z)


def train_branch(
    branch: Branch,
    xn: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
    on_epoch: Callable[[LossReport], None] | None = None,
) -> list[LossReport]:
    """Train one branch on normalized windows ``xn``; EM-refresh its mixture every epoch."""
    params = branch.params()
    state = AdamState(params)
    n = len(xn)
    reports: list[LossReport] = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        factors = branch.gmm.factors()
        z_epoch = np.empty((n, branch.gmm.dim))
        g_epoch = np.empty((n, branch.gmm.k))
        recon_sum = energy_sum = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            with nx.Tape() as tape:
                terms = branch_objective(branch, xn[idx], cfg.lam, factors)
            grads = nx.backward(tape, terms.objective, params)
            try:
                adam_step(state, grads, cfg.learning_rate)
            except TrainingDiverged as exc:
                raise TrainingDiverged(f"branch {branch.kind}, epoch {epoch}: {exc}", reports) from None
            z_epoch[idx] = terms.z
            g_epoch[idx] = terms.gamma
            recon_sum += terms.recon * len(idx)
            energy_sum += terms.energy * len(idx)
        recon, energy = recon_sum / n, energy_sum / n
        report = LossReport(epoch, branch.kind, recon, energy, recon + cfg.lam * energy)
        reports.append(report)
        # a stale mixture can give huge but meaningful energies, so only the
        # reconstruction term is bounded
        if not np.isfinite(report.total) or recon > DIVERGENCE_LIMIT:
            raise TrainingDiverged(f"branch {branch.kind} diverged at epoch {epoch}: {report}", reports)
        _refresh_gmm(branch, z_epoch, g_epoch, cfg.em_iters_per_epoch)
        log.info("epoch %d %s recon=%.5f energy=%.4f", epoch, branch.kind, recon, energy)
        if on_epoch is not None:
            on_epoch(report)
    if cfg.epochs > 0:
        # settle the mixture on latents of the final parameters
        z, gamma = branch.latents(xn)
        _refresh_gmm(branch, z, gamma, cfg.em_iters_per_epoch)
    return reports


def train(
    model: EtNetModel,
    windows,
    cfg: TrainConfig | None = None,
    on_epoch: Callable[[LossReport], None] | None = None,
) -> tuple[EtNetModel, list[LossReport]]:
    """Train the W and D branches independently; reports are ordered by (epoch, branch)."""
    cfg = cfg or model.config
    windows = np.asarray(windows, dtype=float)
    if windows.ndim != 2 or len(windows) == 0:
        raise ValueError("train needs a non-empty (N, L) array of equal-length windows")
    xn = model.normalize(windows)
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence([cfg.seed, 1]).spawn(2)]
    reports = []
    for branch, rng in zip(model.branches(), rngs):
        reports += train_branch(branch, xn, cfg, rng, on_epoch)
    reports.sort(key=lambda r: (r.epoch, r.branch != "W"))
    return model, reports


def write_log(reports: list[LossReport], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "branch", "reconLoss", "energyLoss", "total"])
        for r in reports:
            writer.writerow([r.epoch, r.branch, repr(r.recon_loss), repr(r.energy_loss), repr(r.total)])
