"""W (multi-branch SRNN) and D (stacked dilated GRU) sequence autoencoders.

Both networks take a batch of windows ``(B, L)`` already scaled to [0, 1] and
return a fused latent code plus reconstructions.  Decoders start from a linear
map of the fused code and emit the window back to front, feeding each output
in as the next input.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .cells import (
    MAX_SKIP,
    DilatedLayer,
    GruCell,
    LstmCell,
    SrnnLayer,
)
from .fused import dilated_decode, dilated_encode, srnn_decode, srnn_encode
from .numerics import Param, Var, init_uniform

ZERO_NORM = 1e-12


class DegenerateInputWarning(RuntimeWarning):
    pass


# --------------------------------------------------------------------------
# reconstruction features


def d_rel(x, xr) -> float:
    x = np.asarray(x, dtype=float)
    xr = np.asarray(xr, dtype=float)
    if x.shape != xr.shape:
        raise nx.ShapeError(f"d_rel: length mismatch {x.shape} vs {xr.shape}")
    denom = np.linalg.norm(x)
    if denom == 0.0:
        warnings.warn("d_rel on a zero-norm series; using 1e-12 as denominator", DegenerateInputWarning)
        denom = ZERO_NORM
    return float(np.linalg.norm(x - xr) / denom)


def d_cos(x, xr) -> float:
    x = np.asarray(x, dtype=float)
    xr = np.asarray(xr, dtype=float)
    if x.shape != xr.shape:
        raise nx.ShapeError(f"d_cos: length mismatch {x.shape} vs {xr.shape}")
    denom = np.linalg.norm(x) * np.linalg.norm(xr)
    if denom == 0.0:
        return 0.0
    return float(np.dot(x, xr) / denom)


def rel_error(x: np.ndarray, recon) -> Var:
    """Row-wise ``||x - recon|| / ||x||`` for a constant batch ``x``."""
    norm_x = np.linalg.norm(x, axis=-1)
    norm_x = np.where(norm_x == 0.0, ZERO_NORM, norm_x)
    dist = nx.sqrt(nx.total(nx.square(nx.sub(recon, x)), axis=-1))
    return dist * (1.0 / norm_x)


def cos_similarity(x: np.ndarray, recon) -> Var:
    """Row-wise cosine similarity; 0 wherever either row has zero norm."""
    dot = nx.total(nx.mul(recon, x), axis=-1)
    norm_r = nx.sqrt(nx.total(nx.square(recon), axis=-1))
    norm_x = np.linalg.norm(x, axis=-1)
    denom = norm_r * norm_x
    zero = (denom.value == 0.0).astype(float)
    return dot / (denom + zero)


# --------------------------------------------------------------------------
# input scaling


@dataclass
class Normalizer:
    lo: float
    hi: float

    @classmethod
    def fit(cls, windows) -> "Normalizer":
        lo = min(float(np.min(w)) for w in windows)
        hi = max(float(np.max(w)) for w in windows)
        return cls(lo, hi)

    def __call__(self, x) -> np.ndarray:
        span = self.hi - self.lo
        if span <= 0.0:
            span = 1.0
        return (np.asarray(x, dtype=float) - self.lo) / span


# --------------------------------------------------------------------------
# W network


@dataclass
class WBranch:
    encoder: SrnnLayer
    decoder: SrnnLayer
    W_init: Param  # decoder initial hidden state from the fused code
    b_init: Param
    W_out: Param  # (1, hidden) scalar readout
    b_out: Param

    def params(self) -> list[Param]:
        return (
            self.encoder.params()
            + self.decoder.params()
            + [self.W_init, self.b_init, self.W_out, self.b_out]
        )


@dataclass
class WNetwork:
    branches: list[WBranch]
    W_fuse: Param
    b_fuse: Param

    @classmethod
    def create(cls, n_branches: int, hidden: int, latent_dim: int, rng: np.random.Generator):
        if n_branches < 1:
            raise ValueError("W network needs at least one branch")
        branches = []
        for i in range(n_branches):
            skip = (i % MAX_SKIP) + 1
            p = f"w{i}"
            enc = SrnnLayer.create(LstmCell.create(hidden, 1, rng, f"{p}.enc"), skip, rng, f"{p}.enc")
            dec = SrnnLayer.create(LstmCell.create(hidden, 1, rng, f"{p}.dec"), skip, rng, f"{p}.dec")
            branches.append(
                WBranch(
                    enc,
                    dec,
                    init_uniform(rng, (hidden, latent_dim), latent_dim, f"{p}.W_init"),
                    init_uniform(rng, (hidden,), latent_dim, f"{p}.b_init"),
                    init_uniform(rng, (1, hidden), hidden, f"{p}.W_out"),
                    init_uniform(rng, (1,), hidden, f"{p}.b_out"),
                )
            )
        fan_in = n_branches * hidden
        return cls(
            branches,
            init_uniform(rng, (latent_dim, fan_in), fan_in, "w.W_fuse"),
            init_uniform(rng, (latent_dim,), fan_in, "w.b_fuse"),
        )

    @property
    def hidden(self) -> int:
        return self.branches[0].encoder.cell.hidden

    @property
    def latent_dim(self) -> int:
        return self.W_fuse.shape[0]

    def params(self) -> list[Param]:
        out = []
        for b in self.branches:
            out += b.params()
        return out + [self.W_fuse, self.b_fuse]


def _flat_batch(x: np.ndarray, name: str) -> tuple[np.ndarray, tuple]:
    x = np.asarray(x, dtype=nx.DTYPE)
    if x.ndim < 1 or x.shape[-1] < 1:
        raise nx.ShapeError(f"{name} needs windows of length >= 1")
    return x.reshape(-1, x.shape[-1]), x.shape[:-1]


def w_forward(net: WNetwork, x: np.ndarray):
    """Encode a batch ``(..., L)``; return ``(z_c, [reconstruction per branch])``."""
    flat, batch_shape = _flat_batch(x, "w_forward")
    length = flat.shape[-1]
    n = len(net.branches)
    finals = srnn_encode([b.encoder for b in net.branches], flat)
    z_c = nx.matvec(net.W_fuse, nx.concat([finals[k] for k in range(n)], axis=-1)) + net.b_fuse
    h0 = nx.stack([nx.matvec(b.W_init, z_c) + b.b_init for b in net.branches], axis=0)
    recon = srnn_decode(
        [b.decoder for b in net.branches], h0, [(b.W_out, b.b_out) for b in net.branches], length
    )
    recons = [nx.reshape(recon[k], batch_shape + (length,)) for k in range(n)]
    return nx.reshape(z_c, batch_shape + (net.latent_dim,)), recons


def select_branches(rel: np.ndarray, cos: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row branch indices: argmin of relative error, argmax of cosine similarity.

    ``np.argmin``/``np.argmax`` return the first extremum, so ties go to the lowest index.
    """
    return np.argmin(rel, axis=-1), np.argmax(cos, axis=-1)


def w_extended_latent(net: WNetwork, x: np.ndarray, forward=None) -> Var:
    z_c, recons = forward if forward is not None else w_forward(net, x)
    rels = nx.stack([rel_error(x, r) for r in recons], axis=-1)
    coss = nx.stack([cos_similarity(x, r) for r in recons], axis=-1)
    i, j = select_branches(rels.value, coss.value)
    n = len(recons)
    pick_i = np.eye(n)[i]
    pick_j = np.eye(n)[j]
    rel = nx.total(rels * pick_i, axis=-1, keepdims=True)
    cos = nx.total(coss * pick_j, axis=-1, keepdims=True)
    return nx.concat([z_c, rel, cos], axis=-1)


# --------------------------------------------------------------------------
# D network


def dilation_schedule(n_layers: int, base: int = 3) -> list[int]:
    """``[3, 9, 27, ...]``: the first layer already dilates by ``base``."""
    return [base ** (i + 1) for i in range(n_layers)]


@dataclass
class DNetwork:
    encoder: list[DilatedLayer]
    decoder: list[DilatedLayer]
    W_init: list[Param]  # one initial-state map per decoder layer
    b_init: list[Param]
    W_out: Param
    b_out: Param
    W_fuse: Param
    b_fuse: Param

    def __post_init__(self):
        d = self.dilations
        if len(d) < 1:
            raise ValueError("D network needs at least one layer")
        if any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError(f"dilation schedule must increase strictly, got {d}")

    @classmethod
    def create(
        cls,
        n_layers: int,
        hidden: int,
        latent_dim: int,
        rng: np.random.Generator,
        dilations: list[int] | None = None,
    ):
        dilations = dilations or dilation_schedule(n_layers)
        if len(dilations) != n_layers:
            raise ValueError("one dilation per layer")

        def stack(tag):
            return [
                DilatedLayer(GruCell.create(hidden, 1 if i == 0 else hidden, rng, f"d.{tag}{i}"), d)
                for i, d in enumerate(dilations)
            ]

        enc = stack("enc")
        dec = stack("dec")
        fan_in = n_layers * hidden
        return cls(
            enc,
            dec,
            [init_uniform(rng, (hidden, latent_dim), latent_dim, f"d.W_init{i}") for i in range(n_layers)],
            [init_uniform(rng, (hidden,), latent_dim, f"d.b_init{i}") for i in range(n_layers)],
            init_uniform(rng, (1, hidden), hidden, "d.W_out"),
            init_uniform(rng, (1,), hidden, "d.b_out"),
            init_uniform(rng, (latent_dim, fan_in), fan_in, "d.W_fuse"),
            init_uniform(rng, (latent_dim,), fan_in, "d.b_fuse"),
        )

    @property
    def dilations(self) -> list[int]:
        return [layer.dilation for layer in self.encoder]

    @property
    def hidden(self) -> int:
        return self.encoder[0].cell.hidden

    @property
    def latent_dim(self) -> int:
        return self.W_fuse.shape[0]

    def params(self) -> list[Param]:
        out = []
        for layer in self.encoder + self.decoder:
            out += layer.params()
        return out + self.W_init + self.b_init + [self.W_out, self.b_out, self.W_fuse, self.b_fuse]


def d_forward(net: DNetwork, x: np.ndarray):
    """Encode a batch ``(..., L)``; return ``(z_c, reconstruction)``."""
    flat, batch_shape = _flat_batch(x, "d_forward")
    length = flat.shape[-1]
    finals = dilated_encode(net.encoder, flat)
    n = len(net.encoder)
    z_c = nx.matvec(net.W_fuse, nx.concat([finals[k] for k in range(n)], axis=-1)) + net.b_fuse
    inits = [nx.matvec(W, z_c) + b for W, b in zip(net.W_init, net.b_init)]
    recon = dilated_decode(net.decoder, inits, net.W_out, net.b_out, length)
    return nx.reshape(z_c, batch_shape + (net.latent_dim,)), nx.reshape(recon, batch_shape + (length,))


def d_extended_latent(net: DNetwork, x: np.ndarray, forward=None) -> Var:
    z_c, recon = forward if forward is not None else d_forward(net, x)
    rel = rel_error(x, recon)
    cos = cos_similarity(x, recon)
    return nx.concat([z_c, nx.stack([rel], axis=-1), nx.stack([cos], axis=-1)], axis=-1)
