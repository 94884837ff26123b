"""The two-branch model container and its versioned JSON document."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .compression import (
    DNetwork,
    Normalizer,
    WNetwork,
    d_extended_latent,
    d_forward,
    w_extended_latent,
    w_forward,
)
from .gmm import GmmModel, MembershipNet, init_gmm, log_membership, mixture_weights
from .numerics import Param, Var

FORMAT_VERSION = 1
MODEL_KIND = "etnet-model"
CHUNK = 512


class IncompatibleFileError(ValueError):
    pass


@dataclass
class TrainConfig:
    lam: float = 0.1
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 64
    seed: int = 0
    n_branches: int = 3
    n_layers: int = 2
    hidden_dim: int = 18
    latent_dim: int | None = None
    gmm_k: int = 4
    em_iters_per_epoch: int = 5
    membership_hidden: int = 8

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        for name in ("epochs", "em_iters_per_epoch"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("batch_size", "n_branches", "n_layers", "hidden_dim", "gmm_k", "membership_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")

    @property
    def code_dim(self) -> int:
        return self.latent_dim or self.hidden_dim


@dataclass
class BranchOutput:
    z: Var  # extended latent (..., code_dim + 2)
    recons: list  # one Var (..., L) per decoder
    log_gamma: Var  # (..., K)


@dataclass
class Branch:
    kind: str  # "W" or "D"
    net: WNetwork | DNetwork
    member: MembershipNet
    gmm: GmmModel | None = None

    def params(self) -> list[Param]:
        return self.net.params() + self.member.params()

    def forward(self, x: np.ndarray) -> BranchOutput:
        """``x`` is an already-normalized batch ``(..., L)``."""
        if self.kind == "W":
            fwd = w_forward(self.net, x)
            z = w_extended_latent(self.net, x, forward=fwd)
            recons = fwd[1]
        else:
            fwd = d_forward(self.net, x)
            z = d_extended_latent(self.net, x, forward=fwd)
            recons = [fwd[1]]
        return BranchOutput(z, recons, log_membership(self.member, z))

    def latents(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Extended latents and memberships for a normalized batch, without recording."""
        zs, gs = [], []
        for lo in range(0, len(x), CHUNK):
            out = self.forward(x[lo : lo + CHUNK])
            zs.append(out.z.value)
            gs.append(np.exp(out.log_gamma.value))
        return np.concatenate(zs), np.concatenate(gs)

    def reconstructions(self, x: np.ndarray) -> list[np.ndarray]:
        return [r.value for r in self.forward(x).recons]


@dataclass
class EtNetModel:
    w: Branch
    d: Branch
    normalizer: Normalizer
    config: TrainConfig
    seed: int
    extra: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.config.gmm_k

    def branches(self) -> list[Branch]:
        return [self.w, self.d]

    def normalize(self, windows) -> np.ndarray:
        return self.normalizer(np.asarray(windows, dtype=float))


def _seeds(seed: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(6)]


def build_model(cfg: TrainConfig, windows) -> EtNetModel:
    """Fresh parameters, training-set scaling, and GMMs seeded from the initial latents."""
    windows = np.asarray(windows, dtype=float)
    if windows.ndim != 2 or len(windows) == 0:
        raise ValueError("build_model needs a non-empty (N, L) array of windows")
    rw, rd, rmw, rmd, rgw, rgd = _seeds(cfg.seed)
    dim = cfg.code_dim + 2
    w = Branch(
        "W",
        WNetwork.create(cfg.n_branches, cfg.hidden_dim, cfg.code_dim, rw),
        MembershipNet.create(dim, cfg.gmm_k, rmw, cfg.membership_hidden, "w.gm"),
    )
    d = Branch(
        "D",
        DNetwork.create(cfg.n_layers, cfg.hidden_dim, cfg.code_dim, rd),
        MembershipNet.create(dim, cfg.gmm_k, rmd, cfg.membership_hidden, "d.gm"),
    )
    model = EtNetModel(w, d, Normalizer.fit(windows), cfg, cfg.seed, {"window_length": int(windows.shape[1])})
    xn = model.normalize(windows)
    for branch, rng in ((w, rgw), (d, rgd)):
        z, gamma = branch.latents(xn)
        branch.gmm = init_gmm(z, cfg.gmm_k, rng)
        branch.gmm.phi = mixture_weights(gamma)
    return model


# --------------------------------------------------------------------------
# persistence


def _arr(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def to_document(model: EtNetModel) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": MODEL_KIND,
        "seed": model.seed,
        "config": asdict(model.config),
        "normalizer": {"lo": model.normalizer.lo, "hi": model.normalizer.hi},
        "extra": model.extra,
    }
    for branch in model.branches():
        entry = {
            "params": {p.name: _arr(p.value) for p in branch.params()},
            "gmm": {
                "phi": _arr(branch.gmm.phi),
                "mu": _arr(branch.gmm.mu),
                "sigma": _arr(branch.gmm.sigma),
                "reg_epsilon": branch.gmm.reg_epsilon,
            },
        }
        if branch.kind == "W":
            entry["skips"] = [b.encoder.skip for b in branch.net.branches]
            entry["gates"] = [
                {"encoder": b.encoder.gates.tolist(), "decoder": b.decoder.gates.tolist()}
                for b in branch.net.branches
            ]
        else:
            entry["dilations"] = branch.net.dilations
        doc[branch.kind] = entry
    return doc


def dumps(model: EtNetModel) -> str:
    return json.dumps(to_document(model), sort_keys=True)


def save(model: EtNetModel, path) -> None:
    Path(path).write_text(dumps(model))


def from_document(doc: dict) -> EtNetModel:
    if doc.get("kind") != MODEL_KIND:
        raise IncompatibleFileError(f"not a model document (kind={doc.get('kind')!r})")
    if doc.get("format_version") != FORMAT_VERSION:
        raise IncompatibleFileError(
            f"model format version {doc.get('format_version')} is not supported (expected {FORMAT_VERSION})"
        )
    cfg = TrainConfig(**doc["config"])
    scratch = np.random.default_rng(0)
    dim = cfg.code_dim + 2
    w_doc, d_doc = doc["W"], doc["D"]
    wnet = WNetwork.create(cfg.n_branches, cfg.hidden_dim, cfg.code_dim, scratch)
    for b, skip, gates in zip(wnet.branches, w_doc["skips"], w_doc["gates"]):
        b.encoder.skip = b.decoder.skip = skip
        b.encoder.gates = np.asarray(gates["encoder"], dtype=np.int64)
        b.decoder.gates = np.asarray(gates["decoder"], dtype=np.int64)
    dnet = DNetwork.create(cfg.n_layers, cfg.hidden_dim, cfg.code_dim, scratch, list(d_doc["dilations"]))
    w = Branch("W", wnet, MembershipNet.create(dim, cfg.gmm_k, scratch, cfg.membership_hidden, "w.gm"))
    d = Branch("D", dnet, MembershipNet.create(dim, cfg.gmm_k, scratch, cfg.membership_hidden, "d.gm"))
    for branch, entry in ((w, w_doc), (d, d_doc)):
        stored = entry["params"]
        for p in branch.params():
            value = np.asarray(stored[p.name], dtype=float)
            if value.shape != p.value.shape:
                raise IncompatibleFileError(f"parameter {p.name}: shape {value.shape} != {p.value.shape}")
            p.value = value
        g = entry["gmm"]
        branch.gmm = GmmModel(
            np.asarray(g["phi"], dtype=float),
            np.asarray(g["mu"], dtype=float),
            np.asarray(g["sigma"], dtype=float),
            float(g["reg_epsilon"]),
        )
    norm = Normalizer(doc["normalizer"]["lo"], doc["normalizer"]["hi"])
    return EtNetModel(w, d, norm, cfg, doc["seed"], doc.get("extra", {}))


def load(path) -> EtNetModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise IncompatibleFileError(f"{path}: not valid JSON ({exc})") from None
    return from_document(doc)


def recon_mse(model: EtNetModel, windows) -> dict[str, float]:
    """Mean squared reconstruction error per point, per branch (normalized units)."""
    xn = model.normalize(windows)
    out = {}
    for branch in model.branches():
        errs = [np.mean((r - xn) ** 2) for r in branch.reconstructions(xn)]
        out[branch.kind] = float(np.mean(errs))
    return out
