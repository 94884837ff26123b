"""Recurrent primitives: LSTM and GRU cells, skip-gated SRNN layers, dilated layers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .numerics import Param, Var, init_uniform

# (w1, w2) choices for the skip gates; (0, 0) is excluded.
GATE_CHOICES = np.array([[1, 0], [0, 1], [1, 1]], dtype=np.int64)
MAX_SKIP = 3
SCHEDULE_LEN = 512


def _column(x) -> Var | np.ndarray:
    """Scalars and per-sample scalars become ``(..., 1)`` vectors."""
    if isinstance(x, Var):
        return x
    x = np.asarray(x, dtype=nx.DTYPE)
    return x.reshape(1) if x.ndim == 0 else x


@dataclass
class LstmCell:
    W_o: Param
    W_f: Param
    W_i: Param
    W_c: Param
    b_o: Param
    b_f: Param
    b_i: Param
    b_c: Param

    @classmethod
    def create(cls, hidden: int, inputs: int, rng: np.random.Generator, prefix: str = "lstm"):
        fan_in = hidden + inputs
        weights = {
            f"W_{g}": init_uniform(rng, (hidden, fan_in), fan_in, f"{prefix}.W_{g}") for g in "ofic"
        }
        biases = {f"b_{g}": init_uniform(rng, (hidden,), fan_in, f"{prefix}.b_{g}") for g in "ofic"}
        return cls(**weights, **biases)

    @property
    def hidden(self) -> int:
        return self.W_o.shape[0]

    @property
    def inputs(self) -> int:
        return self.W_o.shape[1] - self.W_o.shape[0]

    def params(self) -> list[Param]:
        return [self.W_o, self.W_f, self.W_i, self.W_c, self.b_o, self.b_f, self.b_i, self.b_c]


@dataclass
class GruCell:
    W_u: Param
    W_h: Param
    W_r: Param
    b_u: Param
    b_h: Param
    b_r: Param

    @classmethod
    def create(cls, hidden: int, inputs: int, rng: np.random.Generator, prefix: str = "gru"):
        fan_in = hidden + inputs
        weights = {
            f"W_{g}": init_uniform(rng, (hidden, fan_in), fan_in, f"{prefix}.W_{g}") for g in "uhr"
        }
        biases = {f"b_{g}": init_uniform(rng, (hidden,), fan_in, f"{prefix}.b_{g}") for g in "uhr"}
        return cls(**weights, **biases)

    @property
    def hidden(self) -> int:
        return self.W_u.shape[0]

    @property
    def inputs(self) -> int:
        return self.W_u.shape[1] - self.W_u.shape[0]

    def params(self) -> list[Param]:
        return [self.W_u, self.W_h, self.W_r, self.b_u, self.b_h, self.b_r]


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1])


def _sig(a: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def lstm_step(cell: LstmCell, h_prev, c_prev, x_t):
    """One LSTM update; the hidden output is ``o * c`` with no squashing of the memory.

    Recorded as a single primitive whose output is ``[h, c]``.
    """
    x_t = _column(x_t)
    hv, cv, xv = nx._val(h_prev), nx._val(c_prev), nx._val(x_t)
    H = cell.hidden
    if hv.shape[-1] != H or xv.shape[-1] != cell.inputs:
        raise nx.ShapeError(f"lstm_step: state {hv.shape} / input {xv.shape} vs cell {H}x{cell.inputs}")
    shapes = hv.shape, cv.shape, xv.shape
    batch = np.broadcast_shapes(hv.shape[:-1], cv.shape[:-1], xv.shape[:-1])
    hv = np.broadcast_to(hv, batch + (H,))
    cv = np.broadcast_to(cv, batch + (H,))
    xv = np.broadcast_to(xv, batch + xv.shape[-1:])
    hx = np.concatenate([hv, xv], axis=-1)
    W = np.concatenate([cell.W_o.value, cell.W_f.value, cell.W_i.value, cell.W_c.value])
    b = np.concatenate([cell.b_o.value, cell.b_f.value, cell.b_i.value, cell.b_c.value])
    pre = hx @ W.T + b
    gates = _sig(pre[..., : 3 * H])
    o, f, i = gates[..., :H], gates[..., H : 2 * H], gates[..., 2 * H :]
    ct = np.tanh(pre[..., 3 * H :])
    c = f * cv + i * ct
    h = o * c

    def vjp(g):
        gh, gc = g[..., :H], g[..., H:]
        dc = gc + gh * o
        dgates = np.concatenate([gh * c, dc * cv, dc * ct], axis=-1) * gates * (1.0 - gates)
        da = np.concatenate([dgates, dc * i * (1.0 - ct * ct)], axis=-1)
        dhx = da @ W
        da_flat = _flat(da)
        dW = da_flat.T @ _flat(hx)
        db = da_flat.sum(axis=0)
        return (
            nx._unbroadcast(dhx[..., :H], shapes[0]),
            nx._unbroadcast(dc * f, shapes[1]),
            nx._unbroadcast(dhx[..., H:], shapes[2]),
            *np.split(dW, 4),
            *np.split(db, 4),
        )

    out = nx.primitive(
        np.concatenate([h, c], axis=-1),
        (h_prev, c_prev, x_t, cell.W_o, cell.W_f, cell.W_i, cell.W_c, cell.b_o, cell.b_f, cell.b_i, cell.b_c),
        vjp,
    )
    return out[..., :H], out[..., H:]


def gru_step(cell: GruCell, h_prev, x_t) -> Var:
    """One GRU update, recorded as a single primitive."""
    x_t = _column(x_t)
    hv, xv = nx._val(h_prev), nx._val(x_t)
    H = cell.hidden
    if hv.shape[-1] != H or xv.shape[-1] != cell.inputs:
        raise nx.ShapeError(f"gru_step: state {hv.shape} / input {xv.shape} vs cell {H}x{cell.inputs}")
    shapes = hv.shape, xv.shape
    batch = np.broadcast_shapes(hv.shape[:-1], xv.shape[:-1])
    hv = np.broadcast_to(hv, batch + (H,))
    xv = np.broadcast_to(xv, batch + xv.shape[-1:])
    Wu, Wh, Wr = cell.W_u.value, cell.W_h.value, cell.W_r.value
    hx = np.concatenate([hv, xv], axis=-1)
    u = _sig(hx @ Wu.T + cell.b_u.value)
    r = _sig(hx @ Wr.T + cell.b_r.value)
    hx2 = np.concatenate([r * hv, xv], axis=-1)
    ht = np.tanh(hx2 @ Wh.T + cell.b_h.value)
    h = (1.0 - u) * hv + u * ht

    def vjp(g):
        da_u = g * (ht - hv) * u * (1.0 - u)
        da_h = g * u * (1.0 - ht * ht)
        dhx2 = da_h @ Wh
        drh = dhx2[..., :H]
        da_r = drh * hv * r * (1.0 - r)
        dhx = da_u @ Wu + da_r @ Wr
        dh = g * (1.0 - u) + drh * r + dhx[..., :H]
        dx = dhx2[..., H:] + dhx[..., H:]
        hx_flat = _flat(hx)
        return (
            nx._unbroadcast(dh, shapes[0]),
            nx._unbroadcast(dx, shapes[1]),
            _flat(da_u).T @ hx_flat,
            _flat(da_h).T @ _flat(hx2),
            _flat(da_r).T @ hx_flat,
            _flat(da_u).sum(axis=0),
            _flat(da_h).sum(axis=0),
            _flat(da_r).sum(axis=0),
        )

    return nx.primitive(h, (h_prev, x_t, cell.W_u, cell.W_h, cell.W_r, cell.b_u, cell.b_h, cell.b_r), vjp)


@dataclass
class History:
    """States indexed by timestep; negative or missing lookups fall back to ``initial``."""

    initial: object
    states: list = field(default_factory=list)

    def at(self, t: int):
        return self.initial if t < 0 else self.states[t]

    def push(self, state) -> None:
        self.states.append(state)

    def __len__(self):
        return len(self.states)


@dataclass
class SrnnLayer:
    cell: LstmCell | GruCell
    skip: int
    W_l: Param
    b_l: Param
    gates: np.ndarray  # (SCHEDULE_LEN, 2) of {0, 1}

    def __post_init__(self):
        if not 1 <= self.skip <= MAX_SKIP:
            raise ValueError(f"skip must lie in [1, {MAX_SKIP}], got {self.skip}")
        if np.any(self.gates.sum(axis=1) < 1):
            raise ValueError("every timestep needs at least one open gate")

    @classmethod
    def create(cls, cell, skip: int, rng: np.random.Generator, prefix: str = "srnn"):
        fan_in = cell.hidden + cell.inputs
        W_l = init_uniform(rng, (cell.hidden, fan_in), fan_in, f"{prefix}.W_l")
        b_l = init_uniform(rng, (cell.hidden,), fan_in, f"{prefix}.b_l")
        gates = GATE_CHOICES[rng.integers(0, len(GATE_CHOICES), size=SCHEDULE_LEN)]
        return cls(cell, skip, W_l, b_l, gates)

    @property
    def is_lstm(self) -> bool:
        return isinstance(self.cell, LstmCell)

    def gate(self, t: int) -> tuple[int, int]:
        w1, w2 = self.gates[t % len(self.gates)]
        return int(w1), int(w2)

    def params(self) -> list[Param]:
        return self.cell.params() + [self.W_l, self.b_l]


def srnn_step(layer: SrnnLayer, history: History, t: int, x_t):
    """Advance ``layer`` to step ``t``.

    Mixes the cell path on the previous state with a linear path on the state
    ``skip`` steps back, averaged over whichever gates are open.  For LSTM
    cells ``history`` holds ``(h, c)`` pairs; the memory follows the cell path
    and is carried over unchanged on steps where the cell path is gated off.
    """
    if history.initial is None and t - 1 < 0:
        raise ValueError("srnn_step at t=0 needs an initial state")
    w1, w2 = layer.gate(t)
    prev = history.at(t - 1)
    x_t = _column(x_t)
    if layer.is_lstm:
        h_prev, c_prev = prev
    else:
        h_prev, c_prev = prev, None

    if w1:
        if layer.is_lstm:
            h_cell, c = lstm_step(layer.cell, h_prev, c_prev, x_t)
        else:
            h_cell, c = gru_step(layer.cell, h_prev, x_t), None
    else:
        c = c_prev
    if w2:
        skipped = history.at(t - layer.skip)
        h_skip_prev = skipped[0] if layer.is_lstm else skipped
        h_lin = nx.matvec(layer.W_l, nx.concat([h_skip_prev, x_t], axis=-1)) + layer.b_l

    if w1 and w2:
        h = (h_cell + h_lin) * 0.5
    elif w1:
        h = h_cell
    else:
        h = h_lin
    return (h, c) if layer.is_lstm else h


@dataclass
class DilatedLayer:
    cell: GruCell
    dilation: int

    def __post_init__(self):
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")

    def params(self) -> list[Param]:
        return self.cell.params()


def dilated_step(layer: DilatedLayer, lower_output, history: History, t: int) -> Var:
    """``h(t) = GRU(h(t - d), lower(t))``; lookups before ``t = 0`` use the initial state."""
    return gru_step(layer.cell, history.at(t - layer.dilation), lower_output)


def unroll_srnn(layer: SrnnLayer, xs, initial) -> list:
    """Run ``layer`` over the columns of ``xs`` (shape ``(..., L)``)."""
    history = History(initial)
    xs_val = xs.value if isinstance(xs, Var) else np.asarray(xs, dtype=nx.DTYPE)
    for t in range(xs_val.shape[-1]):
        x_t = xs[..., t : t + 1] if isinstance(xs, Var) else xs_val[..., t : t + 1]
        history.push(srnn_step(layer, history, t, x_t))
    return history.states


def unroll_dilated(layer: DilatedLayer, inputs: list, initial) -> list:
    history = History(initial)
    for t, lower in enumerate(inputs):
        history.push(dilated_step(layer, lower, history, t))
    return history.states
