"""Whole-sequence recurrent unrolls recorded as single primitives.

These compute exactly what :func:`cells.unroll_srnn` and
:func:`cells.unroll_dilated` compute step by step (up to float rounding in the
batched matrix products), but keep the time loop inside numpy and backpropagate
through time by hand.  Recording one node per sequence instead of several per
step is what makes training affordable in pure numpy.

Encoders take data ``x`` of shape ``(B, L)``; decoders run autoregressively,
feeding each scalar readout back in as the next input (zero at the first
step), and return their outputs back to front.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import numerics as nx
from .cells import MAX_SKIP, DilatedLayer, SrnnLayer, _sig
from .numerics import Param, Var

PAD = MAX_SKIP


def _bmm_t(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``a @ w^T`` per stacked branch: ``(N, B, I) x (N, O, I) -> (N, B, O)``."""
    return np.matmul(a, w.transpose(0, 2, 1))


# --------------------------------------------------------------------------
# SRNN with LSTM cells, several independent branches stacked on axis 0


def _srnn_params(layers: Sequence[SrnnLayer]):
    for layer in layers:
        if not layer.is_lstm:
            raise TypeError("fused SRNN unroll supports LSTM cells only")
    cells = [layer.cell for layer in layers]
    Wc = np.stack([np.concatenate([c.W_o.value, c.W_f.value, c.W_i.value, c.W_c.value]) for c in cells])
    bc = np.stack([np.concatenate([c.b_o.value, c.b_f.value, c.b_i.value, c.b_c.value]) for c in cells])
    Wl = np.stack([layer.W_l.value for layer in layers])
    bl = np.stack([layer.b_l.value for layer in layers])
    return Wc, bc, Wl, bl


def _srnn_inputs(layers: Sequence[SrnnLayer]) -> list[Param]:
    out = []
    for layer in layers:
        c = layer.cell
        out += [c.W_o, c.W_f, c.W_i, c.W_c, c.b_o, c.b_f, c.b_i, c.b_c, layer.W_l, layer.b_l]
    return out


def _srnn_param_grads(dWc, dbc, dWl, dbl) -> list[np.ndarray]:
    out = []
    for n in range(len(dWc)):
        out += [*np.split(dWc[n], 4), *np.split(dbc[n], 4), dWl[n], dbl[n]]
    return out


def _srnn_run(layers, h0, c0, length, x=None, readout=None):
    """Forward pass shared by encoder (``x`` given) and decoder (``readout`` given).

    Returns the padded hidden history, saved per-step tensors, and the
    readouts ``(N, B, L)`` when decoding.
    """
    Wc, bc, Wl, bl = _srnn_params(layers)
    n, batch, H = h0.shape
    skips = np.array([layer.skip for layer in layers])
    sched = np.stack([layer.gates[np.arange(length) % len(layer.gates)] for layer in layers]).astype(float)
    g1, g2 = sched[..., 0], sched[..., 1]
    rows = np.arange(n)
    hist = np.empty((PAD + length, n, batch, H))
    hist[:PAD] = h0
    c_prev = c0
    ys = np.empty((n, batch, length)) if readout is not None else None
    if readout is not None:
        Wo, bo = readout
    feed = np.zeros((n, batch, 1))
    saved = []
    for t in range(length):
        if x is not None:
            feed = np.broadcast_to(x[None, :, t : t + 1], (n, batch, 1))
        hx = np.concatenate([hist[PAD + t - 1], feed], axis=-1)
        a = _bmm_t(hx, Wc) + bc[:, None, :]
        gates = _sig(a[..., : 3 * H])
        o, f, i = gates[..., :H], gates[..., H : 2 * H], gates[..., 2 * H :]
        ct = np.tanh(a[..., 3 * H :])
        cn = f * c_prev + i * ct
        hc = o * cn
        hsx = np.concatenate([hist[PAD + t - skips, rows], feed], axis=-1)
        hl = _bmm_t(hsx, Wl) + bl[:, None, :]
        w1 = g1[:, t, None, None]
        w2 = g2[:, t, None, None]
        hist[PAD + t] = (w1 * hc + w2 * hl) / (w1 + w2)
        c_next = np.where(w1 > 0, cn, c_prev)
        saved.append((hx, gates, ct, cn, c_prev, hsx, w1, w2))
        c_prev = c_next
        if readout is not None:
            y = _bmm_t(hist[PAD + t], Wo) + bo[:, None, :]
            ys[:, :, t] = y[..., 0]
            feed = y
    return (Wc, bc, Wl, bl, skips, rows), hist, saved, c_prev, ys


def _outer_sum(grads: list, inputs: list) -> np.ndarray:
    """``sum_t grads[t]^T @ inputs[t]`` per branch, as one matrix product."""
    g = np.stack(grads, axis=1)  # (N, T, B, O)
    x = np.stack(inputs, axis=1)  # (N, T, B, I)
    n = g.shape[0]
    return np.matmul(g.reshape(n, -1, g.shape[-1]).transpose(0, 2, 1), x.reshape(n, -1, x.shape[-1]))


def _srnn_backward(consts, hist, saved, dhist, length, readout=None, gys=None):
    Wc, bc, Wl, bl, skips, rows = consts
    n, batch, H = hist.shape[1:]
    dc = np.zeros((n, batch, H))
    if readout is not None:
        Wo, _ = readout
        dys = []
    das, hxs, dhls, hsxs = [], [], [], []
    dfeed = np.zeros((n, batch, 1))
    for t in range(length - 1, -1, -1):
        hx, gates, ct, cn, c_prev, hsx, w1, w2 = saved[t]
        dh = dhist[PAD + t]
        if readout is not None:
            dy = gys[:, :, t, None] + dfeed  # (N, B, 1)
            dh = dh + np.matmul(dy, Wo)
            dys.append(dy)
        den = w1 + w2
        dhc = dh * (w1 / den)
        dhl = dh * (w2 / den)
        o, f, i = gates[..., :H], gates[..., H : 2 * H], gates[..., 2 * H :]
        dcn = dc * w1 + dhc * o
        dgates = np.concatenate([dhc * cn, dcn * c_prev, dcn * ct], axis=-1) * gates * (1.0 - gates)
        da = np.concatenate([dgates, dcn * i * (1.0 - ct * ct)], axis=-1)
        dhx = np.matmul(da, Wc)
        dhist[PAD + t - 1] += dhx[..., :H]
        dhsx = np.matmul(dhl, Wl)
        for k in range(n):
            dhist[PAD + t - skips[k], k] += dhsx[k, :, :H]
        dc = dcn * f + dc * (1.0 - w1)
        dfeed = dhx[..., H:] + dhsx[..., H:]
        das.append(da)
        hxs.append(hx)
        dhls.append(dhl)
        hsxs.append(hsx)
    dWc = _outer_sum(das, hxs)
    dbc = np.stack(das, axis=1).sum(axis=(1, 2))
    dWl = _outer_sum(dhls, hsxs)
    dbl = np.stack(dhls, axis=1).sum(axis=(1, 2))
    grads = _srnn_param_grads(dWc, dbc, dWl, dbl)
    dh0 = dhist[:PAD].sum(axis=0)
    extra = None
    if readout is not None:
        states = [hist[PAD + t] for t in range(length - 1, -1, -1)]
        extra = (_outer_sum(dys, states), np.stack(dys, axis=1).sum(axis=(1, 2)))
    return dh0, dc, grads, extra


def srnn_encode(layers: Sequence[SrnnLayer], x: np.ndarray) -> Var:
    """Final hidden state of each SRNN layer run over ``x`` ``(B, L)`` from zero state: ``(N, B, H)``."""
    x = np.asarray(x, dtype=nx.DTYPE)
    if x.ndim != 2 or x.shape[1] < 1:
        raise nx.ShapeError(f"srnn_encode needs (B, L) windows, got {x.shape}")
    H = layers[0].cell.hidden
    n, batch, length = len(layers), x.shape[0], x.shape[1]
    zeros = np.zeros((n, batch, H))
    consts, hist, saved, _, _ = _srnn_run(layers, zeros, zeros, length, x=x)

    def vjp(g):
        dhist = np.zeros_like(hist)
        dhist[PAD + length - 1] = g
        _, _, grads, _ = _srnn_backward(consts, hist, saved, dhist, length)
        return grads

    return nx.primitive(hist[PAD + length - 1].copy(), _srnn_inputs(layers), vjp)


def srnn_decode(layers: Sequence[SrnnLayer], h0, readouts: Sequence[tuple[Param, Param]], length: int) -> Var:
    """Autoregressive reconstructions ``(N, B, L)`` in original time order.

    ``h0`` ``(N, B, H)`` is each decoder's initial hidden state (memory starts
    at zero); ``readouts`` holds one ``(W_out (1, H), b_out (1,))`` per layer.
    """
    h0v = nx._val(h0)
    n, batch, H = h0v.shape
    Wo = np.stack([w.value for w, _ in readouts])
    bo = np.stack([b.value for _, b in readouts])
    consts, hist, saved, _, ys = _srnn_run(
        layers, h0v, np.zeros((n, batch, H)), length, readout=(Wo, bo)
    )

    def vjp(g):
        dhist = np.zeros_like(hist)
        dh0, _, grads, (dWo, dbo) = _srnn_backward(
            consts, hist, saved, dhist, length, readout=(Wo, bo), gys=g[..., ::-1]
        )
        head = []
        for k in range(n):
            head += [dWo[k], dbo[k]]
        return [dh0, *grads, *head]

    inputs = [h0, *_srnn_inputs(layers)]
    for w, b in readouts:
        inputs += [w, b]
    return nx.primitive(ys[..., ::-1].copy(), inputs, vjp)


# --------------------------------------------------------------------------
# stacked dilated GRU


def _gru_forward(cell, hv, xv):
    Wu, Wh, Wr = cell.W_u.value, cell.W_h.value, cell.W_r.value
    hx = np.concatenate([hv, xv], axis=-1)
    u = _sig(hx @ Wu.T + cell.b_u.value)
    r = _sig(hx @ Wr.T + cell.b_r.value)
    hx2 = np.concatenate([r * hv, xv], axis=-1)
    ht = np.tanh(hx2 @ Wh.T + cell.b_h.value)
    return (1.0 - u) * hv + u * ht, (hx, hx2, u, r, ht, hv)


def _gru_backward(cell, g, saved, acc):
    hx, hx2, u, r, ht, hv = saved
    H = hv.shape[-1]
    Wu, Wh, Wr = cell.W_u.value, cell.W_h.value, cell.W_r.value
    da_u = g * (ht - hv) * u * (1.0 - u)
    da_h = g * u * (1.0 - ht * ht)
    dhx2 = da_h @ Wh
    drh = dhx2[..., :H]
    da_r = drh * hv * r * (1.0 - r)
    dhx = da_u @ Wu + da_r @ Wr
    acc[0] += da_u.T @ hx
    acc[1] += da_h.T @ hx2
    acc[2] += da_r.T @ hx
    acc[3] += da_u.sum(axis=0)
    acc[4] += da_h.sum(axis=0)
    acc[5] += da_r.sum(axis=0)
    return g * (1.0 - u) + drh * r + dhx[..., :H], dhx2[..., H:] + dhx[..., H:]


def _gru_inputs(layers: Sequence[DilatedLayer]) -> list[Param]:
    out = []
    for layer in layers:
        c = layer.cell
        out += [c.W_u, c.W_h, c.W_r, c.b_u, c.b_h, c.b_r]
    return out


def _dilated_run(layers, inits, length, x=None, readout=None):
    batch = inits[0].shape[0]
    hists = []
    for layer, h0 in zip(layers, inits):
        d = layer.dilation
        hist = np.empty((d + length,) + h0.shape)
        hist[:d] = h0
        hists.append(hist)
    saved = [[None] * length for _ in layers]
    ys = np.empty((batch, length)) if readout is not None else None
    feed = np.zeros((batch, 1))
    for t in range(length):
        if x is not None:
            feed = x[:, t : t + 1]
        for l, layer in enumerate(layers):
            d = layer.dilation
            h, saved[l][t] = _gru_forward(layer.cell, hists[l][t], feed)
            hists[l][d + t] = h
            feed = h
        if readout is not None:
            Wo, bo = readout
            feed = feed @ Wo.T + bo
            ys[:, t] = feed[:, 0]
    return hists, saved, ys


def _dilated_backward(layers, hists, saved, dhists, length, readout=None, gys=None):
    accs = [
        [np.zeros_like(p.value) for p in (l.cell.W_u, l.cell.W_h, l.cell.W_r, l.cell.b_u, l.cell.b_h, l.cell.b_r)]
        for l in layers
    ]
    top = len(layers) - 1
    if readout is not None:
        Wo, _ = readout
        dWo, dbo = np.zeros_like(Wo), np.zeros(1)
    dfeed = None
    for t in range(length - 1, -1, -1):
        if readout is not None:
            dy = gys[:, t : t + 1] + (dfeed if dfeed is not None else 0.0)
            d = layers[top].dilation
            dhists[top][d + t] += dy @ Wo
            dWo += dy.T @ hists[top][d + t]
            dbo += dy.sum(axis=0)
        for l in range(top, -1, -1):
            d = layers[l].dilation
            dprev, din = _gru_backward(layers[l].cell, dhists[l][d + t], saved[l][t], accs[l])
            dhists[l][t] += dprev
            if l > 0:
                dhists[l - 1][layers[l - 1].dilation + t] += din
            else:
                dfeed = din
    grads = [g for acc in accs for g in acc]
    dinits = [dh[: layer.dilation].sum(axis=0) for dh, layer in zip(dhists, layers)]
    extra = (dWo, dbo) if readout is not None else None
    return dinits, grads, extra


def dilated_encode(layers: Sequence[DilatedLayer], x: np.ndarray) -> Var:
    """Final state of every layer of the dilated stack over ``x`` ``(B, L)``: ``(N_L, B, H)``."""
    x = np.asarray(x, dtype=nx.DTYPE)
    if x.ndim != 2 or x.shape[1] < 1:
        raise nx.ShapeError(f"dilated_encode needs (B, L) windows, got {x.shape}")
    batch, length = x.shape
    inits = [np.zeros((batch, layer.cell.hidden)) for layer in layers]
    hists, saved, _ = _dilated_run(layers, inits, length, x=x)
    finals = np.stack([h[-1] for h in hists])

    def vjp(g):
        dhists = [np.zeros_like(h) for h in hists]
        for l, dh in enumerate(dhists):
            dh[-1] += g[l]
        _, grads, _ = _dilated_backward(layers, hists, saved, dhists, length)
        return grads

    return nx.primitive(finals, _gru_inputs(layers), vjp)


def dilated_decode(layers: Sequence[DilatedLayer], inits: Sequence, W_out: Param, b_out: Param, length: int) -> Var:
    """Autoregressive reconstruction ``(B, L)`` in original time order from per-layer initial states."""
    init_vals = [nx._val(h) for h in inits]
    readout = (W_out.value, b_out.value)
    hists, saved, ys = _dilated_run(layers, init_vals, length, readout=readout)

    def vjp(g):
        dhists = [np.zeros_like(h) for h in hists]
        dinits, grads, (dWo, dbo) = _dilated_backward(
            layers, hists, saved, dhists, length, readout=readout, gys=g[:, ::-1]
        )
        return [*dinits, *grads, dWo, dbo]

    return nx.primitive(ys[:, ::-1].copy(), [*inits, *_gru_inputs(layers), W_out, b_out], vjp)
