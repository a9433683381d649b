"""Pure numpy versions of the message-passing kernels (same signatures)."""

from __future__ import annotations

import numpy as np


def _segments(indptr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    starts = indptr[:-1]
    return starts, np.diff(indptr)


def attention_forward(s_src, s_dst, edge_bias, src, indptr, slope):
    starts, counts = _segments(indptr)
    dst = np.repeat(np.arange(len(counts)), counts)
    pre = s_src[:, src, :] + s_dst[:, dst, :] + edge_bias[None]
    act = np.where(pre < 0, slope * pre, pre)
    peak = np.maximum.reduceat(act, starts, axis=1)
    ex = np.exp(act - np.repeat(peak, counts, axis=1))
    tot = np.add.reduceat(ex, starts, axis=1)
    return ex / np.repeat(tot, counts, axis=1), pre


def aggregate(alpha, z, src, indptr):
    starts, _ = _segments(indptr)
    msg = alpha[..., None] * z[:, src]
    return np.add.reduceat(msg, starts, axis=1)


def aggregate_backward(alpha, z, dout, src, indptr):
    _, counts = _segments(indptr)
    dout_arc = np.repeat(dout, counts, axis=1)
    dalpha = np.einsum("bekf,bekf->bek", dout_arc, z[:, src])
    dz = np.zeros_like(z)
    np.add.at(dz, (slice(None), src), alpha[..., None] * dout_arc)
    return dalpha, dz


def attention_backward(alpha, pre, dalpha, src, indptr, n_nodes, slope):
    starts, counts = _segments(indptr)
    dot = np.add.reduceat(alpha * dalpha, starts, axis=1)
    g = alpha * (dalpha - np.repeat(dot, counts, axis=1))
    g = np.where(pre < 0, slope * g, g)
    ds_src = np.zeros((alpha.shape[0], n_nodes, alpha.shape[2]))
    np.add.at(ds_src, (slice(None), src), g)
    ds_dst = np.add.reduceat(g, starts, axis=1)
    return g, ds_src, ds_dst
