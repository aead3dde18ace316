"""Differentiable 1-D CNN building blocks.

Inputs are ``(C, L)`` / ``(F,)`` or carry a leading batch axis
``(B, C, L)`` / ``(B, F)``.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, _as_tensor, _node, is_tensor, relu  # noqa: F401


def _window_index(length, kernel, stride):
    n_out = (length - kernel) // stride + 1
    return np.arange(kernel)[:, None] + stride * np.arange(n_out)[None, :]


def conv1d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of ``x (..., C_in, L)`` with ``weight (C_out, C_in, K)``."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    c_out, c_in, k = weight.shape
    if x.shape[-2] != c_in:
        raise ValueError(f"conv1d expects {c_in} input channels, got {x.shape[-2]}")
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    length = xd.shape[-1]
    if length + 2 * padding < k:
        raise ValueError("input too short for kernel")
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    idx = _window_index(xp.shape[-1], k, stride)
    cols = xp[:, :, idx]                                   # (B, C_in, K, L_out)
    out = np.einsum("ock,bckl->bol", weight.data, cols, optimize=True)
    parents = [x, weight]
    if bias is not None:
        bias = _as_tensor(bias)
        out = out + bias.data[None, :, None]
        parents.append(bias)

    def back(g):
        g3 = g[None] if squeeze else g
        gw = np.einsum("bol,bckl->ock", g3, cols, optimize=True)
        dcols = np.einsum("ock,bol->bckl", weight.data, g3, optimize=True)
        dxp = np.zeros_like(xp)
        for j in range(k):
            dxp[:, :, idx[j]] += dcols[:, :, j, :]
        dx = dxp[:, :, padding:padding + length] if padding else dxp
        grads = [dx[0] if squeeze else dx, gw]
        if bias is not None:
            grads.append(g3.sum(axis=(0, 2)))
        return grads

    return _node(out[0] if squeeze else out, tuple(parents), back, "conv1d")


def maxpool1d(x, kernel=2, stride=1, padding=1):
    """Max pooling with ``-inf`` padding; ties route the gradient to the lowest index."""
    x = _as_tensor(x)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    length = xd.shape[-1]
    if length < 1:
        raise ValueError("maxpool1d needs a non-empty input")
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding)), constant_values=-np.inf) if padding else xd
    idx = _window_index(xp.shape[-1], kernel, stride)
    vals = xp[:, :, idx]                                  # (B, C, K, L_out)
    arg = np.argmax(vals, axis=2)
    out = np.take_along_axis(vals, arg[:, :, None, :], axis=2)[:, :, 0, :]

    def back(g):
        g3 = g[None] if squeeze else g
        dxp = np.zeros(xp.shape)
        for j in range(kernel):
            dxp[:, :, idx[j]] += np.where(arg == j, g3, 0.0)
        dx = dxp[:, :, padding:padding + length] if padding else dxp
        return (dx[0] if squeeze else dx,)

    return _node(out[0] if squeeze else out, (x,), back, "maxpool1d")


def global_avg_pool(x):
    x = _as_tensor(x)
    n = x.shape[-1]
    return _node(x.data.mean(axis=-1), (x,),
                 lambda g: (np.broadcast_to(g[..., None] / n, x.shape),), "gap")


def dense(x, weight, bias=None):
    """Affine map ``x @ weight.T + bias`` with ``weight (F_out, F_in)``."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"dense expects {weight.shape[1]} features, got {x.shape[-1]}")
    out = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        bias = _as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def back(g):
        gx = g @ weight.data
        gw = np.outer(g, x.data) if x.ndim == 1 else g.T @ x.data
        grads = [gx, gw]
        if bias is not None:
            grads.append(g if g.ndim == 1 else g.sum(axis=0))
        return grads

    return _node(out, tuple(parents), back, "dense")


def dropout(x, rate, training, rng=None):
    """Inverted dropout; identity outside training mode."""
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit rng")
    keep = (rng.random(np.shape(x.data if is_tensor(x) else x)) >= rate) / (1.0 - rate)
    if not is_tensor(x):
        return x * keep
    return _node(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)
