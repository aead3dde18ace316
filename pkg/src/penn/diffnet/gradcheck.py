from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: int
    worst_index: tuple
    analytic: list
    numeric: list


def numeric_grad(f, arrays, h=1e-6):
    """Central finite differences of scalar ``f(*arrays)`` w.r.t. each array."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + h
            fp = float(f(*arrays))
            a[idx] = old - h
            fm = float(f(*arrays))
            a[idx] = old
            g[idx] = (fp - fm) / (2.0 * h)
        out.append(g)
    return out


def relative_error(a, b, floor):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def grad_check(f, params, h=1e-6, floor=None, f_numeric=None):
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` maps Tensors to a scalar Tensor; ``f_numeric`` (defaults to ``f`` on
    plain arrays) is used for the finite differences.  ``floor`` bounds the
    denominator of the relative error from below so that coordinates whose
    gradient is at the level of finite-difference round-off do not dominate;
    by default it is ``1e-3 * max(|f|, max|grad|, 1e-12)``, about ten times the
    round-off of a central difference with ``h = 1e-6``.
    """
    arrays = [np.array(p, dtype=np.float64) for p in params]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = f(*tensors)
    out.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    fn = f_numeric or f
    numeric = numeric_grad(lambda *xs: _scalar(fn(*xs)), arrays, h)
    if floor is None:
        gmax = max((float(np.max(np.abs(a))) for a in analytic if a.size), default=0.0)
        floor = 1e-3 * max(abs(float(out.data)), gmax, 1e-12)
    worst, worst_p, worst_i = 0.0, -1, ()
    for k, (a, n) in enumerate(zip(analytic, numeric)):
        if a.size == 0:
            continue
        err = relative_error(a, n, floor)
        i = np.unravel_index(int(np.argmax(err)), err.shape)
        if err[i] > worst:
            worst, worst_p, worst_i = float(err[i]), k, tuple(int(j) for j in i)
    return GradCheckResult(worst, worst_p, worst_i, analytic, numeric)


def _scalar(v):
    return float(v.data) if isinstance(v, Tensor) else float(v)
