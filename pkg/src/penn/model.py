"""The physics-embedded estimator: Hill forward dynamics plus a residual CNN."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffnet as dn
from . import kernels, msk, sim
from .msk import ActivationParams, GeometryPoly, JointParams, MuscleParams
from .signal import first_target, window_batch

SCALE_BOUNDS = (0.5, 1.5)
A_BOUNDS = (-5.0, -0.01)
HIDDEN = 32
CONV_CHANNELS = 32
NET_PARAMS = ("conv_w", "conv_b", "fc_w", "fc_b", "fuse_w", "fuse_b")


def _logit(p):
    return float(np.log(p / (1.0 - p)))


@dataclass
class PhysicsReparam:
    """Bounded reparameterisation of the trainable muscle parameters.

    Muscle parameters are ``init * (lo + (hi - lo) * sigmoid(z))`` so they stay
    within ``[0.5, 1.5]`` of their initial values; the activation shape is
    ``A_lo + (A_hi - A_lo) * sigmoid(z_A)``.  ``z = 0`` reproduces ``init``.
    """

    init: np.ndarray                      # (N, 5) physical initial values
    a_init: float
    scale_bounds: tuple = SCALE_BOUNDS
    a_bounds: tuple = A_BOUNDS

    def __post_init__(self):
        self.init = np.asarray(self.init, dtype=np.float64)
        lo, hi = self.a_bounds
        if not lo < self.a_init < hi:
            raise msk.DomainError(f"activation shape {self.a_init} outside trainable bounds {self.a_bounds}")

    @property
    def size(self):
        return self.init.size + 1

    def initial_z(self):
        lo, hi = self.scale_bounds
        z = np.full(self.size, _logit((1.0 - lo) / (hi - lo)))
        alo, ahi = self.a_bounds
        z[-1] = _logit((self.a_init - alo) / (ahi - alo))
        return z

    def init_flat(self):
        return np.concatenate([self.init.ravel(), [self.a_init]])

    def decode(self, z):
        """``(P (N, 5), A)`` for ``z`` given as ndarray or Tensor."""
        lo, hi = self.scale_bounds
        alo, ahi = self.a_bounds
        n = self.init.size
        s = dn.sigmoid(z)
        # the clips only guard against rounding past the bounds at saturation
        if dn.is_tensor(z):
            scale = dn.clip(dn.getitem(s, slice(0, n)) * (hi - lo) + lo, lo, hi)
            P = dn.reshape(scale, self.init.shape) * self.init
            A = dn.clip(dn.getitem(s, n) * (ahi - alo) + alo, alo, ahi)
            return P, A
        scale = np.clip(lo + (hi - lo) * s[:n], lo, hi)
        P = self.init * scale.reshape(self.init.shape)
        return P, float(np.clip(alo + (ahi - alo) * s[n], alo, ahi))


def physics_op(P, A, theta1, theta2, u, geometry: GeometryPoly, jp: JointParams, dt,
               lam=msk.LAMBDA_AL, vfac=msk.V_MAX_FACTOR):
    """Differentiable batched physics step.

    ``P`` (``(N, 5)``) and ``A`` may be Tensors; the backward pass contracts the
    upstream gradient with the kernel's per-sample Jacobian.
    """
    Pd = np.asarray(dn.value(P), dtype=np.float64)
    Ad = float(dn.value(A))
    need = dn.is_tensor(P) and P.requires_grad or dn.is_tensor(A) and A.requires_grad
    th, jac, status = kernels.physics_step(np.atleast_1d(theta1), np.atleast_1d(theta2),
                                           np.atleast_2d(u), Pd, Ad, geometry.mtu_coeffs,
                                           jp.as_array(), dt, lam, vfac, bool(need))
    if status == kernels.ERR_GEOMETRY:
        raise msk.GeometryError("musculotendon length does not exceed tendon slack length "
                                f"(parameters {Pd.tolist()}, A={Ad})")
    if status != kernels.OK:
        raise sim.DivergenceError("non-finite physics estimate")
    if not need:
        return th
    P, A = dn.autodiff._as_tensor(P), dn.autodiff._as_tensor(A)
    n = Pd.size

    def back(g):
        gj = np.asarray(g).reshape(-1) @ jac
        return gj[:n].reshape(Pd.shape), np.asarray(gj[n])

    return dn.autodiff._node(th, (P, A), back, "physics")


@dataclass
class PennModel:
    reparam: PhysicsReparam
    geometry: GeometryPoly
    joint: JointParams
    z: np.ndarray
    net: dict
    window: int = 16
    dropout: float = 0.3
    pool_stride: int = 1
    lambda_al: float = msk.LAMBDA_AL
    v_max_factor: float = msk.V_MAX_FACTOR
    seed: int = 0
    meta: dict = field(default_factory=dict)
    res_scale: float = 1.0

    @classmethod
    def create(cls, params: MuscleParams, ap: ActivationParams, geometry: GeometryPoly,
               jp: JointParams, window=16, dropout=0.3, pool_stride=1, seed=0):
        rep = PhysicsReparam(params.as_array(), float(ap.a_shape))
        n = geometry.n_muscles
        if params.n_muscles != n:
            raise ValueError("muscle parameter count does not match geometry")
        rng = np.random.default_rng([seed, 0])
        c_in = n + 2
        net = {
            "conv_w": dn.he_uniform(rng, (CONV_CHANNELS, c_in, 3), c_in * 3),
            "conv_b": np.zeros(CONV_CHANNELS),
            "fc_w": dn.he_uniform(rng, (HIDDEN, CONV_CHANNELS), CONV_CHANNELS),
            "fc_b": np.zeros(HIDDEN),
            # physical fusion layer starts at zero so the fresh model is pure physics
            "fuse_w": np.zeros((1, HIDDEN + 1)),
            "fuse_b": np.zeros(1),
        }
        return cls(rep, geometry, jp, rep.initial_z(), net, window, dropout, pool_stride,
                   float(params.lambda_al), float(params.v_max_factor), seed)

    @property
    def n_muscles(self):
        return self.geometry.n_muscles

    def physics_params(self):
        P, A = self.reparam.decode(self.z)
        mp = MuscleParams(*(P[:, j].copy() for j in range(5)), lambda_al=self.lambda_al,
                          v_max_factor=self.v_max_factor)
        return mp, ActivationParams(A)

    def copy(self):
        return PennModel(self.reparam, self.geometry, self.joint, self.z.copy(),
                         {k: v.copy() for k, v in self.net.items()}, self.window, self.dropout,
                         self.pool_stride, self.lambda_al, self.v_max_factor, self.seed,
                         dict(self.meta), self.res_scale)


# -- forward passes ---------------------------------------------------------

def physics_forward(theta_hist, u, model: PennModel, dt, z=None):
    """Physics-embedded estimate from ``(theta_{t-1}, theta_{t-2})`` and ``u_t``.

    Delegates to the same kernel as :func:`penn.sim.physics_step`.  Passing a
    Tensor ``z`` makes the result differentiable in the physics parameters.
    """
    theta1, theta2 = theta_hist
    P, A = model.reparam.decode(model.z if z is None else z)
    out = physics_op(P, A, theta1, theta2, u, model.geometry, model.joint, dt,
                     model.lambda_al, model.v_max_factor)
    if np.ndim(theta1) == 0 and not dn.is_tensor(out):
        return float(out[0])
    return out


def residual_forward(x, theta_phy, model: PennModel, training=False, rng=None, net=None):
    """Residual correction from an ``(N+2, W)`` window (or a batch of them)."""
    p = model.net if net is None else net
    n_in = model.n_muscles + 2
    if np.shape(dn.value(x))[-2] != n_in:
        raise ValueError(f"window must have {n_in} rows")
    h = dn.conv1d(x, p["conv_w"], p["conv_b"], stride=1, padding=1)
    h = dn.relu(h)
    h = dn.maxpool1d(h, kernel=2, stride=model.pool_stride, padding=1)
    h = dn.dropout(h, model.dropout, training, rng)
    h = dn.global_avg_pool(h)
    h = dn.relu(dn.dense(h, p["fc_w"], p["fc_b"]))
    h = dn.dropout(h, model.dropout, training, rng)
    phy = theta_phy
    if np.ndim(dn.value(h)) == 2:
        phy = dn.reshape(phy, (-1, 1)) if dn.is_tensor(phy) else np.reshape(phy, (-1, 1))
    else:
        phy = dn.reshape(phy, (1,)) if dn.is_tensor(phy) else np.reshape(phy, (1,))
    h = dn.concat([h, phy], axis=-1)
    out = dn.dense(h, p["fuse_w"], p["fuse_b"]) * model.res_scale
    if not out.requires_grad:
        return out.data[..., 0]
    return dn.reshape(out, out.shape[:-1])


def penn_estimate(x, theta_hist, u, model: PennModel, dt, training=False, rng=None):
    theta_phy = physics_forward(theta_hist, u, model, dt)
    theta_res = residual_forward(x, theta_phy, model, training, rng)
    theta_res = dn.value(theta_res)
    if np.ndim(theta_res) == 0 or np.size(theta_res) == 1 and np.ndim(theta_hist[0]) == 0:
        theta_res = float(np.reshape(theta_res, -1)[0])
    return theta_phy, theta_res, theta_phy + theta_res


# -- losses -----------------------------------------------------------------

def loss_phy(theta_phy, theta):
    d = theta_phy - theta
    return dn.mean(d * d)


def loss_res(theta_res, theta_phy, theta):
    d = theta_res + theta_phy - theta
    return dn.mean(d * d)


@dataclass(frozen=True)
class LossWeights:
    lambda_phy: float
    beta_res: float

    def __post_init__(self):
        if self.lambda_phy < 0 or self.beta_res < 0:
            raise ValueError("loss weights must be non-negative")


PHASE_ONE = LossWeights(1.0, 0.0)
PHASE_TWO = LossWeights(0.0, 1.0)


def loss_total(weights: LossWeights, l_phy, l_res):
    return weights.lambda_phy * l_phy + weights.beta_res * l_res


# -- sequence estimation ----------------------------------------------------

@dataclass
class Estimate:
    t_index: np.ndarray
    theta: np.ndarray
    theta_phy: np.ndarray
    theta_res: np.ndarray
    theta_hat: np.ndarray
    mode: str


def estimate_teacher_forced(trial, model: PennModel, dt):
    """Vectorised one-step estimates with ground-truth history."""
    idx = np.arange(first_target(model.window), trial.n_samples)
    ang = trial.angle
    u = trial.emg[:, idx].T
    phy = physics_forward((ang[idx - 1], ang[idx - 2]), u, model, dt)
    x = window_batch(trial.emg, ang, idx, model.window)
    res = residual_forward(x, phy, model, training=False)
    return Estimate(idx, ang[idx], phy, res, phy + res, "teacher_forced")


def estimate_free_running(trial, model: PennModel, dt, use_residual=True):
    """Recursive estimation feeding each estimate back as history.

    The first ``W + 1`` samples seed the history with ground truth.  Only
    data up to time ``t`` is touched when producing ``theta_hat[t]``.
    """
    W = model.window
    t0 = first_target(W)
    T = trial.n_samples
    hist = np.empty(T)
    hist[:t0] = trial.angle[:t0]
    phy = np.empty(T - t0)
    res = np.zeros(T - t0)
    P, A = model.reparam.decode(model.z)
    cfs, jarr = model.geometry.mtu_coeffs, model.joint.as_array()
    lo, hi = model.geometry.theta_range
    for k, t in enumerate(range(t0, T)):
        th, _, st = kernels.physics_step(hist[t - 1:t], hist[t - 2:t - 1], trial.emg[:, t][None],
                                         P, A, cfs, jarr, dt, model.lambda_al,
                                         model.v_max_factor, False)
        if st == kernels.ERR_GEOMETRY:
            raise msk.GeometryError(f"free-running estimate left the valid geometry at sample {t}")
        if st != kernels.OK:
            raise sim.DivergenceError(f"free-running estimate diverged at sample {t}")
        phy[k] = th[0]
        if use_residual:
            x = window_batch(trial.emg, hist, np.array([t]), W)
            res[k] = float(residual_forward(x, th, model, training=False)[0])
        hist[t] = np.clip(phy[k] + res[k], lo, hi)
    idx = np.arange(t0, T)
    return Estimate(idx, trial.angle[idx], phy, res, hist[idx], "free_running")
