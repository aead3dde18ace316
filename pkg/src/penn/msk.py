"""Hill-type muscle and hinge-joint equations.

All functions are written against :mod:`penn.diffnet` primitives, so they
evaluate on floats, numpy arrays (vectorised over muscles or samples) and
:class:`~penn.diffnet.Tensor` values alike.  Parameter containers may hold any
of those types; validation only inspects the numeric values.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import diffnet as dn
from .diffnet import value

LAMBDA_AL = 0.15
K_FL = 0.45
V_MAX_FACTOR = 10.0
FV_MAX = 1.8
PHI_MAX = np.pi / 3


class MSKError(ValueError):
    pass


class DomainError(MSKError):
    pass


class GeometryError(MSKError):
    pass


class RangeError(MSKError):
    pass


def _v(x):
    return np.asarray(value(x), dtype=np.float64)


@dataclass
class MuscleParams:
    f_max: object
    l_opt: object
    l_tendon_slack: object
    phi_opt: object
    k_fl: object = K_FL
    lambda_al: float = LAMBDA_AL
    v_max_factor: float = V_MAX_FACTOR

    def __post_init__(self):
        self.validate()

    def validate(self):
        if np.any(_v(self.f_max) <= 0):
            raise DomainError("f_max must be positive")
        if np.any(_v(self.l_opt) <= 0):
            raise DomainError("l_opt must be positive")
        if np.any(_v(self.l_tendon_slack) < 0):
            raise DomainError("l_tendon_slack must be non-negative")
        phi = _v(self.phi_opt)
        if np.any(phi < 0) or np.any(phi >= PHI_MAX):
            raise DomainError("phi_opt must lie in [0, pi/3)")
        if np.any(_v(self.k_fl) <= 0):
            raise DomainError("k_fl must be positive")

    def muscle(self, i):
        """Parameters of muscle ``i`` when fields are per-muscle vectors."""
        return MuscleParams(**{f.name: _pick(getattr(self, f.name), i) for f in fields(self)})

    def as_array(self):
        """``(N, 5)`` array of ``f_max, l_opt, l_tendon_slack, phi_opt, k_fl``."""
        cols = [np.atleast_1d(_v(getattr(self, n))) for n in PARAM_FIELDS]
        n = max(c.size for c in cols)
        return np.column_stack([np.broadcast_to(c, (n,)) for c in cols]).astype(np.float64)

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=np.float64)
        return cls(*(arr[:, j].copy() for j in range(5)))

    @property
    def n_muscles(self):
        return self.as_array().shape[0]


PARAM_FIELDS = ("f_max", "l_opt", "l_tendon_slack", "phi_opt", "k_fl")


def _pick(x, i):
    if isinstance(x, (int, float)):
        return x
    if dn.is_tensor(x):
        return x[i] if x.ndim else x
    a = np.asarray(x)
    return float(a[i]) if a.ndim else float(a)


@dataclass
class ActivationParams:
    a_shape: object = -1.0

    def __post_init__(self):
        a = np.abs(_v(self.a_shape))
        if np.any(a > 5.0) or np.any(a < 0.01):
            raise DomainError("a_shape must satisfy 0.01 <= |A| <= 5")


@dataclass
class JointParams:
    inertia: float
    damping: float
    mass: float
    com_length: float
    gravity: float = 9.81

    def __post_init__(self):
        if self.inertia <= 0:
            raise DomainError("inertia must be positive")
        if self.damping < 0:
            raise DomainError("damping must be non-negative")
        if self.mass <= 0:
            raise DomainError("mass must be positive")
        if self.com_length <= 0:
            raise DomainError("com_length must be positive")

    def as_array(self):
        return np.array([self.inertia, self.damping, self.mass, self.com_length, self.gravity])


@dataclass
class GeometryPoly:
    """Cubic musculotendon-length polynomials, one row ``c0..c3`` per muscle."""

    mtu_coeffs: np.ndarray
    theta_range: tuple = (-np.pi / 2, np.pi / 2)
    names: tuple = field(default=())

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.mtu_coeffs, dtype=np.float64))
        if c.shape[1] != 4:
            raise ValueError("mtu_coeffs must have four columns c0..c3")
        self.mtu_coeffs = c
        lo, hi = self.theta_range
        if not lo < hi:
            raise ValueError("theta_range must be increasing")
        self.theta_range = (float(lo), float(hi))

    @property
    def n_muscles(self):
        return self.mtu_coeffs.shape[0]

    def scaled_moment_arms(self, factor):
        """Copy with moment arms scaled by ``factor`` (c1..c3 scaled, c0 kept)."""
        c = self.mtu_coeffs.copy()
        c[:, 1:] *= factor
        return GeometryPoly(c, self.theta_range, self.names)

    def check_range(self, theta):
        t = _v(theta)
        lo, hi = self.theta_range
        if np.any(t < lo) or np.any(t > hi):
            raise RangeError(f"joint angle outside configured range [{lo}, {hi}] rad")

    def check_slack(self, params):
        """Verify l_mt > tendon slack over a grid spanning the joint range."""
        grid = np.linspace(*self.theta_range, 201)
        lts = np.atleast_1d(_v(params.l_tendon_slack))
        for i in range(self.n_muscles):
            lmt = np.polyval(self.mtu_coeffs[i, ::-1], grid)
            if np.any(lmt <= lts[i % lts.size]):
                raise GeometryError(f"muscle {i}: l_mt <= tendon slack inside joint range")


# -- muscle equations -------------------------------------------------------

def activation(u, p: ActivationParams):
    """Exponential excitation-to-activation map; identity in the A -> 0 limit."""
    uv = _v(u)
    if np.any(uv < -1e-9) or np.any(uv > 1 + 1e-9):
        raise DomainError("excitation must lie in [0, 1]")
    A = p.a_shape
    if np.all(np.abs(_v(A)) < 1e-12):
        return u
    return dn.expm1(A * u) / dn.expm1(A)


def pennation_angle(l_m, p: MuscleParams):
    arg = p.l_opt * dn.sin(p.phi_opt) / l_m
    av = _v(arg)
    if np.any(av > 1 + 1e-12):
        raise DomainError("fiber too short for its pennation (arcsin argument > 1)")
    return dn.arcsin(dn.minimum(arg, 1.0) if np.any(av > 1) else arg)


def normalized_active_fiber_length(l_m, a, p: MuscleParams):
    return l_m / (p.l_opt * (p.lambda_al * (1.0 - a) + 1.0))


def active_force_length(l_bar_a, k_fl):
    d = l_bar_a - 1.0
    return dn.exp(-(d * d) / k_fl)


def force_velocity(v_bar):
    """Piecewise force-velocity gain, continuous at 0, zero below -1, capped at 1.8."""
    vv = _v(v_bar)
    shortening = dn.minimum(v_bar, 0.0)
    lengthening = dn.maximum(v_bar, 0.0)
    f_short = 0.3 * (shortening + 1.0) / (0.3 - shortening)
    f_long = (2.34 * lengthening + 0.039) / (1.3 * lengthening + 0.039)
    f = dn.where(vv <= 0.0, f_short, f_long)
    return dn.clip(f, 0.0, FV_MAX)


def passive_force(l_m, p: MuscleParams):
    """Exponential passive force above optimal length, zero at or below it."""
    l_bar = l_m / p.l_opt
    stretched = _v(l_bar) > 1.0
    f = p.f_max * dn.exp(10.0 * (l_bar - 1.0) - 5.0)
    # value is zero at l_bar == 1 but the subgradient follows the stretched branch
    return dn.where(stretched, f, 0.0 * f, grad_cond=_v(l_bar) >= 1.0)


def fiber_length_rigid_tendon(l_mt, p: MuscleParams):
    """Constant-height pennation geometry with an inextensible tendon."""
    w = l_mt - p.l_tendon_slack
    if np.any(_v(w) <= 0):
        raise GeometryError("musculotendon length does not exceed tendon slack length")
    h = p.l_opt * dn.sin(p.phi_opt)
    return dn.sqrt(w * w + h * h)


def fiber_velocity(l_mt, v_mt, l_m, p: MuscleParams):
    """Time derivative of the rigid-tendon fiber length."""
    return (l_mt - p.l_tendon_slack) * v_mt / l_m


def muscle_tendon_force(u, l_mt, v_mt, p: MuscleParams, ap: ActivationParams):
    a = activation(u, ap)
    l_m = fiber_length_rigid_tendon(l_mt, p)
    v_m = fiber_velocity(l_mt, v_mt, l_m, p)
    v_bar = v_m / (p.v_max_factor * p.l_opt)
    l_bar_a = normalized_active_fiber_length(l_m, a, p)
    f_active = p.f_max * active_force_length(l_bar_a, p.k_fl) * force_velocity(v_bar) * a
    f_passive = passive_force(l_m, p)
    return (f_active + f_passive) * dn.cos(pennation_angle(l_m, p))


# -- geometry and joint -----------------------------------------------------

def _coeffs(g: GeometryPoly, i):
    c = g.mtu_coeffs
    return c if i is None else c[i]


def mtu_length(theta, g: GeometryPoly, i=None, check=True):
    """Musculotendon length; ``i=None`` evaluates every muscle."""
    if check:
        g.check_range(theta)
    c = _coeffs(g, i)
    c0, c1, c2, c3 = (c[..., j] for j in range(4))
    return c0 + theta * (c1 + theta * (c2 + theta * c3))


def moment_arm(theta, g: GeometryPoly, i=None, check=True):
    """Signed moment arm ``-d l_mt / d theta`` (flexors positive)."""
    if check:
        g.check_range(theta)
    c = _coeffs(g, i)
    c1, c2, c3 = (c[..., j] for j in range(1, 4))
    return -(c1 + theta * (2.0 * c2 + theta * (3.0 * c3)))


def joint_acceleration(tau, theta, theta_dot, jp: JointParams):
    return (tau - jp.damping * theta_dot
            - jp.mass * jp.gravity * jp.com_length * dn.sin(theta)) / jp.inertia


def joint_torque_from_muscles(forces, arms):
    if np.shape(value(forces)) != np.shape(value(arms)):
        raise ValueError("forces and moment arms must have the same length")
    if np.size(value(forces)) < 1:
        raise ValueError("need at least one muscle")
    return dn.tsum(forces * arms)


def mechanical_energy(theta, theta_dot, jp: JointParams):
    return (0.5 * jp.inertia * theta_dot ** 2
            + jp.mass * jp.gravity * jp.com_length * (1.0 - np.cos(theta)))
