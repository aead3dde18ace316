"""Explicit central-difference integration of the wrist and synthetic trials."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels, msk
from .msk import ActivationParams, GeometryPoly, JointParams, MuscleParams

DIVERGENCE_LIMIT = 10.0


class SimulationError(RuntimeError):
    pass


class DivergenceError(SimulationError):
    pass


class StabilityError(SimulationError):
    pass


@dataclass
class ExcitationSpec:
    """Per-muscle excitation profile, rescaled into ``[low, high]``.

    ``kind`` is ``"sinusoids"`` (random sum of ``n_components`` sines with
    frequencies in ``freq_range`` Hz) or ``"random_walk"`` (Gaussian random walk
    smoothed by a moving average of ``smooth_s`` seconds).
    """

    kind: str = "sinusoids"
    n_components: int = 3
    freq_range: tuple = (0.1, 1.0)
    low: float = 0.0
    high: float = 0.5
    smooth_s: float = 0.5

    def __post_init__(self):
        if self.kind not in ("sinusoids", "random_walk"):
            raise ValueError(f"unknown excitation kind {self.kind!r}")
        if not 0.0 <= self.low < self.high <= 1.0:
            raise ValueError("excitation range must satisfy 0 <= low < high <= 1")
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        lo, hi = self.freq_range
        if not 0 < lo <= hi:
            raise ValueError("freq_range must be positive and increasing")
        self.freq_range = (float(lo), float(hi))


@dataclass
class SimConfig:
    dt: float = 0.001
    duration: float = 10.0
    stride: int = 1
    theta_0: float = 0.0
    theta_dot_0: float = 0.0
    excitation: ExcitationSpec = field(default_factory=ExcitationSpec)
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.duration < 2 * self.dt * self.stride:
            raise ValueError("duration must cover at least two physics steps")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if isinstance(self.excitation, dict):
            self.excitation = ExcitationSpec(**self.excitation)

    @property
    def n_samples(self):
        return int(round(self.duration / self.dt)) + 1

    @property
    def physics_dt(self):
        return self.dt * self.stride


@dataclass
class Trial:
    fs: float
    emg: np.ndarray            # (N, T) in [0, 1]
    angle: np.ndarray          # (T,) rad
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.emg = np.atleast_2d(np.asarray(self.emg, dtype=np.float64))
        self.angle = np.asarray(self.angle, dtype=np.float64)
        if self.fs <= 0:
            raise ValueError("fs must be positive")
        if self.emg.shape[1] != self.angle.shape[0]:
            raise ValueError("emg channels and angle must share length")

    @property
    def n_channels(self):
        return self.emg.shape[0]

    @property
    def n_samples(self):
        return self.angle.shape[0]

    @property
    def time(self):
        return np.arange(self.n_samples) / self.fs

    def decimate(self, stride):
        """Every ``stride``-th sample; the physics-rate view of the trial."""
        if stride == 1:
            return self
        return Trial(self.fs / stride, self.emg[:, ::stride].copy(), self.angle[::stride].copy(),
                     dict(self.meta, stride=stride))

    def digest(self):
        h = hashlib.sha256()
        h.update(np.float64(self.fs).tobytes())
        h.update(np.ascontiguousarray(self.emg).tobytes())
        h.update(np.ascontiguousarray(self.angle).tobytes())
        return h.hexdigest()


# -- integrator -------------------------------------------------------------

def physics_step(theta_prev, theta_prev2, u, params: MuscleParams, ap: ActivationParams,
                 geometry: GeometryPoly, jp: JointParams, dt, want_jac=False, check=True):
    """Advance the joint one explicit central-difference step.

    Velocity is the backward difference of the two history angles; muscle
    forces and moment arms are evaluated at ``theta_prev``.  Works on a scalar
    history with ``u`` of shape ``(N,)`` or a batch with ``u`` of shape ``(B, N)``.
    With ``want_jac`` the derivative of the result with respect to the muscle
    parameter matrix (muscle-major, then the activation shape) is returned too.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    t1 = np.atleast_1d(np.asarray(theta_prev, dtype=np.float64))
    t2 = np.atleast_1d(np.asarray(theta_prev2, dtype=np.float64))
    uu = np.atleast_2d(np.asarray(u, dtype=np.float64))
    if check:
        if np.any(uu < -1e-9) or np.any(uu > 1 + 1e-9):
            raise msk.DomainError("excitation must lie in [0, 1]")
        geometry.check_range(t1)
    theta, jac, status = kernels.physics_step(
        t1, t2, uu, params.as_array(), float(ap.a_shape), geometry.mtu_coeffs, jp.as_array(),
        float(dt), float(params.lambda_al), float(params.v_max_factor), bool(want_jac))
    if status == kernels.ERR_GEOMETRY:
        raise msk.GeometryError("musculotendon length does not exceed tendon slack length")
    if status == kernels.ERR_NONFINITE:
        raise DivergenceError("non-finite joint angle")
    scalar = np.ndim(theta_prev) == 0
    if scalar:
        theta = float(theta[0])
        jac = None if jac is None else jac[0]
    return (theta, jac) if want_jac else theta


def linearized_rates(params, ap, geometry, jp, u_levels=(0.0, 0.5, 1.0), n_grid=9):
    """Worst-case stiffness rate ``omega^2`` and damping rate ``c`` of the joint.

    Both come from central differences of the joint acceleration over a grid of
    angles, co-activation levels and small velocities; they feed the explicit
    scheme's stability condition ``dt^2 omega^2 + 2 dt c < 4``.
    """
    lo, hi = geometry.theta_range
    eps = 1e-5
    n = geometry.n_muscles
    P = params.as_array()
    cfs = geometry.mtu_coeffs
    jarr = jp.as_array()
    w2, c = 0.0, 0.0
    probe_dt = 1e-3

    def acc(th, thd, u):
        t1 = np.array([th])
        t2 = t1 - thd * probe_dt
        out, _, st = kernels.physics_step(t1, t2, u[None], P, float(ap.a_shape), cfs, jarr,
                                          probe_dt, params.lambda_al, params.v_max_factor, False)
        if st != kernels.OK:
            return np.nan
        return (out[0] - 2 * t1[0] + t2[0]) / probe_dt ** 2

    for th in np.linspace(lo, hi, n_grid):
        for level in u_levels:
            u = np.full(n, level)
            for thd in (-2.0, 0.0, 2.0):
                k = -(acc(th + eps, thd, u) - acc(th - eps, thd, u)) / (2 * eps)
                d = -(acc(th, thd + 1e-3, u) - acc(th, thd - 1e-3, u)) / 2e-3
                if np.isfinite(k):
                    w2 = max(w2, k)
                if np.isfinite(d):
                    c = max(c, d)
    return w2, c


def stability_margin(dt, params, ap, geometry, jp, u_max=1.0):
    """``(dt^2 omega^2 + 2 dt c) / 4``; the explicit scheme needs this below 1.

    Rates are probed for uniform excitation levels up to ``u_max``.
    """
    w2, c = linearized_rates(params, ap, geometry, jp, u_levels=np.linspace(0.0, u_max, 3))
    return max((dt * dt * w2 + 2 * dt * c) / 4.0, dt * c / 2.0)


# -- excitation and trials --------------------------------------------------

def excitation_profiles(spec: ExcitationSpec, n_muscles, n_samples, dt, rng):
    t = np.arange(n_samples) * dt
    out = np.empty((n_muscles, n_samples))
    for i in range(n_muscles):
        if spec.kind == "sinusoids":
            f = rng.uniform(*spec.freq_range, size=spec.n_components)
            ph = rng.uniform(0, 2 * np.pi, size=spec.n_components)
            amp = rng.uniform(0.5, 1.0, size=spec.n_components)
            p = (amp[:, None] * np.sin(2 * np.pi * f[:, None] * t + ph[:, None])).sum(axis=0)
        else:
            steps = rng.normal(size=n_samples)
            p = np.cumsum(steps)
            win = max(1, int(round(spec.smooth_s / dt)))
            p = np.convolve(np.pad(p, (win // 2, win - 1 - win // 2), mode="edge"),
                            np.ones(win) / win, mode="valid")
        span = p.max() - p.min()
        p = (p - p.min()) / span if span > 0 else np.zeros_like(p)
        out[i] = spec.low + (spec.high - spec.low) * p
    return np.clip(out, 0.0, 1.0)


def simulate_trajectory(cfg: SimConfig, params, ap, geometry, jp, excitation=None,
                        rng=None, check_stability=True):
    """Roll the integrator over ``cfg.duration`` and return a clean Trial.

    Physics runs every ``cfg.stride`` samples with step ``stride * dt``;
    angles in between are linearly interpolated.  Excitation is drawn from
    ``cfg.excitation`` unless given explicitly as an ``(N, T)`` array.
    """
    n = geometry.n_muscles
    T = cfg.n_samples
    h = cfg.physics_dt
    if check_stability:
        margin = stability_margin(h, params, ap, geometry, jp, cfg.excitation.high)
        if margin >= 1.0:
            raise StabilityError(f"explicit step unstable for dt={h}: margin {margin:.3f} >= 1")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if excitation is None:
        excitation = excitation_profiles(cfg.excitation, n, T, cfg.dt, rng)
    u = np.clip(np.asarray(excitation, dtype=np.float64), 0.0, 1.0)
    if u.shape != (n, T):
        raise ValueError(f"excitation must have shape {(n, T)}")

    steps = np.arange(0, T, cfg.stride)
    theta = np.empty(steps.size)
    theta[0] = cfg.theta_0
    theta_m1 = cfg.theta_0 - cfg.theta_dot_0 * h
    prev2 = theta_m1
    P = params.as_array()
    A = float(ap.a_shape)
    cfs = geometry.mtu_coeffs
    jarr = jp.as_array()
    lam, vfac = float(params.lambda_al), float(params.v_max_factor)
    for k in range(1, steps.size):
        out, _, st = kernels.physics_step(theta[k - 1:k], np.array([prev2]), u[:, steps[k]][None],
                                          P, A, cfs, jarr, h, lam, vfac, False)
        if st == kernels.ERR_GEOMETRY:
            raise msk.GeometryError(f"rigid-tendon geometry violated at t={steps[k] * cfg.dt:.3f}s")
        if st != kernels.OK or abs(out[0]) > DIVERGENCE_LIMIT:
            raise DivergenceError(f"|theta| exceeded {DIVERGENCE_LIMIT} rad at t={steps[k] * cfg.dt:.3f}s")
        prev2 = theta[k - 1]
        theta[k] = out[0]
    t = np.arange(T)
    angle = theta.copy() if cfg.stride == 1 else np.interp(t, steps, theta)
    angle[steps] = theta            # interp can round at the knots
    meta = {"source": "synthetic", "seed": int(cfg.seed), "dt": cfg.dt, "stride": cfg.stride,
            "duration": cfg.duration}
    return Trial(1.0 / cfg.dt, u, angle, meta)


def generate_synthetic_dataset(cfg: SimConfig, params, ap, geometry, jp, n_trials):
    """Independent trials, each seeded from the master seed.

    Emitted emg is the simulator's excitation plus optional Gaussian noise,
    re-clipped to ``[0, 1]``; angles are always the noise-free trajectory.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    margin = stability_margin(cfg.physics_dt, params, ap, geometry, jp, cfg.excitation.high)
    if margin >= 1.0:
        raise StabilityError(f"explicit step unstable for dt={cfg.physics_dt}: margin {margin:.3f} >= 1")
    seeds = np.random.SeedSequence(cfg.seed).spawn(n_trials)
    trials = []
    for k, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        trial = simulate_trajectory(cfg, params, ap, geometry, jp, rng=rng, check_stability=False)
        if cfg.noise_std > 0:
            noisy = trial.emg + rng.normal(0.0, cfg.noise_std, size=trial.emg.shape)
            trial.meta["clean_emg_digest"] = hashlib.sha256(trial.emg.tobytes()).hexdigest()
            trial.emg = np.clip(noisy, 0.0, 1.0)
        trial.meta.update(trial_index=k, noise_std=cfg.noise_std)
        trials.append(trial)
    return trials


def config_dict(cfg: SimConfig):
    d = asdict(cfg)
    d["excitation"]["freq_range"] = list(d["excitation"]["freq_range"])
    return d
