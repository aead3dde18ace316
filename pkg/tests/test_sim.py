import math

import numpy as np
import pytest

from penn import defaults, msk, sim
from penn.msk import GeometryPoly, JointParams, MuscleParams


def inert_setup(damping=0.0):
    """Single muscle with zero moment arm and slack fibers: a bare pendulum."""
    g = GeometryPoly(np.array([[0.10, 0.0, 0.0, 0.0]]), (-1.5, 1.5))
    mp = MuscleParams(np.array([100.0]), np.array([0.06]), np.array([0.05]), np.array([0.1]))
    jp = JointParams(inertia=0.02, damping=damping, mass=1.5, com_length=0.08)
    return mp, msk.ActivationParams(-1.0), g, jp


def pendulum_accel(theta, jp):
    return -jp.mass * jp.gravity * jp.com_length * math.sin(theta) / jp.inertia


def roll(theta0, h, T, setup):
    """Integrate from rest with a second-order consistent history."""
    mp, ap, g, jp = setup
    prev = theta0
    prev2 = theta0 + 0.5 * h * h * pendulum_accel(theta0, jp)
    out = [theta0]
    u = np.zeros(1)
    for _ in range(int(round(T / h))):
        nx = sim.physics_step(prev, prev2, u, mp, ap, g, jp, h)
        prev2, prev = prev, nx
        out.append(nx)
    return np.array(out)


def test_equilibrium_fixed_point():
    mp, ap, g, jp = inert_setup(damping=0.05)
    assert sim.physics_step(0.0, 0.0, np.zeros(1), mp, ap, g, jp, 1e-3) == 0.0


def test_one_step_gravity_closed_form():
    mp, ap, g, jp = inert_setup()
    th, dt = 0.3, 0.01
    got = sim.physics_step(th, th, np.zeros(1), mp, ap, g, jp, dt)
    want = th - dt * dt * jp.mass * jp.gravity * jp.com_length * math.sin(th) / jp.inertia
    assert abs(got - want) < 1e-15


def test_one_step_matches_msk_composition(wrist, rng):
    mp, ap, g, jp = wrist
    for _ in range(20):
        t1 = rng.uniform(-0.6, 0.6)
        t2 = t1 - rng.uniform(-0.02, 0.02)
        u = rng.uniform(0, 1, 5)
        dt = 0.01
        thd = (t1 - t2) / dt
        lmt = msk.mtu_length(t1, g)
        vmt = -msk.moment_arm(t1, g) * thd
        F = np.array([msk.muscle_tendon_force(u[i], lmt[i], vmt[i], mp.muscle(i), ap)
                      for i in range(5)])
        tau = msk.joint_torque_from_muscles(F, msk.moment_arm(t1, g))
        want = 2 * t1 - t2 + dt * dt * msk.joint_acceleration(tau, t1, thd, jp)
        assert abs(sim.physics_step(t1, t2, u, mp, ap, g, jp, dt) - want) < 1e-13


def test_batched_step_matches_scalar(wrist, rng):
    mp, ap, g, jp = wrist
    t1 = rng.uniform(-0.5, 0.5, 8)
    t2 = t1 + rng.uniform(-0.01, 0.01, 8)
    u = rng.uniform(0, 1, (8, 5))
    batch = sim.physics_step(t1, t2, u, mp, ap, g, jp, 0.01)
    for k in range(8):
        assert batch[k] == sim.physics_step(t1[k], t2[k], u[k], mp, ap, g, jp, 0.01)


def test_physics_step_errors(wrist):
    mp, ap, g, jp = wrist
    with pytest.raises(ValueError):
        sim.physics_step(0.0, 0.0, np.zeros(5), mp, ap, g, jp, 0.0)
    with pytest.raises(msk.DomainError):
        sim.physics_step(0.0, 0.0, np.full(5, 1.2), mp, ap, g, jp, 0.01)
    with pytest.raises(msk.RangeError):
        sim.physics_step(2.0, 2.0, np.zeros(5), mp, ap, g, jp, 0.01)


def test_central_difference_is_second_order():
    setup = inert_setup()
    h_ref = 1e-4
    ref = roll(0.3, h_ref, 1.0, setup)
    errs = []
    for h in (2e-3, 1e-3):
        y = roll(0.3, h, 1.0, setup)
        errs.append(np.max(np.abs(y - ref[::int(round(h / h_ref))])))
    assert 3.5 <= errs[0] / errs[1] <= 4.5


def test_undamped_energy_conserved():
    mp, ap, g, jp = inert_setup()
    h = 1e-3
    th = roll(0.3, h, 2.0, (mp, ap, g, jp))
    vel = (th[2:] - th[:-2]) / (2 * h)
    energy = 0.5 * jp.inertia * vel ** 2 + jp.mass * jp.gravity * jp.com_length * (1 - np.cos(th[1:-1]))
    assert np.max(np.abs(energy - energy[0])) / energy[0] < 0.01


def test_damped_energy_nonincreasing():
    setup = inert_setup(damping=0.05)
    cfg = sim.SimConfig(dt=1e-3, duration=2.0, theta_0=0.3)
    tr = sim.simulate_trajectory(cfg, *setup, excitation=np.zeros((1, cfg.n_samples)))
    th, jp = tr.angle, setup[3]
    # energy at the midpoints of consecutive samples
    vel = np.diff(th) / cfg.dt
    mid = 0.5 * (th[1:] + th[:-1])
    e = 0.5 * jp.inertia * vel ** 2 + jp.mass * jp.gravity * jp.com_length * (1 - np.cos(mid))
    assert np.all(np.diff(e[1:]) <= 1e-12 * e[0])


def test_zero_excitation_at_rest_stays_put():
    setup = inert_setup()
    cfg = sim.SimConfig(dt=1e-3, duration=1.0)
    tr = sim.simulate_trajectory(cfg, *setup, excitation=np.zeros((1, cfg.n_samples)))
    assert np.all(tr.angle == 0.0)


def test_simulate_deterministic_and_stride(wrist):
    cfg = sim.SimConfig(dt=1e-3, duration=2.0, stride=10, seed=4)
    a = sim.simulate_trajectory(cfg, *wrist)
    b = sim.simulate_trajectory(cfg, *wrist)
    assert a.digest() == b.digest()
    assert a.n_samples == 2001 and a.emg.shape == (5, 2001)
    assert np.all(a.emg >= 0) and np.all(a.emg <= 1)
    assert np.ptp(a.angle) > 0.05
    # linear interpolation between physics samples
    k = 13
    np.testing.assert_allclose(a.angle[10 * k + 4], 0.6 * a.angle[10 * k] + 0.4 * a.angle[10 * k + 10],
                               atol=1e-15)


def test_random_walk_excitation(wrist):
    spec = sim.ExcitationSpec(kind="random_walk", low=0.1, high=0.4)
    cfg = sim.SimConfig(dt=1e-3, duration=2.0, stride=10, excitation=spec)
    tr = sim.simulate_trajectory(cfg, *wrist)
    assert tr.emg.min() >= 0.1 - 1e-12 and tr.emg.max() <= 0.4 + 1e-12


def test_dataset_reproducible_and_noise_free_emg_equals_excitation(wrist):
    cfg = sim.SimConfig(dt=1e-3, duration=1.0, stride=10, seed=9)
    a = sim.generate_synthetic_dataset(cfg, *wrist, 5)
    b = sim.generate_synthetic_dataset(cfg, *wrist, 5)
    assert [t.digest() for t in a] == [t.digest() for t in b]
    assert len({t.digest() for t in a}) == 5
    ss = np.random.SeedSequence(9).spawn(5)[2]
    clean = sim.simulate_trajectory(cfg, *wrist, rng=np.random.default_rng(ss))
    np.testing.assert_array_equal(a[2].emg, clean.emg)
    np.testing.assert_array_equal(a[2].angle, clean.angle)


def test_noise_std_within_band(wrist):
    cfg = sim.SimConfig(dt=1e-3, duration=25.0, stride=10, seed=2, noise_std=0.05)
    noisy = sim.generate_synthetic_dataset(cfg, *wrist, 1)[0]
    ss = np.random.SeedSequence(2).spawn(1)[0]
    clean = sim.simulate_trajectory(sim.SimConfig(dt=1e-3, duration=25.0, stride=10, seed=2),
                                    *wrist, rng=np.random.default_rng(ss))
    np.testing.assert_array_equal(noisy.angle, clean.angle)
    diff = noisy.emg - clean.emg
    assert diff.shape[1] * 4 >= 1e5
    sd = diff.std(axis=1)
    assert np.all((sd >= 0.03) & (sd <= 0.05)), sd


def test_stability_guard_rejects_large_step(wrist):
    cfg = sim.SimConfig(dt=1e-3, duration=2.0, stride=200)
    with pytest.raises(sim.StabilityError):
        sim.simulate_trajectory(cfg, *wrist)
    assert sim.stability_margin(0.01, *wrist) < 1.0


def test_divergence_guard():
    # a fast spin with a wide geometry range leaves the 10 rad guard as the only stop
    mp, ap, _, _ = inert_setup()
    g = GeometryPoly(np.array([[0.10, 0.0, 0.0, 0.0]]), (-100.0, 100.0))
    jp = JointParams(inertia=0.02, damping=0.0, mass=1.5, com_length=0.08)
    cfg = sim.SimConfig(dt=1e-3, duration=5.0, theta_dot_0=60.0)
    with pytest.raises(sim.DivergenceError):
        sim.simulate_trajectory(cfg, mp, ap, g, jp, excitation=np.zeros((1, cfg.n_samples)),
                                check_stability=False)


@pytest.mark.parametrize("kw", [dict(dt=0.0), dict(stride=0), dict(duration=0.001),
                                dict(noise_std=-1.0)])
def test_sim_config_validation(kw):
    with pytest.raises(ValueError):
        sim.SimConfig(**kw)


def test_trial_validation_and_decimate():
    with pytest.raises(ValueError):
        sim.Trial(100.0, np.zeros((2, 5)), np.zeros(4))
    t = sim.Trial(1000.0, np.arange(20.0).reshape(2, 10) / 20, np.arange(10.0))
    d = t.decimate(5)
    assert d.fs == 200.0 and list(d.angle) == [0.0, 5.0]
