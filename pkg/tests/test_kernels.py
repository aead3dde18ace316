import os
import subprocess
import sys

import numpy as np
import pytest
import scipy.signal as sps
from hypothesis import given, strategies as st

from penn import _kernels_py, defaults, kernels

try:
    from penn import _kernels as _compiled
except ImportError:  # pragma: no cover - exercised only without a build
    _compiled = None

needs_compiled = pytest.mark.skipif(_compiled is None, reason="compiled extension not built")


def _batch(rng, B=6):
    mp, ap, g, jp = (defaults.wrist_muscles(), defaults.wrist_activation(),
                     defaults.wrist_geometry(), defaults.wrist_joint())
    t1 = rng.uniform(-0.8, 0.8, B)
    t2 = t1 - rng.uniform(-0.03, 0.03, B)
    u = rng.uniform(0, 1, (B, 5))
    P = mp.as_array() * rng.uniform(0.8, 1.2, (5, 5))
    return (t1, t2, u, P, ap.a_shape * rng.uniform(0.5, 1.5), g.mtu_coeffs, jp.as_array(), 0.01,
            mp.lambda_al, mp.v_max_factor)


def test_active_backend_reported():
    assert kernels.BACKEND in ("compiled", "python")
    if _compiled is not None and os.environ.get("PENN_PURE_PYTHON", "") in ("", "0"):
        assert kernels.BACKEND == "compiled"


@needs_compiled
def test_physics_step_backends_agree(rng):
    for _ in range(20):
        args = _batch(rng)
        a, ja, sa = _kernels_py.physics_step(*args, True)
        b, jb, sb = _compiled.physics_step(*args, True)
        assert sa == sb == kernels.OK
        np.testing.assert_allclose(b, a, rtol=1e-13, atol=1e-15)
        np.testing.assert_allclose(jb, ja, rtol=1e-10, atol=1e-14 * np.max(np.abs(ja)))


@needs_compiled
def test_geometry_error_status_both_backends(rng):
    args = list(_batch(rng))
    P = args[3].copy()
    P[:, 2] = 0.5                   # tendon slack longer than the musculotendon unit
    args[3] = P
    for mod in (_kernels_py, _compiled):
        _, _, status = mod.physics_step(*args, False)
        assert status == kernels.ERR_GEOMETRY


def test_jacobian_matches_finite_differences(rng):
    t1, t2, u, P, A, cfs, jp, dt, lam, vf = _batch(rng, B=3)
    _, jac, _ = kernels.physics_step(t1, t2, u, P, A, cfs, jp, dt, lam, vf, True)
    h = 1e-6
    for i in range(5):
        for j in range(5):
            Pp, Pm = P.copy(), P.copy()
            step = h * max(abs(P[i, j]), 1e-3)
            Pp[i, j] += step
            Pm[i, j] -= step
            fp = kernels.physics_step(t1, t2, u, Pp, A, cfs, jp, dt, lam, vf, False)[0]
            fm = kernels.physics_step(t1, t2, u, Pm, A, cfs, jp, dt, lam, vf, False)[0]
            num = (fp - fm) / (2 * step)
            np.testing.assert_allclose(jac[:, 5 * i + j], num, rtol=1e-5,
                                       atol=1e-6 * np.max(np.abs(jac[:, 5 * i:5 * i + 5])))
    fp = kernels.physics_step(t1, t2, u, P, A + 1e-6, cfs, jp, dt, lam, vf, False)[0]
    fm = kernels.physics_step(t1, t2, u, P, A - 1e-6, cfs, jp, dt, lam, vf, False)[0]
    np.testing.assert_allclose(jac[:, 25], (fp - fm) / 2e-6, rtol=1e-5, atol=1e-12)


@needs_compiled
def test_phase_one_epoch_backends_agree(rng):
    t1, t2, u, P, A, cfs, jp, dt, lam, vf = _batch(rng, B=40)
    target = kernels.physics_step(t1, t2, u, P, A, cfs, jp, dt, lam, vf, False)[0]
    init = np.concatenate([P.ravel() * 1.1, [A]])
    order = rng.permutation(40)
    results = []
    for mod in (_kernels_py, _compiled):
        z = np.zeros(26)
        m, v = np.zeros(26), np.zeros(26)
        total, step, status = mod.phase_one_epoch(order, t1, t2, u, target, z, init, -5.0, -0.01,
                                                  0.5, 1.5, m, v, 0, 1e-3, 0.9, 0.999, 1e-8,
                                                  cfs, jp, dt, lam, vf)
        assert status == kernels.OK and step == 40
        results.append((total, z, m, v))
    (ta, za, ma, va), (tb, zb, mb, vb) = results
    assert abs(ta - tb) <= 1e-9 * abs(ta)
    np.testing.assert_allclose(zb, za, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(vb, va, rtol=1e-7, atol=1e-20)


@given(seed=st.integers(0, 2**16), n=st.integers(1, 300), sections=st.integers(1, 4))
def test_sosfilt_matches_scipy(seed, n, sections):
    r = np.random.default_rng(seed)
    sos = sps.butter(2 * sections, 0.2, output="sos")
    x = r.normal(size=n)
    zi = r.normal(size=(sos.shape[0], 2))
    ref, zf_ref = sps.sosfilt(sos, x, zi=zi)
    for mod in (_kernels_py,) + ((_compiled,) if _compiled is not None else ()):
        y, zf = mod.sosfilt(sos, x, zi.copy())
        np.testing.assert_allclose(y, ref, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(zf, zf_ref, rtol=1e-12, atol=1e-12)


def test_pure_python_switch_in_fresh_interpreter():
    code = "import penn.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, PENN_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True)
    assert out.stdout.strip() == "python"
