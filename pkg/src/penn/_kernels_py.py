"""Pure numpy implementations of the hot kernels.

Same call signatures and semantics as the compiled ``_kernels`` module; used
when the extension is unavailable or ``PENN_PURE_PYTHON=1`` is set.

Parameter matrix ``P`` is ``(N, 5)`` with columns
``f_max, l_opt, l_tendon_slack, phi_opt, k_fl``; Jacobian columns are laid out
muscle-major (``5 * i + j``) followed by one column for the activation shape.
"""
import math

import numpy as np
from scipy import signal as _sps

OK = 0
ERR_GEOMETRY = 1
ERR_NONFINITE = 2


def _activation(A, u):
    if abs(A) < 1e-12:
        return u.copy(), 0.5 * u * (u - 1.0)
    num = np.expm1(A * u)
    den = math.expm1(A)
    a = num / den
    da = (u * (num + 1.0) - a * (den + 1.0)) / den
    return a, da


def physics_step(theta1, theta2, u, P, A, coeffs, joint, dt, lam, vfac, want_jac):
    """One explicit central-difference step for a batch of histories.

    Returns ``(theta_next, jac, status)``; ``jac`` is ``None`` unless requested.
    """
    theta1 = np.asarray(theta1, dtype=np.float64)
    theta2 = np.asarray(theta2, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    inertia, damping, mass, com, grav = joint
    t1 = theta1[:, None]
    thd = (theta1 - theta2) / dt
    c0, c1, c2, c3 = coeffs[:, 0], coeffs[:, 1], coeffs[:, 2], coeffs[:, 3]
    fmax, lopt, lts, phi, kfl = P[:, 0], P[:, 1], P[:, 2], P[:, 3], P[:, 4]

    lmt = c0 + t1 * (c1 + t1 * (c2 + t1 * c3))
    dl = c1 + t1 * (2.0 * c2 + t1 * (3.0 * c3))
    r = -dl
    vmt = dl * thd[:, None]
    a, da_dA = _activation(A, u)
    s, co = np.sin(phi), np.cos(phi)
    h = lopt * s
    w = lmt - lts
    if np.any(w <= 0.0):
        return np.full(theta1.shape, np.nan), None, ERR_GEOMETRY
    lm = np.sqrt(w * w + h * h)
    vm = w * vmt / lm
    cosp = w / lm
    scale_a = lam * (1.0 - a) + 1.0
    den_a = lopt * scale_a
    lba = lm / den_a
    d = lba - 1.0
    fa = np.exp(-(d * d) / kfl)
    vb = vm / (vfac * lopt)
    short = vb <= 0.0
    vs = np.minimum(vb, 0.0)
    vl = np.maximum(vb, 0.0)
    fv = np.where(short, 0.3 * (vs + 1.0) / (0.3 - vs), (2.34 * vl + 0.039) / (1.3 * vl + 0.039))
    fv_in = (fv >= 0.0) & (fv <= 1.8)
    fv = np.clip(fv, 0.0, 1.8)
    f_act = fmax * fa * fv * a
    lb = lm / lopt
    pexp = np.exp(10.0 * (lb - 1.0) - 5.0)
    f_pas = np.where(lb > 1.0, fmax * pexp, 0.0)
    force = (f_act + f_pas) * cosp
    tau = np.sum(r * force, axis=1)
    acc = (tau - damping * thd - mass * grav * com * np.sin(theta1)) / inertia
    theta_next = 2.0 * theta1 - theta2 + dt * dt * acc
    if not np.all(np.isfinite(theta_next)):
        return theta_next, None, ERR_NONFINITE
    if not want_jac:
        return theta_next, None, OK

    gF = (dt * dt / inertia) * r
    gFa = gF * cosp
    gFp = np.where(lb >= 1.0, gF * cosp, 0.0)
    gcos = gF * (f_act + np.where(lb > 1.0, f_pas, 0.0))
    gw = gcos / lm
    glm = -gcos * w / (lm * lm)
    g_fmax = gFa * fa * fv * a + gFp * pexp
    gfa = gFa * fmax * fv * a
    gfv = gFa * fmax * fa * a
    ga = gFa * fmax * fa * fv
    glb = gFp * fmax * pexp * 10.0
    glm += glb / lopt
    g_lopt = -glb * lm / (lopt * lopt)
    dfv = np.where(short, 0.39 / (0.3 - vs) ** 2, 0.04056 / (1.3 * vl + 0.039) ** 2)
    gvb = np.where(fv_in, gfv * dfv, 0.0)
    gvm = gvb / (vfac * lopt)
    g_lopt += -gvb * vb / lopt
    gd = gfa * fa * (-2.0 * d / kfl)
    g_k = gfa * fa * d * d / (kfl * kfl)
    glm += gd / den_a
    gden = -gd * lba / den_a
    g_lopt += gden * scale_a
    ga += gden * lopt * (-lam)
    gw += gvm * vmt / lm
    glm += -gvm * vm / lm
    gw += glm * w / lm
    gh = glm * h / lm
    g_lopt += gh * s
    g_phi = gh * lopt * co
    g_lts = -gw
    g_A = np.sum(ga * da_dA, axis=1)

    n = P.shape[0]
    jac = np.empty((theta1.shape[0], 5 * n + 1))
    jac[:, 0:5 * n:5] = g_fmax
    jac[:, 1:5 * n:5] = g_lopt
    jac[:, 2:5 * n:5] = g_lts
    jac[:, 3:5 * n:5] = g_phi
    jac[:, 4:5 * n:5] = g_k
    jac[:, 5 * n] = g_A
    return theta_next, jac, OK


def _sig(z):
    return 0.5 * (1.0 + math.tanh(0.5 * z))


def phase_one_epoch(order, theta1, theta2, u, target, z, init, a_lo, a_hi, s_lo, s_hi,
                    m, v, step, lr, beta1, beta2, eps,
                    coeffs, joint, dt, lam, vfac):
    """Batch-size-one Adam pass over ``order`` minimising the physics loss.

    ``z`` holds the unconstrained parameters (``5N`` scale logits then the
    activation-shape logit); ``z``, ``m`` and ``v`` are updated in place.
    Returns ``(sum_of_losses, step, status)``.
    """
    n = (z.shape[0] - 1)
    total = 0.0
    for idx in order:
        sg = np.array([_sig(x) for x in z])
        phys = init[:n] * (s_lo + (s_hi - s_lo) * sg[:n])
        A = a_lo + (a_hi - a_lo) * sg[n]
        P = phys.reshape(-1, 5)
        th, jac, status = physics_step(theta1[idx:idx + 1], theta2[idx:idx + 1], u[idx:idx + 1],
                                       P, A, coeffs, joint, dt, lam, vfac, True)
        if status != OK:
            return total, step, status
        err = th[0] - target[idx]
        total += err * err
        g = 2.0 * err * jac[0]
        dz = np.empty_like(z)
        dz[:n] = g[:n] * init[:n] * (s_hi - s_lo) * sg[:n] * (1.0 - sg[:n])
        dz[n] = g[n] * (a_hi - a_lo) * sg[n] * (1.0 - sg[n])
        step += 1
        bc1 = 1.0 - beta1 ** step
        bc2 = 1.0 - beta2 ** step
        m *= beta1
        m += (1.0 - beta1) * dz
        v *= beta2
        v += (1.0 - beta2) * dz * dz
        z -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        if not np.all(np.isfinite(z)):
            return total, step, ERR_NONFINITE
    return total, step, OK


def sosfilt(sos, x, zi):
    """Cascaded biquads (direct form II transposed); ``zi`` is ``(S, 2)``."""
    y, zf = _sps.sosfilt(sos, x, zi=zi)
    return y, zf
