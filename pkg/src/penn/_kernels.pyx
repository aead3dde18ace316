# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_kernels_py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, sqrt, exp, expm1, tanh, fabs, isfinite

cnp.import_array()

cdef enum:
    C_OK = 0
    C_ERR_GEOMETRY = 1
    C_ERR_NONFINITE = 2

OK = C_OK
ERR_GEOMETRY = C_ERR_GEOMETRY
ERR_NONFINITE = C_ERR_NONFINITE


cdef int _step(double th1, double th2, const double[:] u, const double[:, :] P, double A,
               const double[:, :] c, double inertia, double damping, double mgl,
               double dt, double lam, double vfac, double* out, double* jac) noexcept nogil:
    cdef Py_ssize_t n = P.shape[0], i
    cdef double thd = (th1 - th2) / dt
    cdef double tau = 0.0, gA = 0.0
    cdef double den_e = 0.0, a, da
    cdef double lmt, dl, r, vmt, s, co, h, w, lm, vm, cosp, scale_a, den_a, lba, d, fa
    cdef double vb, fv, dfv, f_act, lb, pexp, f_pas, force, fmax, lopt, lts, phi, kfl
    cdef double gF, gFa, gFp, gcos, gw, glm, gfa, gfv, ga, glb, gvb, gvm, gd, gden, gh
    cdef double g_fmax, g_lopt, g_lts, g_phi, g_k, num
    cdef double k2 = dt * dt / inertia
    cdef bint fv_in
    if fabs(A) >= 1e-12:
        den_e = expm1(A)
    for i in range(n):
        fmax = P[i, 0]; lopt = P[i, 1]; lts = P[i, 2]; phi = P[i, 3]; kfl = P[i, 4]
        lmt = c[i, 0] + th1 * (c[i, 1] + th1 * (c[i, 2] + th1 * c[i, 3]))
        dl = c[i, 1] + th1 * (2.0 * c[i, 2] + th1 * (3.0 * c[i, 3]))
        r = -dl
        vmt = dl * thd
        if fabs(A) < 1e-12:
            a = u[i]
            da = 0.5 * u[i] * (u[i] - 1.0)
        else:
            num = expm1(A * u[i])
            a = num / den_e
            da = (u[i] * (num + 1.0) - a * (den_e + 1.0)) / den_e
        s = sin(phi); co = cos(phi)
        h = lopt * s
        w = lmt - lts
        if w <= 0.0:
            return C_ERR_GEOMETRY
        lm = sqrt(w * w + h * h)
        vm = w * vmt / lm
        cosp = w / lm
        scale_a = lam * (1.0 - a) + 1.0
        den_a = lopt * scale_a
        lba = lm / den_a
        d = lba - 1.0
        fa = exp(-(d * d) / kfl)
        vb = vm / (vfac * lopt)
        if vb <= 0.0:
            fv = 0.3 * (vb + 1.0) / (0.3 - vb)
            dfv = 0.39 / ((0.3 - vb) * (0.3 - vb))
        else:
            fv = (2.34 * vb + 0.039) / (1.3 * vb + 0.039)
            dfv = 0.04056 / ((1.3 * vb + 0.039) * (1.3 * vb + 0.039))
        fv_in = fv >= 0.0 and fv <= 1.8
        if fv < 0.0:
            fv = 0.0
        elif fv > 1.8:
            fv = 1.8
        f_act = fmax * fa * fv * a
        lb = lm / lopt
        pexp = exp(10.0 * (lb - 1.0) - 5.0)
        f_pas = fmax * pexp if lb > 1.0 else 0.0
        force = (f_act + f_pas) * cosp
        tau += r * force
        if jac == NULL:
            continue
        gF = k2 * r
        gFa = gF * cosp
        gFp = gF * cosp if lb >= 1.0 else 0.0
        gcos = gF * (f_act + f_pas)
        gw = gcos / lm
        glm = -gcos * w / (lm * lm)
        g_fmax = gFa * fa * fv * a + gFp * pexp
        gfa = gFa * fmax * fv * a
        gfv = gFa * fmax * fa * a
        ga = gFa * fmax * fa * fv
        glb = gFp * fmax * pexp * 10.0
        glm += glb / lopt
        g_lopt = -glb * lm / (lopt * lopt)
        gvb = gfv * dfv if fv_in else 0.0
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
        gA += ga * da
        jac[5 * i] = g_fmax
        jac[5 * i + 1] = g_lopt
        jac[5 * i + 2] = g_lts
        jac[5 * i + 3] = g_phi
        jac[5 * i + 4] = g_k
    if jac != NULL:
        jac[5 * n] = gA
    out[0] = 2.0 * th1 - th2 + dt * dt * (tau - damping * thd - mgl * sin(th1)) / inertia
    if not isfinite(out[0]):
        return C_ERR_NONFINITE
    return C_OK


def physics_step(theta1, theta2, u, P, double A, coeffs, joint, double dt,
                 double lam, double vfac, bint want_jac):
    cdef const double[:] t1 = np.ascontiguousarray(theta1, dtype=np.float64)
    cdef const double[:] t2 = np.ascontiguousarray(theta2, dtype=np.float64)
    cdef const double[:, :] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[:, :] PP = np.ascontiguousarray(P, dtype=np.float64)
    cdef const double[:, :] cc = np.ascontiguousarray(coeffs, dtype=np.float64)
    cdef Py_ssize_t b = t1.shape[0], n = PP.shape[0], k
    cdef double inertia = joint[0], damping = joint[1]
    cdef double mgl = joint[2] * joint[4] * joint[3]
    out_arr = np.empty(b)
    cdef double[:] out = out_arr
    cdef double[:, :] jv
    jac_arr = None
    cdef int status = C_OK
    if want_jac:
        jac_arr = np.empty((b, 5 * n + 1))
        jv = jac_arr
    with nogil:
        for k in range(b):
            if want_jac:
                status = _step(t1[k], t2[k], uu[k], PP, A, cc, inertia, damping, mgl,
                               dt, lam, vfac, &out[k], &jv[k, 0])
            else:
                status = _step(t1[k], t2[k], uu[k], PP, A, cc, inertia, damping, mgl,
                               dt, lam, vfac, &out[k], NULL)
            if status != C_OK:
                break
    if status == C_ERR_GEOMETRY:
        return np.full(b, np.nan), None, status
    if status != C_OK:
        return out_arr, None, status
    return out_arr, jac_arr, C_OK


cdef inline double _sig(double z) noexcept nogil:
    return 0.5 * (1.0 + tanh(0.5 * z))


def phase_one_epoch(order, theta1, theta2, u, target, double[:] z, init,
                    double a_lo, double a_hi, double s_lo, double s_hi,
                    double[:] m, double[:] v, long step, double lr, double beta1,
                    double beta2, double eps, coeffs, joint, double dt, double lam, double vfac):
    cdef const long[:] od = np.ascontiguousarray(order, dtype=np.int64)
    cdef const double[:] t1 = np.ascontiguousarray(theta1, dtype=np.float64)
    cdef const double[:] t2 = np.ascontiguousarray(theta2, dtype=np.float64)
    cdef const double[:, :] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[:] tg = np.ascontiguousarray(target, dtype=np.float64)
    cdef const double[:] ini = np.ascontiguousarray(init, dtype=np.float64)
    cdef const double[:, :] cc = np.ascontiguousarray(coeffs, dtype=np.float64)
    cdef Py_ssize_t np_ = z.shape[0], n = (np_ - 1) // 5, q, j, idx
    cdef double inertia = joint[0], damping = joint[1]
    cdef double mgl = joint[2] * joint[4] * joint[3]
    P_arr = np.empty((n, 5))
    cdef double[:, :] P = P_arr
    jac_arr = np.empty(np_)
    cdef double[:] jac = jac_arr
    sg_arr = np.empty(np_)
    cdef double[:] sg = sg_arr
    cdef double total = 0.0, A, th, err, g, dz, bc1, bc2
    cdef int status = C_OK
    with nogil:
        for q in range(od.shape[0]):
            idx = od[q]
            for j in range(np_):
                sg[j] = _sig(z[j])
            for j in range(5 * n):
                P[j // 5, j % 5] = ini[j] * (s_lo + (s_hi - s_lo) * sg[j])
            A = a_lo + (a_hi - a_lo) * sg[5 * n]
            status = _step(t1[idx], t2[idx], uu[idx], P, A, cc, inertia, damping, mgl,
                           dt, lam, vfac, &th, &jac[0])
            if status != C_OK:
                break
            err = th - tg[idx]
            total += err * err
            step += 1
            bc1 = 1.0 - beta1 ** step
            bc2 = 1.0 - beta2 ** step
            for j in range(np_):
                g = 2.0 * err * jac[j]
                if j < 5 * n:
                    dz = g * ini[j] * (s_hi - s_lo) * sg[j] * (1.0 - sg[j])
                else:
                    dz = g * (a_hi - a_lo) * sg[j] * (1.0 - sg[j])
                m[j] = beta1 * m[j] + (1.0 - beta1) * dz
                v[j] = beta2 * v[j] + (1.0 - beta2) * dz * dz
                z[j] -= lr * (m[j] / bc1) / (sqrt(v[j] / bc2) + eps)
                if not isfinite(z[j]):
                    status = C_ERR_NONFINITE
            if status != C_OK:
                break
    return total, step, status


def sosfilt(sos, x, zi):
    """Cascaded biquads (direct form II transposed); ``zi`` is ``(S, 2)``."""
    cdef const double[:, :] s = np.ascontiguousarray(sos, dtype=np.float64)
    cdef const double[:] xv = np.ascontiguousarray(x, dtype=np.float64)
    zf_arr = np.array(zi, dtype=np.float64, copy=True).reshape(s.shape[0], 2)
    cdef double[:, :] zz = zf_arr
    y_arr = np.empty(xv.shape[0])
    cdef double[:] y = y_arr
    cdef Py_ssize_t t, k, ns = s.shape[0]
    cdef double xi, yi
    with nogil:
        for t in range(xv.shape[0]):
            xi = xv[t]
            for k in range(ns):
                yi = s[k, 0] * xi + zz[k, 0]
                zz[k, 0] = s[k, 1] * xi - s[k, 4] * yi + zz[k, 1]
                zz[k, 1] = s[k, 2] * xi - s[k, 5] * yi
                xi = yi
            y[t] = xi
    return y_arr, zf_arr
