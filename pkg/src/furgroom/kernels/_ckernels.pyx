# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Signatures mirror ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, atan2, exp, M_PI

cnp.import_array()


cdef inline double _d3(double* u, double* v) noexcept nogil:
    return u[0] * v[0] + u[1] * v[1] + u[2] * v[2]


cdef double _tri_sqdist(double* p, double* a, double* b, double* c) noexcept nogil:
    cdef double ab[3]
    cdef double ac[3]
    cdef double ap[3]
    cdef double bp[3]
    cdef double cp[3]
    cdef double q[3]
    cdef double d1, d2, d3, d4, d5, d6, va, vb, vc, v, w, denom
    cdef int i
    for i in range(3):
        ab[i] = b[i] - a[i]
        ac[i] = c[i] - a[i]
        ap[i] = p[i] - a[i]
    d1 = _d3(ab, ap)
    d2 = _d3(ac, ap)
    if d1 <= 0 and d2 <= 0:
        for i in range(3):
            q[i] = a[i]
        return _sq(p, q)
    for i in range(3):
        bp[i] = p[i] - b[i]
    d3 = _d3(ab, bp)
    d4 = _d3(ac, bp)
    if d3 >= 0 and d4 <= d3:
        for i in range(3):
            q[i] = b[i]
        return _sq(p, q)
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        v = d1 / (d1 - d3) if d1 != d3 else 0.0
        for i in range(3):
            q[i] = a[i] + v * ab[i]
        return _sq(p, q)
    for i in range(3):
        cp[i] = p[i] - c[i]
    d5 = _d3(ab, cp)
    d6 = _d3(ac, cp)
    if d6 >= 0 and d5 <= d6:
        for i in range(3):
            q[i] = c[i]
        return _sq(p, q)
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        w = d2 / (d2 - d6) if d2 != d6 else 0.0
        for i in range(3):
            q[i] = a[i] + w * ac[i]
        return _sq(p, q)
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        denom = (d4 - d3) + (d5 - d6)
        w = (d4 - d3) / denom if denom != 0 else 0.0
        for i in range(3):
            q[i] = b[i] + w * (c[i] - b[i])
        return _sq(p, q)
    denom = va + vb + vc
    if denom != 0:
        v = vb / denom
        w = vc / denom
    else:
        v = 0.0
        w = 0.0
    for i in range(3):
        q[i] = a[i] + ab[i] * v + ac[i] * w
    return _sq(p, q)


cdef inline double _sq(double* p, double* q) noexcept nogil:
    cdef double x = p[0] - q[0], y = p[1] - q[1], z = p[2] - q[2]
    return x * x + y * y + z * z


def closest_point_sqdist(points, a, b, c):
    cdef double[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64)
    cdef double[:, ::1] A = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[:, ::1] B = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[:, ::1] C = np.ascontiguousarray(c, dtype=np.float64)
    cdef Py_ssize_t n = P.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _tri_sqdist(&P[i, 0], &A[i, 0], &B[i, 0], &C[i, 0])
    return out


def winding_numbers(points, vertices, faces):
    cdef double[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64)
    cdef double[:, ::1] V = np.ascontiguousarray(vertices, dtype=np.float64)
    cdef long long[:, ::1] F = np.ascontiguousarray(faces, dtype=np.int64)
    cdef Py_ssize_t n = P.shape[0], nf = F.shape[0], i, f, k
    cdef double a[3]
    cdef double b[3]
    cdef double c[3]
    cdef double la, lb, lc, det, div, total
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            total = 0.0
            for f in range(nf):
                for k in range(3):
                    a[k] = V[F[f, 0], k] - P[i, k]
                    b[k] = V[F[f, 1], k] - P[i, k]
                    c[k] = V[F[f, 2], k] - P[i, k]
                la = sqrt(_d3(a, a))
                lb = sqrt(_d3(b, b))
                lc = sqrt(_d3(c, c))
                det = (a[0] * (b[1] * c[2] - b[2] * c[1])
                       - a[1] * (b[0] * c[2] - b[2] * c[0])
                       + a[2] * (b[0] * c[1] - b[1] * c[0]))
                div = la * lb * lc + _d3(a, b) * lc + _d3(a, c) * lb + _d3(b, c) * la
                total += atan2(det, div)
            o[i] = total / (2.0 * M_PI)
    return out


def splat_forward(means2d, conics, opacity, colors, bboxes, int height, int width,
                  double alpha_max=0.99):
    cdef double[:, ::1] M = np.ascontiguousarray(means2d, dtype=np.float64)
    cdef double[:, ::1] Q = np.ascontiguousarray(conics, dtype=np.float64)
    cdef double[::1] O = np.ascontiguousarray(opacity, dtype=np.float64)
    cdef double[:, ::1] Cl = np.ascontiguousarray(colors, dtype=np.float64)
    cdef long long[:, ::1] BB = np.ascontiguousarray(bboxes, dtype=np.int64)
    cdef Py_ssize_t G = M.shape[0], nc = Cl.shape[1], g, x, y, k
    trans = np.ones((height, width))
    accum = np.zeros((height, width, nc))
    cdef double[:, ::1] T = trans
    cdef double[:, :, ::1] A = accum
    cdef double dx, dy, q, alpha, w
    with nogil:
        for g in range(G):
            for y in range(BB[g, 2], BB[g, 3]):
                dy = y - M[g, 1]
                for x in range(BB[g, 0], BB[g, 1]):
                    dx = x - M[g, 0]
                    q = Q[g, 0] * dx * dx + 2.0 * Q[g, 1] * dx * dy + Q[g, 2] * dy * dy
                    alpha = O[g] * exp(-0.5 * q)
                    if alpha > alpha_max:
                        alpha = alpha_max
                    w = alpha * T[y, x]
                    for k in range(nc):
                        A[y, x, k] += w * Cl[g, k]
                    T[y, x] = T[y, x] * (1.0 - alpha)
    return trans, accum


def splat_backward(means2d, conics, opacity, colors, bboxes, trans_final, accum,
                   grad_sil, grad_accum, double alpha_max=0.99):
    cdef double[:, ::1] M = np.ascontiguousarray(means2d, dtype=np.float64)
    cdef double[:, ::1] Q = np.ascontiguousarray(conics, dtype=np.float64)
    cdef double[::1] O = np.ascontiguousarray(opacity, dtype=np.float64)
    cdef double[:, ::1] Cl = np.ascontiguousarray(colors, dtype=np.float64)
    cdef long long[:, ::1] BB = np.ascontiguousarray(bboxes, dtype=np.int64)
    cdef double[:, ::1] TF = np.ascontiguousarray(trans_final, dtype=np.float64)
    cdef double[:, ::1] GS = np.ascontiguousarray(grad_sil, dtype=np.float64)
    cdef double[:, :, ::1] GA = np.ascontiguousarray(grad_accum, dtype=np.float64)
    cdef Py_ssize_t G = M.shape[0], nc = Cl.shape[1], g, x, y, k
    cdef Py_ssize_t H = TF.shape[0], W = TF.shape[1]
    tcur_arr = np.array(TF, copy=True)
    after_arr = np.zeros((H, W, nc))
    g_mean = np.zeros((G, 2))
    g_conic = np.zeros((G, 3))
    g_color = np.zeros((G, nc))
    cdef double[:, ::1] TC = tcur_arr
    cdef double[:, :, ::1] AF = after_arr
    cdef double[:, ::1] GM = g_mean
    cdef double[:, ::1] GQ = g_conic
    cdef double[:, ::1] GC = g_color
    cdef double dx, dy, q, raw, alpha, one_m, t_g, w, d_alpha, d_q, s1, s2
    with nogil:
        for g in range(G - 1, -1, -1):
            for y in range(BB[g, 2], BB[g, 3]):
                dy = y - M[g, 1]
                for x in range(BB[g, 0], BB[g, 1]):
                    dx = x - M[g, 0]
                    q = Q[g, 0] * dx * dx + 2.0 * Q[g, 1] * dx * dy + Q[g, 2] * dy * dy
                    raw = O[g] * exp(-0.5 * q)
                    alpha = raw if raw < alpha_max else alpha_max
                    one_m = 1.0 - alpha
                    t_g = TC[y, x] / one_m
                    w = alpha * t_g
                    s1 = 0.0
                    s2 = 0.0
                    for k in range(nc):
                        s1 += GA[y, x, k] * Cl[g, k]
                        s2 += GA[y, x, k] * AF[y, x, k]
                        GC[g, k] += w * GA[y, x, k]
                        AF[y, x, k] += w * Cl[g, k]
                    d_alpha = GS[y, x] * TF[y, x] / one_m + s1 * t_g - s2 / one_m
                    TC[y, x] = t_g
                    if raw < alpha_max:
                        d_q = -0.5 * alpha * d_alpha
                        GM[g, 0] += d_q * -2.0 * (Q[g, 0] * dx + Q[g, 1] * dy)
                        GM[g, 1] += d_q * -2.0 * (Q[g, 1] * dx + Q[g, 2] * dy)
                        GQ[g, 0] += d_q * dx * dx
                        GQ[g, 1] += d_q * 2.0 * dx * dy
                        GQ[g, 2] += d_q * dy * dy
    return g_mean, g_conic, g_color
