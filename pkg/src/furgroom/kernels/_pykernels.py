"""Pure numpy implementations of the hot kernels.

These are the reference fallbacks for the compiled ``_ckernels`` module and
share its signatures exactly.
"""

import numpy as np

_CHUNK = 1 << 16


def _dot(u, v):
    return np.einsum("ij,ij->i", u, v)


def closest_point_sqdist(points, a, b, c):
    """Squared distance from ``points[i]`` to triangle ``(a[i], b[i], c[i])``.

    Rows are paired, all inputs are ``(n, 3)`` float64.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    c = np.ascontiguousarray(c, dtype=np.float64)
    out = np.empty(len(points))
    for s in range(0, len(points), _CHUNK):
        sl = slice(s, s + _CHUNK)
        q = _closest_point(points[sl], a[sl], b[sl], c[sl])
        d = points[sl] - q
        out[sl] = _dot(d, d)
    return out


def _closest_point(p, a, b, c):
    # Ericson, Real-Time Collision Detection, 5.1.5; region tests applied in
    # reverse priority so the highest-priority region wins.
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = _dot(ab, ap)
    d2 = _dot(ac, ap)
    bp = p - b
    d3 = _dot(ab, bp)
    d4 = _dot(ac, bp)
    cp = p - c
    d5 = _dot(ab, cp)
    d6 = _dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = np.where(denom != 0, vb / denom, 0.0)
        w = np.where(denom != 0, vc / denom, 0.0)
        q = a + ab * v[:, None] + ac * w[:, None]

        bc_num = d4 - d3
        bc_den = (d4 - d3) + (d5 - d6)
        m = (va <= 0) & (bc_num >= 0) & ((d5 - d6) >= 0)
        t = np.where(bc_den != 0, bc_num / bc_den, 0.0)
        q = np.where(m[:, None], b + (c - b) * t[:, None], q)

        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t = np.where((d2 - d6) != 0, d2 / (d2 - d6), 0.0)
        q = np.where(m[:, None], a + ac * t[:, None], q)

        m = (d6 >= 0) & (d5 <= d6)
        q = np.where(m[:, None], c, q)

        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t = np.where((d1 - d3) != 0, d1 / (d1 - d3), 0.0)
        q = np.where(m[:, None], a + ab * t[:, None], q)

        m = (d3 >= 0) & (d4 <= d3)
        q = np.where(m[:, None], b, q)

        m = (d1 <= 0) & (d2 <= 0)
        q = np.where(m[:, None], a, q)
    return q


def winding_numbers(points, vertices, faces):
    """Generalized winding number of a triangle soup at each query point."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    tri = np.ascontiguousarray(vertices, dtype=np.float64)[np.asarray(faces)]
    out = np.zeros(len(points))
    nf = len(tri)
    rows = max(1, _CHUNK * 4 // max(nf, 1))
    for s in range(0, len(points), rows):
        p = points[s:s + rows, None, :]
        a = tri[None, :, 0, :] - p
        b = tri[None, :, 1, :] - p
        c = tri[None, :, 2, :] - p
        la = np.linalg.norm(a, axis=-1)
        lb = np.linalg.norm(b, axis=-1)
        lc = np.linalg.norm(c, axis=-1)
        det = np.einsum("pfi,pfi->pf", a, np.cross(b, c))
        div = (la * lb * lc + np.einsum("pfi,pfi->pf", a, b) * lc
               + np.einsum("pfi,pfi->pf", a, c) * lb
               + np.einsum("pfi,pfi->pf", b, c) * la)
        out[s:s + rows] = np.arctan2(det, div).sum(axis=1) / (2.0 * np.pi)
    return out


def _gauss_alpha(means2d, conics, opacity, g, x0, x1, y0, y1, alpha_max):
    xs = np.arange(x0, x1, dtype=np.float64) - means2d[g, 0]
    ys = np.arange(y0, y1, dtype=np.float64) - means2d[g, 1]
    dx = xs[None, :]
    dy = ys[:, None]
    ca, cb, cc = conics[g]
    q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
    raw = opacity[g] * np.exp(-0.5 * q)
    return np.minimum(raw, alpha_max), raw < alpha_max, dx, dy


def splat_forward(means2d, conics, opacity, colors, bboxes, height, width,
                  alpha_max=0.99):
    """Front-to-back compositing of pre-sorted 2D Gaussians.

    Returns ``(transmittance, accum)`` where ``accum`` is the alpha-weighted
    sum of the per-Gaussian ``colors`` (``(G, C)``).
    """
    colors = np.asarray(colors, dtype=np.float64)
    trans = np.ones((height, width))
    accum = np.zeros((height, width, colors.shape[1]))
    for g in range(len(means2d)):
        x0, x1, y0, y1 = bboxes[g]
        if x1 <= x0 or y1 <= y0:
            continue
        alpha, _, _, _ = _gauss_alpha(means2d, conics, opacity, g, x0, x1, y0, y1, alpha_max)
        t = trans[y0:y1, x0:x1]
        accum[y0:y1, x0:x1] += (alpha * t)[..., None] * colors[g]
        trans[y0:y1, x0:x1] = t * (1.0 - alpha)
    return trans, accum


def splat_backward(means2d, conics, opacity, colors, bboxes, trans_final, accum,
                   grad_sil, grad_accum, alpha_max=0.99):
    """Reverse pass of :func:`splat_forward`.

    ``grad_sil`` is dL/d(1 - transmittance), ``grad_accum`` is dL/d(accum).
    Returns gradients for means2d, conics and colors.
    """
    colors = np.asarray(colors, dtype=np.float64)
    G = len(means2d)
    g_mean = np.zeros((G, 2))
    g_conic = np.zeros((G, 3))
    g_color = np.zeros_like(colors)
    t_cur = trans_final.copy()
    after = np.zeros_like(accum)
    for g in range(G - 1, -1, -1):
        x0, x1, y0, y1 = bboxes[g]
        if x1 <= x0 or y1 <= y0:
            continue
        alpha, live, dx, dy = _gauss_alpha(means2d, conics, opacity, g, x0, x1, y0, y1, alpha_max)
        one_m = 1.0 - alpha
        t_g = t_cur[y0:y1, x0:x1] / one_m
        ga = grad_accum[y0:y1, x0:x1]
        aft = after[y0:y1, x0:x1]
        w = alpha * t_g
        d_alpha = (grad_sil[y0:y1, x0:x1] * trans_final[y0:y1, x0:x1] / one_m
                   + np.einsum("hwc,c->hw", ga, colors[g]) * t_g
                   - np.einsum("hwc,hwc->hw", ga, aft) / one_m)
        g_color[g] += np.einsum("hw,hwc->c", w, ga)
        after[y0:y1, x0:x1] = aft + w[..., None] * colors[g]
        t_cur[y0:y1, x0:x1] = t_g
        d_q = np.where(live, -0.5 * alpha * d_alpha, 0.0)
        ca, cb, cc = conics[g]
        g_mean[g, 0] += np.sum(d_q * -2.0 * (ca * dx + cb * dy))
        g_mean[g, 1] += np.sum(d_q * -2.0 * (cb * dx + cc * dy))
        g_conic[g, 0] += np.sum(d_q * dx * dx)
        g_conic[g, 1] += np.sum(d_q * 2.0 * dx * dy)
        g_conic[g, 2] += np.sum(d_q * dy * dy)
    return g_mean, g_conic, g_color
