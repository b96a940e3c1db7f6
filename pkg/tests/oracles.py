"""Independent brute-force re-implementations of the strand metrics.

Everything here uses explicit loops over plain formulas and no spatial
index, so agreement with the library is a meaningful check.
"""

import math

import numpy as np


def lengths(strands):
    return [sum(math.dist(s[l], s[l + 1]) for l in range(len(s) - 1)) for s in strands]


def neighbours(strands, k):
    """k nearest other roots by distance, ties to the lower index."""
    roots = [tuple(s[0]) for s in strands]
    out = []
    for i, r in enumerate(roots):
        cand = sorted((math.dist(r, q), j) for j, q in enumerate(roots) if j != i)
        out.append([j for _, j in cand[:k]])
    return out


def _unit(v):
    n = math.sqrt(sum(c * c for c in v))
    return [c / n for c in v]


def _segments(s):
    return [_unit([s[l + 1][c] - s[l][c] for c in range(3)]) for l in range(len(s) - 1)]


def angles(s):
    b = _segments(s)
    out = []
    for l in range(1, len(b)):
        d = sum(b[l - 1][c] * b[l][c] for c in range(3))
        out.append(math.acos(max(-1.0, min(1.0, d))))
    return out


def sigma_loc(strands, k):
    L, nb = lengths(strands), neighbours(strands, k)
    return math.sqrt(sum(sum((L[i] - L[j]) ** 2 for j in nb[i]) / k
                         for i in range(len(L))) / len(L))


def var_glob_kappa(strands):
    th = [angles(s) for s in strands]
    n, m = len(th), len(th[0])
    mean = [sum(t[l] for t in th) / n for l in range(m)]
    return sum(sum((t[l] - mean[l]) ** 2 for l in range(m)) / m for t in th) / n


def var_loc_kappa(strands, k):
    th, nb = [angles(s) for s in strands], neighbours(strands, k)
    m = len(th[0])
    return sum(sum(sum((th[i][l] - th[j][l]) ** 2 for l in range(m)) / m for j in nb[i]) / k
               for i in range(len(th))) / len(th)


def kappa_max(strands):
    return max(max(angles(s)) for s in strands)


def _sqdist(u, v):
    return sum((a - b) ** 2 for a, b in zip(u, v))


def var_loc_dir(strands, k):
    nb = neighbours(strands, k)
    t = []
    for s in strands:
        b = _segments(s)
        t.append(_unit([sum(x[c] for x in b) / len(b) for c in range(3)]))
    return sum(sum(_sqdist(t[i], t[j]) for j in nb[i]) / k for i in range(len(t))) / len(t)


def var_loc_first_dir(strands, k):
    nb = neighbours(strands, k)
    b0 = [_segments(s)[0] for s in strands]
    return sum(sum(_sqdist(b0[i], b0[j]) for j in nb[i]) / k for i in range(len(b0))) / len(b0)


# ---------------------------------------------------------------- tip Chamfer

def _seg_dist(p, a, b):
    ab = b - a
    t = min(1.0, max(0.0, float(np.dot(p - a, ab) / np.dot(ab, ab))))
    return float(np.linalg.norm(p - (a + t * ab)))


def point_triangle_distance(p, a, b, c):
    """Plane projection when it lands inside, otherwise the nearest edge."""
    n = np.cross(b - a, c - a)
    n = n / np.linalg.norm(n)
    h = float(np.dot(p - a, n))
    q = p - h * n
    inside = True
    for u, v in ((a, b), (b, c), (c, a)):
        if np.dot(np.cross(v - u, q - u), n) < 0:
            inside = False
    if inside:
        return abs(h)
    return min(_seg_dist(p, a, b), _seg_dist(p, b, c), _seg_dist(p, c, a))


def tip_chamfer(strands, mesh, samples):
    tips = [np.asarray(s[-1], dtype=float) for s in strands]
    tri = mesh.vertices[mesh.faces]
    fwd = sum(min(point_triangle_distance(t, *abc) for abc in tri) ** 2 for t in tips) / len(tips)
    bwd = sum(min(_sqdist(x, t) for t in tips) for x in samples) / len(samples)
    return fwd, bwd


# ---------------------------------------------------------------- P/R/F

def resample(strands, n):
    """Points at arc positions (k + 1/2) total / n with their segment directions."""
    segs = []
    for s in strands:
        for l in range(len(s) - 1):
            a, b = np.asarray(s[l], float), np.asarray(s[l + 1], float)
            ln = float(np.linalg.norm(b - a))
            if ln > 0:
                segs.append((a, b, ln))
    total = sum(ln for _, _, ln in segs)
    pts, dirs = [], []
    si, start = 0, 0.0
    for k in range(n):
        pos = (k + 0.5) * total / n
        while si < len(segs) - 1 and start + segs[si][2] <= pos:
            start += segs[si][2]
            si += 1
        a, b, ln = segs[si]
        pts.append(a + (pos - start) / ln * (b - a))
        dirs.append((b - a) / ln)
    return np.array(pts), np.array(dirs)


def _fraction_matched(qp, qd, rp, rd, dist, angle_deg):
    cos_min = math.cos(math.radians(angle_deg))
    hit = 0
    for p, d in zip(qp, qd):
        close = np.sqrt(((rp - p) ** 2).sum(axis=1)) <= dist
        aligned = np.abs(rd @ d) >= cos_min
        hit += bool(np.any(close & aligned))
    return hit / len(qp)


def prf(pred_pts, pred_dirs, gt_pts, gt_dirs, dist, angle_deg):
    p = 100 * _fraction_matched(pred_pts, pred_dirs, gt_pts, gt_dirs, dist, angle_deg)
    r = 100 * _fraction_matched(gt_pts, gt_dirs, pred_pts, pred_dirs, dist, angle_deg)
    return p, r, (0.0 if p + r == 0 else 2 * p * r / (p + r))
