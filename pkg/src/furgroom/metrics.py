"""Strand-set metrics: supervised precision/recall/F and unsupervised consistency."""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .losses import bending_angles, curvature_consistency_loss
from .mesh import knn, sample_surface, unsigned_distance

THRESHOLDS = ((2.0, 20.0), (3.0, 30.0), (4.0, 40.0))
DEFAULT_K = 10


@dataclass
class OrientedPoints:
    points: np.ndarray       # (P, 3)
    directions: np.ndarray   # (P, 3) unit


def _strands(strands):
    strands = np.asarray(strands, dtype=np.float64)
    if strands.ndim != 3 or strands.shape[-1] != 3:
        raise ValueError("expected an (N, L, 3) strand array")
    if strands.shape[0] == 0:
        raise ValueError("empty strand set")
    return strands


def resample_points(strands, n_points=100000):
    """``n_points`` samples spaced evenly by arc length over the whole set.

    Sample ``k`` sits at arc position ``(k + 1/2) * total / n_points`` of the
    strands laid end to end; its direction is that of the containing segment.
    """
    strands = _strands(strands)
    d = np.diff(strands, axis=1).reshape(-1, 3)
    seg = np.linalg.norm(d, axis=1)
    start = strands[:, :-1].reshape(-1, 3)
    live = seg > 0
    d, seg, start = d[live], seg[live], start[live]
    if len(seg) == 0:
        raise ValueError("strand set has zero total length")
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    pos = (np.arange(n_points) + 0.5) * (cum[-1] / n_points)
    i = np.clip(np.searchsorted(cum, pos, side="right") - 1, 0, len(seg) - 1)
    t = (pos - cum[i]) / seg[i]
    u = d[i] / seg[i][:, None]
    return OrientedPoints(start[i] + t[:, None] * d[i], u)


def _oriented(x, n_points):
    return x if isinstance(x, OrientedPoints) else resample_points(x, n_points)


def _matched(query, ref, dist, cos_min, budget=1 << 22):
    tree = cKDTree(ref.points)
    out = np.zeros(len(query.points), dtype=bool)
    todo = np.arange(len(query.points))
    # the few nearest reference points settle most queries
    for k in (1, 32):
        k = min(k, len(ref.points))
        dn, nn = tree.query(query.points[todo], k=k)
        dn, nn = dn.reshape(len(todo), k), nn.reshape(len(todo), k)
        c = np.abs(np.einsum("ikj,ij->ik", ref.directions[nn], query.directions[todo]))
        out[todo] = np.any((dn <= dist) & (c >= cos_min), axis=1)
        # still open: unmatched with possibly more candidates inside the ball
        todo = todo[~out[todo] & (dn[:, -1] <= dist) & (k < len(ref.points))]
        if len(todo) == 0:
            return out
    counts = tree.query_ball_point(query.points[todo], dist, return_length=True)
    bounds = np.searchsorted(np.cumsum(counts), np.arange(budget, counts.sum() + budget, budget))
    for lo, hi in zip(np.r_[0, bounds[:-1] + 1], bounds + 1):
        idx = todo[lo:hi]
        if len(idx) == 0:
            continue
        hits = tree.query_ball_point(query.points[idx], dist)
        lens = np.fromiter((len(h) for h in hits), dtype=np.int64, count=len(idx))
        cand = np.concatenate([np.asarray(h, dtype=np.int64) for h in hits])
        owner = np.repeat(np.arange(len(idx)), lens)
        c = np.abs(np.sum(ref.directions[cand] * query.directions[idx][owner], axis=1))
        out[idx] = np.bincount(owner, weights=c >= cos_min, minlength=len(idx)) > 0
    return out


def precision_recall_f(pred, gt, dist_thresh_cm, angle_thresh_deg, n_points=100000):
    """Percent precision, recall and F-score.

    A point matches when some point of the other set is within the distance
    threshold and its undirected angular difference is within the angle
    threshold. Inputs are strand arrays or :class:`OrientedPoints`.
    """
    pred = _oriented(pred, n_points)
    gt = _oriented(gt, n_points)
    if len(pred.points) == 0 or len(gt.points) == 0:
        raise ValueError("empty point set")
    cos_min = np.cos(np.radians(angle_thresh_deg))
    p = 100.0 * np.mean(_matched(pred, gt, dist_thresh_cm, cos_min))
    r = 100.0 * np.mean(_matched(gt, pred, dist_thresh_cm, cos_min))
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return float(p), float(r), float(f)


def prf_table(pred, gt, thresholds=THRESHOLDS, n_points=100000):
    pred = _oriented(pred, n_points)
    gt = _oriented(gt, n_points)
    return [(d, a) + precision_recall_f(pred, gt, d, a) for d, a in thresholds]


def root_neighbors(strands, k=DEFAULT_K):
    """Indices of the ``k`` nearest other roots per strand, ``(N, k)``."""
    roots = strands[:, 0]
    n = len(roots)
    if n < 2:
        raise ValueError("need at least two strands")
    if not 1 <= k <= n - 1:
        raise ValueError("k must be in [1, N - 1]")
    idx = knn(roots, roots, k + 1)
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        row = idx[i][idx[i] != i]
        out[i] = row[:k]
    return out


def strand_lengths(strands):
    return np.sum(np.linalg.norm(np.diff(strands, axis=1), axis=2), axis=1)


def length_stats(strands, k=DEFAULT_K):
    strands = _strands(strands)
    L = strand_lengths(strands)
    nb = root_neighbors(strands, k)
    loc = np.mean(np.mean((L[:, None] - L[nb]) ** 2, axis=1))
    return {"mu_L": float(L.mean()), "sigma_L": float(L.std()), "sigma_loc_L": float(np.sqrt(loc))}


def curvature_stats(strands, k=DEFAULT_K):
    strands = _strands(strands)
    if strands.shape[1] < 3:
        raise ValueError("curvature needs at least 3 points per strand")
    theta = bending_angles(strands)
    nb = root_neighbors(strands, k)
    loc = np.mean(np.mean(np.mean((theta[:, None, :] - theta[nb]) ** 2, axis=2), axis=1))
    return {"var_glob_kappa": curvature_consistency_loss(strands)[0],
            "var_loc_kappa": float(loc), "kappa_max": float(theta.max())}


def mean_directions(strands):
    d = np.diff(strands, axis=1)
    b = d / np.linalg.norm(d, axis=2, keepdims=True)
    t = b.mean(axis=1)
    return t / np.linalg.norm(t, axis=1, keepdims=True), b[:, 0]


def direction_stats(strands, k=DEFAULT_K):
    strands = _strands(strands)
    t, b0 = mean_directions(strands)
    nb = root_neighbors(strands, k)
    var = np.mean(np.mean(np.sum((t[:, None] - t[nb]) ** 2, axis=2), axis=1))
    first = np.mean(np.mean(np.sum((b0[:, None] - b0[nb]) ** 2, axis=2), axis=1))
    return {"var_loc_dir": float(var), "var_loc_first_dir": float(first)}


def tip_chamfer_terms(strands, outer_mesh, n_samples=10000, seed=0):
    """``(forward, backward)`` squared Chamfer terms between tips and the outer surface.

    The forward term uses the exact point-to-mesh distance; the backward
    term uses area-weighted surface samples against the tip set.
    """
    strands = _strands(strands)
    tips = strands[:, -1]
    forward = float(np.mean(unsigned_distance(tips, outer_mesh) ** 2))
    samples = sample_surface(outer_mesh, n_samples, seed).positions
    dist, _ = cKDTree(tips).query(samples)
    backward = float(np.mean(dist ** 2))
    return forward, backward


def tip_chamfer(strands, outer_mesh, n_samples=10000, seed=0):
    f, b = tip_chamfer_terms(strands, outer_mesh, n_samples, seed)
    return f + b


METRIC_COLUMNS = ("mu_L", "sigma_L", "sigma_loc_L", "var_glob_kappa", "var_loc_kappa",
                  "kappa_max", "var_loc_dir", "var_loc_first_dir", "tip_cd")


def unsupervised_metrics(strands, outer_mesh=None, k=DEFAULT_K, n_samples=10000, seed=0):
    out = {}
    out.update(length_stats(strands, k))
    out.update(curvature_stats(strands, k))
    out.update(direction_stats(strands, k))
    if outer_mesh is not None:
        out["tip_cd"] = tip_chamfer(strands, outer_mesh, n_samples, seed)
    return out


def write_metrics_csv(path, rows):
    """Rows are dicts; the header is the union of keys in first-seen order."""
    keys = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def format_table(metrics):
    """Human-readable single-row table in the column order above."""
    cols = [c for c in METRIC_COLUMNS if c in metrics]
    head = " | ".join(f"{c:>17s}" for c in cols)
    row = " | ".join(f"{metrics[c]:17.6g}" for c in cols)
    return head + "\n" + row
