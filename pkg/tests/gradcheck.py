"""Central-difference gradient checks with kink detection.

A coordinate is excluded from a check when perturbing it by +-h changes the
loss's discrete state (nearest-point assignment, active hinge set, grid
cell, depth order, footprint bounds ...). Such coordinates sit within h of
a kink, where the one-sided analytic gradient and the central difference
legitimately disagree.
"""

import numpy as np

from furgroom import losses, render
from furgroom.mesh import build_sdf
from furgroom.primitives import icosphere

H = 1e-6


def masked_fd(value, x, signature, h=H):
    """Central differences of ``value`` at ``x`` plus a mask of kink-free coordinates."""
    x = np.array(x, dtype=np.float64)
    base = signature(x)
    fd = np.zeros_like(x)
    ok = np.ones(x.shape, dtype=bool)
    flat, gflat, oflat = x.reshape(-1), fd.reshape(-1), ok.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp, sp = value(x), signature(x)
        flat[i] = old - h
        fm, sm = value(x), signature(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
        oflat[i] = _same(sp, base) and _same(sm, base)
    return fd, ok


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(u, v) for u, v in zip(a, b))
    return np.array_equal(a, b)


def relative_error(analytic, fd, ok):
    a, b = analytic[ok], fd[ok]
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def check(case):
    """``(relative error, excluded coordinate count, coordinate count)`` for one case."""
    value, grad, x, signature = case
    fd, ok = masked_fd(value, x, signature)
    return relative_error(grad, fd, ok), int((~ok).sum()), ok.size


# ---------------------------------------------------------------- random cases

def chamfer_case(rng):
    S = rng.normal(size=(3, 6, 3))
    smp = rng.normal(size=(20, 3))

    def sig(x):
        pts = x.reshape(-1, 3)
        return np.argmin(((smp[:, None] - pts[None]) ** 2).sum(-1), axis=1)

    return (lambda x: losses.chamfer_one_way(smp, x)[0],
            losses.chamfer_one_way(smp, S)[1], S, sig)


_SDF = {}


def unit_sphere_sdf():
    if "s" not in _SDF:
        _SDF["s"] = build_sdf(icosphere(3), resolution=32)
    return _SDF["s"]


def penetration_case(rng):
    sdf = unit_sphere_sdf()
    P = rng.uniform(-0.9, 0.9, size=(3, 6, 3))

    def sig(x):
        pts = x.reshape(-1, 3)
        cell = np.floor((pts - sdf.origin) / sdf.spacing)
        return cell, sdf.sample(pts) < 0

    return (lambda x: losses.penetration_loss(x, sdf)[0],
            losses.penetration_loss(P, sdf)[1], P, sig)


def direction_case(rng):
    S = rng.normal(size=(3, 6, 3))
    g = rng.normal(size=(3, 3))
    g /= np.linalg.norm(g, axis=1, keepdims=True)

    def sig(x):
        d = np.diff(x, axis=1)
        return np.einsum("nlc,nc->nl", d, g) < 0

    return (lambda x: losses.direction_consistency_loss(x, g)[0],
            losses.direction_consistency_loss(S, g)[1], S, sig)


def curvature_case(rng):
    S = rng.normal(size=(3, 6, 3))

    def sig(x):
        c = np.cos(losses.bending_angles(x))
        return np.abs(np.abs(c) - 1.0) < 1e-6

    return (lambda x: losses.curvature_consistency_loss(x)[0],
            losses.curvature_consistency_loss(S)[1], S, sig)


def image_scene(rng):
    cam = render.Camera.look_at((0, 0, -10), (0, 0, 0), width=32, height=32, fov_deg=30)
    S = rng.normal(scale=0.8, size=(3, 2, 3))      # three segments: three Gaussians
    target = (rng.uniform(size=(32, 32)) > 0.5).astype(float)
    ori = rng.uniform(0, np.pi, size=(32, 32))
    return cam, S, target, ori, np.ones((32, 32), dtype=bool)


def _raster_state(res):
    c = res.cache
    live = []
    for g, (x0, x1, y0, y1) in enumerate(c["bb"]):
        ys, xs = np.mgrid[y0:y1, x0:x1]
        dx, dy = xs - c["m2"][g, 0], ys - c["m2"][g, 1]
        a, b, cc = c["conics"][g]
        raw = c["op"][g] * np.exp(-0.5 * (a * dx * dx + 2 * b * dx * dy + cc * dy * dy))
        live.append(raw < render.ALPHA_MAX)
    return c["order"], c["bb"], np.concatenate([m.ravel() for m in live] + [np.zeros(0, bool)])


def silhouette_case(rng, width=0.3):
    cam, S, target, _, mask = image_scene(rng)

    def value(x):
        return render.image_losses(x, cam, target, None, mask, width=width, need=("sil",))["sil"][0]

    def sig(x):
        res = render.render_strands(x, cam, width=width)
        return _raster_state(res) + (np.sign(res.silhouette - target),)

    grad = render.image_losses(S, cam, target, None, mask, width=width, need=("sil",))["sil"][1]
    return value, grad, S, sig


def orientation_case(rng, width=0.3):
    cam, S, _, ori, mask = image_scene(rng)

    def value(x):
        return render.image_losses(x, cam, None, ori, mask, width=width, need=("dir",))["dir"][0]

    def sig(x):
        res = render.render_strands(x, cam, width=width)
        delta = res.direction - ori
        return _raster_state(res) + (res.silhouette >= render.TAU_FLOOR,
                                     np.floor((delta + 0.5 * np.pi) / np.pi),
                                     np.sign(render._wrap_half(delta)))

    grad = render.image_losses(S, cam, None, ori, mask, width=width, need=("dir",))["dir"][1]
    return value, grad, S, sig


CASES = {
    "chamfer_one_way": (chamfer_case, 1e-4),
    "penetration": (penetration_case, 1e-4),
    "direction_consistency": (direction_case, 1e-4),
    "curvature_consistency": (curvature_case, 1e-4),
    "silhouette": (silhouette_case, 1e-3),
    "orientation": (orientation_case, 1e-3),
}


def run_suite(name, n_configs=20, seed=0):
    """Worst relative error, excluded and total coordinates over ``n_configs`` cases."""
    make, _ = CASES[name]
    rng = np.random.default_rng([seed, sorted(CASES).index(name)])
    worst, excluded, total = 0.0, 0, 0
    for _ in range(n_configs):
        err, ex, n = check(make(rng))
        worst = max(worst, err)
        excluded += ex
        total += n
    return worst, excluded, total
