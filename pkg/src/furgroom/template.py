"""Synthetic quadruped LBS template (about 400 vertices, 9 joints, 4 blendshapes).

Frame: x from the animal's right to its left, y against gravity, z from back
to front; units are cm. The shipped ``data/quadruped.ply``/``.json`` pair is
produced by :func:`build_quadruped` and reloaded by :func:`load_quadruped`.
"""

from importlib import resources

import numpy as np

from .annotation import PartLabel
from .decimate import decimate, repair
from .lbs import LbsModel, load_model, save_model
from .mesh import SdfGrid, marching_cubes

JOINT_NAMES = ("root", "neck", "head", "tail", "tail_tip",
               "leg_front_left", "leg_front_right", "leg_rear_left", "leg_rear_right")
PARENTS = np.array([-1, 0, 1, 0, 3, 0, 0, 0, 0])
JOINT_POS = np.array([
    [0.0, 36.0, 0.0],      # root
    [0.0, 40.0, 24.0],     # neck
    [0.0, 46.0, 34.0],     # head
    [0.0, 38.0, -28.0],    # tail
    [0.0, 33.0, -42.0],    # tail_tip
    [7.0, 33.0, 22.0],     # legs (hip/shoulder)
    [-7.0, 33.0, 22.0],
    [7.0, 33.0, -22.0],
    [-7.0, 33.0, -22.0],
])

HEAD_C = np.array([0.0, 48.0, 38.0])
HEAD_R = np.array([7.0, 7.0, 8.5])
EARS = np.array([[4.0, 55.5, 36.0], [-4.0, 55.5, 36.0]])
EYES = np.array([[3.6, 50.0, 44.5], [-3.6, 50.0, 44.5]])
NOSE = np.array([0.0, 47.5, 46.5])
LEG_X, LEG_Z = 7.0, 22.0


def _capsule(p, a, b, r):
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1) - r


def _ellipsoid(p, c, radii):
    # first-order distance estimate, exact on spheres
    q = (p - c) / radii
    k0 = np.linalg.norm(q, axis=1)
    k1 = np.linalg.norm(q / radii, axis=1)
    return k0 * (k0 - 1.0) / np.maximum(k1, 1e-12)


def _smin(a, b, k):
    h = np.clip(0.5 + 0.5 * (b - a) / k, 0.0, 1.0)
    return b * (1 - h) + a * h - k * h * (1 - h)


def quadruped_sdf(points):
    """Approximate signed distance to the template body (cm)."""
    p = np.asarray(points, dtype=np.float64)
    d = _ellipsoid(p, np.array([0.0, 36.0, 0.0]), np.array([10.5, 10.0, 30.0]))
    d = _smin(d, _capsule(p, np.array([0.0, 39.0, 22.0]), np.array([0.0, 45.0, 34.0]), 6.0), 3.0)
    d = _smin(d, _ellipsoid(p, HEAD_C, HEAD_R), 2.0)
    d = _smin(d, _ellipsoid(p, np.array([0.0, 46.5, 44.0]), np.array([3.5, 3.0, 3.5])), 1.5)
    for e in EARS:
        d = _smin(d, _ellipsoid(p, e, np.array([2.2, 3.5, 1.4])), 1.0)
    d = _smin(d, _capsule(p, np.array([0.0, 38.0, -27.0]), np.array([0.0, 32.0, -44.0]), 2.6), 2.0)
    for sx in (1.0, -1.0):
        for sz in (1.0, -1.0):
            top = np.array([sx * LEG_X, 34.0, sz * LEG_Z])
            foot = np.array([sx * LEG_X, 4.0, sz * LEG_Z])
            d = _smin(d, _capsule(p, top, foot, 3.4), 2.5)
            d = _smin(d, _ellipsoid(p, foot + [0.0, -1.2, 1.5], np.array([3.6, 2.6, 4.8])), 1.5)
    return d


def _paint_labels(v, n):
    """Hand-placed part regions from geometry (priority order matters)."""
    L = np.full(len(v), PartLabel.BODY, dtype=np.int64)
    y, z = v[:, 1], v[:, 2]
    head = np.linalg.norm((v - HEAD_C) / (HEAD_R + 1.5), axis=1) < 1.0
    legs = (y < 25.0)
    front = z > 0
    L[(n[:, 1] < -0.55) & (y < 36) & ~legs & (np.abs(z) < 26)] = PartLabel.BELLY
    L[(z > 18) & (y > 36) & ~head] = PartLabel.NECK
    L[legs & front] = PartLabel.LEG_FRONT
    L[legs & ~front] = PartLabel.LEG_REAR
    paws = y < 6.5
    L[paws & front] = PartLabel.FRONT_PAWS
    L[paws & ~front] = PartLabel.PAWS
    L[paws & (n[:, 1] < -0.6)] = PartLabel.PAW_PADS
    tail = z < -31.0
    L[tail] = PartLabel.TAIL
    L[(z < -26.0) & (z > -33.0) & (n[:, 1] < -0.2) & (y < 37)] = PartLabel.UNDER_TAIL
    L[head] = PartLabel.FACE
    for e in EARS:
        ear = np.linalg.norm(v - e, axis=1) < 4.5
        L[ear & (y > 53.0)] = PartLabel.EARS
        L[ear & (y > 53.0) & (n[:, 2] > 0.5)] = PartLabel.INNER_EARCANAL
    for e in EYES:
        L[np.linalg.norm(v - e, axis=1) < 2.6] = PartLabel.EYES
    L[np.linalg.norm(v - NOSE, axis=1) < 3.0] = PartLabel.NOSETIP
    return L


def _skin_weights(v):
    """Bone-distance weights with a soft falloff, rows normalized."""
    bones = []
    for j, p in enumerate(PARENTS):
        if j == 0:
            bones.append((JOINT_POS[0] + [0, 0, -20], JOINT_POS[0] + [0, 0, 20]))
        elif JOINT_NAMES[j].startswith("leg"):
            bones.append((JOINT_POS[j], JOINT_POS[j] * [1, 0, 1] + [0, 2, 0]))
        elif JOINT_NAMES[j] == "head":
            bones.append((JOINT_POS[j], HEAD_C + [0, 0, 6]))
        elif JOINT_NAMES[j] == "tail_tip":
            bones.append((JOINT_POS[j], JOINT_POS[j] + [0, -2, -4]))
        else:
            child = np.nonzero(PARENTS == j)[0]
            end = JOINT_POS[child[0]] if len(child) else JOINT_POS[j]
            bones.append((JOINT_POS[j], end))
    d = np.stack([_capsule(v, a, b, 0.0) for a, b in bones], axis=1)
    w = np.exp(-((d - d.min(axis=1, keepdims=True)) / 2.5) ** 2)
    w[w < 1e-3] = 0.0
    return w / w.sum(axis=1, keepdims=True)


def _regressor(v, k=12):
    """Each joint as the minimum-norm affine combination of its k nearest vertices.

    The combination reproduces the rest joint position exactly.
    """
    reg = np.zeros((len(JOINT_POS), len(v)))
    for j, c in enumerate(JOINT_POS):
        d = np.linalg.norm(v - c, axis=1)
        idx = np.argsort(d, kind="stable")[:k]
        a = np.vstack([v[idx].T, np.ones(k)])
        reg[j, idx] = np.linalg.lstsq(a, np.append(c, 1.0), rcond=None)[0]
    return reg


def _blendshapes(v):
    """Body length, leg length, girth, head size (offsets for beta = 1)."""
    z, y = v[:, 2], v[:, 1]
    shapes = np.zeros((4, len(v), 3))
    shapes[0, :, 2] = 0.15 * z
    # legs stretch by 4 cm with the feet kept on the ground
    shapes[1, :, 1] = 4.0 * np.clip(y / 25.0, 0.0, 1.0)
    body = np.clip(1.0 - np.abs(z) / 32.0, 0.0, 1.0) * (y > 25.0)
    shapes[2, :, 0] = 0.15 * v[:, 0] * body
    shapes[2, :, 1] = 0.15 * (y - 36.0) * body
    hw = np.exp(-np.sum(((v - HEAD_C) / (HEAD_R + 3.0)) ** 2, axis=1) ** 2)
    shapes[3] = 0.2 * (v - HEAD_C) * hw[:, None]
    return shapes


def build_quadruped(target_faces=800, resolution=72, uniformity=0.5):
    """Construct the template from its analytic definition (deterministic)."""
    lo = np.array([-16.0, -4.0, -52.0])
    hi = np.array([16.0, 62.0, 52.0])
    spacing = float(np.max(hi - lo) / (resolution - 1))
    dims = np.ceil((hi - lo) / spacing).astype(int) + 1
    axes = [lo[i] + spacing * np.arange(dims[i]) for i in range(3)]
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    grid = SdfGrid(lo, spacing, quadruped_sdf(nodes).reshape(tuple(dims)))
    mesh = repair(marching_cubes(grid))
    mesh = decimate(mesh, target_faces, uniformity=uniformity)
    v = mesh.vertices.astype(np.float32).astype(np.float64)
    mesh.vertices = v
    labels = _paint_labels(v, mesh.vertex_normals())
    shapes = _blendshapes(v).astype(np.float32).astype(np.float64)
    return LbsModel(v, mesh.faces, shapes, _skin_weights(v), _regressor(v), PARENTS.copy(),
                    labels, JOINT_NAMES)


def _data_path(name):
    return resources.files("furgroom") / "data" / name


def load_quadruped():
    with resources.as_file(_data_path("quadruped.ply")) as ply, \
            resources.as_file(_data_path("quadruped.json")) as js:
        return load_model(ply, js)


def write_quadruped(ply_path, json_path, model=None):
    save_model(ply_path, json_path, model or build_quadruped())
