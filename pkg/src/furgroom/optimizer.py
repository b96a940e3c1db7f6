"""Strand-field training loop and strand generation.

Each iteration draws fresh roots on the furred part of the bald mesh,
decodes strands through the MLP, evaluates the enabled losses and takes
one Adam step on the MLP weights.
"""

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .losses import LossWeights, total_geometric_loss
from .mesh import MeshError, TriMesh, nearest_vertex, sample_surface
from .optim import Adam
from .render import image_losses
from .strands import N_POINTS, decode, decoder_basis, normalize_and_scale, normalize_backward
from .tangent import tbn_at

log = logging.getLogger(__name__)

TERMS = ("sil", "dir", "dir_gpt", "chm", "penetr", "shape")


class OptimizationError(RuntimeError):
    pass


@dataclass
class View:
    camera: object
    silhouette: np.ndarray
    orientation: np.ndarray          # target angles or an OrientationMap
    non_bald_mask: np.ndarray


@dataclass
class Scene:
    """Everything the strand optimisation reads.

    ``vertex_ann`` is indexed by bald-mesh vertices; ``directions`` there are
    world-space growth directions. ``sdf`` is the de-furred field whose zero
    level set is the bald surface.
    """

    bald: TriMesh
    sdf: object
    vertex_ann: object
    tangent_field: object
    chamfer_samples: np.ndarray = None
    views: list = field(default_factory=list)

    def __post_init__(self):
        self.lengths = np.asarray(self.vertex_ann.length_cm, dtype=np.float64)
        if self.lengths.shape != (self.bald.n_vertices,):
            raise MeshError("vertex annotation does not match the bald mesh")
        d = np.asarray(self.vertex_ann.direction, dtype=np.float64)
        n = np.linalg.norm(d, axis=1, keepdims=True)
        self.directions = d / np.where(n > 0, n, 1.0)
        self.labels = np.asarray(self.vertex_ann.labels)
        furred_v = self.lengths > 0
        self.furred_faces = np.nonzero(furred_v[self.bald.faces].any(axis=1))[0]
        if len(self.furred_faces) == 0:
            raise MeshError("no furred area on the bald mesh")
        self._furred = self.bald.submesh(np.isin(np.arange(self.bald.n_faces), self.furred_faces))


@dataclass
class OptimizeConfig:
    iterations: int = 2000
    batch_size: int = 500
    learning_rate: float = 5e-4
    min_lr_ratio: float = 0.0
    seed: int = 0
    n_points: int = N_POINTS
    weights: dict = field(default_factory=lambda: LossWeights().as_dict())
    terms: dict = field(default_factory=lambda: {t: True for t in TERMS})
    patience: int = 500
    divergence_rtol: float = 1.0
    views_per_iter: int = 1
    length_scale: float = None     # None: half the bald-mesh bounding-box diagonal

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config field {sorted(unknown)[0]!r}")
        cfg = cls(**d)
        w = LossWeights().as_dict()
        for k in cfg.weights:
            if k not in w:
                raise ValueError(f"unknown config field 'weights.{k}'")
        w.update(cfg.weights)
        cfg.weights = w
        t = {k: True for k in TERMS}
        for k in cfg.terms:
            if k not in t:
                raise ValueError(f"unknown config field 'terms.{k}'")
        t.update(cfg.terms)
        cfg.terms = t
        if cfg.iterations < 0 or cfg.batch_size < 1 or cfg.n_points < 3:
            raise ValueError("config field 'iterations', 'batch_size' or 'n_points' out of range")
        return cfg

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return asdict(self)

    def effective_weights(self):
        w = dict(self.weights)
        for k, on in self.terms.items():
            if not on:
                w[k] = 0.0
        return LossWeights(**w)


# ---------------------------------------------------------------- roots

@dataclass
class Roots:
    positions: np.ndarray
    faces: np.ndarray
    vertex: np.ndarray        # nearest bald-mesh vertex
    lengths: np.ndarray
    labels: np.ndarray
    directions: np.ndarray


def sample_roots(scene, n, rng):
    """``n`` area-uniform roots whose nearest vertex carries fur.

    Draws on faces touching a furred vertex and rejects roots whose nearest
    vertex is bald, so the result is uniform over the furred region.
    """
    pos, faces, vid = [], [], []
    have = 0
    sub_faces = scene.furred_faces
    while have < n:
        want = max(16, int(1.25 * (n - have)))
        smp = sample_surface(scene._furred, want, int(rng.integers(0, 2 ** 63 - 1)))
        v = nearest_vertex(smp.positions, scene.bald)
        ok = scene.lengths[v] > 0
        pos.append(smp.positions[ok])
        faces.append(sub_faces[smp.face_index[ok]])
        vid.append(v[ok])
        have += int(ok.sum())
    pos = np.concatenate(pos)[:n]
    faces = np.concatenate(faces)[:n]
    vid = np.concatenate(vid)[:n]
    return Roots(pos, faces, vid, scene.lengths[vid], scene.labels[vid], scene.directions[vid])


def iteration_rng(seed, iteration):
    return np.random.default_rng([int(seed), int(iteration)])


# ---------------------------------------------------------------- forward / backward

def decode_strands(strand_field, scene, roots, n_points=N_POINTS, keep=False):
    """World-space strands ``(N, L, 3)`` for the given roots."""
    z, acts = strand_field.forward(roots.positions, keep=True)
    local = decode(z, n_points)
    scaled, _ = normalize_and_scale(local, roots.lengths)
    R = tbn_at(scene.bald, scene.tangent_field, roots.faces).matrix()
    world = roots.positions[:, None, :] + np.einsum("nij,nlj->nli", R, scaled)
    if keep:
        return world, dict(acts=acts, local=local, R=R, lengths=roots.lengths)
    return world


def strands_backward(strand_field, cache, grad_world, n_points=N_POINTS):
    g_scaled = np.einsum("nij,nli->nlj", cache["R"], grad_world)
    g_local = normalize_backward(cache["local"], cache["lengths"], g_scaled)
    g_z = np.einsum("nlc,jlc->nj", g_local, decoder_basis(n_points))
    grads, _ = strand_field.backward(cache["acts"], g_z)
    return grads


def scene_length_scale(scene):
    return 0.5 * scene.bald.bbox_diagonal()


def evaluate(strand_field, scene, roots, weights, n_points=N_POINTS, view=None,
             length_scale=1.0):
    """Loss terms and parameter gradients at the current field."""
    strands, cache = decode_strands(strand_field, scene, roots, n_points, keep=True)
    w = weights.as_dict()
    image_terms = {}
    if view is not None:
        need = tuple(k for k in ("sil", "dir") if w[k])
        if need:
            image_terms = image_losses(strands, view.camera, view.silhouette, view.orientation,
                                       view.non_bald_mask, need=need)
    total, terms, grad = total_geometric_loss(
        strands, weights,
        samples=scene.chamfer_samples if w["chm"] else None,
        sdf=scene.sdf if w["penetr"] else None,
        directions=roots.directions if w["dir_gpt"] else None,
        image_terms=image_terms, length_scale=length_scale)
    grads = strands_backward(strand_field, cache, grad, n_points)
    return terms, grads


def optimize(strand_field, scene, config=None, csv_path=None, on_iteration=None):
    """Train ``strand_field`` in place and return ``(field, history)``.

    ``history`` holds one dict of loss terms per iteration; iteration 0 is
    the initial state. A non-finite loss raises :class:`OptimizationError`.
    Training stops early, restoring the best weights, when the loss stays
    above ``(1 + divergence_rtol)`` times the best for ``patience`` steps.
    """
    cfg = config or OptimizeConfig()
    weights = cfg.effective_weights()
    params = strand_field.params()
    opt = Adam(params, cfg.learning_rate, total_steps=max(cfg.iterations, 1),
               min_lr_ratio=cfg.min_lr_ratio)
    scale = cfg.length_scale or scene_length_scale(scene)
    history = []
    best = (np.inf, None)
    bad = 0
    for it in range(cfg.iterations + 1):
        rng = iteration_rng(cfg.seed, it)
        roots = sample_roots(scene, cfg.batch_size, rng)
        view = None
        if scene.views and (weights.sil or weights.dir):
            view = scene.views[int(rng.integers(len(scene.views)))]
        terms, grads = evaluate(strand_field, scene, roots, weights, cfg.n_points, view, scale)
        total = terms["total"]
        if not np.isfinite(total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise OptimizationError(f"non-finite loss at iteration {it}: {terms}")
        row = {"iteration": it, **{k: terms.get(k, 0.0) for k in TERMS}, "total": total}
        history.append(row)
        if on_iteration is not None:
            on_iteration(row)
        if total < best[0]:
            best = (total, strand_field.copy())
            bad = 0
        elif total > best[0] * (1.0 + cfg.divergence_rtol):
            bad += 1
            if bad >= cfg.patience:
                log.warning("divergence at iteration %d; restoring best weights", it)
                restored = best[1]
                for a, b in zip(strand_field.weights + strand_field.biases,
                                restored.weights + restored.biases):
                    a[...] = b
                break
        if it == cfg.iterations:
            break
        opt.step(grads)
    if csv_path is not None:
        write_loss_csv(csv_path, history)
    return strand_field, history


def write_loss_csv(path, history):
    cols = ["iteration", *TERMS, "total"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in history:
            w.writerow([row["iteration"]] + [repr(float(row[c])) for c in cols[1:]])


@dataclass
class StrandSet:
    strands: np.ndarray      # (N, L, 3) float64
    labels: np.ndarray       # (N,) part labels
    roots: Roots


def generate(strand_field, scene, n_strands=500000, seed=0, n_points=N_POINTS, chunk=20000):
    """Decode ``n_strands`` strands on area-uniform roots over the furred region."""
    if n_strands < 1:
        raise ValueError("n_strands must be >= 1")
    roots = sample_roots(scene, n_strands, np.random.default_rng([int(seed), 0x5EED]))
    out = np.empty((n_strands, n_points, 3))
    for s in range(0, n_strands, chunk):
        sl = slice(s, s + chunk)
        part = Roots(*(getattr(roots, f.name)[sl] for f in fields(Roots)))
        out[sl] = decode_strands(strand_field, scene, part, n_points)
    return StrandSet(out, roots.labels.copy(), roots)
