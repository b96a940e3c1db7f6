"""Linear blend skinning model, fitting energy with analytic gradients, staged fit."""

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .mesh import PointSample, TriMesh, edge_topology, sample_surface
from .optim import Adam

log = logging.getLogger(__name__)

LAMBDA_LAPLACIAN = 0.01
LAMBDA_EDGE = 0.8
LAMBDA_NORMAL = 0.02


# ---------------------------------------------------------------- rotations

def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rodrigues(theta):
    """Rotation matrix of an axis-angle vector."""
    theta = np.asarray(theta, dtype=np.float64)
    a = np.linalg.norm(theta)
    if a < 1e-12:
        return np.eye(3) + skew(theta)
    k = skew(theta / a)
    return np.eye(3) + np.sin(a) * k + (1.0 - np.cos(a)) * (k @ k)


def rodrigues_jacobian(theta, rot=None):
    """``dR/dtheta_i`` for i = 0..2, stacked as ``(3, 3, 3)``."""
    theta = np.asarray(theta, dtype=np.float64)
    a2 = float(theta @ theta)
    eye = np.eye(3)
    if a2 < 1e-12:
        # second-order expansion around the identity
        t = skew(theta)
        return np.stack([skew(e) + 0.5 * (skew(e) @ t + t @ skew(e)) for e in eye])
    if rot is None:
        rot = rodrigues(theta)
    t = skew(theta)
    out = []
    for i in range(3):
        w = np.cross(theta, (eye - rot)[:, i])
        out.append((theta[i] * t + skew(w)) @ rot / a2)
    return np.stack(out)


def rotation_angle(rot):
    return float(np.arccos(np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)))


# ---------------------------------------------------------------- model

@dataclass
class LbsModel:
    template: np.ndarray          # (V, 3)
    faces: np.ndarray             # (F, 3)
    blendshapes: np.ndarray       # (S, V, 3)
    weights: np.ndarray           # (V, J)
    regressor: np.ndarray         # (J, V)
    parents: np.ndarray           # (J,), -1 for the root
    labels: np.ndarray = None     # (V,)
    joint_names: tuple = ()

    def __post_init__(self):
        self.template = np.asarray(self.template, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        self.blendshapes = np.asarray(self.blendshapes, dtype=np.float64).reshape(
            -1, len(self.template), 3)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.regressor = np.asarray(self.regressor, dtype=np.float64)
        self.parents = np.asarray(self.parents, dtype=np.int64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
        self.validate()
        self.order = _topological_order(self.parents)

    @property
    def n_joints(self):
        return len(self.parents)

    @property
    def n_shapes(self):
        return len(self.blendshapes)

    def validate(self):
        V, J = self.weights.shape
        if V != len(self.template):
            raise ValueError("weights rows must match template vertices")
        if self.regressor.shape != (J, V) or len(self.parents) != J:
            raise ValueError("regressor/parents do not match the joint count")
        if np.any(self.weights < 0) or np.any(np.abs(self.weights.sum(1) - 1) > 1e-6):
            raise ValueError("skinning weights must be non-negative with unit row sums")
        _topological_order(self.parents)

    def mesh(self):
        return TriMesh(self.template.copy(), self.faces.copy(),
                       None if self.labels is None else self.labels.copy())


def _topological_order(parents):
    roots = np.nonzero(parents < 0)[0]
    if len(roots) != 1:
        raise ValueError("kinematic tree must have exactly one root")
    order, seen = [], set()
    children = {j: [] for j in range(len(parents))}
    for j, p in enumerate(parents):
        if p >= 0:
            if p >= len(parents):
                raise ValueError("parent index out of range")
            children[int(p)].append(j)
    stack = [int(roots[0])]
    while stack:
        j = stack.pop()
        if j in seen:
            raise ValueError("kinematic tree has a cycle")
        seen.add(j)
        order.append(j)
        stack.extend(reversed(children[j]))
    if len(order) != len(parents):
        raise ValueError("kinematic tree is not connected (cycle or orphan)")
    return np.array(order)


@dataclass
class FitParams:
    beta: np.ndarray
    theta: np.ndarray
    gamma: np.ndarray
    offsets: np.ndarray = None

    @classmethod
    def zeros(cls, model, offsets=False):
        return cls(np.zeros(model.n_shapes), np.zeros((model.n_joints, 3)), np.zeros(3),
                   np.zeros_like(model.template) if offsets else None)

    def copy(self):
        return FitParams(self.beta.copy(), self.theta.copy(), self.gamma.copy(),
                         None if self.offsets is None else self.offsets.copy())

    def check(self, model):
        if self.beta.shape != (model.n_shapes,):
            raise ValueError(f"beta must have {model.n_shapes} entries")
        if self.theta.shape != (model.n_joints, 3):
            raise ValueError(f"theta must be ({model.n_joints}, 3)")
        if self.gamma.shape != (3,):
            raise ValueError("gamma must be a 3-vector")
        if self.offsets is not None and self.offsets.shape != model.template.shape:
            raise ValueError("offsets must match template vertices")

    def to_dict(self):
        d = {"beta": self.beta.tolist(), "theta": self.theta.tolist(),
             "gamma": self.gamma.tolist()}
        if self.offsets is not None:
            d["offsets"] = self.offsets.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        off = d.get("offsets")
        return cls(np.asarray(d["beta"], float), np.asarray(d["theta"], float),
                   np.asarray(d["gamma"], float), None if off is None else np.asarray(off, float))


def _pose(model, params):
    shaped = model.template + np.tensordot(params.beta, model.blendshapes, axes=1)
    joints = model.regressor @ shaped
    J = model.n_joints
    rots = [rodrigues(t) for t in params.theta]
    A = np.zeros((J, 3, 3))
    delta = np.zeros((J, 3))       # P_j - J_j
    eye = np.eye(3)
    for j in model.order:
        p = model.parents[j]
        if p < 0:
            A[j] = rots[j]
        else:
            A[j] = A[p] @ rots[j]
            delta[j] = delta[p] + (A[p] - eye) @ (joints[j] - joints[p])
    # per-joint affine x -> A (x - J) + P, written as a displacement of x so
    # the rest pose reproduces the template bit for bit (rows of W sum to 1)
    local = shaped[:, None, :] - joints[None, :, :]
    disp = np.einsum("jab,vjb->vja", A - eye, local) + delta[None]
    base = shaped + np.einsum("vj,vja->va", model.weights, disp) + params.gamma
    P = joints + delta
    return {"shaped": shaped, "joints": joints, "rots": rots, "A": A, "P": P,
            "local": local, "base": base}


def lbs_forward(model, params, return_base=False):
    """Posed mesh; offsets are added after skinning and translation."""
    params.check(model)
    cache = _pose(model, params)
    verts = cache["base"] if params.offsets is None else cache["base"] + params.offsets
    mesh = TriMesh(verts, model.faces.copy(),
                   None if model.labels is None else model.labels.copy())
    if return_base:
        return mesh, cache
    return mesh


def lbs_backward(model, params, cache, grad_base):
    """Gradients of a scalar w.r.t. (beta, theta, gamma) given dE/d(base vertices)."""
    W = model.weights
    A, P, joints = cache["A"], cache["P"], cache["joints"]
    g = grad_base
    g_gamma = g.sum(axis=0)
    Wg = W[:, :, None] * g[:, None, :]                      # (V, J, 3)
    gA = np.einsum("vja,vjb->jab", Wg, cache["local"])
    gP = Wg.sum(axis=0)
    g_shaped = np.einsum("jab,vja->vb", A, Wg)
    gJ = -np.einsum("jab,ja->jb", A, gP)
    g_rot = np.zeros_like(A)
    for j in model.order[::-1]:
        p = model.parents[j]
        if p < 0:
            gJ[j] += gP[j]
            g_rot[j] = gA[j]
            continue
        d = joints[j] - joints[p]
        gP[p] += gP[j]
        gA[p] += np.outer(gP[j], d)
        back = A[p].T @ gP[j]
        gJ[j] += back
        gJ[p] -= back
        R = cache["rots"][j]
        gA[p] += gA[j] @ R.T
        g_rot[j] = A[p].T @ gA[j]
    g_shaped += model.regressor.T @ gJ
    g_beta = np.einsum("svc,vc->s", model.blendshapes, g_shaped)
    g_theta = np.zeros_like(params.theta)
    for j in range(model.n_joints):
        jac = rodrigues_jacobian(params.theta[j], cache["rots"][j])
        g_theta[j] = np.einsum("iab,ab->i", jac, g_rot[j])
    return g_beta, g_theta, g_gamma


# ---------------------------------------------------------------- energy

def _as_points(target_samples):
    if isinstance(target_samples, PointSample):
        return np.asarray(target_samples.positions, dtype=np.float64)
    return np.asarray(target_samples, dtype=np.float64).reshape(-1, 3)


class FitEnergy:
    """Fitting energy of a model against fixed target points.

    Model surface points are drawn once (fixed face index and barycentric
    coordinates) so they move with the deformed mesh.
    """

    def __init__(self, model, target_samples, n_model_samples=None, seed=0,
                 weights=(LAMBDA_LAPLACIAN, LAMBDA_EDGE, LAMBDA_NORMAL)):
        self.model = model
        self.target = _as_points(target_samples)
        if len(self.target) == 0:
            raise ValueError("target_samples must be non-empty")
        self.tree = cKDTree(self.target)
        n = n_model_samples or len(self.target)
        smp = sample_surface(model.mesh(), n, seed)
        self.sample_faces = model.faces[smp.face_index]
        self.sample_bary = smp.barycentric
        self.w_lap, self.w_edge, self.w_normal = weights
        V = len(model.template)
        adj = TriMesh(model.template, model.faces).vertex_adjacency()
        deg = np.asarray(adj.sum(axis=1)).ravel()
        self.lap = (sparse.identity(V) - sparse.diags(1.0 / np.maximum(deg, 1)) @ adj).tocsr()
        topo = edge_topology(model.faces)
        self.edges = topo.edges
        inner = (topo.edge_faces >= 0).all(axis=1)
        self.face_pairs = topo.edge_faces[inner]

    def _samples(self, verts):
        return np.einsum("nk,nkc->nc", self.sample_bary, verts[self.sample_faces])

    def terms(self, verts, base):
        """Energy terms and their gradients w.r.t. final and base vertices."""
        V = len(verts)
        g_final = np.zeros_like(verts)
        g_base = np.zeros_like(verts)

        # symmetric Chamfer (squared distances, means over each side)
        ms = self._samples(verts)
        _, nn_t = self.tree.query(ms)
        d_fwd = ms - self.target[nn_t]
        _, nn_m = cKDTree(ms).query(self.target)
        d_bwd = self.target - ms[nn_m]
        chamfer = np.mean(np.sum(d_fwd ** 2, 1)) + np.mean(np.sum(d_bwd ** 2, 1))
        g_ms = 2.0 * d_fwd / len(ms)
        np.add.at(g_ms, nn_m, -2.0 * d_bwd / len(self.target))
        for k in range(3):
            np.add.at(g_final, self.sample_faces[:, k], self.sample_bary[:, k:k + 1] * g_ms)

        # uniform Laplacian
        lv = self.lap @ verts
        laplacian = np.mean(np.sum(lv ** 2, 1))
        g_final += self.w_lap * (2.0 / V) * (self.lap.T @ lv)

        # relative edge-length change caused by the offsets
        a, b = self.edges.T
        e = verts[a] - verts[b]
        e0 = base[a] - base[b]
        l = np.linalg.norm(e, axis=1)
        l0 = np.linalg.norm(e0, axis=1)
        r = (l - l0) / l0
        edge = np.mean(r ** 2)
        gr = 2.0 * r / len(r)
        ge = (gr / (l0 * np.maximum(l, 1e-300)))[:, None] * e
        ge0 = (-gr * l / l0 ** 2 / l0)[:, None] * e0
        np.add.at(g_final, a, self.w_edge * ge)
        np.add.at(g_final, b, -self.w_edge * ge)
        np.add.at(g_base, a, self.w_edge * ge0)
        np.add.at(g_base, b, -self.w_edge * ge0)

        # adjacent face-normal agreement
        f = self.model.faces
        e1 = verts[f[:, 1]] - verts[f[:, 0]]
        e2 = verts[f[:, 2]] - verts[f[:, 0]]
        c = np.cross(e1, e2)
        cn = np.linalg.norm(c, axis=1)
        n = c / cn[:, None]
        f0, f1 = self.face_pairs.T
        cos = np.sum(n[f0] * n[f1], axis=1)
        normal = 1.0 - np.mean(cos)
        gn = np.zeros_like(n)
        np.add.at(gn, f0, -n[f1] / len(cos))
        np.add.at(gn, f1, -n[f0] / len(cos))
        gc = (gn - np.sum(gn * n, 1, keepdims=True) * n) / cn[:, None]
        ge1 = np.cross(e2, gc)
        ge2 = np.cross(gc, e1)
        gf = self.w_normal
        np.add.at(g_final, f[:, 1], gf * ge1)
        np.add.at(g_final, f[:, 2], gf * ge2)
        np.add.at(g_final, f[:, 0], -gf * (ge1 + ge2))

        total = (chamfer + self.w_lap * laplacian + self.w_edge * edge
                 + self.w_normal * normal)
        terms = {"total": total, "chamfer": chamfer, "laplacian": laplacian,
                 "edge": edge, "normal": normal}
        return terms, g_final, g_base

    def value_and_grad(self, params):
        params.check(self.model)
        cache = _pose(self.model, params)
        base = cache["base"]
        verts = base if params.offsets is None else base + params.offsets
        terms, g_final, g_base = self.terms(verts, base)
        g_beta, g_theta, g_gamma = lbs_backward(self.model, params, cache, g_final + g_base)
        grads = FitParams(g_beta, g_theta, g_gamma,
                          None if params.offsets is None else g_final)
        return terms, grads

    def __call__(self, params):
        return self.value_and_grad(params)[0]["total"]


def fit_energy(model, params, target_samples, n_model_samples=None, seed=0):
    """Scalar fitting energy (see :class:`FitEnergy`)."""
    return FitEnergy(model, target_samples, n_model_samples, seed)(params)


# ---------------------------------------------------------------- fitting

@dataclass
class FitConfig:
    n_samples: int = 20000
    iterations: tuple = (300, 300, 200)
    learning_rates: tuple = (1e-2, 1e-2, 1e-3)
    patience: int = 50
    divergence_rtol: float = 0.05
    seed: int = 0
    history: list = field(default_factory=list)


_STAGE_KEYS = {1: ("gamma", "theta_root"), 2: ("gamma", "theta", "beta"),
               3: ("gamma", "theta", "beta", "offsets")}


def fit(model, target, stages=(1, 2, 3), config=None, init=None):
    """Staged gradient-descent fit of ``model`` to a target mesh or point set.

    Stage 1 moves (gamma, root rotation), stage 2 adds (beta, all rotations),
    stage 3 adds per-vertex offsets. The energy is evaluated in cm while
    translations and offsets are stepped in units of the template
    bounding-box diagonal, so learning rates are scale-free. A stage
    aborts when the energy exceeds its best value by ``divergence_rtol``
    for ``patience`` iterations; the best parameters are kept.
    """
    config = config or FitConfig()
    scale = float(np.linalg.norm(np.ptp(model.template, axis=0)))
    if isinstance(target, TriMesh):
        pts = sample_surface(target, config.n_samples, config.seed).positions
    else:
        pts = _as_points(target)
    if len(pts) < 1:
        raise ValueError("empty target")
    energy = FitEnergy(model, pts, n_model_samples=config.n_samples, seed=config.seed + 1)
    params = FitParams.zeros(model) if init is None else init.copy()
    vec = {"gamma": params.gamma / scale, "theta": params.theta.copy(),
           "beta": params.beta.copy(),
           "offsets": (np.zeros_like(model.template) if params.offsets is None
                       else params.offsets / scale)}
    config.history = []
    use_offsets = params.offsets is not None
    for stage in sorted(stages):
        if stage not in _STAGE_KEYS:
            raise ValueError(f"unknown stage {stage}")
        keys = _STAGE_KEYS[stage]
        use_offsets = use_offsets or "offsets" in keys
        n_iter = config.iterations[stage - 1]
        lr = config.learning_rates[stage - 1]
        live = {k: vec[k] for k in ("gamma", "theta", "beta", "offsets")}
        opt = Adam(live, lr)
        best_e, best_vec, since = np.inf, {k: v.copy() for k, v in vec.items()}, 0
        for it in range(n_iter + 1):
            p = FitParams(vec["beta"], vec["theta"], vec["gamma"] * scale,
                          vec["offsets"] * scale if use_offsets else None)
            terms, g = energy.value_and_grad(p)
            e = terms["total"]
            config.history.append((stage, it, e))
            if e < best_e:
                best_e, since = e, 0
                best_vec = {k: v.copy() for k, v in vec.items()}
            else:
                since += 1
            if since >= config.patience and e > best_e * (1 + config.divergence_rtol):
                log.warning("fit stage %d diverged at iteration %d; keeping best", stage, it)
                break
            if it == n_iter:
                break
            grads = {"gamma": g.gamma * scale, "beta": g.beta if "beta" in keys else 0 * g.beta}
            if "theta" in keys:
                grads["theta"] = g.theta
            else:
                gt = np.zeros_like(g.theta)
                root = model.order[0]
                gt[root] = g.theta[root]
                grads["theta"] = gt
            grads["offsets"] = (g.offsets * scale if "offsets" in keys and g.offsets is not None
                                else np.zeros_like(vec["offsets"]))
            opt.step(grads)
        for k in vec:
            vec[k][...] = best_vec[k]
    return FitParams(vec["beta"].copy(), vec["theta"].copy(), vec["gamma"] * scale,
                     vec["offsets"] * scale if use_offsets else None)


# ---------------------------------------------------------------- files

def save_model(ply_path, json_path, model):
    from .meshio import write_ply
    write_ply(ply_path, model.mesh())
    w = sparse.coo_matrix(model.weights)
    r = sparse.coo_matrix(model.regressor)
    doc = {
        "joints": [{"name": n, "regressor": [[int(c), float(v)] for rr, c, v in
                                             zip(r.row, r.col, r.data) if rr == j]}
                   for j, n in enumerate(model.joint_names or
                                         [f"joint{j}" for j in range(model.n_joints)])],
        "parents": model.parents.tolist(),
        "weights": [[int(a), int(b), float(v)] for a, b, v in zip(w.row, w.col, w.data)],
        "blendshapes": [bs.astype(np.float32).ravel().tolist() for bs in model.blendshapes],
        "labels": None if model.labels is None else model.labels.tolist(),
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_model(ply_path, json_path):
    from .meshio import read_ply
    mesh = read_ply(ply_path)
    with open(json_path, encoding="utf-8") as fh:
        doc = json.load(fh)
    V = mesh.n_vertices
    J = len(doc["parents"])
    weights = np.zeros((V, J))
    for v, j, val in doc["weights"]:
        weights[v, j] = val
    reg = np.zeros((J, V))
    for j, joint in enumerate(doc["joints"]):
        for v, val in joint["regressor"]:
            reg[j, v] = val
    shapes = np.array([np.asarray(b, dtype=np.float32).reshape(V, 3)
                       for b in doc["blendshapes"]], dtype=np.float64).reshape(-1, V, 3)
    labels = doc.get("labels")
    if labels is None:
        labels = mesh.labels
    return LbsModel(mesh.vertices, mesh.faces, shapes, weights, reg,
                    np.asarray(doc["parents"]), None if labels is None else np.asarray(labels),
                    tuple(j["name"] for j in doc["joints"]))
