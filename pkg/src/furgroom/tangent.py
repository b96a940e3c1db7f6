"""Smooth per-face tangent field, sign resolution and TBN frames on a triangle mesh.

Each face carries an angle in its own frame ``(e1, n x e1)`` with ``e1`` the
first edge. Transport across a shared edge rotates about that edge by the
dihedral angle, which keeps the angle measured from the edge unchanged; in
frame angles this is a per-edge constant offset.
"""

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .mesh import MeshError, TriMesh, edge_topology
from .meshio import write_ply


def _wrap(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


@dataclass
class FaceFrames:
    e1: np.ndarray
    e2: np.ndarray
    normal: np.ndarray
    pairs: np.ndarray        # (P, 2) face pairs sharing an interior edge
    kappa: np.ndarray        # frame-angle offset for transport pairs[:, 0] -> pairs[:, 1]
    edge_dir: np.ndarray     # (P, 3) unit shared-edge vector
    neighbors: np.ndarray    # (F, 3) neighbor face per slot, -1 if none
    nbr_kappa: np.ndarray    # (F, 3) offset for transport neighbor -> face


def face_frames(mesh):
    topo = edge_topology(mesh.faces)
    if np.any(topo.counts > 2):
        raise MeshError(f"{int(np.sum(topo.counts > 2))} non-manifold edges")
    t = mesh.triangles()
    n = mesh.face_normals()
    e1 = t[:, 1] - t[:, 0]
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(n, e1)
    inner = (topo.edge_faces >= 0).all(axis=1)
    pairs = topo.edge_faces[inner]
    ev = mesh.vertices[topo.edges[inner, 1]] - mesh.vertices[topo.edges[inner, 0]]
    ev /= np.linalg.norm(ev, axis=1, keepdims=True)
    f, g = pairs.T
    a_f = np.arctan2(np.sum(ev * e2[f], 1), np.sum(ev * e1[f], 1))
    a_g = np.arctan2(np.sum(ev * e2[g], 1), np.sum(ev * e1[g], 1))
    kappa = a_g - a_f
    nf = mesh.n_faces
    neighbors = np.full((nf, 3), -1, dtype=np.int64)
    nbr_kappa = np.zeros((nf, 3))
    fill = np.zeros(nf, dtype=np.int64)
    for (a, b), k in zip(pairs, kappa):
        neighbors[a, fill[a]] = b
        nbr_kappa[a, fill[a]] = -k
        fill[a] += 1
        neighbors[b, fill[b]] = a
        nbr_kappa[b, fill[b]] = k
        fill[b] += 1
    return FaceFrames(e1, e2, n, pairs, kappa, ev, neighbors, nbr_kappa)


def _angles_to_vectors(frames, phi):
    return np.cos(phi)[:, None] * frames.e1 + np.sin(phi)[:, None] * frames.e2


def _vectors_to_angles(frames, vec):
    return np.arctan2(np.sum(vec * frames.e2, 1), np.sum(vec * frames.e1, 1))


def field_energy(frames, phi):
    """Sum of squared transported angle differences over interior edges."""
    f, g = frames.pairs.T
    return math.fsum((_wrap(phi[g] - phi[f] - frames.kappa) ** 2).tolist())


def _greedy_coloring(neighbors):
    colors = np.full(len(neighbors), -1, dtype=np.int64)
    for i in range(len(neighbors)):
        used = {colors[j] for j in neighbors[i] if j >= 0}
        c = 0
        while c in used:
            c += 1
        colors[i] = c
    return colors


def seed_field(mesh, frames=None, seed_axis=(0.0, 0.0, 1.0), fallback_axis=(1.0, 0.0, 0.0)):
    """Project ``seed_axis`` into each face; near-parallel faces use ``fallback_axis``."""
    frames = frames or face_frames(mesh)
    n = frames.normal
    vecs = []
    for axis in (seed_axis, fallback_axis, (0.0, 1.0, 0.0)):
        a = np.asarray(axis, dtype=np.float64)
        a = a / np.linalg.norm(a)
        vecs.append(a[None] - np.sum(n * a, 1, keepdims=True) * n)
    out = vecs[2]
    for v in vecs[1::-1]:
        ok = np.linalg.norm(v, axis=1) > 0.1
        out = np.where(ok[:, None], v, out)
    return out / np.linalg.norm(out, axis=1, keepdims=True)


@dataclass
class TangentField:
    tangents: np.ndarray                  # (F, 3) unit, in-plane
    flagged: np.ndarray = None            # (F,) singular faces after sign resolution
    energy_history: list = field(default_factory=list)
    iterations: int = 0

    def __post_init__(self):
        if self.flagged is None:
            self.flagged = np.zeros(len(self.tangents), dtype=bool)


def face_direction_field(mesh, smoothing_iters=500, tol=1e-4, seed_axis=(0.0, 0.0, 1.0),
                         fallback_axis=(1.0, 0.0, 0.0), initial=None):
    """Smoothed unit tangent per face.

    Gauss-Seidel sweeps over a colouring of the face adjacency graph move
    each face to the circular mean of its transported neighbours. An update
    is kept only if it lowers that face's local energy, so the total energy
    never increases. Stops when the largest rotation in a sweep is below
    ``tol`` radians or after ``smoothing_iters`` sweeps.
    """
    frames = face_frames(mesh)
    init = seed_field(mesh, frames, seed_axis, fallback_axis) if initial is None else initial
    phi = _vectors_to_angles(frames, np.asarray(init, dtype=np.float64))
    colors = _greedy_coloring(frames.neighbors)
    groups = [np.nonzero(colors == c)[0] for c in range(colors.max() + 1)]
    history = [field_energy(frames, phi)]
    it = 0
    for it in range(1, smoothing_iters + 1):
        max_rot = 0.0
        for faces in groups:
            nb = frames.neighbors[faces]
            valid = nb >= 0
            cand = np.where(valid, phi[np.maximum(nb, 0)] + frames.nbr_kappa[faces], 0.0)
            s = np.sum(np.where(valid, np.sin(cand), 0.0), 1)
            c = np.sum(np.where(valid, np.cos(cand), 0.0), 1)
            old = phi[faces]
            new = np.where(np.hypot(s, c) > 1e-12, np.arctan2(s, c), old)
            e_old = np.sum(np.where(valid, _wrap(cand - old[:, None]) ** 2, 0.0), 1)
            e_new = np.sum(np.where(valid, _wrap(cand - new[:, None]) ** 2, 0.0), 1)
            accept = e_new < e_old * (1.0 - 1e-12)
            rot = np.abs(_wrap(new - old))[accept]
            if rot.size:
                max_rot = max(max_rot, float(rot.max()))
            phi[faces[accept]] = new[accept]
        history.append(field_energy(frames, phi))
        if max_rot < tol:
            break
    return TangentField(_angles_to_vectors(frames, phi), None, history, it)


def transport(frames, vec_from, src, dst, edge_dir):
    """Carry in-plane vectors from faces ``src`` to adjacent faces ``dst``."""
    ns, nd = frames.normal[src], frames.normal[dst]
    u = np.sum(vec_from * edge_dir, 1)
    w = np.sum(vec_from * np.cross(ns, edge_dir), 1)
    return u[:, None] * edge_dir + w[:, None] * np.cross(nd, edge_dir)


def resolve_signs(mesh, field):
    """Breadth-first sign propagation by parallel transport.

    Traversal starts at face 0; every further connected component starts at
    its lowest-index face. Faces left with a transported disagreement above
    90 degrees to any neighbour are flagged as singular.
    """
    tangents = field.tangents if isinstance(field, TangentField) else np.asarray(field)
    tangents = tangents.copy()
    frames = face_frames(mesh)
    nf = mesh.n_faces
    # per-pair data for transport in either direction
    adj = [[] for _ in range(nf)]
    for (a, b), e in zip(frames.pairs, frames.edge_dir):
        adj[a].append((b, e))
        adj[b].append((a, e))
    for lst in adj:
        lst.sort(key=lambda x: x[0])
    seen = np.zeros(nf, dtype=bool)
    for root in range(nf):
        if seen[root]:
            continue
        seen[root] = True
        queue = deque([root])
        while queue:
            f = queue.popleft()
            for g, e in adj[f]:
                if seen[g]:
                    continue
                moved = transport(frames, tangents[f][None], np.array([f]), np.array([g]), e[None])[0]
                if moved @ tangents[g] < 0:
                    tangents[g] = -tangents[g]
                seen[g] = True
                queue.append(g)
    flagged = sign_conflicts(mesh, tangents, frames)
    hist = field.energy_history if isinstance(field, TangentField) else []
    its = field.iterations if isinstance(field, TangentField) else 0
    return TangentField(tangents, flagged, hist, its)


def edge_agreement(mesh, tangents, frames=None):
    """Dot product of transported tangents for every interior face pair."""
    frames = frames or face_frames(mesh)
    f, g = frames.pairs.T
    moved = transport(frames, tangents[f], f, g, frames.edge_dir)
    return np.sum(moved * tangents[g], 1), frames


def sign_conflicts(mesh, tangents, frames=None):
    dots, frames = edge_agreement(mesh, tangents, frames)
    flagged = np.zeros(mesh.n_faces, dtype=bool)
    bad = frames.pairs[dots < 0]
    flagged[bad.ravel()] = True
    return flagged


def fallback_tangent(mesh, faces):
    """Deterministic in-plane tangent (first edge direction) for flagged faces."""
    t = mesh.vertices[mesh.faces[faces, 1]] - mesh.vertices[mesh.faces[faces, 0]]
    return t / np.linalg.norm(t, axis=-1, keepdims=True)


@dataclass
class TbnFrame:
    tangent: np.ndarray
    bitangent: np.ndarray
    normal: np.ndarray

    def matrix(self):
        """Columns ``[t b n]`` (``(..., 3, 3)``)."""
        return np.stack([self.tangent, self.bitangent, self.normal], axis=-1)


def tbn_at(mesh, signed_field, face_index):
    """TBN frames for points on the given faces (scalar or array of indices).

    ``face_index`` may also be a :class:`PointSample`.
    """
    if hasattr(face_index, "face_index"):
        face_index = face_index.face_index
    idx = np.asarray(face_index, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= mesh.n_faces):
        raise IndexError("face index out of range")
    flat = idx.reshape(-1)
    tangents = signed_field.tangents if isinstance(signed_field, TangentField) else np.asarray(signed_field)
    n = mesh.face_normals()[flat]
    t = tangents[flat].copy()
    if isinstance(signed_field, TangentField):
        flag = signed_field.flagged[flat]
        if flag.any():
            t[flag] = fallback_tangent(mesh, flat[flag])
    # re-orthogonalize against the face normal for exactness
    t -= np.sum(t * n, 1, keepdims=True) * n
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    b = np.cross(n, t)
    shape = idx.shape + (3,)
    return TbnFrame(t.reshape(shape), b.reshape(shape), n.reshape(shape))


def write_field_ply(path, mesh, field):
    """Debug dump: face centroids with ``tx ty tz`` tangent attributes."""
    tangents = field.tangents if isinstance(field, TangentField) else np.asarray(field)
    cloud = TriMesh(mesh.face_centroids(), np.zeros((0, 3), dtype=np.int64))
    write_ply(path, cloud, extra_vertex={"tx": tangents[:, 0], "ty": tangents[:, 1],
                                         "tz": tangents[:, 2]})
