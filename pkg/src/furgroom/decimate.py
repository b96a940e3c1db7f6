"""Mesh repair and face-budget resampling (quadric-error edge collapse)."""

import heapq

import numpy as np
from scipy.spatial import cKDTree

from .mesh import DEGENERATE_AREA, MeshError, TriMesh, edge_topology


def weld_vertices(mesh, tol):
    """Merge vertices closer than ``tol`` (lowest index survives)."""
    if mesh.n_vertices == 0:
        return mesh.copy()
    pairs = cKDTree(mesh.vertices).query_pairs(tol, output_type="ndarray")
    rep = np.arange(mesh.n_vertices)
    if len(pairs):
        # union-find over close pairs
        parent = np.arange(mesh.n_vertices)

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a, b in pairs:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        rep = np.array([find(i) for i in range(mesh.n_vertices)])
    faces = rep[mesh.faces]
    return _compact(TriMesh(mesh.vertices, faces, mesh.labels, mesh.scalars))


def remove_degenerate_faces(mesh, area_tol=DEGENERATE_AREA):
    f = mesh.faces
    distinct = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])
    keep = distinct & (mesh.face_areas() > area_tol)
    # duplicated faces (same vertex set) are dropped as well
    key = np.sort(f, axis=1)
    _, first = np.unique(key, axis=0, return_index=True)
    unique = np.zeros(len(f), dtype=bool)
    unique[first] = True
    return _compact(TriMesh(mesh.vertices, f[keep & unique], mesh.labels, mesh.scalars))


def _compact(mesh):
    used, inv = np.unique(mesh.faces, return_inverse=True)
    return TriMesh(
        mesh.vertices[used], inv.reshape(-1, 3),
        None if mesh.labels is None else mesh.labels[used],
        None if mesh.scalars is None else mesh.scalars[used],
    )


def largest_component(mesh):
    """Keep the connected component enclosing the largest volume.

    Open components (no enclosed volume) are ranked by area instead.
    """
    if mesh.n_faces == 0:
        raise MeshError("empty mesh")
    comp = mesh.face_components()
    if comp.max() == 0:
        return mesh.copy()
    t = mesh.triangles()
    vol = np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])) / 6.0
    area = mesh.face_areas()
    n = comp.max() + 1
    comp_vol = np.abs(np.bincount(comp, weights=vol, minlength=n))
    comp_area = np.bincount(comp, weights=area, minlength=n)
    best = np.lexsort((-np.arange(n), comp_area, comp_vol))[-1]
    return mesh.submesh(comp == best)


def repair(mesh, weld_rel=1e-6):
    """Weld near-duplicate vertices, drop zero-area faces, keep the largest component."""
    mesh = weld_vertices(mesh, weld_rel * max(mesh.bbox_diagonal(), 1e-12))
    mesh = remove_degenerate_faces(mesh)
    return largest_component(mesh)


def subdivide_midpoint(mesh):
    """Split every triangle into four at its edge midpoints (geometry unchanged)."""
    topo = edge_topology(mesh.faces)
    nv = mesh.n_vertices
    mids = mesh.vertices[topo.edges].mean(axis=1)
    m = topo.face_edges + nv  # m[:, k] is the midpoint of edge (f[k], f[k+1])
    a, b, c = mesh.faces.T
    ab, bc, ca = m.T
    faces = np.concatenate([
        np.stack([a, ab, ca], 1), np.stack([b, bc, ab], 1),
        np.stack([c, ca, bc], 1), np.stack([ab, bc, ca], 1),
    ])
    labels = scalars = None
    if mesh.labels is not None:
        labels = np.concatenate([mesh.labels, mesh.labels[topo.edges[:, 0]]])
    if mesh.scalars is not None:
        scalars = np.concatenate([mesh.scalars, mesh.scalars[topo.edges].mean(axis=1)])
    return TriMesh(np.vstack([mesh.vertices, mids]), faces, labels, scalars)


def resample_faces(mesh, target_faces, uniformity=0.0):
    """Bring ``mesh`` to ``target_faces`` faces: subdivide up, then collapse down."""
    if target_faces < 4:
        raise ValueError("target_faces must be >= 4")
    while mesh.n_faces < target_faces:
        mesh = subdivide_midpoint(mesh)
    if mesh.n_faces > target_faces:
        mesh = decimate(mesh, target_faces, uniformity)
    return mesh


def _plane_quadrics(mesh):
    t = mesh.triangles()
    c = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
    norm = np.linalg.norm(c, axis=1)
    n = c / np.where(norm > 0, norm, 1.0)[:, None]
    p = np.concatenate([n, -np.einsum("ij,ij->i", n, t[:, 0])[:, None]], axis=1)
    kq = 0.5 * norm[:, None, None] * p[:, :, None] * p[:, None, :]
    q = np.zeros((mesh.n_vertices, 4, 4))
    for k in range(3):
        np.add.at(q, mesh.faces[:, k], kq)
    return q


def _qeval(q, x, y, z):
    return (q[0] * x * x + 2 * q[1] * x * y + 2 * q[2] * x * z + 2 * q[3] * x
            + q[5] * y * y + 2 * q[6] * y * z + 2 * q[7] * y
            + q[10] * z * z + 2 * q[11] * z + q[15])


def _point_quadrics(mesh):
    # w * |x - v|^2 with w the vertex's third of the incident face area
    w = np.zeros(mesh.n_vertices)
    for k in range(3):
        np.add.at(w, mesh.faces[:, k], mesh.face_areas() / 3.0)
    v = mesh.vertices
    q = np.zeros((mesh.n_vertices, 4, 4))
    q[:, [0, 1, 2], [0, 1, 2]] = w[:, None]
    q[:, :3, 3] = -w[:, None] * v
    q[:, 3, :3] = -w[:, None] * v
    q[:, 3, 3] = w * np.sum(v * v, axis=1)
    return q


def _collapse_target(q, vi, vj):
    """Position minimising the summed quadric ``q`` (flat 16-list) and its cost.

    Falls back to the best of the endpoints and midpoint when the 3x3 system
    is near singular.
    """
    a, b, c, e, f, i = q[0], q[1], q[2], q[5], q[6], q[10]
    r0, r1, r2 = -q[3], -q[7], -q[11]
    c00 = e * i - f * f
    c01 = c * f - b * i
    c02 = b * f - c * e
    det = a * c00 + b * c01 + c * c02
    scale = max(abs(a), abs(e), abs(i), 1e-300)
    cands = [tuple(vi), tuple(vj), tuple(0.5 * (vi + vj))]
    if abs(det) > 1e-10 * scale ** 3:
        c11 = a * i - c * c
        c12 = b * c - a * f
        c22 = a * e - b * b
        cands.insert(0, ((c00 * r0 + c01 * r1 + c02 * r2) / det,
                         (c01 * r0 + c11 * r1 + c12 * r2) / det,
                         (c02 * r0 + c12 * r1 + c22 * r2) / det))
    best, cost = None, np.inf
    for x in cands:
        val = _qeval(q, *x)
        if val < cost - 1e-15:
            best, cost = x, val
    return np.asarray(best), max(cost, 0.0)


def _initial_costs(qflat, verts, edges):
    """Vectorised :func:`_collapse_target` over all edges."""
    q = np.asarray(qflat).reshape(-1, 4, 4)
    qs = q[edges[:, 0]] + q[edges[:, 1]]
    va, vb = verts[edges[:, 0]], verts[edges[:, 1]]
    a3 = qs[:, :3, :3]
    det = np.linalg.det(a3)
    scale = np.abs(a3[:, [0, 1, 2], [0, 1, 2]]).max(axis=1)
    ok = np.abs(det) > 1e-10 * np.maximum(scale, 1e-300) ** 3
    opt = np.zeros_like(va)
    if ok.any():
        opt[ok] = np.linalg.solve(a3[ok], -qs[ok, :3, 3][..., None])[..., 0]
    cands = np.stack([opt, va, vb, 0.5 * (va + vb)], axis=1)
    h = np.concatenate([cands, np.ones(cands.shape[:2] + (1,))], axis=2)
    cost = np.einsum("eci,eij,ecj->ec", h, qs, h)
    cost[~ok, 0] = np.inf
    # ties resolve to the earlier candidate like the scalar routine
    best = np.argmin(cost + 1e-15 * np.arange(4), axis=1)
    idx = np.arange(len(edges))
    return (np.maximum(cost[idx, best], 0.0).tolist(), edges[:, 0].tolist(),
            edges[:, 1].tolist(), list(cands[idx, best]))


def decimate(mesh, target_faces, uniformity=0.0):
    """Quadric-error edge collapse until at most ``target_faces`` faces remain.

    Boundary edges are never collapsed; collapses that would break the link
    condition or flip a face are skipped. ``uniformity > 0`` adds a point
    quadric per vertex (weighted by its area share) so merged clusters stay
    compact and flat regions keep evenly sized triangles.
    """
    verts = mesh.vertices.copy()
    faces = mesh.faces.copy()
    labels = None if mesh.labels is None else mesh.labels.copy()
    scalars = None if mesh.scalars is None else mesh.scalars.copy()
    q = _plane_quadrics(mesh)
    if uniformity > 0:
        q += uniformity * _point_quadrics(mesh)
    qflat = q.reshape(-1, 16).tolist()
    alive = np.ones(len(faces), dtype=bool)
    vfaces = [set() for _ in range(len(verts))]
    for f, tri in enumerate(faces):
        for v in tri:
            vfaces[v].add(f)
    topo = edge_topology(faces)
    boundary = set()
    for (a, b), cnt in zip(topo.edges, topo.counts):
        if cnt != 2:
            boundary.update((int(a), int(b)))
    stamp = np.zeros(len(verts), dtype=np.int64)
    heap = []

    def push(a, b):
        if a in boundary or b in boundary:
            return
        a, b = min(a, b), max(a, b)
        qs = [u + w for u, w in zip(qflat[a], qflat[b])]
        x, cost = _collapse_target(qs, verts[a], verts[b])
        # (a, b) is unique per live edge so the tuple never compares ``x``
        heapq.heappush(heap, (cost, a, b, stamp[a], stamp[b], x))

    for cost, a, b, x in zip(*_initial_costs(qflat, verts, topo.edges)):
        if a not in boundary and b not in boundary:
            heap.append((cost, a, b, 0, 0, x))
    heapq.heapify(heap)

    def neighbors(v):
        out = set()
        for f in vfaces[v]:
            out.update(int(x) for x in faces[f])
        out.discard(v)
        return out

    n_alive = len(faces)
    while n_alive > target_faces and heap:
        cost, a, b, sa, sb, x = heapq.heappop(heap)
        if stamp[a] != sa or stamp[b] != sb:
            continue
        shared = vfaces[a] & vfaces[b]
        if len(shared) != 2:
            continue
        if len(neighbors(a) & neighbors(b)) != 2:
            continue
        if _flips(verts, faces, list((vfaces[a] | vfaces[b]) - shared), a, b, x):
            continue
        # collapse b into a
        verts[a] = x
        qflat[a] = [u + w for u, w in zip(qflat[a], qflat[b])]
        for f in shared:
            alive[f] = False
            for v in faces[f]:
                vfaces[v].discard(f)
        n_alive -= len(shared)
        for f in vfaces[b]:
            faces[f][faces[f] == b] = a
            vfaces[a].add(f)
        vfaces[b] = set()
        stamp[a] += 1
        stamp[b] += 1
        # only costs involving the merged vertex changed
        for v in neighbors(a):
            push(a, v)
    out = TriMesh(verts, faces[alive], labels, scalars)
    return _compact(out)


def _flips(verts, faces, fids, a, b, x):
    """True if moving ``a`` and ``b`` to ``x`` flips or degenerates a face in ``fids``."""
    f = faces[fids]
    tri = verts[f]
    n0 = _cross_rows(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    tri[(f == a) | (f == b)] = x
    n1 = _cross_rows(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    l0 = np.sqrt((n0 * n0).sum(1))
    l1 = np.sqrt((n1 * n1).sum(1))
    bad = (l1 <= 1e-12 * np.maximum(l0, 1e-30)) | ((n0 * n1).sum(1) <= 0.2 * l0 * l1)
    return bool(bad.any())


def _cross_rows(u, v):
    return np.stack([u[:, 1] * v[:, 2] - u[:, 2] * v[:, 1],
                     u[:, 2] * v[:, 0] - u[:, 0] * v[:, 2],
                     u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]], 1)
