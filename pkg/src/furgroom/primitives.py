"""Closed test meshes: icosphere, box, capped cylinder."""

import numpy as np

from .mesh import TriMesh

_ICO_F = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
])


def _icosahedron():
    t = (1.0 + 5 ** 0.5) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ])
    return v / np.linalg.norm(v, axis=1, keepdims=True), _ICO_F.copy()


def icosphere(subdivisions=4, radius=1.0, center=(0.0, 0.0, 0.0)):
    """Geodesic sphere; 4 subdivisions give 2562 vertices."""
    v, f = _icosahedron()
    for _ in range(subdivisions):
        e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        ue, inv = np.unique(e, axis=0, return_inverse=True)
        mid = v[ue].mean(axis=1)
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        m = inv.reshape(3, -1).T + len(v)
        v = np.vstack([v, mid])
        a, b, c = f.T
        ab, bc, ca = m.T
        f = np.concatenate([
            np.stack([a, ab, ca], 1), np.stack([b, bc, ab], 1),
            np.stack([c, ca, bc], 1), np.stack([ab, bc, ca], 1),
        ])
    return TriMesh(v * radius + np.asarray(center, float), f)


def box(size=(2.0, 2.0, 2.0), center=(0.0, 0.0, 0.0), divisions=1):
    """Axis-aligned box with each face split into ``divisions``² quads."""
    n = divisions
    half = np.asarray(size, float) / 2.0
    verts, faces = [], []
    g = np.linspace(-1.0, 1.0, n + 1)
    uu, vv = np.meshgrid(g, g, indexing="ij")
    for axis in range(3):
        for sign in (-1.0, 1.0):
            u_ax, v_ax = [a for a in range(3) if a != axis]
            p = np.zeros((n + 1, n + 1, 3))
            p[..., axis] = sign
            p[..., u_ax] = uu
            p[..., v_ax] = vv
            base = sum(len(x) for x in verts)
            verts.append(p.reshape(-1, 3))
            idx = base + np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
            q0, q1 = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
            q2, q3 = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
            quads = np.concatenate([np.stack([q0, q1, q2], 1), np.stack([q0, q2, q3], 1)])
            # (u, v, axis) must be right-handed for outward winding
            right = np.cross(np.eye(3)[u_ax], np.eye(3)[v_ax])[axis] * sign > 0
            faces.append(quads if right else quads[:, ::-1])
    from .decimate import weld_vertices
    mesh = TriMesh(np.vstack(verts) * half + np.asarray(center, float), np.vstack(faces))
    return weld_vertices(mesh, 1e-9 * float(half.min()))


def cylinder(radius=1.0, height=2.0, segments=32, rings=8, capped=True):
    """Cylinder along z centred at the origin (closed unless ``capped=False``)."""
    ang = 2 * np.pi * np.arange(segments) / segments
    zs = np.linspace(-height / 2, height / 2, rings + 1)
    ring = np.stack([np.cos(ang), np.sin(ang)], 1) * radius
    side = np.concatenate([np.column_stack([ring, np.full(segments, z)]) for z in zs])
    verts = np.vstack([side, [[0, 0, -height / 2]], [[0, 0, height / 2]]])
    bottom, top = len(side), len(side) + 1
    faces = []
    for r in range(rings):
        for s in range(segments):
            a = r * segments + s
            b = r * segments + (s + 1) % segments
            faces += [[a, b, b + segments], [a, b + segments, a + segments]]
    if not capped:
        return TriMesh(side, np.asarray(faces))
    last = rings * segments
    for s in range(segments):
        faces.append([bottom, (s + 1) % segments, s])
        faces.append([top, last + s, last + (s + 1) % segments])
    return TriMesh(verts, np.asarray(faces))


def plane_grid(nx=10, ny=10, size=(1.0, 1.0)):
    """Flat triangulated grid in the xy-plane with normals along +z."""
    xs = np.linspace(0.0, size[0], nx + 1)
    ys = np.linspace(0.0, size[1], ny + 1)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    verts = np.column_stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)])
    idx = np.arange(xx.size).reshape(nx + 1, ny + 1)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    faces = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return TriMesh(verts, faces)
