"""Triangle meshes, SDF grids and the geometric queries shared by every stage.

Units are centimetres throughout. SDF values are negative inside.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import csgraph  # noqa: F401  (registers sparse.csgraph)
from scipy.spatial import cKDTree

from . import kernels

log = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12


class MeshError(ValueError):
    """Invalid mesh input."""


class NotWatertightError(MeshError):
    def __init__(self, open_edges, nonmanifold_edges=0):
        self.open_edges = int(open_edges)
        self.nonmanifold_edges = int(nonmanifold_edges)
        super().__init__(
            f"mesh is not watertight: {self.open_edges} open edges, "
            f"{self.nonmanifold_edges} non-manifold edges"
        )


class EmptySurfaceError(ValueError):
    """The iso-level is never crossed, so there is no surface to extract."""


@dataclass
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray
    labels: np.ndarray | None = None
    scalars: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise MeshError("face index out of range")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if len(self.labels) != len(self.vertices):
                raise MeshError("labels must have one entry per vertex")
        if self.scalars is not None:
            self.scalars = np.asarray(self.scalars, dtype=np.float64).reshape(-1)
            if len(self.scalars) != len(self.vertices):
                raise MeshError("scalars must have one entry per vertex")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def copy(self):
        return TriMesh(
            self.vertices.copy(),
            self.faces.copy(),
            None if self.labels is None else self.labels.copy(),
            None if self.scalars is None else self.scalars.copy(),
        )

    def triangles(self):
        return self.vertices[self.faces]

    def face_cross(self):
        t = self.triangles()
        return np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])

    def face_areas(self):
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def face_normals(self):
        c = self.face_cross()
        n = np.linalg.norm(c, axis=1, keepdims=True)
        return c / np.where(n > 0, n, 1.0)

    def face_centroids(self):
        return self.triangles().mean(axis=1)

    def vertex_normals(self):
        acc = np.zeros_like(self.vertices)
        c = self.face_cross()
        for k in range(3):
            np.add.at(acc, self.faces[:, k], c)
        n = np.linalg.norm(acc, axis=1, keepdims=True)
        return acc / np.where(n > 0, n, 1.0)

    def bbox(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def bbox_diagonal(self):
        lo, hi = self.bbox()
        return float(np.linalg.norm(hi - lo))

    def edges(self):
        return edge_topology(self.faces).edges

    def open_edge_count(self):
        topo = edge_topology(self.faces)
        return int(np.sum(topo.counts == 1)), int(np.sum(topo.counts > 2))

    def is_watertight(self):
        open_, nonman = self.open_edge_count()
        return len(self.faces) > 0 and open_ == 0 and nonman == 0

    def euler_characteristic(self):
        used = np.unique(self.faces)
        return len(used) - len(self.edges()) + len(self.faces)

    def signed_volume(self):
        t = self.triangles()
        return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)

    def validate(self):
        if np.any(self.face_areas() <= DEGENERATE_AREA):
            raise MeshError("mesh has degenerate (zero-area) faces")

    def vertex_adjacency(self):
        """Symmetric 0/1 sparse vertex adjacency matrix (one-ring)."""
        e = self.edges()
        n = self.n_vertices
        data = np.ones(2 * len(e))
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))

    def face_components(self):
        """Connected-component id for each face (shared vertices connect faces)."""
        nf = self.n_faces
        rows = np.repeat(np.arange(nf), 3)
        inc = sparse.csr_matrix((np.ones(3 * nf), (rows, self.faces.ravel())),
                                shape=(nf, self.n_vertices))
        _, comp = sparse.csgraph.connected_components(inc @ inc.T, directed=False)
        return comp

    def submesh(self, face_mask):
        faces = self.faces[face_mask]
        used, inv = np.unique(faces, return_inverse=True)
        return TriMesh(
            self.vertices[used],
            inv.reshape(-1, 3),
            None if self.labels is None else self.labels[used],
            None if self.scalars is None else self.scalars[used],
        )


@dataclass
class EdgeTopology:
    edges: np.ndarray        # (E, 2) sorted vertex pairs
    face_edges: np.ndarray   # (F, 3) edge id of edge opposite... see edge_topology
    edge_faces: np.ndarray   # (E, 2) incident faces, -1 when missing
    counts: np.ndarray       # (E,) number of incident faces


def edge_topology(faces):
    """Unique undirected edges and their incident faces.

    ``face_edges[f, k]`` is the edge joining ``faces[f, k]`` and ``faces[f, (k+1)%3]``.
    Non-manifold edges keep only their first two faces in ``edge_faces``.
    """
    faces = np.asarray(faces, dtype=np.int64)
    nf = len(faces)
    he = np.stack([faces, np.roll(faces, -1, axis=1)], axis=2).reshape(-1, 2)
    key = np.sort(he, axis=1)
    edges, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    face_of = np.repeat(np.arange(nf), 3)
    edge_faces = -np.ones((len(edges), 2), dtype=np.int64)
    order = np.argsort(inv, kind="stable")
    starts = np.searchsorted(inv[order], np.arange(len(edges)))
    edge_faces[:, 0] = face_of[order[starts]]
    has2 = counts >= 2
    edge_faces[has2, 1] = face_of[order[starts[has2] + 1]]
    return EdgeTopology(edges, inv.reshape(nf, 3), edge_faces, counts)


@dataclass
class PointSample:
    """A batch of surface samples: ``positions[i]`` lies on ``face_index[i]``."""

    positions: np.ndarray
    normals: np.ndarray
    face_index: np.ndarray
    barycentric: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.positions)


@dataclass
class SdfGrid:
    origin: np.ndarray
    spacing: float
    values: np.ndarray
    out_of_bounds: int = field(default=0, compare=False)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.spacing = float(self.spacing)
        if self.values.ndim != 3 or min(self.values.shape) < 2:
            raise ValueError("SDF grid needs at least 2 nodes per axis")
        if not self.spacing > 0:
            raise ValueError("grid spacing must be positive")

    @property
    def dims(self):
        return np.array(self.values.shape)

    @property
    def cell_diagonal(self):
        return self.spacing * np.sqrt(3.0)

    def upper(self):
        return self.origin + (self.dims - 1) * self.spacing

    def node_positions(self):
        axes = [self.origin[i] + self.spacing * np.arange(self.dims[i]) for i in range(3)]
        g = np.meshgrid(*axes, indexing="ij")
        return np.stack(g, axis=-1).reshape(-1, 3)

    def same_shape(self, other):
        return (np.array_equal(self.dims, other.dims)
                and np.allclose(self.origin, other.origin)
                and np.isclose(self.spacing, other.spacing))

    def with_values(self, values):
        return SdfGrid(self.origin.copy(), self.spacing, values)

    def _cell(self, points):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        u = (points - self.origin) / self.spacing
        hi = self.dims - 1
        outside = np.any((u < 0) | (u > hi), axis=1)
        u = np.clip(u, 0, hi)
        i0 = np.minimum(np.floor(u).astype(np.int64), hi - 1)
        return i0, u - i0, outside

    def sample(self, points, return_gradient=False):
        """Trilinear interpolation; points outside the box are clamped and counted.

        With ``return_gradient`` the exact derivative of the trilinear
        interpolant is returned as well (zero along clamped axes).
        """
        i0, t, outside = self._cell(points)
        n_out = int(outside.sum())
        if n_out:
            self.out_of_bounds += n_out
            log.debug("%d SDF queries outside the grid were clamped", n_out)
        v = self.values
        c = np.empty((len(t), 2, 2, 2))
        for a in range(2):
            for b in range(2):
                for d in range(2):
                    c[:, a, b, d] = v[i0[:, 0] + a, i0[:, 1] + b, i0[:, 2] + d]
        tx, ty, tz = t[:, 0:1], t[:, 1:2], t[:, 2:3]
        cx = c[:, 0] * (1 - tx[:, :, None]) + c[:, 1] * tx[:, :, None]   # (n,2,2) over y,z
        cxy = cx[:, 0] * (1 - ty) + cx[:, 1] * ty                          # (n,2) over z
        val = cxy[:, 0] * (1 - tz[:, 0]) + cxy[:, 1] * tz[:, 0]
        if not return_gradient:
            return val
        g = np.empty((len(t), 3))
        dx = c[:, 1] - c[:, 0]
        dxy = dx[:, 0] * (1 - ty) + dx[:, 1] * ty
        g[:, 0] = dxy[:, 0] * (1 - tz[:, 0]) + dxy[:, 1] * tz[:, 0]
        dy = cx[:, 1] - cx[:, 0]
        g[:, 1] = dy[:, 0] * (1 - tz[:, 0]) + dy[:, 1] * tz[:, 0]
        g[:, 2] = cxy[:, 1] - cxy[:, 0]
        g /= self.spacing
        if n_out:
            u = (np.asarray(points, dtype=np.float64).reshape(-1, 3) - self.origin) / self.spacing
            clamped = (u < 0) | (u > self.dims - 1)
            g[clamped] = 0.0
        return val, g

    def central_gradient(self, points):
        """Gradient from central differences of node values, trilinearly interpolated."""
        grads = np.gradient(self.values, self.spacing, edge_order=1)
        return np.stack([self.with_values(gc).sample(points) for gc in grads], axis=1)


def unsigned_distance(points, mesh, tolerance=0.0, k=32, return_face=False):
    """Distance from each point to the closest point on ``mesh``.

    Each result is within ``tolerance`` of the exact distance. Candidates come
    from a centroid k-d tree; a point whose bound is still too loose is
    refined against every triangle whose bounding ball can beat it. With
    ``return_face`` the index of the triangle attaining it is returned too.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tri = mesh.triangles()
    nf = len(tri)
    if nf == 0:
        raise MeshError("empty mesh")
    cent = tri.mean(axis=1)
    radius = float(np.max(np.linalg.norm(tri - cent[:, None, :], axis=2)))
    tree = cKDTree(cent)
    dist = np.empty(len(points))
    face = np.empty(len(points), dtype=np.int64)
    todo = np.arange(len(points))
    for kk in sorted({1, min(k, nf)}):
        step = max(1, (1 << 20) // kk)
        keep = []
        for s in range(0, len(todo), step):
            idx = todo[s:s + step]
            p = points[idx]
            dc, ic = tree.query(p, k=kk)
            dc = dc.reshape(len(p), kk)
            flat = ic.reshape(-1)
            d2 = kernels.closest_point_sqdist(
                np.repeat(p, kk, axis=0), tri[flat, 0], tri[flat, 1], tri[flat, 2]
            ).reshape(len(p), kk)
            j = np.argmin(d2, axis=1)
            d = np.sqrt(d2[np.arange(len(p)), j])
            dist[idx] = d
            face[idx] = ic.reshape(len(p), kk)[np.arange(len(p)), j]
            if kk < nf:
                # triangles beyond the kk-th centroid are at least this far away
                keep.append(idx[d - (dc[:, -1] - radius) > tolerance])
        todo = np.concatenate(keep) if keep else np.zeros(0, dtype=np.int64)
        if len(todo) == 0:
            return (dist, face) if return_face else dist
    for s in range(0, len(todo), 2048):
        idx = todo[s:s + 2048]
        cand = tree.query_ball_point(points[idx], dist[idx] + radius)
        lens = np.fromiter((len(c) for c in cand), dtype=np.int64, count=len(idx))
        f = np.concatenate([np.asarray(c, dtype=np.int64) for c in cand])
        owner = np.repeat(np.arange(len(idx)), lens)
        dd = kernels.closest_point_sqdist(points[idx][owner], tri[f, 0], tri[f, 1], tri[f, 2])
        # per-owner minimum: sort by (owner, distance) and take each first row
        order = np.lexsort((dd, owner))
        first = order[np.r_[0, np.cumsum(lens)[:-1]][lens > 0]]
        rows = owner[first]
        better = np.sqrt(dd[first]) < dist[idx][rows]
        dist[idx[rows[better]]] = np.sqrt(dd[first][better])
        face[idx[rows[better]]] = f[first][better]
    return (dist, face) if return_face else dist


def candidate_distance(points, mesh, k=4, max_distance=np.inf):
    """Distance to the closest of the ``k`` triangles with the nearest centroids.

    An upper bound on the true distance; the excess is second order in the
    triangle size once the point is a few triangle widths from the surface.
    Returns ``(distance, face)``. Points with no centroid within
    ``max_distance`` plus the largest triangle radius get ``inf`` and face -1;
    the bound lets the tree prune those queries early.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tri = mesh.triangles()
    nf = len(tri)
    k = min(k, nf)
    cent = tri.mean(axis=1)
    radius = float(np.max(np.linalg.norm(tri - cent[:, None, :], axis=2)))
    tree = cKDTree(cent)
    out = np.full(len(points), np.inf)
    face = np.full(len(points), -1, dtype=np.int64)
    step = max(1, (1 << 20) // k)
    for s in range(0, len(points), step):
        p = points[s:s + step]
        _, ic = tree.query(p, k=k, distance_upper_bound=max_distance + radius)
        ic = ic.reshape(len(p), k)
        hit = ic[:, 0] < nf
        ic, p = ic[hit], p[hit]
        found = ic < nf
        flat = np.where(found, ic, 0).reshape(-1)
        d2 = kernels.closest_point_sqdist(
            np.repeat(p, k, axis=0), tri[flat, 0], tri[flat, 1], tri[flat, 2]).reshape(len(p), k)
        d2[~found] = np.inf
        j = np.argmin(d2, axis=1)
        rows = np.flatnonzero(hit) + s
        out[rows] = np.sqrt(d2[np.arange(len(p)), j])
        face[rows] = ic[np.arange(len(p)), j]
    return out, face


def winding_number(points, mesh):
    return kernels.winding_numbers(points, mesh.vertices, mesh.faces)


def require_watertight(mesh):
    if len(mesh.faces) == 0:
        raise MeshError("empty mesh")
    open_, nonman = mesh.open_edge_count()
    if open_ or nonman:
        raise NotWatertightError(open_, nonman)


def grid_for_mesh(mesh, resolution, padding=None):
    """Grid geometry covering ``mesh``: ``resolution`` nodes along the longest axis."""
    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    lo, hi = mesh.bbox()
    extent = float(np.max(hi - lo))
    if padding is None:
        padding = 0.05 * extent
    # two extra cells beyond the padding keep the iso-surface off the boundary
    h = (extent + 2 * padding) / (resolution - 5)
    span = (hi - lo) + 2 * padding + 4 * h
    dims = np.clip(np.ceil(span / h - 1e-9).astype(int) + 1, 2, resolution)
    origin = 0.5 * (lo + hi) - 0.5 * (dims - 1) * h
    return origin, h, dims


def build_sdf(mesh, resolution=256, padding=None):
    """Signed distance grid of a watertight mesh.

    Magnitudes are exact point-to-triangle distances within three cells of
    the surface and upper bounds within a cell diagonal beyond; the sign comes from the generalized winding number (inside when > 1/2).
    """
    require_watertight(mesh)
    origin, h, dims = grid_for_mesh(mesh, resolution, padding)
    grid = SdfGrid(origin, h, np.zeros(tuple(dims)))
    nodes = grid.node_positions()
    shape = tuple(dims)
    # Exact wherever a triangle can be within three cells, which the bounded
    # centroid query detects cheaply. Beyond that a node takes the closest of
    # the triangles attached to the nearest exact node of itself and of its six
    # neighbours (Euclidean feature transform): an upper bound, exact except
    # in concave regions and there within a fraction of a cell diagonal.
    dist, _ = candidate_distance(nodes, mesh, k=1, max_distance=3 * h)
    hit = np.isfinite(dist)
    face = np.full(len(nodes), -1, dtype=np.int64)
    dist[hit], face[hit] = unsigned_distance(nodes[hit], mesh, tolerance=0.0, return_face=True)
    far = ~hit
    if far.any():
        _, idx = ndimage.distance_transform_edt(far.reshape(shape), return_indices=True)
        feat = face[np.ravel_multi_index(tuple(idx), shape)]
        tri = mesh.triangles()
        cells = np.stack(np.unravel_index(np.flatnonzero(far), shape), axis=1)
        best = np.full(len(cells), np.inf)
        # candidates: the feature triangle of the node and of its six neighbours
        for off in ((0, 0, 0), (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1),
                    (0, 0, -1)):
            nb = np.clip(cells + off, 0, np.array(shape) - 1)
            t = tri[feat[tuple(nb.T)]]
            best = np.minimum(best, kernels.closest_point_sqdist(nodes[far], t[:, 0], t[:, 1],
                                                                 t[:, 2]))
        dist[far] = np.sqrt(best)
    inside = _inside_by_components(nodes, dist.reshape(shape), h, mesh)
    dist = dist.reshape(shape)
    grid.values = np.where(inside, -dist, dist)
    return grid


def _inside_by_components(nodes, dist, h, mesh):
    # Neighbouring nodes whose distances sum past the edge length cannot
    # straddle the surface, so the sign is constant over the components of
    # that graph and one winding number per component decides it.
    idx = np.arange(dist.size).reshape(dist.shape)
    rows, cols = [], []
    for ax in range(3):
        a = [slice(None)] * 3
        b = [slice(None)] * 3
        a[ax] = slice(0, -1)
        b[ax] = slice(1, None)
        same = (dist[tuple(a)] + dist[tuple(b)]) > h * (1 + 1e-9)
        rows.append(idx[tuple(a)][same])
        cols.append(idx[tuple(b)][same])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    graph = sparse.coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)),
                              shape=(dist.size, dist.size))
    ncomp, comp = sparse.csgraph.connected_components(graph, directed=False)
    _, reps = np.unique(comp, return_index=True)
    w = winding_number(nodes[reps], mesh)
    return (w > 0.5)[comp].reshape(dist.shape)


def marching_cubes(grid, iso=0.0):
    """Extract the ``iso`` level set as an outward-wound triangle mesh."""
    from skimage import measure

    v = grid.values
    if not (v.min() < iso < v.max()):
        raise EmptySurfaceError(f"grid values never cross iso-level {iso}")
    verts, faces, _, _ = measure.marching_cubes(
        v, level=iso, spacing=(grid.spacing,) * 3, gradient_direction="ascent",
        allow_degenerate=False, method="lewiner",
    )
    mesh = TriMesh(verts + grid.origin, faces)
    if mesh.signed_volume() < 0:
        mesh.faces = mesh.faces[:, ::-1].copy()
    return mesh


def sample_surface(mesh, n, seed):
    """Area-weighted uniform samples on ``mesh`` (deterministic for ``seed``)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if mesh.n_faces == 0:
        raise MeshError("empty mesh")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise MeshError("mesh has zero area")
    cdf = np.cumsum(areas) / total
    face = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), len(areas) - 1)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    bary = np.stack([1 - r1, r1 * (1 - r2), r1 * r2], axis=1)
    tri = mesh.triangles()[face]
    pos = np.einsum("nk,nkd->nd", bary, tri)
    return PointSample(pos, mesh.face_normals()[face], face, bary)


def knn(query, reference, k):
    """Exact k nearest reference indices per query; ties go to the lower index."""
    query = np.asarray(query, dtype=np.float64).reshape(-1, 3)
    reference = np.asarray(reference, dtype=np.float64).reshape(-1, 3)
    if len(reference) == 0:
        raise ValueError("empty reference set")
    if not 1 <= k <= len(reference):
        raise ValueError("k must be in [1, len(reference)]")
    kk = min(k + 1, len(reference))
    _, idx = cKDTree(reference).query(query, k=kk)
    idx = idx.reshape(len(query), kk)
    d2 = np.sum((reference[idx] - query[:, None, :]) ** 2, axis=2)
    order = _rowwise_lexsort(d2, idx)
    idx = np.take_along_axis(idx, order, axis=1)
    d2 = np.take_along_axis(d2, order, axis=1)
    if kk > k:
        tied = np.nonzero(d2[:, k] == d2[:, k - 1])[0]
        for r in tied:
            full = np.sum((reference - query[r]) ** 2, axis=1)
            idx[r, :k] = np.lexsort((np.arange(len(reference)), full))[:k]
    return idx[:, :k]


def _rowwise_lexsort(primary, secondary):
    order = np.argsort(secondary, axis=1, kind="stable")
    p = np.take_along_axis(primary, order, axis=1)
    order2 = np.argsort(p, axis=1, kind="stable")
    return np.take_along_axis(order, order2, axis=1)


def nearest_vertex(points, mesh):
    """Index of the closest mesh vertex for each point (lowest index on ties)."""
    return knn(points, mesh.vertices, 1)[:, 0]
