"""De-furring: shrink the full-surface SDF by the local fur thickness."""

import numpy as np

from .decimate import repair, resample_faces
from .mesh import MeshError, knn, marching_cubes


def shrinkage_field(grid, mesh, vertex_ann):
    """Thickness of the nearest mesh vertex at every grid node (grid-shaped array)."""
    thickness = np.asarray(vertex_ann.thickness_cm if hasattr(vertex_ann, "thickness_cm")
                           else vertex_ann, dtype=np.float64)
    if thickness.shape != (mesh.n_vertices,) or not np.all(np.isfinite(thickness)):
        raise MeshError("every mesh vertex needs a finite thickness annotation")
    nodes = grid.node_positions()
    idx = knn(nodes, mesh.vertices, 1)[:, 0]
    return thickness[idx].reshape(grid.values.shape)


def defur_sdf(grid, s):
    """Offset field ``SDF + s``; its zero level set is the bald surface."""
    s = np.asarray(s, dtype=np.float64)
    if np.ndim(s) == 0:
        s = np.full(grid.values.shape, float(s))
    if s.shape != grid.values.shape:
        raise ValueError(f"shrinkage field shape {s.shape} does not match grid {grid.values.shape}")
    return grid.with_values(grid.values + s)


def extract_bald_mesh(defurred, target_faces=160000, uniformity=0.0):
    """Marching cubes, repair, then resample to ``target_faces``."""
    mesh = repair(marching_cubes(defurred))
    if target_faces:
        mesh = resample_faces(mesh, target_faces, uniformity)
    return mesh
