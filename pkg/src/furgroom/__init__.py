"""Strand-based fur reconstruction from a fur-inclusive surface and part annotations.

Submodules are imported on first attribute access so the command-line
entry point can configure threading before numpy loads.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "TriMesh": "mesh", "SdfGrid": "mesh", "build_sdf": "mesh", "marching_cubes": "mesh",
    "sample_surface": "mesh", "knn": "mesh",
    "read_ply": "meshio", "write_ply": "meshio", "read_obj": "meshio", "write_obj": "meshio",
    "decimate": "decimate", "repair": "decimate",
    "parse_annotations": "annotation", "load_annotations": "annotation",
    "builtin_annotations": "annotation", "transfer_labels": "annotation",
    "vertex_annotation": "annotation", "AnnotationError": "annotation",
    "LbsModel": "lbs", "FitParams": "lbs", "lbs_forward": "lbs", "fit": "lbs",
    "fit_energy": "lbs", "load_quadruped": "template",
    "shrinkage_field": "defur", "defur_sdf": "defur", "extract_bald_mesh": "defur",
    "face_direction_field": "tangent", "resolve_signs": "tangent", "tbn_at": "tangent",
    "StrandField": "strands", "decode": "strands", "normalize_and_scale": "strands",
    "to_world": "strands", "gaussian_segments": "strands",
    "read_sfur": "sfur", "write_sfur": "sfur",
    "LossWeights": "losses", "chamfer_one_way": "losses", "penetration_loss": "losses",
    "direction_consistency_loss": "losses", "curvature_consistency_loss": "losses",
    "total_geometric_loss": "losses",
    "Camera": "render", "gabor_orientation_map": "render", "splat_render": "render",
    "render_strands": "render", "silhouette_loss": "render", "orientation_loss": "render",
    "precision_recall_f": "metrics", "length_stats": "metrics", "curvature_stats": "metrics",
    "direction_stats": "metrics", "tip_chamfer": "metrics",
    "Scene": "optimizer", "OptimizeConfig": "optimizer", "optimize": "optimizer",
    "generate": "optimizer", "toy_scene": "pipeline", "run_demo": "pipeline",
}

__all__ = sorted(_EXPORTS)


def __getattr__(name):
    if name in _EXPORTS:
        return getattr(importlib.import_module(f".{_EXPORTS[name]}", __name__), name)
    raise AttributeError(f"module 'furgroom' has no attribute {name!r}")


def __dir__():
    return __all__ + ["__version__"]
