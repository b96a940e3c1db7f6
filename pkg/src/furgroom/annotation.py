"""Per-part fur annotations: schema validation, label transfer, vertex smoothing.

Annotation files are JSON objects::

    {"scale_cm_per_unit": 1.0,
     "has_mane": false,
     "parts": {"belly": {"length_cm": 7.5, "thickness_cm": 4.5,
                         "direction": [0, -1, 0]}, ...}}

Directions live in the animal frame (x right-to-left, y against gravity,
z back-to-front) and are normalized on load.
"""

import enum
import json
from importlib import resources
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .mesh import MeshError, knn

PARTS = (
    "leg_front", "leg_rear", "paw_pads", "paws", "front_paws", "belly", "neck",
    "face", "ears", "inner_earcanal", "under_tail", "eyes", "tail", "nosetip",
    "body", "mane",
)
REQUIRED_PARTS = PARTS[:-1]

PartLabel = enum.IntEnum("PartLabel", [(p.upper(), i) for i, p in enumerate(PARTS)])

_TOP_KEYS = {"parts", "scale_cm_per_unit", "has_mane"}
_PART_KEYS = {"length_cm", "thickness_cm", "direction"}


class AnnotationError(ValueError):
    """Schema violation; ``field`` is the dotted path of the offending entry."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class PartAnnotation:
    length_cm: float
    thickness_cm: float
    direction: tuple


@dataclass(frozen=True)
class AnnotationSet:
    parts: dict
    scale_cm_per_unit: float = 1.0
    has_mane: bool = False

    def table(self):
        """Per-label arrays ``(length, thickness, direction)`` indexed by PartLabel.

        Undeclared parts (mane without ``has_mane``) get NaN.
        """
        n = len(PARTS)
        length = np.full(n, np.nan)
        thick = np.full(n, np.nan)
        direc = np.full((n, 3), np.nan)
        for name, p in self.parts.items():
            i = PARTS.index(name)
            length[i], thick[i], direc[i] = p.length_cm, p.thickness_cm, p.direction
        return length, thick, direc

    def to_dict(self):
        out = {"scale_cm_per_unit": self.scale_cm_per_unit, "has_mane": self.has_mane,
               "parts": {}}
        for name in PARTS:
            if name in self.parts:
                p = self.parts[name]
                out["parts"][name] = {"length_cm": p.length_cm, "thickness_cm": p.thickness_cm,
                                      "direction": list(p.direction)}
        return out


def _number(value, field, minimum=None, strict=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise AnnotationError(field, f"expected a number, got {type(value).__name__}")
    value = float(value)
    if not np.isfinite(value):
        raise AnnotationError(field, "must be finite")
    if minimum is not None and (value <= minimum if strict else value < minimum):
        op = ">" if strict else ">="
        raise AnnotationError(field, f"must be {op} {minimum} (got {value})")
    return value


def parse_annotations(doc):
    """Validate an already-decoded annotation document."""
    if not isinstance(doc, dict):
        raise AnnotationError("<root>", "expected a JSON object")
    for key in doc:
        if key not in _TOP_KEYS:
            raise AnnotationError(key, "unknown key")
    if "scale_cm_per_unit" not in doc:
        raise AnnotationError("scale_cm_per_unit", "missing")
    scale = _number(doc["scale_cm_per_unit"], "scale_cm_per_unit", 0.0, strict=True)
    has_mane = doc.get("has_mane", False)
    if not isinstance(has_mane, bool):
        raise AnnotationError("has_mane", "expected true or false")
    parts_doc = doc.get("parts")
    if not isinstance(parts_doc, dict):
        raise AnnotationError("parts", "missing or not an object")
    for name in parts_doc:
        if name not in PARTS:
            raise AnnotationError(f"parts.{name}", "unknown part")
    if "mane" in parts_doc and not has_mane:
        raise AnnotationError("parts.mane", "present but has_mane is not true")
    required = REQUIRED_PARTS + (("mane",) if has_mane else ())
    parts = {}
    for name in required:
        field = f"parts.{name}"
        if name not in parts_doc:
            raise AnnotationError(field, "missing required part")
        entry = parts_doc[name]
        if not isinstance(entry, dict):
            raise AnnotationError(field, "expected an object")
        for key in entry:
            if key not in _PART_KEYS:
                raise AnnotationError(f"{field}.{key}", "unknown key")
        for key in _PART_KEYS:
            if key not in entry:
                raise AnnotationError(f"{field}.{key}", "missing")
        length = _number(entry["length_cm"], f"{field}.length_cm", 0.0)
        thick = _number(entry["thickness_cm"], f"{field}.thickness_cm", 0.0)
        d = entry["direction"]
        if not isinstance(d, list) or len(d) != 3:
            raise AnnotationError(f"{field}.direction", "expected [x, y, z]")
        d = np.array([_number(c, f"{field}.direction") for c in d])
        norm = np.linalg.norm(d)
        if not norm > 1e-12:
            raise AnnotationError(f"{field}.direction", "zero vector cannot be normalized")
        parts[name] = PartAnnotation(length, thick, tuple((d / norm).tolist()))
    return AnnotationSet(parts, scale, has_mane)


def load_annotations(path):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise AnnotationError("<root>", f"invalid JSON ({exc})") from exc
    return parse_annotations(doc)


BUILTIN_ANIMALS = ("cat", "beagle_dog", "fox", "panda", "white_tiger")


def builtin_annotations(name):
    """Packaged part table for one of :data:`BUILTIN_ANIMALS`."""
    if name not in BUILTIN_ANIMALS:
        raise AnnotationError("<root>", f"no builtin annotation named {name!r}")
    text = (resources.files("furgroom") / "data" / "annotations" / f"{name}.json").read_text()
    return parse_annotations(json.loads(text))


def save_annotations(path, ann):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(ann.to_dict(), fh, indent=2)
        fh.write("\n")


def transfer_labels(labeled_mesh, target_mesh):
    """Give every target vertex the label of its nearest labeled vertex."""
    if labeled_mesh.n_vertices == 0:
        raise MeshError("source mesh has no vertices")
    if labeled_mesh.labels is None:
        raise MeshError("source mesh is not labeled")
    idx = knn(target_mesh.vertices, labeled_mesh.vertices, 1)[:, 0]
    out = target_mesh.copy()
    out.labels = labeled_mesh.labels[idx].copy()
    return out


@dataclass
class VertexAnnotation:
    """Per-vertex annotation arrays (``direction`` is ``(V, 3)``)."""

    labels: np.ndarray
    length_cm: np.ndarray
    thickness_cm: np.ndarray
    direction: np.ndarray

    def __len__(self):
        return len(self.labels)


def vertex_annotation(mesh, ann):
    """Raw per-vertex values looked up from the part table."""
    if mesh.labels is None:
        raise MeshError("mesh vertices are not labeled")
    labels = np.asarray(mesh.labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= len(PARTS)):
        raise MeshError("vertex label outside the part enumeration")
    length, thick, direc = ann.table()
    missing = np.unique(labels[np.isnan(length[labels])])
    if missing.size:
        names = ", ".join(PARTS[i] for i in missing)
        raise MeshError(f"labels not covered by the annotation: {names}")
    return VertexAnnotation(labels.copy(), length[labels], thick[labels], direc[labels])


def one_ring_mean_operator(mesh):
    """Row-stochastic sparse matrix averaging each vertex with its one-ring."""
    adj = mesh.vertex_adjacency()
    closed = (adj + sparse.identity(mesh.n_vertices, format="csr")).tocsr()
    closed.data[:] = 1.0
    deg = np.asarray(closed.sum(axis=1)).ravel()
    return sparse.diags(1.0 / deg) @ closed


def smooth_vertex_thickness(mesh, ann, rounds):
    """Raw vertex annotation with ``rounds`` of one-ring thickness averaging."""
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    va = vertex_annotation(mesh, ann)
    if rounds:
        op = one_ring_mean_operator(mesh)
        t = va.thickness_cm
        for _ in range(rounds):
            t = op @ t
        va.thickness_cm = t
    return va


def non_baldness_mask(vertex_ann):
    return np.asarray(vertex_ann.length_cm) > 0.0
