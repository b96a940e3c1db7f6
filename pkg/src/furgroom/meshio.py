"""Mesh and polyline file I/O: ASCII OBJ and binary little-endian PLY."""

import numpy as np

from .mesh import MeshError, TriMesh

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def write_ply(path, mesh, extra_vertex=None):
    """Write ``mesh`` as binary little-endian PLY.

    Positions are stored as float32; ``label`` (uint8) and ``scalar``
    (float32) vertex properties are written when present on the mesh.
    ``extra_vertex`` maps additional property names to float32 columns.
    """
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if mesh.labels is not None:
        fields.append(("label", "u1"))
    if mesh.scalars is not None:
        fields.append(("scalar", "<f4"))
    for name in (extra_vertex or {}):
        fields.append((name, "<f4"))
    vrec = np.empty(mesh.n_vertices, dtype=fields)
    vrec["x"], vrec["y"], vrec["z"] = mesh.vertices.T
    if mesh.labels is not None:
        if mesh.labels.min(initial=0) < 0 or mesh.labels.max(initial=0) > 255:
            raise MeshError("labels must fit in uint8")
        vrec["label"] = mesh.labels
    if mesh.scalars is not None:
        vrec["scalar"] = mesh.scalars
    for name, col in (extra_vertex or {}).items():
        vrec[name] = col
    frec = np.empty(mesh.n_faces, dtype=[("n", "u1"), ("i", "<i4", (3,))])
    frec["n"] = 3
    frec["i"] = mesh.faces
    ply_name = {"<f4": "float", "u1": "uchar"}
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {mesh.n_vertices}"]
    header += [f"property {ply_name[t]} {n}" for n, t in fields]
    header += [f"element face {mesh.n_faces}",
               "property list uchar int vertex_indices", "end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(vrec.tobytes())
        fh.write(frec.tobytes())


def read_ply(path, return_extra=False):
    """Read a binary little-endian PLY triangle mesh (or point cloud)."""
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MeshError(f"{path}: not a PLY file")
    body = data.index(b"\n", end) + 1
    lines = data[:end].decode("ascii").splitlines()
    elements = []
    fmt = None
    for line in lines[1:]:
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if tok[1] == "list":
                elements[-1][2].append((tok[4], ("list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]])))
            else:
                elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
    if fmt != "binary_little_endian":
        raise MeshError(f"{path}: only binary_little_endian PLY is supported (got {fmt})")
    offset = body
    vertex = faces = None
    for name, count, props in elements:
        if any(isinstance(t, tuple) for _, t in props):
            if len(props) != 1:
                raise MeshError(f"{path}: mixed list element {name!r} unsupported")
            _, (_, ct, it) = props[0]
            # fast path: every face is a triangle
            dt = np.dtype([("n", "<" + ct), ("i", "<" + it, (3,))])
            rec = np.frombuffer(data, dtype=dt, count=count, offset=offset)
            if count and np.any(rec["n"] != 3):
                raise MeshError(f"{path}: non-triangle faces")
            offset += dt.itemsize * count
            if name == "face":
                faces = rec["i"].astype(np.int64)
        else:
            dt = np.dtype([(n, "<" + t) for n, t in props])
            rec = np.frombuffer(data, dtype=dt, count=count, offset=offset)
            offset += dt.itemsize * count
            if name == "vertex":
                vertex = rec
    if vertex is None:
        raise MeshError(f"{path}: no vertex element")
    verts = np.stack([vertex["x"], vertex["y"], vertex["z"]], 1).astype(np.float64)
    names = vertex.dtype.names
    labels = vertex["label"].astype(np.int64) if "label" in names else None
    scalars = vertex["scalar"].astype(np.float64) if "scalar" in names else None
    mesh = TriMesh(verts, np.zeros((0, 3), np.int64) if faces is None else faces, labels, scalars)
    if return_extra:
        extra = {n: vertex[n].astype(np.float64) for n in names
                 if n not in ("x", "y", "z", "label", "scalar")}
        return mesh, extra
    return mesh


def write_obj(path, mesh=None, polylines=None):
    """Write OBJ ``v``/``f`` records for a mesh and/or ``l`` records for polylines.

    Coordinates use ``%.9g`` so float32 values survive a round trip exactly.
    """
    lines = []
    base = 0
    if mesh is not None:
        lines += ["v %.9g %.9g %.9g" % tuple(v) for v in mesh.vertices]
        lines += ["f %d %d %d" % tuple(f + 1) for f in mesh.faces]
        base = mesh.n_vertices
    if polylines is not None:
        polylines = np.asarray(polylines, dtype=np.float32)
        n, L = polylines.shape[:2]
        lines += ["v %.9g %.9g %.9g" % tuple(p) for p in polylines.reshape(-1, 3)]
        for i in range(n):
            idx = base + i * L + np.arange(1, L + 1)
            lines.append("l " + " ".join(map(str, idx)))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_obj(path):
    """Parse an OBJ file; returns ``(TriMesh or None, list of polyline arrays)``."""
    verts, faces, lines = [], [], []
    with open(path, encoding="ascii") as fh:
        for raw in fh:
            tok = raw.split()
            if not tok:
                continue
            if tok[0] == "v":
                verts.append([float(t) for t in tok[1:4]])
            elif tok[0] == "f":
                idx = [int(t.split("/")[0]) for t in tok[1:]]
                for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                    faces.append([idx[0], idx[k], idx[k + 1]])
            elif tok[0] == "l":
                lines.append([int(t) for t in tok[1:]])
    v = np.asarray(verts, dtype=np.float64).reshape(-1, 3)

    def fix(i):
        i = np.asarray(i, dtype=np.int64)
        return np.where(i < 0, len(v) + i, i - 1)

    mesh = None
    if faces:
        f = fix(faces)
        used = np.unique(f)
        remap = np.full(len(v), -1)
        remap[used] = np.arange(len(used))
        mesh = TriMesh(v[used], remap[f])
    polys = [v[fix(l)] for l in lines]
    return mesh, polys
