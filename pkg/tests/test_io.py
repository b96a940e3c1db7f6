import struct

import numpy as np
import pytest

from furgroom.mesh import MeshError, TriMesh
from furgroom.meshio import read_obj, read_ply, write_obj, write_ply
from furgroom.primitives import icosphere
from furgroom.sfur import SfurError, decode_sfur, encode_sfur, read_sfur, write_sfur


# ---------------------------------------------------------------- SFUR1

def test_sfur_layout_matches_hand_packed_bytes():
    s = np.arange(2 * 3 * 3, dtype=np.float32).reshape(2, 3, 3) * 0.5
    expected = b"SFUR" + struct.pack("<III", 1, 2, 3) + struct.pack("<18f", *s.reshape(-1))
    assert encode_sfur(s) == expected
    labelled = b"SFUR" + struct.pack("<III", 1, 2, 3 | 1 << 31) + struct.pack("<18f", *s.reshape(-1))
    assert encode_sfur(s, [4, 200]) == labelled + bytes([4, 200])


@pytest.mark.parametrize("with_labels", [False, True])
def test_sfur_round_trip_byte_stable(tmp_path, rng, with_labels):
    s = rng.normal(size=(40, 100, 3)) * 30
    labels = rng.integers(0, 11, 40) if with_labels else None
    write_sfur(tmp_path / "a.sfur", s, labels)
    a = (tmp_path / "a.sfur").read_bytes()
    s2, l2 = read_sfur(tmp_path / "a.sfur")
    assert s2.dtype == np.float32 and np.array_equal(s2, s.astype(np.float32))
    if with_labels:
        assert np.array_equal(l2, labels)
    else:
        assert l2 is None
    write_sfur(tmp_path / "b.sfur", s2, l2)
    assert (tmp_path / "b.sfur").read_bytes() == a


def test_sfur_empty_set():
    s, labels = decode_sfur(encode_sfur(np.zeros((0, 100, 3))))
    assert s.shape == (0, 100, 3) and labels is None


@pytest.mark.parametrize("data, message", [
    (b"SFU", "truncated"),
    (b"XFUR" + struct.pack("<III", 1, 0, 3), "magic"),
    (b"SFUR" + struct.pack("<III", 2, 0, 3), "version"),
    (b"SFUR" + struct.pack("<III", 1, 1, 3) + b"\0" * 35, "size"),
    (b"SFUR" + struct.pack("<III", 1, 1, 3 | 1 << 31) + b"\0" * 36, "size"),
])
def test_sfur_header_errors(data, message):
    with pytest.raises(SfurError, match=message):
        decode_sfur(data)


def test_sfur_encode_errors():
    with pytest.raises(SfurError):
        encode_sfur(np.zeros((2, 3)))
    with pytest.raises(SfurError):
        encode_sfur(np.zeros((2, 3, 3)), labels=[0, 256])
    with pytest.raises(SfurError):
        encode_sfur(np.zeros((2, 3, 3)), labels=[0])


# ---------------------------------------------------------------- PLY

def test_ply_round_trip_byte_stable(tmp_path, rng):
    m = icosphere(2)
    m = TriMesh(m.vertices * 3.3, m.faces, rng.integers(0, 11, m.n_vertices),
                rng.normal(size=m.n_vertices))
    write_ply(tmp_path / "a.ply", m)
    back = read_ply(tmp_path / "a.ply")
    assert np.array_equal(back.faces, m.faces)
    assert np.array_equal(back.vertices, m.vertices.astype(np.float32))
    assert np.array_equal(back.labels, m.labels)
    assert np.array_equal(back.scalars, m.scalars.astype(np.float32))
    write_ply(tmp_path / "b.ply", back)
    assert (tmp_path / "b.ply").read_bytes() == (tmp_path / "a.ply").read_bytes()


def test_ply_extra_properties(tmp_path, rng):
    m = icosphere(1)
    col = rng.normal(size=m.n_vertices)
    write_ply(tmp_path / "a.ply", m, extra_vertex={"thickness": col})
    back, extra = read_ply(tmp_path / "a.ply", return_extra=True)
    assert np.array_equal(extra["thickness"], col.astype(np.float32))
    assert back.labels is None and back.scalars is None


def test_ply_rejects_ascii_and_garbage(tmp_path):
    (tmp_path / "a.ply").write_bytes(b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(MeshError, match="binary_little_endian"):
        read_ply(tmp_path / "a.ply")
    (tmp_path / "b.ply").write_bytes(b"not a mesh")
    with pytest.raises(MeshError):
        read_ply(tmp_path / "b.ply")


def test_ply_rejects_labels_outside_uint8(tmp_path):
    m = icosphere(0)
    bad = TriMesh(m.vertices, m.faces, np.full(m.n_vertices, 300))
    with pytest.raises(MeshError):
        write_ply(tmp_path / "a.ply", bad)


# ---------------------------------------------------------------- OBJ

def test_obj_polyline_round_trip_is_float32_exact(tmp_path, rng):
    s = (rng.normal(size=(5, 100, 3)) * 40).astype(np.float32)
    write_obj(tmp_path / "a.obj", polylines=s)
    mesh, polys = read_obj(tmp_path / "a.obj")
    assert mesh is None and len(polys) == 5
    assert np.array_equal(np.asarray(polys, dtype=np.float32), s)


def test_obj_mesh_and_polylines(tmp_path, rng):
    m = icosphere(1)
    s = rng.normal(size=(2, 4, 3))
    write_obj(tmp_path / "a.obj", mesh=m, polylines=s)
    mesh, polys = read_obj(tmp_path / "a.obj")
    assert np.array_equal(mesh.faces, m.faces)
    assert np.allclose(mesh.vertices, m.vertices, atol=1e-8)
    assert np.allclose(polys, s.astype(np.float32), atol=0)


def test_obj_quads_and_negative_indices(tmp_path):
    (tmp_path / "q.obj").write_text(
        "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf -4 -3 -2 -1\nl 1 3\n")
    mesh, polys = read_obj(tmp_path / "q.obj")
    assert mesh.faces.tolist() == [[0, 1, 2], [0, 2, 3]]
    assert np.array_equal(polys[0], [[0, 0, 0], [1, 1, 0]])
