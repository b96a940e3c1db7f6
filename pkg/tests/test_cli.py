import json
from pathlib import Path

import numpy as np
import pytest

from furgroom.annotation import builtin_annotations
from furgroom.cli import EXIT_INVALID, EXIT_OK, main
from furgroom.meshio import read_obj, read_ply, write_ply
from furgroom.metrics import prf_table
from furgroom.primitives import icosphere
from furgroom.sfur import read_sfur, write_sfur

FIXTURES = Path(__file__).parent / "fixtures"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    records = [json.loads(line) for line in err.splitlines() if line.startswith("{")]
    return code, out, records


@pytest.fixture(scope="module")
def sphere_inputs(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    write_ply(d / "sphere.ply", icosphere(4, radius=2.0))
    doc = builtin_annotations("panda").to_dict()
    doc["parts"]["body"]["thickness_cm"] = 0.5
    (d / "ann.json").write_text(json.dumps(doc))
    return d


def random_strands(seed, n=30, L=10):
    rng = np.random.default_rng(seed)
    roots = rng.uniform(-3, 3, size=(n, 1, 3))
    return np.concatenate([roots, roots + np.cumsum(rng.normal(size=(n, L - 1, 3)) * 0.3, 1)], 1)


def test_defur_sphere(capsys, sphere_inputs, tmp_path):
    d = sphere_inputs
    code, _, rec = run(capsys, "defur", "--mesh", d / "sphere.ply", "--ann", d / "ann.json",
                       "--resolution", 64, "--out", tmp_path / "bald.ply")
    assert code == EXIT_OK
    assert any("unlabeled" in r.get("note", "") for r in rec)
    cell = next(r["cell"] for r in rec if "cell" in r)
    radii = np.linalg.norm(read_ply(tmp_path / "bald.ply").vertices, axis=1)
    assert np.all(np.abs(radii - 1.5) < cell)


def test_defur_is_idempotent(capsys, sphere_inputs, tmp_path):
    d = sphere_inputs
    outs = []
    for k in range(2):
        out = tmp_path / f"b{k}.ply"
        assert run(capsys, "defur", "--mesh", d / "sphere.ply", "--ann", d / "ann.json",
                   "--resolution", 40, "--target-faces", 800, "--out", out)[0] == EXIT_OK
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


@pytest.mark.parametrize("name, field", [
    ("bad_negative_length", "parts.belly.length_cm"),
    ("bad_unknown_part", "parts.wings"),
])
def test_bad_annotation_exits_1_naming_field(capsys, sphere_inputs, tmp_path, name, field):
    code, _, rec = run(capsys, "defur", "--mesh", sphere_inputs / "sphere.ply",
                       "--ann", FIXTURES / f"{name}.json", "--resolution", 32,
                       "--out", tmp_path / "x.ply")
    assert code == EXIT_INVALID
    assert rec[-1]["stage"] == "error" and rec[-1]["field"] == field


def test_missing_inputs_exit_1(capsys, tmp_path):
    code, _, rec = run(capsys, "defur", "--mesh", tmp_path / "none.ply", "--ann", "panda",
                       "--out", tmp_path / "x.ply")
    assert code == EXIT_INVALID and rec[-1]["field"] == "--mesh"
    (tmp_path / "m.ply").write_bytes(b"garbage")
    code, _, rec = run(capsys, "tangent", "--mesh", tmp_path / "m.ply", "--out", tmp_path / "t")
    assert code == EXIT_INVALID and rec[-1]["field"] == "--mesh"
    write_ply(tmp_path / "s.ply", icosphere(1))
    code, _, rec = run(capsys, "defur", "--mesh", tmp_path / "s.ply", "--ann", "unicorn",
                       "--out", tmp_path / "x.ply")
    assert code == EXIT_INVALID and rec[-1]["field"] == "--ann"
    assert main(["defur"]) == EXIT_INVALID
    capsys.readouterr()


def test_metrics_supervised_rows(capsys, tmp_path):
    a, b = random_strands(1), random_strands(2)
    write_sfur(tmp_path / "a.sfur", a)
    write_sfur(tmp_path / "b.sfur", b)
    code, out, _ = run(capsys, "metrics", "--pred", tmp_path / "a.sfur", "--gt",
                       tmp_path / "b.sfur", "--thresholds", "2:20,3:30,4:40", "--points", 3000,
                       "--out", tmp_path / "m.csv")
    assert code == EXIT_OK
    lines = out.strip().splitlines()
    assert len(lines) == 3
    want = prf_table(a.astype(np.float32).astype(float), b.astype(np.float32).astype(float),
                     n_points=3000)
    for line, (d, ang, p, r, f) in zip(lines, want):
        assert line == f"{d:g} cm / {ang:g} deg: P={p:.2f} R={r:.2f} F={f:.2f}"
    rows = (tmp_path / "m.csv").read_text().splitlines()
    assert rows[0] == "dist_cm,angle_deg,precision,recall,f_score" and len(rows) == 4


def test_metrics_bad_thresholds(capsys, tmp_path):
    write_sfur(tmp_path / "a.sfur", random_strands(1))
    code, _, rec = run(capsys, "metrics", "--pred", tmp_path / "a.sfur", "--gt",
                       tmp_path / "a.sfur", "--thresholds", "2-20")
    assert code == EXIT_INVALID and rec[-1]["field"] == "--thresholds"


def test_metrics_unsupervised(capsys, tmp_path):
    write_sfur(tmp_path / "a.sfur", random_strands(3))
    write_ply(tmp_path / "o.ply", icosphere(2, radius=3.0))
    code, out, _ = run(capsys, "metrics", "--pred", tmp_path / "a.sfur", "--outer",
                       tmp_path / "o.ply", "--k", 5)
    assert code == EXIT_OK and "tip_cd" in out


def test_export_round_trip_is_float32_exact(capsys, tmp_path):
    s = random_strands(4) * 37.0
    labels = np.arange(30) % 7
    write_sfur(tmp_path / "a.sfur", s, labels)
    assert run(capsys, "export", "--in", tmp_path / "a.sfur", "--out", tmp_path / "a.obj")[0] == 0
    assert run(capsys, "export", "--in", tmp_path / "a.obj", "--out", tmp_path / "b.sfur")[0] == 0
    back, _ = read_sfur(tmp_path / "b.sfur")
    assert np.array_equal(back, s.astype(np.float32))
    assert len(read_obj(tmp_path / "a.obj")[1]) == 30
    code, _, rec = run(capsys, "export", "--in", tmp_path / "a.sfur", "--out", tmp_path / "a.txt")
    assert code == EXIT_INVALID and rec[-1]["field"] == "--out"


def test_tangent_command(capsys, tmp_path):
    write_ply(tmp_path / "s.ply", icosphere(2))
    code, _, rec = run(capsys, "tangent", "--mesh", tmp_path / "s.ply", "--out", tmp_path / "t.npz",
                       "--ply-out", tmp_path / "t.ply")
    assert code == EXIT_OK
    with np.load(tmp_path / "t.npz") as d:
        assert d["tangents"].shape == (320, 3)
    assert rec[-1]["flagged"] <= 8


def test_optimize_then_generate(capsys, tmp_path):
    write_ply(tmp_path / "bald.ply", icosphere(2, radius=2.0))
    write_ply(tmp_path / "outer.ply", icosphere(3, radius=3.0))
    (tmp_path / "cfg.json").write_text(json.dumps({"batch_size": 40, "iterations": 3}))
    common = ["--mesh", tmp_path / "bald.ply", "--ann", "panda", "--resolution", 32]
    code, _, rec = run(capsys, "--seed", 3, "optimize", *common, "--outer", tmp_path / "outer.ply",
                       "--config", tmp_path / "cfg.json", "--chamfer-samples", 300,
                       "--loss-csv", tmp_path / "loss.csv", "--out", tmp_path / "field.npz")
    assert code == EXIT_OK
    assert len((tmp_path / "loss.csv").read_text().splitlines()) == 5
    assert all(r["stage"] == "optimize" for r in rec if "stage" in r and r["stage"] != "labels")
    outs = []
    for k in range(2):
        out = tmp_path / f"s{k}.sfur"
        code, _, _ = run(capsys, "--seed", 3, "generate", *common, "--field",
                         tmp_path / "field.npz", "--n", 200, "--out", out)
        assert code == EXIT_OK
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    strands, labels = read_sfur(tmp_path / "s0.sfur")
    assert strands.shape == (200, 100, 3) and labels is not None
    lengths = np.linalg.norm(np.diff(strands.astype(float), axis=1), axis=2).sum(axis=1)
    assert np.allclose(lengths, builtin_annotations("panda").parts["body"].length_cm, rtol=1e-4)


def test_optimize_bad_config(capsys, tmp_path):
    write_ply(tmp_path / "bald.ply", icosphere(1, radius=2.0))
    (tmp_path / "cfg.json").write_text(json.dumps({"iteratons": 3}))
    code, _, rec = run(capsys, "optimize", "--mesh", tmp_path / "bald.ply", "--ann", "panda",
                       "--outer", tmp_path / "bald.ply", "--config", tmp_path / "cfg.json",
                       "--out", tmp_path / "f.npz")
    assert code == EXIT_INVALID and rec[-1]["field"] == "--config"
    assert "iteratons" in rec[-1]["message"]


def test_fit_lbs_command(capsys, tmp_path):
    from furgroom.template import load_quadruped
    from furgroom.mesh import TriMesh
    model = load_quadruped()
    write_ply(tmp_path / "t.ply", TriMesh(model.template, model.faces))
    code, _, rec = run(capsys, "fit-lbs", "--mesh", tmp_path / "t.ply", "--stages", "1,2",
                       "--iterations", 5, 5, 0, "--samples", 500, "--out", tmp_path / "p.json",
                       "--labeled-out", tmp_path / "l.ply")
    assert code == EXIT_OK
    params = json.loads((tmp_path / "p.json").read_text())
    assert "beta" in params and "theta" in params
    assert read_ply(tmp_path / "l.ply").labels is not None
    code, _, rec = run(capsys, "fit-lbs", "--mesh", tmp_path / "t.ply", "--stages", "4",
                       "--out", tmp_path / "p.json")
    assert code == EXIT_INVALID and rec[-1]["field"] == "--stages"
