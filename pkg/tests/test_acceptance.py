"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the report lines; the
slow criteria (end-to-end demo and the 2,000-iteration toy optimization) are
marked ``slow``.
"""

import time
from pathlib import Path

import numpy as np
import pytest

import gradcheck
import oracles
from furgroom.annotation import AnnotationError, builtin_annotations, load_annotations
from furgroom.defur import defur_sdf, extract_bald_mesh
from furgroom.lbs import FitConfig, FitParams, fit, lbs_forward, rodrigues, rotation_angle
from furgroom.mesh import TriMesh, build_sdf, sample_surface
from furgroom.meshio import read_ply, write_ply
from furgroom.metrics import (THRESHOLDS, precision_recall_f, prf_table, resample_points,
                              tip_chamfer_terms, unsupervised_metrics)
from furgroom.optimizer import OptimizeConfig, optimize
from furgroom.pipeline import run_demo, toy_scene
from furgroom.primitives import cylinder, icosphere, plane_grid
from furgroom.sfur import decode_sfur, encode_sfur, read_sfur, write_sfur
from furgroom.strands import StrandField, polyline_length
from furgroom.tangent import edge_agreement, face_direction_field, face_frames, resolve_signs
from furgroom.template import load_quadruped

FIXTURES = Path(__file__).parent / "fixtures"


def report(number, title, ok, elapsed, budget, detail):
    ok = bool(ok) and elapsed < budget
    print(f"\n[{'PASS' if ok else 'FAIL'}] C{number} {title}: {detail} "
          f"({elapsed:.1f} s, budget {budget:.0f} s)")
    assert ok, detail


# ---------------------------------------------------------------- C1

def test_c1_gradient_suite():
    t0 = time.perf_counter()
    parts, ok = [], True
    for name, (_, tol) in sorted(gradcheck.CASES.items()):
        worst, excluded, total = gradcheck.run_suite(name, n_configs=20)
        ok &= worst < tol
        parts.append(f"{name} {worst:.1e}<{tol:.0e} ({excluded}/{total} kink)")
    report(1, "gradient suite", ok, time.perf_counter() - t0, 120, "; ".join(parts))


# ---------------------------------------------------------------- C2

def test_c2_defur_sphere():
    t0 = time.perf_counter()
    grid = build_sdf(icosphere(5, radius=2.0), 128)
    bald = extract_bald_mesh(defur_sdf(grid, 0.5), target_faces=0)
    err = float(np.max(np.abs(np.linalg.norm(bald.vertices, axis=1) - 1.5)))
    ok = err < grid.cell_diagonal
    # a pointwise larger offset gives a surface inside the smaller one: the
    # offsets from the set themselves, and a non-uniform field on top of each
    bump = 0.05 + 0.2 * (1 + np.sin(2 * grid.node_positions()[:, 0])).reshape(grid.values.shape)
    pairs = [(0.2, 0.5), (0.5, 0.8), (0.2, 0.8)] + [(v, v + bump) for v in (0.2, 0.5, 0.8)]
    worst = -np.inf
    for small, large in pairs:
        inner = extract_bald_mesh(defur_sdf(grid, large), target_faces=0)
        pts = sample_surface(inner, 5000, 0).positions
        worst = max(worst, float(np.max(defur_sdf(grid, small).sample(pts))))
    ok &= worst <= 0
    report(2, "de-fur sphere", ok, time.perf_counter() - t0, 30,
           f"max |r-1.5| {err:.4f} < diag {grid.cell_diagonal:.4f}; "
           f"containment over {len(pairs)} pairs, max sdf {worst:.2e} <= 0")


# ---------------------------------------------------------------- C3

def random_strands(rng, n=50, L=8):
    roots = rng.uniform(-5, 5, size=(n, 1, 3))
    steps = rng.normal(size=(n, L - 1, 3)) * 0.4 + [0, 0, 0.5]
    return np.concatenate([roots, roots + np.cumsum(steps, axis=1)], axis=1)


def test_c3_metric_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    k = 10
    worst = 0.0
    outer = icosphere(2, radius=6.0)
    for _ in range(3):
        s = random_strands(rng)
        got = unsupervised_metrics(s, k=k)
        want = {"sigma_loc_L": oracles.sigma_loc(s, k),
                "var_glob_kappa": oracles.var_glob_kappa(s),
                "var_loc_kappa": oracles.var_loc_kappa(s, k),
                "kappa_max": oracles.kappa_max(s),
                "var_loc_dir": oracles.var_loc_dir(s, k),
                "var_loc_first_dir": oracles.var_loc_first_dir(s, k)}
        worst = max(worst, max(abs(got[key] - v) for key, v in want.items()))
        tips = tip_chamfer_terms(s, outer, n_samples=500, seed=1)
        ref = oracles.tip_chamfer(s, outer, sample_surface(outer, 500, 1).positions)
        worst = max(worst, float(np.max(np.abs(np.subtract(tips, ref)))))
        g = random_strands(rng)
        pa, da = oracles.resample(s, 1500)
        pb, db = oracles.resample(g, 1500)
        ra, rb = resample_points(s, 1500), resample_points(g, 1500)
        for d, a in THRESHOLDS:
            prf = np.subtract(precision_recall_f(ra, rb, d, a), oracles.prf(pa, da, pb, db, d, a))
            worst = max(worst, float(np.max(np.abs(prf))))
    ident = [row[2:] for row in prf_table(s, s, n_points=20000)]
    ok = worst < 1e-9 and all(r == (100.0, 100.0, 100.0) for r in ident)
    report(3, "metric oracles", ok, time.perf_counter() - t0, 60,
           f"max |lib-oracle| {worst:.1e} < 1e-9; identity P/R/F {ident}")


# ---------------------------------------------------------------- C4

@pytest.mark.slow
def test_c4_demo_length_fidelity(tmp_path):
    t0 = time.perf_counter()
    out = run_demo(tmp_path)
    gen, scene = out["strands"], out["scene"]
    length, _, _ = builtin_annotations("panda").table()
    want = length[gen.labels]
    relerr = float(np.max(np.abs(polyline_length(gen.strands) - want) / want))
    zero_part = int(np.sum(~(want > 0)))
    cell = scene.sdf.cell_diagonal
    sdf = scene.sdf.sample(gen.strands.reshape(-1, 3))
    below = int(np.sum(sdf < -cell))
    ok = relerr < 1e-6 and zero_part == 0 and below == 0
    report(4, "demo length fidelity", ok, time.perf_counter() - t0, 600,
           f"{len(gen.strands)} strands, length relerr {relerr:.1e} < 1e-6, "
           f"{zero_part} on zero-length parts, {below} points below -1 cell "
           f"(min sdf {sdf.min():.3f}, cell {cell:.3f})")


# ---------------------------------------------------------------- C5

@pytest.mark.slow
def test_c5_toy_optimization():
    scene = toy_scene(subdivisions=2, resolution=32, n_chamfer=500)
    cfg = OptimizeConfig.from_dict({"iterations": 2000, "batch_size": 500, "seed": 0,
                                    "terms": {"sil": False, "dir": False}})
    runs, times = [], []
    for _ in range(2):
        t0 = time.perf_counter()
        f = StrandField.init(seed=0, scale=3.0, out_scale=1.0, straight=0.0)
        _, hist = optimize(f, scene, cfg)
        times.append(time.perf_counter() - t0)
        runs.append((hist, [w.copy() for w in f.weights + f.biases]))
    (h1, w1), (h2, w2) = runs
    same = h1 == h2 and all(np.array_equal(a, b) for a, b in zip(w1, w2))
    total = h1[-1]["total"] / h1[0]["total"]
    gpt = h1[-1]["dir_gpt"] / h1[0]["dir_gpt"]
    ok = total <= 0.5 and gpt <= 0.1 and same
    report(5, "toy optimization", ok, max(times), 900,
           f"total ratio {total:.4f} <= 0.5, dir_gpt ratio {gpt:.2e} <= 0.1, "
           f"bitwise reproducible {same}")


# ---------------------------------------------------------------- C6

def test_c6_lbs_recovery():
    t0 = time.perf_counter()
    model = load_quadruped()
    root = model.order[0]
    p = FitParams.zeros(model)
    p.gamma[:] = [2.0, -1.0, 0.5]
    p.theta[root] = [0.0, 0.2, 0.0]
    cfg = FitConfig(n_samples=4000, iterations=(300, 0, 0))
    got = fit(model, lbs_forward(model, p), stages=(1,), config=cfg)
    dg = float(np.linalg.norm(got.gamma - p.gamma))
    rel = rodrigues(got.theta[root]) @ rodrigues(p.theta[root]).T
    dth = float(np.degrees(rotation_angle(rel)))

    q = FitParams.zeros(model)
    q.beta[0] = 1.0
    cfg = FitConfig(n_samples=4000, iterations=(50, 300, 0))
    fitted = fit(model, lbs_forward(model, q), stages=(1, 2), config=cfg)
    db = float(abs(fitted.beta[0] - 1.0))
    ok = dg < 0.1 and dth < 1.0 and db < 0.05
    report(6, "LBS recovery", ok, time.perf_counter() - t0, 120,
           f"translation {dg:.2e} cm < 0.1, rotation {dth:.3f} deg < 1, beta {db:.2e} < 0.05")


# ---------------------------------------------------------------- C7

def test_c7_tangent_field():
    t0 = time.perf_counter()
    ok, parts = True, []
    rng = np.random.default_rng(7)
    for name, mesh in (("plane", plane_grid(6, 6)), ("cylinder", cylinder(capped=False)),
                       ("icosphere", icosphere(3))):
        smooth = face_direction_field(mesh)
        field = resolve_signs(mesh, smooth)
        dots, _ = edge_agreement(mesh, field.tangents)
        pairs = face_frames(mesh).pairs
        interior = ~(field.flagged[pairs[:, 0]] | field.flagged[pairs[:, 1]])
        conflicts = int(np.sum(dots[interior] < 0))
        flagged = int(field.flagged.sum())
        rand = face_direction_field(mesh, smoothing_iters=60,
                                    initial=rng.normal(size=(mesh.n_faces, 3)))
        monotone = all(np.all(np.diff(h) <= 0) for h in
                       (smooth.energy_history, rand.energy_history))
        ok &= conflicts == 0 and flagged <= (8 if name == "icosphere" else 0) and monotone
        parts.append(f"{name} conflicts {conflicts} flagged {flagged} monotone {monotone}")
    report(7, "tangent field", ok, time.perf_counter() - t0, 30, "; ".join(parts))


# ---------------------------------------------------------------- C8

def test_c8_format_round_trips(tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    strands = rng.normal(size=(40, 100, 3)) * 5
    labels = rng.integers(0, 16, 40)
    write_sfur(tmp_path / "a.sfur", strands, labels)
    first = (tmp_path / "a.sfur").read_bytes()
    back, back_labels = read_sfur(tmp_path / "a.sfur")
    sfur_ok = encode_sfur(back, back_labels) == first and \
        np.array_equal(decode_sfur(first)[0], strands.astype(np.float32))

    mesh = icosphere(2)
    mesh = TriMesh(mesh.vertices, mesh.faces, labels=np.arange(mesh.n_vertices) % 16)
    write_ply(tmp_path / "a.ply", mesh)
    write_ply(tmp_path / "b.ply", read_ply(tmp_path / "a.ply"))
    ply_ok = (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()

    fields = {}
    for path in sorted(FIXTURES.glob("bad_*.json")):
        try:
            load_annotations(path)
            fields[path.stem] = None
        except AnnotationError as exc:
            fields[path.stem] = exc.field if exc.field in str(exc) else None
    rejected = sum(v is not None for v in fields.values())
    ok = sfur_ok and ply_ok and len(fields) == 5 and rejected == 5
    report(8, "format round trips", ok, time.perf_counter() - t0, 30,
           f"SFUR byte-stable {sfur_ok}, PLY byte-stable {ply_ok}, "
           f"{rejected}/5 fixtures rejected naming {sorted(v for v in fields.values() if v)}")
