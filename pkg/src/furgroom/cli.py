"""Command-line entry point: ``furgroom <subcommand> ...``.

Progress is logged to stderr as one JSON object per line. Exit status is 0
on success, 1 for invalid input and 2 for runtime failures.
"""

import argparse
import json
import os
import sys

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class InputError(Exception):
    """Invalid user input; ``field`` names the offending flag or key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


def emit(stage, **record):
    out = {"stage": stage}
    for k, v in record.items():
        if hasattr(v, "item"):
            v = v.item()
        out[k] = v
    print(json.dumps(out, sort_keys=False), file=sys.stderr, flush=True)


def _need_file(path, flag):
    if path is None:
        raise InputError(flag, "required")
    if not os.path.isfile(path):
        raise InputError(flag, f"file not found: {path}")
    return path


def _load_mesh(path, flag="--mesh"):
    from .meshio import read_ply
    _need_file(path, flag)
    try:
        return read_ply(path)
    except (ValueError, OSError) as exc:
        raise InputError(flag, str(exc)) from exc


def _labeled(mesh, part):
    from .annotation import PARTS
    if mesh.labels is None:
        if part not in PARTS:
            raise InputError("--part", f"unknown part {part!r}")
        mesh = mesh.copy()
        mesh.labels = __import__("numpy").full(mesh.n_vertices, PARTS.index(part))
        emit("labels", note=f"unlabeled mesh; all vertices treated as {part}")
    return mesh


def _annotations(path):
    from .annotation import builtin_annotations, load_annotations
    if path is None:
        raise InputError("--ann", "required")
    if not os.path.isfile(path):
        from .annotation import BUILTIN_ANIMALS
        if path not in BUILTIN_ANIMALS:
            raise InputError("--ann", f"not a file or builtin animal ({', '.join(BUILTIN_ANIMALS)})")
        return builtin_annotations(path)
    return load_annotations(path)


def _seed(args, stage):
    from .pipeline import SEED_OFFSETS
    return args.seed + SEED_OFFSETS.get(stage, 0)


# ---------------------------------------------------------------- subcommands

def cmd_defur(args):
    from .annotation import smooth_vertex_thickness
    from .defur import defur_sdf, extract_bald_mesh, shrinkage_field
    from .mesh import build_sdf
    from .meshio import write_ply
    import numpy as np

    mesh = _labeled(_load_mesh(args.mesh), args.part)
    ann = _annotations(args.ann)
    va = smooth_vertex_thickness(mesh, ann, args.smooth_rounds)
    grid = build_sdf(mesh, args.resolution, padding=None)
    emit("defur", resolution=args.resolution, cell=grid.cell_diagonal)
    defurred = defur_sdf(grid, shrinkage_field(grid, mesh, va))
    bald = extract_bald_mesh(defurred, target_faces=args.target_faces)
    write_ply(args.out, bald)
    if args.sdf_out:
        np.savez(args.sdf_out, origin=defurred.origin, spacing=defurred.spacing,
                 values=defurred.values)
    emit("defur", vertices=bald.n_vertices, faces=bald.n_faces, out=args.out)


def cmd_fit_lbs(args):
    from .annotation import transfer_labels
    from .lbs import FitConfig, fit, lbs_forward
    from .meshio import write_ply
    from .template import load_quadruped

    target = _load_mesh(args.mesh)
    model = load_quadruped()
    try:
        stages = tuple(int(s) for s in args.stages.split(","))
    except ValueError as exc:
        raise InputError("--stages", "expected a comma-separated list of 1, 2, 3") from exc
    if not set(stages) <= {1, 2, 3}:
        raise InputError("--stages", "stages must be 1, 2 or 3")
    cfg = FitConfig(n_samples=args.samples, iterations=tuple(args.iterations),
                    seed=_seed(args, "fit"))
    params = fit(model, target, stages=stages, config=cfg)
    with open(args.out, "w") as fh:
        json.dump(params.to_dict(), fh)
    emit("fit-lbs", energy=float(cfg.history[-1][2]), out=args.out)
    if args.labeled_out:
        write_ply(args.labeled_out, transfer_labels(lbs_forward(model, params), target))


def cmd_tangent(args):
    from .tangent import face_direction_field, resolve_signs, write_field_ply
    import numpy as np

    mesh = _load_mesh(args.mesh)
    field = resolve_signs(mesh, face_direction_field(mesh, smoothing_iters=args.iterations))
    np.savez(args.out, tangents=field.tangents, flagged=field.flagged,
             energy=np.asarray(field.energy_history))
    if args.ply_out:
        write_field_ply(args.ply_out, mesh, field)
    emit("tangent", iterations=field.iterations, flagged=int(field.flagged.sum()),
         energy=field.energy_history[-1], out=args.out)


def _load_field(path, mesh):
    import numpy as np
    from .tangent import TangentField, face_direction_field, resolve_signs
    if path is None:
        return resolve_signs(mesh, face_direction_field(mesh))
    _need_file(path, "--tangent")
    with np.load(path) as d:
        if d["tangents"].shape != (mesh.n_faces, 3):
            raise InputError("--tangent", "tangent field does not match the mesh")
        return TangentField(d["tangents"], d["flagged"], list(d["energy"]), 0)


def _scene(args, need_outer):
    from .annotation import vertex_annotation
    from .mesh import build_sdf, sample_surface
    from .optimizer import Scene

    bald = _labeled(_load_mesh(args.mesh), args.part)
    ann = _annotations(args.ann)
    va = vertex_annotation(bald, ann)
    field = _load_field(args.tangent, bald)
    sdf = build_sdf(bald, args.resolution, padding=float(va.length_cm.max()) + 1.0)
    samples = None
    if need_outer:
        outer = _load_mesh(args.outer, "--outer")
        samples = sample_surface(outer, args.chamfer_samples, _seed(args, "chamfer")).positions
    return Scene(bald, sdf, va, field, samples)


def _views(args):
    import numpy as np
    from .optimizer import View
    from .render import gabor_orientation_map, load_cameras, read_image
    if not args.cameras:
        return []
    cams = load_cameras(_need_file(args.cameras, "--cameras"))
    if not args.images or not os.path.isdir(args.images):
        raise InputError("--images", "directory of view_<k>.png and mask_<k>.png required")
    views = []
    for k, cam in enumerate(cams):
        img = read_image(_need_file(os.path.join(args.images, f"view_{k}.png"), "--images"))
        mask = read_image(_need_file(os.path.join(args.images, f"mask_{k}.png"), "--images")) > 0.5
        if img.shape != (cam.height, cam.width):
            raise InputError("--images", f"view_{k}.png does not match camera {k} size")
        ori = gabor_orientation_map(img, mask=mask)
        views.append(View(cam, mask.astype(np.float64), ori, mask))
    return views


def cmd_optimize(args):
    from .optimizer import OptimizeConfig, optimize
    from .strands import StrandField

    if args.config:
        try:
            cfg = OptimizeConfig.load(_need_file(args.config, "--config"))
        except (ValueError, TypeError) as exc:
            raise InputError("--config", str(exc)) from exc
    else:
        cfg = OptimizeConfig()
    cfg.seed = _seed(args, "optimize")
    if args.iterations is not None:
        cfg.iterations = args.iterations
    scene = _scene(args, need_outer=True)
    scene.views = _views(args)
    if not scene.views:
        cfg.terms = {**cfg.terms, "sil": False, "dir": False}
    lo, hi = scene.bald.bbox()
    field = StrandField.init(seed=_seed(args, "field"), center=0.5 * (lo + hi),
                             scale=0.5 * float((hi - lo).max()))
    step = max(1, cfg.iterations // 20)
    optimize(field, scene, cfg, csv_path=args.loss_csv,
             on_iteration=lambda r: emit("optimize", **r) if r["iteration"] % step == 0 else None)
    field.save(args.out)
    emit("optimize", out=args.out)


def cmd_generate(args):
    from .optimizer import generate
    from .sfur import write_sfur
    from .strands import StrandField

    field = StrandField.load(_need_file(args.field, "--field"))
    scene = _scene(args, need_outer=False)
    gen = generate(field, scene, args.n, seed=_seed(args, "generate"))
    write_sfur(args.out, gen.strands, gen.labels)
    emit("generate", strands=len(gen.strands), out=args.out)


def _read_strands(path, flag):
    from .meshio import read_obj
    from .sfur import read_sfur
    import numpy as np
    _need_file(path, flag)
    if path.lower().endswith(".obj"):
        _, lines = read_obj(path)
        if not lines or len({len(p) for p in lines}) != 1:
            raise InputError(flag, "OBJ polylines must all have the same point count")
        return np.asarray(lines, dtype=np.float32), None
    try:
        return read_sfur(path)
    except ValueError as exc:
        raise InputError(flag, str(exc)) from exc


def _thresholds(text):
    out = []
    for item in text.split(","):
        try:
            d, a = item.split(":")
            out.append((float(d), float(a)))
        except ValueError as exc:
            raise InputError("--thresholds", f"bad entry {item!r}; expected dist:angle") from exc
    return out


def cmd_metrics(args):
    from .metrics import format_table, prf_table, unsupervised_metrics, write_metrics_csv
    import numpy as np

    pred, _ = _read_strands(args.pred, "--pred")
    pred = pred.astype(np.float64)
    rows = []
    if args.gt:
        gt, _ = _read_strands(args.gt, "--gt")
        for d, a, p, r, f in prf_table(pred, gt.astype(np.float64), _thresholds(args.thresholds),
                                       n_points=args.points):
            rows.append({"dist_cm": d, "angle_deg": a, "precision": p, "recall": r, "f_score": f})
            print(f"{d:g} cm / {a:g} deg: P={p:.2f} R={r:.2f} F={f:.2f}")
    else:
        outer = _load_mesh(args.outer, "--outer") if args.outer else None
        m = unsupervised_metrics(pred, outer, k=args.k, seed=_seed(args, "metrics"))
        rows.append(m)
        print(format_table(m))
    if args.out:
        write_metrics_csv(args.out, rows)


def cmd_export(args):
    from .meshio import write_obj
    from .sfur import write_sfur
    import numpy as np

    strands, labels = _read_strands(args.input, "--in")
    if args.out.lower().endswith(".obj"):
        write_obj(args.out, polylines=list(strands))
    elif args.out.lower().endswith(".sfur"):
        write_sfur(args.out, np.asarray(strands, dtype=np.float32), labels)
    else:
        raise InputError("--out", "extension must be .obj or .sfur")
    emit("export", strands=len(strands), out=args.out)


def cmd_demo(args):
    from .pipeline import DemoConfig, demo_optimize_config, run_demo

    cfg = DemoConfig(animal=args.animal, seed=args.seed, resolution=args.resolution,
                     n_strands=args.strands,
                     optimize=demo_optimize_config(args.iterations, args.batch))
    run_demo(args.out, cfg, log=emit)
    emit("demo", out=args.out)


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="furgroom", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0, help="single seed for every stage")
    p.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP threads")
    sub = p.add_subparsers(dest="command", required=True)

    def scene_flags(s):
        s.add_argument("--mesh", required=True, help="bald mesh (PLY, vertex labels)")
        s.add_argument("--ann", required=True, help="annotation JSON or builtin animal name")
        s.add_argument("--part", default="body", help="label for unlabeled meshes")
        s.add_argument("--tangent", help="tangent field .npz from the tangent subcommand")
        s.add_argument("--resolution", type=int, default=128, help="SDF grid resolution")

    s = sub.add_parser("defur", help="shrink a surface by its annotated fur thickness")
    s.add_argument("--mesh", required=True)
    s.add_argument("--ann", required=True)
    s.add_argument("--part", default="body")
    s.add_argument("--resolution", type=int, default=256)
    s.add_argument("--target-faces", type=int, default=0, help="0 keeps the marching-cubes mesh")
    s.add_argument("--smooth-rounds", type=int, default=0)
    s.add_argument("--sdf-out")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_defur)

    s = sub.add_parser("fit-lbs", help="fit the quadruped template to a mesh")
    s.add_argument("--mesh", required=True)
    s.add_argument("--stages", default="1,2,3")
    s.add_argument("--iterations", type=int, nargs=3, default=(300, 300, 200))
    s.add_argument("--samples", type=int, default=20000)
    s.add_argument("--labeled-out", help="target mesh with transferred part labels")
    s.add_argument("--out", required=True, help="fitted parameters JSON")
    s.set_defaults(func=cmd_fit_lbs)

    s = sub.add_parser("tangent", help="smooth sign-consistent face tangent field")
    s.add_argument("--mesh", required=True)
    s.add_argument("--iterations", type=int, default=500)
    s.add_argument("--ply-out")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_tangent)

    s = sub.add_parser("optimize", help="train the strand field")
    scene_flags(s)
    s.add_argument("--outer", required=True, help="outer (fur) surface PLY")
    s.add_argument("--chamfer-samples", type=int, default=5000)
    s.add_argument("--cameras")
    s.add_argument("--images")
    s.add_argument("--config")
    s.add_argument("--iterations", type=int)
    s.add_argument("--loss-csv")
    s.add_argument("--out", required=True, help="trained field .npz")
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("generate", help="decode strands from a trained field")
    scene_flags(s)
    s.add_argument("--field", required=True)
    s.add_argument("--n", type=int, default=500000)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("metrics", help="supervised or unsupervised strand metrics")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt")
    s.add_argument("--thresholds", default="2:20,3:30,4:40")
    s.add_argument("--points", type=int, default=100000)
    s.add_argument("--outer")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--out")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("export", help="convert between SFUR1 and OBJ polylines")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("demo", help="run the desk-scale pipeline on the synthetic quadruped")
    s.add_argument("--out", required=True)
    s.add_argument("--animal", default="panda")
    s.add_argument("--resolution", type=int, default=160)
    s.add_argument("--iterations", type=int, default=800)
    s.add_argument("--batch", type=int, default=500)
    s.add_argument("--strands", type=int, default=20000)
    s.set_defaults(func=cmd_demo)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    if args.threads:
        if args.threads < 1:
            emit("error", field="--threads", message="must be >= 1")
            return EXIT_INVALID
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)

    from .annotation import AnnotationError
    from .mesh import MeshError
    try:
        args.func(args)
    except InputError as exc:
        emit("error", field=exc.field, message=str(exc))
        return EXIT_INVALID
    except AnnotationError as exc:
        emit("error", field=exc.field, message=str(exc))
        return EXIT_INVALID
    except (MeshError, FileNotFoundError) as exc:
        emit("error", field=getattr(exc, "filename", None) or "input", message=str(exc))
        return EXIT_INVALID
    except Exception as exc:  # runtime failure
        emit("error", message=f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
