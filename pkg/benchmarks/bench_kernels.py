"""Time the compiled and pure-numpy kernel backends on the same inputs.

Usage: python3 benchmarks/bench_kernels.py [--scale 1.0] [--repeats 5] [--csv out.csv]
"""

import argparse
import csv
import sys
import time

import numpy as np

from furgroom import kernels
from furgroom.primitives import icosphere
from furgroom.render import ALPHA_MAX, Camera, render_strands


def closest_point_case(rng, scale):
    n = int(200000 * scale)
    tri = rng.normal(size=(n, 3, 3))
    pts = rng.normal(size=(n, 3)) * 2
    return lambda k: k.closest_point_sqdist(pts, tri[:, 0], tri[:, 1], tri[:, 2])


def winding_case(rng, scale):
    mesh = icosphere(3)
    pts = rng.uniform(-1.5, 1.5, size=(int(2000 * scale), 3))
    return lambda k: k.winding_numbers(pts, mesh.vertices, mesh.faces)


def splat_inputs(rng, scale):
    n = max(1, int(400 * scale))
    roots = rng.uniform(-1, 1, size=(n, 1, 3))
    strands = roots + np.cumsum(rng.normal(0, 0.05, size=(n, 20, 3)) + [0, 0.05, 0], axis=1)
    cam = Camera.look_at((0, 0, -6), (0, 0, 0), width=128, height=128, fov_deg=40)
    res = render_strands(strands, cam)
    return res.cache, res.accum, cam


def splat_forward_case(rng, scale):
    c, _, cam = splat_inputs(rng, scale)
    return lambda k: k.splat_forward(c["m2"], c["conics"], c["op"], c["colors"], c["bb"],
                                     cam.height, cam.width, ALPHA_MAX)


def splat_backward_case(rng, scale):
    c, accum, cam = splat_inputs(rng, scale)
    g_sil = rng.normal(size=(cam.height, cam.width))
    g_acc = rng.normal(size=(cam.height, cam.width, 2))
    return lambda k: k.splat_backward(c["m2"], c["conics"], c["op"], c["colors"], c["bb"],
                                      c["trans"], accum, g_sil, g_acc, ALPHA_MAX)


CASES = {
    "closest_point_sqdist": closest_point_case,
    "winding_numbers": winding_case,
    "splat_forward": splat_forward_case,
    "splat_backward": splat_backward_case,
}


def best_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def max_difference(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return max(float(np.max(np.abs(np.asarray(x) - np.asarray(y)), initial=0.0))
               for x, y in zip(a, b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=float, default=1.0, help="problem size multiplier")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv", help="also write the table as CSV")
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if len(backends) < 2:
        print("compiled kernels are not built; only the numpy backend is timed", file=sys.stderr)
    rows = []
    for name, make in CASES.items():
        fn = make(np.random.default_rng(args.seed), args.scale)
        timing, outputs = {}, {}
        for b in backends:
            mod = kernels.get_backend(b)
            timing[b], outputs[b] = best_time(lambda: fn(mod), args.repeats)
        diff = max_difference(*outputs.values()) if len(outputs) == 2 else 0.0
        speedup = timing["python"] / timing["cython"] if "cython" in timing else float("nan")
        rows.append((name, timing.get("cython", float("nan")), timing["python"], speedup, diff))

    print(f"{'kernel':<22}{'cython s':>12}{'python s':>12}{'speedup':>10}{'max diff':>12}")
    for name, tc, tp, sp, diff in rows:
        print(f"{name:<22}{tc:>12.4f}{tp:>12.4f}{sp:>10.1f}{diff:>12.1e}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kernel", "cython_s", "python_s", "speedup", "max_diff"])
            w.writerows(rows)


if __name__ == "__main__":
    main()
