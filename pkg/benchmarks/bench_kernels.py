"""Time the tile compositing kernels under both backends.

The backend is frozen at import time from SPLATSR_BACKEND, so this script
re-runs itself in a subprocess per backend and merges the results into one
table.  Timings are medians over --repeats runs after a warmup pass (the
warmup also absorbs numba compilation).

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --repeats 20 --gaussians 2000
"""

import argparse
import json
import os
import subprocess
import sys
import time

CASES = [
    ("render 128x128", 128),
    ("render 256x256", 256),
    ("backward 128x128", 128),
    ("backward 256x256", 256),
]


def child(args):
    import numpy as np

    from splatsr import backend, pipeline, rasterizer

    cloud = pipeline.synth_scene(seed=11, n_gaussians=args.gaussians, extent=1.0)
    rows = []
    for name, side in CASES:
        camera = pipeline.orbit_rig(1, side, side, 1.0)[0]
        out, ctx = rasterizer.render_with_context(cloud, camera)
        d_color = np.full_like(out.color, 0.5)

        if name.startswith("render"):
            fn = lambda: rasterizer.render(cloud, camera)
        else:
            fn = lambda: rasterizer.render_backward(
                cloud, camera, d_color=d_color, ctx=ctx
            )
        fn()  # warmup / compile
        samples = []
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            fn()
            samples.append(time.perf_counter() - t0)
        rows.append({"case": name, "ms": float(np.median(samples)) * 1e3})
    print(json.dumps({"backend": backend.BACKEND, "rows": rows}))


def run_backend(name, args):
    env = dict(os.environ, SPLATSR_BACKEND=name)
    cmd = [sys.executable, os.path.abspath(__file__), "--child",
           "--repeats", str(args.repeats), "--gaussians", str(args.gaussians)]
    proc = subprocess.run(cmd, env=env, capture_output=True, text=True)
    if proc.returncode != 0:
        sys.stderr.write(proc.stderr)
        raise SystemExit(f"{name} child failed with code {proc.returncode}")
    report = json.loads(proc.stdout.strip().splitlines()[-1])
    if report["backend"] != name:
        raise SystemExit(f"requested {name} backend, child ran {report['backend']}")
    return {row["case"]: row["ms"] for row in report["rows"]}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=10)
    parser.add_argument("--gaussians", type=int, default=1000)
    parser.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.child:
        child(args)
        return

    numba = run_backend("numba", args)
    numpy_ = run_backend("numpy", args)
    width = max(len(c) for c, _ in CASES)
    print(f"{args.gaussians} gaussians, median of {args.repeats} runs")
    print(f"{'case':<{width}}  {'numba ms':>9}  {'numpy ms':>9}  {'speedup':>7}")
    for case, _ in CASES:
        ratio = numpy_[case] / numba[case]
        print(f"{case:<{width}}  {numba[case]:>9.2f}  {numpy_[case]:>9.2f}  "
              f"{ratio:>6.1f}x")


if __name__ == "__main__":
    main()
