"""Time the numba kernels against their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both backends run on the same inputs; outputs are checked for equality
before any timing is reported.
"""

import argparse
import time

import numpy as np

from vsfscan import kernels
from vsfscan.fusion import WorldMap
from vsfscan.scene import Pose, gen_scene, rasterize
from vsfscan.sensor import CameraModel, ScoringFan, SensorFrame


def best_of(fn, repeat):
    out, best = None, float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return out, best


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def bench_trace(gt, repeat):
    rng = np.random.default_rng(0)
    n = 20_000
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.tile([gt.shape[0] * gt.resolution / 2, gt.shape[1] * gt.resolution / 2, 1.0], (n, 1))
    codes = gt.occupancy.astype(np.int8)
    steps = kernels.max_ray_steps(gt.resolution, 4.5)
    args = (codes, o, d, gt.resolution, 0.5, 4.5, steps)
    return f"trace_rays ({n} rays)", lambda: kernels.trace_rays_nb(*args), lambda: kernels.trace_rays_numpy(*args)


def bench_score(gt, repeat):
    rng = np.random.default_rng(1)
    cam, fan = CameraModel(), ScoringFan()
    T = 16
    dirs = np.concatenate([fan.view_directions(cam, 2 * np.pi * t / T) for t in range(T)])
    bins = np.arange(dirs.shape[0]).reshape(T, -1)
    codes = np.where(gt.occupancy, 1, np.where(rng.random(gt.shape) < 0.3, 2, 0)).astype(np.int8)
    frontier = (rng.random(codes.size) < 0.05).astype(np.float64)
    gain = rng.random(codes.size)
    nodes = 40
    sx, sy = gt.shape[0] * gt.resolution, gt.shape[1] * gt.resolution
    origins = np.column_stack([rng.uniform(0.5, sx - 0.5, nodes), rng.uniform(0.5, sy - 0.5, nodes), np.ones(nodes)])
    args = (codes, frontier, gain, origins, dirs, bins, gt.resolution, 0.5, 4.5, kernels.max_ray_steps(gt.resolution, 4.5))
    return f"score_nodes ({nodes} nodes x {T} headings)", lambda: kernels.score_nodes_nb(*args), \
        lambda: kernels.score_nodes_numpy(*args)


def bench_frontier(gt, repeat):
    rng = np.random.default_rng(2)
    size = int(np.prod(gt.shape))
    misses = np.sort(rng.choice(size, size // 4, replace=False))
    frame = SensorFrame(Pose(0, 0), np.zeros(0, np.int64), np.zeros(0), misses, np.zeros(0, np.int64),
                        np.zeros((0, gt.label_count)))

    def run(flag):
        from vsfscan import fusion
        old = fusion.USE_NUMBA
        fusion.USE_NUMBA = flag
        try:
            m = WorldMap(gt.shape, gt.resolution, gt.label_count)
            cs = m.integrate(frame)
            return cs.frontier_added, cs.frontier_removed
        finally:
            fusion.USE_NUMBA = old

    return f"frontier update ({misses.size} voxels)", lambda: run(True), lambda: run(False)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    gt = rasterize(gen_scene(2, 0.3, (8, 6), 0, resolution=0.05))
    print(f"scene {gt.shape} voxels, best of {args.repeat}")
    print(f"{'kernel':44s} {'numba s':>9s} {'numpy s':>9s} {'speedup':>8s}")
    for make in (bench_trace, bench_score, bench_frontier):
        name, nb, py = make(gt, args.repeat)
        nb()  # compile outside the timing
        a, t_nb = best_of(nb, args.repeat)
        b, t_py = best_of(py, args.repeat)
        assert same(a, b), f"{name}: backends disagree"
        print(f"{name:44s} {t_nb:9.3f} {t_py:9.3f} {t_py / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
