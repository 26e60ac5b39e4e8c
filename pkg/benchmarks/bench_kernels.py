"""Time the compiled kernels against the numpy fallback on a voxelised sphere.

    python3 benchmarks/bench_kernels.py [--size 64] [--rays 4096] [--repeat 3]
"""

import argparse
import time

import numpy as np

from streamgrid import _fallback
from streamgrid.dataset import MovingSphere, ring_cameras
from streamgrid.grid import GridDims
from streamgrid.render import default_step
from streamgrid.train import rays_from_views

try:
    from streamgrid import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--rays", type=int, default=4096)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    grid = MovingSphere(dims=GridDims.cube(args.size)).voxelize(0)
    cams = ring_cameras(8, size=32, fov_deg=30)
    views = [(c, np.zeros((c.height, c.width, 3))) for c in cams]
    rays = rays_from_views(views, grid.dims)
    idx = np.random.default_rng(0).choice(len(rays), size=min(args.rays, len(rays)), replace=False)
    rays = rays.subset(np.sort(idx))
    target = np.full((len(rays), 3), 0.5)
    common = (grid.index, grid.sigma, grid.sh, grid.dims.lo, grid.dims.voxel_size, rays.origins, rays.dirs,
              rays.t_near, rays.t_far, default_step(grid.dims), np.zeros(3))
    scale = 1.0 / (3 * len(rays))

    def fwd(mod):
        return lambda: mod.render_forward(*common)

    def bwd(mod):
        def run():
            gs = np.zeros(grid.n_voxels)
            gh = np.zeros((grid.n_voxels, 27))
            mod.render_backward(*common, target, scale, gs, gh)
            return gs, gh
        return run

    print(f"grid {args.size}^3, {grid.n_voxels} voxels, {len(rays)} rays, best of {args.repeat}")
    backends = [("python", _fallback)] + ([("cython", _kernels)] if _kernels else [])
    results = {}
    for name, mod in backends:
        tf, rgb = best_of(fwd(mod), args.repeat)
        tb, grads = best_of(bwd(mod), args.repeat)
        results[name] = (tf, tb, rgb, grads)
        print(f"{name:>7}: forward {tf * 1e3:8.1f} ms   forward+backward {tb * 1e3:8.1f} ms")
    if _kernels is None:
        print("compiled extension not built; only the fallback was timed")
        return
    py, cy = results["python"], results["cython"]
    print(f"speed-up: forward x{py[0] / cy[0]:.1f}, backward x{py[1] / cy[1]:.1f}")
    same = np.array_equal(py[2][0], cy[2][0])
    gdiff = max(np.abs(py[3][0] - cy[3][0]).max(), np.abs(py[3][1] - cy[3][1]).max())
    print(f"forward outputs identical: {same}; max gradient difference {gdiff:.3g}")


if __name__ == "__main__":
    main()
