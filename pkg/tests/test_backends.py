import numpy as np
import pytest

from streamgrid import _fallback
from streamgrid.grid import N_SH
from streamgrid.render import default_step

from conftest import random_grid, random_rays

_kernels = pytest.importorskip("streamgrid._kernels")


def args(grid, rays):
    return (grid.index, grid.sigma, grid.sh, grid.dims.lo, grid.dims.voxel_size, rays.origins, rays.dirs,
            rays.t_near, rays.t_far, default_step(grid.dims), np.array([0.1, 0.2, 0.3]))


def test_selected_backend_is_compiled():
    from streamgrid import BACKEND
    assert BACKEND == "cython"


@pytest.mark.parametrize("seed", range(5))
def test_forward_identical(seed):
    rng = np.random.default_rng(seed)
    g = random_grid(rng, (6, 5, 7))
    rays = random_rays(rng, g.dims, 50)
    a = _fallback.render_forward(*args(g, rays))
    b = _kernels.render_forward(*args(g, rays))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


@pytest.mark.parametrize("seed", range(5))
def test_backward_agrees(seed):
    rng = np.random.default_rng(seed)
    g = random_grid(rng, (6, 5, 7))
    rays = random_rays(rng, g.dims, 50)
    out = []
    for mod in (_fallback, _kernels):
        gs = np.zeros(g.n_voxels)
        gh = np.zeros((g.n_voxels, N_SH))
        _, loss = mod.render_backward(*args(g, rays), rays.colors, 1 / 150, gs, gh)
        out.append((loss, gs, gh))
    assert out[0][0] == pytest.approx(out[1][0], rel=1e-14)
    np.testing.assert_allclose(out[0][1], out[1][1], rtol=1e-10, atol=1e-15)
    np.testing.assert_allclose(out[0][2], out[1][2], rtol=1e-10, atol=1e-15)


def test_sample_points_identical(rng):
    g = random_grid(rng, (5, 5, 5))
    pts = np.ascontiguousarray(rng.uniform(-1, 1, (300, 3)))
    a = _fallback.sample_points(g.index, g.sigma, g.sh, g.dims.lo, g.dims.voxel_size, pts)
    b = _kernels.sample_points(g.index, g.sigma, g.sh, g.dims.lo, g.dims.voxel_size, pts)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_env_forces_fallback():
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-c", "import streamgrid; print(streamgrid.BACKEND)"],
                         env={"STREAMGRID_BACKEND": "python", "PATH": "/usr/bin:/bin"}, capture_output=True,
                         text=True, check=True)
    assert out.stdout.strip() == "python"
