import numpy as np
import pytest

from streamgrid.grid import N_SH, GridDims, SparseGrid


def random_grid(rng, shape=(4, 4, 4), p=0.6, sigma_scale=5.0, sh_scale=1.0, lo=-1.0, hi=1.0):
    """Random occupancy with random raw sigma (some negative) and SH."""
    dims = GridDims(*shape, (lo,) * 3, (hi,) * 3)
    mask = rng.random(shape) < p
    n = int(mask.sum())
    sigma = (rng.random(n) * sigma_scale - 0.1 * sigma_scale).astype(np.float32)
    sh = (rng.normal(size=(n, N_SH)) * sh_scale).astype(np.float32)
    return SparseGrid(dims, mask, sigma, sh)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_rays(rng, dims, n=8, colors=True):
    """Rays from a shell around the box aimed at random interior points, all clipped to the box."""
    from streamgrid.render import clip_rays
    from streamgrid.train import RayBatch

    lo, hi = dims.lo, dims.hi
    out = []
    while len(out) < n:
        target = rng.uniform(lo, hi)
        o = rng.normal(size=3)
        o = 0.5 * (lo + hi) + 3.0 * np.linalg.norm(hi - lo) * o / np.linalg.norm(o)
        d = (target - o) / np.linalg.norm(target - o)
        tn, tf, hit = clip_rays(o[None], d[None], dims)
        if hit[0]:
            out.append((o, d, tn[0], tf[0]))
    o, d, tn, tf = (np.ascontiguousarray(np.array(x)) for x in zip(*out))
    c = rng.random((n, 3)) if colors else np.zeros((n, 3))
    return RayBatch(o, d, tn, tf, c)


def fd_gradients(grid, rays, h=1e-3):
    """Central finite differences of the photometric loss for every stored parameter."""
    from streamgrid.train import photometric_loss

    gs = np.zeros(grid.n_voxels)
    gh = np.zeros((grid.n_voxels, N_SH))
    for arr, out in ((grid.sigma, gs), (grid.sh, gh)):
        flat = arr.reshape(-1)
        oflat = out.reshape(-1)
        for k in range(flat.size):
            v = flat[k]
            up = np.float32(v + h)
            dn = np.float32(v - h)
            flat[k] = up
            lp = photometric_loss(grid, rays)
            flat[k] = dn
            lm = photometric_loss(grid, rays)
            flat[k] = v
            oflat[k] = (lp - lm) / (float(up) - float(dn))
    return gs, gh


def grad_agreement(analytic, numeric, rtol=1e-2, atol=1e-9):
    """Boolean per parameter: relative error below ``rtol`` (or both tiny)."""
    a = np.asarray(analytic, float).reshape(-1)
    f = np.asarray(numeric, float).reshape(-1)
    scale = np.maximum(np.abs(a), np.abs(f))
    return (np.abs(a - f) <= rtol * scale) | (scale < atol)


def naive_dilate(mask, r):
    out = np.zeros_like(mask)
    nx, ny, nz = mask.shape
    for x, y, z in zip(*np.nonzero(mask)):
        out[max(0, x - r):x + r + 1, max(0, y - r):y + r + 1, max(0, z - r):z + r + 1] = True
    return out


def naive_erode(mask, r):
    out = np.zeros_like(mask)
    nx, ny, nz = mask.shape
    for x, y, z in zip(*np.nonzero(mask)):
        if x - r < 0 or y - r < 0 or z - r < 0 or x + r >= nx or y + r >= ny or z + r >= nz:
            continue
        out[x, y, z] = mask[x - r:x + r + 1, y - r:y + r + 1, z - r:z + r + 1].all()
    return out


# acceptance report ------------------------------------------------------------------

ACCEPTANCE = {}


def record(criterion, ok, detail):
    """Remember one acceptance line; printed in the terminal summary."""
    ACCEPTANCE[criterion] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (len(k), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
