import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from streamgrid.grid import (N_SH, GridDims, SparseGrid, downsample, grid_from_bytes, grid_to_bytes, load_grid,
                             pack_mask, prune, sample_points, sample_trilinear, save_grid, unpack_mask, upsample)

from conftest import random_grid


def trilinear_reference(grid, x):
    """Independent per-point trilinear lookup with cell-centred voxels and border clamping."""
    d = grid.dims
    g = (np.asarray(x, float) - d.lo) / d.voxel_size - 0.5
    n = np.array(d.shape)
    g = np.clip(g, 0, n - 1)
    i0 = np.minimum(np.floor(g).astype(int), n - 2)
    f = g - i0
    sig = 0.0
    sh = np.zeros(N_SH)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = (f[0] if dx else 1 - f[0]) * (f[1] if dy else 1 - f[1]) * (f[2] if dz else 1 - f[2])
                c = (i0[0] + dx, i0[1] + dy, i0[2] + dz)
                if grid.mask[c]:
                    s, h = grid.get(c)
                    sig += w * s
                    sh += w * h
    return sig, sh


class TestDims:
    def test_rejects_thin_axis(self):
        with pytest.raises(ValueError):
            GridDims(1, 4, 4)

    def test_rejects_inverted_box(self):
        with pytest.raises(ValueError):
            GridDims(4, 4, 4, (0, 0, 0), (1, -1, 1))

    def test_voxel_size_and_centres(self):
        d = GridDims(4, 2, 8, (0, 0, 0), (1, 1, 2))
        np.testing.assert_allclose(d.voxel_size, [0.25, 0.5, 0.25])
        c = d.centers()
        assert c.shape == (4, 2, 8, 3)
        np.testing.assert_allclose(c[0, 0, 0], [0.125, 0.25, 0.125])
        np.testing.assert_allclose(c[-1, -1, -1], [0.875, 0.75, 1.875])


class TestSparseGrid:
    def test_count_mismatch(self):
        d = GridDims.cube(2)
        with pytest.raises(ValueError):
            SparseGrid(d, np.ones((2, 2, 2), bool), np.zeros(7), np.zeros((8, N_SH)))

    def test_index_marks_unoccupied(self, rng):
        g = random_grid(rng, (5, 4, 3))
        idx = g.index
        assert (idx[~g.mask] == -1).all()
        assert np.array_equal(np.sort(idx[g.mask]), np.arange(g.n_voxels))

    def test_storage_order_is_row_major_z_fastest(self):
        d = GridDims.cube(2)
        mask = np.zeros((2, 2, 2), bool)
        mask[0, 0, 1] = mask[1, 0, 0] = True
        g = SparseGrid(d, mask, [1.0, 2.0], np.zeros((2, N_SH)))
        assert g.get((0, 0, 1))[0] == 1.0
        assert g.get((1, 0, 0))[0] == 2.0

    def test_write_read_fuzz(self, rng):
        g = SparseGrid.empty(GridDims.cube(6))
        last = {}
        for _ in range(200):
            c = tuple(rng.integers(0, 6, 3))
            s = float(np.float32(rng.normal()))
            h = rng.normal(size=N_SH).astype(np.float32)
            g.set(c, s, h)
            last[c] = (s, h)
        assert g.n_voxels == len(last)
        for c, (s, h) in last.items():
            gs, gh = g.get(c)
            assert gs == s
            assert np.array_equal(gh, h)

    def test_get_unoccupied_raises(self):
        with pytest.raises(KeyError):
            SparseGrid.empty(GridDims.cube(2)).get((0, 0, 0))


class TestTrilinear:
    def test_constant_field(self):
        c = np.arange(N_SH, dtype=np.float32)
        g = SparseGrid.full(GridDims.cube(3), sigma=2.0, sh=c)
        s, h = sample_trilinear(g, [0.1, -0.3, 0.7])
        assert s == pytest.approx(2.0)
        np.testing.assert_allclose(h, c, rtol=1e-6)

    def test_at_voxel_centre_is_one_hot(self, rng):
        g = random_grid(rng, (4, 4, 4), p=1.0)
        centre = g.dims.centers()[1, 2, 3]
        s, h = sample_trilinear(g, centre)
        s0, h0 = g.get((1, 2, 3))
        assert s == pytest.approx(s0, abs=1e-6)
        np.testing.assert_allclose(h, h0, atol=1e-6)

    def test_half_occupied_cell_centre(self):
        # corners with x=1 carry sigma 8, corners with x=0 are empty
        d = GridDims.cube(2)
        mask = np.zeros((2, 2, 2), bool)
        mask[1] = True
        g = SparseGrid(d, mask, np.full(4, 8.0), np.zeros((4, N_SH)))
        s, _ = sample_trilinear(g, [0.0, 0.0, 0.0])
        assert s == 4.0

    def test_outside_box_raises(self):
        g = SparseGrid.full(GridDims.cube(2), 1.0)
        with pytest.raises(ValueError):
            sample_trilinear(g, [1.5, 0, 0])

    def test_matches_reference(self, rng):
        g = random_grid(rng, (5, 4, 6))
        pts = rng.uniform(-1, 1, size=(200, 3))
        sig, sh = sample_points(g, pts)
        for p, s, h in zip(pts, sig, sh):
            rs, rh = trilinear_reference(g, p)
            assert s == pytest.approx(rs, abs=1e-9)
            np.testing.assert_allclose(h, rh, atol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(coef=st.lists(st.floats(-3, 3), min_size=4, max_size=4),
           pt=st.lists(st.floats(-0.75, 0.75), min_size=3, max_size=3))
    def test_exact_for_affine_fields(self, coef, pt):
        d = GridDims.cube(4)
        c = d.centers()
        sig = (coef[0] + coef[1] * c[..., 0] + coef[2] * c[..., 1] + coef[3] * c[..., 2]).astype(np.float64)
        # store float32 values but compare against the affine function of the stored samples
        g = SparseGrid.from_dense(d, np.ones(d.shape, bool), sig.astype(np.float32), np.zeros(d.shape + (N_SH,)))
        s, _ = sample_trilinear(g, pt)
        expect = coef[0] + coef[1] * pt[0] + coef[2] * pt[1] + coef[3] * pt[2]
        assert s == pytest.approx(expect, abs=1e-5)


class TestPrune:
    def test_strict_threshold(self):
        d = GridDims(3, 2, 2)
        mask = np.zeros(d.shape, bool)
        mask[:, 0, 0] = True
        g = SparseGrid(d, mask, [0.0, 0.5, 2.0], np.zeros((3, N_SH)))
        out = prune(g, 0.5)
        assert out.n_voxels == 1
        assert out.get((2, 0, 0))[0] == 2.0

    def test_zero_threshold_keeps_positive(self, rng):
        g = SparseGrid.full(GridDims.cube(3), 1.0)
        assert prune(g, 0.0).equals(g)

    def test_infinite_threshold_empties(self, rng):
        assert prune(random_grid(rng), np.inf).n_voxels == 0

    def test_idempotent(self, rng):
        g = random_grid(rng, (6, 6, 6))
        once = prune(g, 1.0)
        assert prune(once, 1.0).equals(once)

    def test_negative_threshold_rejected(self, rng):
        with pytest.raises(ValueError):
            prune(random_grid(rng), -1.0)


class TestResample:
    def test_upsample_constant(self):
        g = SparseGrid.full(GridDims.cube(3), 1.5, np.ones(N_SH))
        up = upsample(g)
        assert up.dims.shape == (6, 6, 6)
        assert up.mask.all()
        np.testing.assert_allclose(up.sigma, 1.5, rtol=1e-6)

    def test_upsample_empty(self):
        assert upsample(SparseGrid.empty(GridDims.cube(3))).n_voxels == 0

    def test_upsample_single_corner_matches_reference(self):
        d = GridDims.cube(2)
        mask = np.zeros((2, 2, 2), bool)
        mask[1, 0, 1] = True
        g = SparseGrid(d, mask, [8.0], np.zeros((1, N_SH)))
        up = upsample(g)
        centres = up.dims.centers().reshape(-1, 3)
        sig_up, _ = up.to_dense()
        for c, s in zip(centres, sig_up.reshape(-1)):
            ref, _ = trilinear_reference(g, c)
            assert s == pytest.approx(ref, abs=1e-6)

    def test_downsample_mean_of_occupied(self):
        d = GridDims.cube(2)
        g = SparseGrid.full(d, 0.0)
        g.sigma[:] = [1, 1, 1, 1, 3, 3, 3, 3]
        assert downsample(SparseGrid.full(GridDims.cube(4), 1.0)).dims.shape == (2, 2, 2)
        # 2^3 cannot halve below 2 voxels per axis, so use a 4^3 grid with one populated block
        d4 = GridDims.cube(4)
        sig = np.zeros(d4.shape, np.float32)
        mask = np.zeros(d4.shape, bool)
        mask[:2, :2, :2] = True
        sig[:2, :2, :2] = np.array([1, 1, 1, 1, 3, 3, 3, 3], np.float32).reshape(2, 2, 2)
        down = downsample(SparseGrid.from_dense(d4, mask, sig, np.zeros(d4.shape + (N_SH,))))
        assert down.get((0, 0, 0))[0] == 2.0
        assert down.n_voxels == 1

    def test_downsample_single_child(self):
        d4 = GridDims.cube(4)
        g = SparseGrid.empty(d4)
        g.set((3, 2, 1), 5.0, np.zeros(N_SH))
        down = downsample(g)
        assert down.n_voxels == 1
        assert down.get((1, 1, 0))[0] == 5.0

    def test_downsample_odd_axis_extends_box(self):
        d = GridDims(5, 4, 4, (0, 0, 0), (5, 4, 4))
        down = downsample(SparseGrid.full(d, 1.0))
        assert down.dims.shape == (3, 2, 2)
        np.testing.assert_allclose(down.dims.hi, [6, 4, 4])

    def test_down_up_roundtrip_constant(self):
        g = SparseGrid.full(GridDims.cube(4), 2.5, np.full(N_SH, 0.5))
        assert downsample(upsample(g)).equals(g)


class TestCheckpoint:
    def test_roundtrip(self, rng, tmp_path):
        g = random_grid(rng, (5, 6, 7), lo=-2.0, hi=3.0)
        save_grid(g, tmp_path / "g.sgrd")
        assert load_grid(tmp_path / "g.sgrd").equals(g)

    def test_header(self, rng):
        data = grid_to_bytes(random_grid(rng))
        assert data[:4] == b"SGRD"
        assert int.from_bytes(data[4:8], "little") == 1

    def test_bad_magic(self, rng):
        data = bytearray(grid_to_bytes(random_grid(rng)))
        data[0] = ord("X")
        with pytest.raises(ValueError, match="bad magic"):
            grid_from_bytes(bytes(data))

    def test_mask_bit_order(self):
        m = np.zeros((2, 2, 3), bool)
        m[0, 0, 1] = True  # flat index 1
        m[1, 1, 2] = True  # flat index 11
        assert pack_mask(m) == bytes([0b10, 0b1000])
        assert np.array_equal(unpack_mask(pack_mask(m), m.shape), m)


def test_prune_within_region():
    d = GridDims(4, 2, 2)
    g = SparseGrid.full(d, 0.2)
    region = np.zeros(d.shape, bool)
    region[:2] = True
    out = prune(g, 0.5, within=region)
    assert np.array_equal(out.mask, ~region)
