"""Half-resolution pilot model: guidance mask and fill-back into the full grid."""

import numpy as np

from .codec import DiffMasks
from .grid import GridDims, SparseGrid, downsample
from .train import RayBatch, TrainConfig, TuneResult, tune


def make_pilot(grid: SparseGrid) -> SparseGrid:
    return downsample(grid)


def replicate_up(mask, full_shape) -> np.ndarray:
    """Nearest-neighbour x2 upsampling of a pilot mask, cropped to ``full_shape``."""
    m = np.asarray(mask, dtype=bool)
    up = m.repeat(2, axis=0).repeat(2, axis=1).repeat(2, axis=2)
    return np.ascontiguousarray(up[: full_shape[0], : full_shape[1], : full_shape[2]])


def _check_pilot_shape(pilot_shape, full_shape):
    want = tuple((n + 1) // 2 for n in full_shape)
    if tuple(pilot_shape) != want:
        raise ValueError(f"pilot shape {tuple(pilot_shape)} does not match full shape {tuple(full_shape)}")


def guidance_mask(pilot_masks: DiffMasks, full_dims: GridDims) -> np.ndarray:
    """Union of the pilot change masks, replicated to full resolution."""
    merged = pilot_masks.merged()
    _check_pilot_shape(merged.shape, full_dims.shape)
    return replicate_up(merged, full_dims.shape)


def fill_back(grid_full: SparseGrid, pilot_next: SparseGrid, pilot_masks: DiffMasks) -> SparseGrid:
    """Copy pilot additions into empty full-scale children; drop children of erased pilot voxels.

    Children that are already occupied keep their own values.
    """
    full_shape = grid_full.dims.shape
    _check_pilot_shape(pilot_masks.m_add.shape, full_shape)
    add_fp = replicate_up(pilot_masks.m_add, full_shape)
    erase_fp = replicate_up(pilot_masks.m_erase, full_shape)
    create = add_fp & ~grid_full.mask
    if not create.any() and not (erase_fp & grid_full.mask).any():
        return grid_full.copy()
    sig, sh = grid_full.to_dense()
    if create.any():
        ps, ph = pilot_next.to_dense()
        up_s = replicate_up_values(ps, full_shape)
        up_h = replicate_up_values(ph, full_shape)
        sig[create] = up_s[create]
        sh[create] = up_h[create]
    mask = (grid_full.mask | create) & ~erase_fp
    return SparseGrid.from_dense(grid_full.dims, mask, sig, sh)


def replicate_up_values(vol, full_shape) -> np.ndarray:
    up = vol.repeat(2, axis=0).repeat(2, axis=1).repeat(2, axis=2)
    return up[: full_shape[0], : full_shape[1], : full_shape[2]]


def guided_tune(grid_full: SparseGrid, rays: RayBatch, guidance, config: TrainConfig,
                rng: np.random.Generator) -> TuneResult:
    """Tune ``grid_full`` in place with everything outside ``guidance`` frozen."""
    guidance = np.asarray(guidance, dtype=bool)
    if guidance.shape != grid_full.dims.shape:
        raise ValueError("guidance mask must match the full grid")
    return tune(grid_full, rays, guidance & grid_full.mask, config, rng)
