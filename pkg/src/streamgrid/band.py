"""Narrow-band region of interest: 3D binary morphology and band activation."""

import numpy as np

from .grid import SparseGrid


def _shift_or(mask: np.ndarray, axis: int, radius: int) -> np.ndarray:
    out = mask.copy()
    n = mask.shape[axis]
    for s in range(1, min(radius, n - 1) + 1):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, n - s)
        hi[axis] = slice(s, n)
        out[tuple(lo)] |= mask[tuple(hi)]
        out[tuple(hi)] |= mask[tuple(lo)]
    return out


def _shift_and(mask: np.ndarray, axis: int, radius: int) -> np.ndarray:
    out = mask.copy()
    n = mask.shape[axis]
    for s in range(1, radius + 1):
        if s >= n:
            return np.zeros_like(mask)
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, n - s)
        hi[axis] = slice(s, n)
        # neighbours past the border count as unset
        edge_hi = [slice(None)] * 3
        edge_lo = [slice(None)] * 3
        edge_hi[axis] = slice(n - s, n)
        edge_lo[axis] = slice(0, s)
        out[tuple(lo)] &= mask[tuple(hi)]
        out[tuple(hi)] &= mask[tuple(lo)]
        out[tuple(edge_hi)] = False
        out[tuple(edge_lo)] = False
    return out


def dilate(mask, radius: int) -> np.ndarray:
    """Set every voxel within Chebyshev distance ``radius`` of a set voxel (cube element)."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    out = np.asarray(mask, dtype=bool)
    for axis in range(3):
        out = _shift_or(out, axis, radius)
    return out


def erode(mask, radius: int) -> np.ndarray:
    """Keep voxels whose whole (2r+1)^3 cube is set; outside the grid counts as unset."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    out = np.asarray(mask, dtype=bool)
    for axis in range(3):
        out = _shift_and(out, axis, radius)
    return out


def compute_band(mask_prev, rho_d: int, rho_e: int) -> np.ndarray:
    """Shell between the dilated and the eroded occupancy."""
    return dilate(mask_prev, rho_d) ^ erode(mask_prev, rho_e)


def activate_band(grid: SparseGrid, band) -> tuple[SparseGrid, np.ndarray]:
    """Add zero-valued voxels for every empty band cell; the band becomes the trainable set."""
    band = np.asarray(band, dtype=bool)
    if band.shape != grid.dims.shape:
        raise ValueError(f"band shape {band.shape} does not match grid {grid.dims.shape}")
    if not (band & ~grid.mask).any():
        return grid.copy(), band.copy()
    sig, sh = grid.to_dense()
    return SparseGrid.from_dense(grid.dims, grid.mask | band, sig, sh), band.copy()
