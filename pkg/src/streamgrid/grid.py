"""Sparse voxel grid: occupancy mask plus per-voxel opacity and SH coefficients."""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from ._backend import kernels

N_SH = 27
N_VALUES = 1 + N_SH

CHECKPOINT_MAGIC = b"SGRD"
CHECKPOINT_VERSION = 1


def _f32(v) -> float:
    return float(np.float32(v))


@dataclass(frozen=True)
class GridDims:
    """Voxel counts per axis and the world-space bounding box.

    Voxel ``(i, j, k)`` is centred at ``world_min + (ijk + 0.5) * voxel_size``.
    Bounds are rounded to float32 so checkpoints round-trip exactly.
    """

    nx: int
    ny: int
    nz: int
    world_min: tuple = (-1.0, -1.0, -1.0)
    world_max: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        for n in self.shape:
            if int(n) != n or n < 2:
                raise ValueError(f"every axis needs at least 2 voxels, got {self.shape}")
        lo = tuple(_f32(v) for v in self.world_min)
        hi = tuple(_f32(v) for v in self.world_max)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("world_min / world_max must be 3-vectors")
        if not all(a < b for a, b in zip(lo, hi)):
            raise ValueError(f"world_min {lo} must be < world_max {hi} componentwise")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "nz", int(self.nz))
        object.__setattr__(self, "world_min", lo)
        object.__setattr__(self, "world_max", hi)

    @classmethod
    def cube(cls, n: int, lo: float = -1.0, hi: float = 1.0) -> GridDims:
        return cls(n, n, n, (lo, lo, lo), (hi, hi, hi))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.world_min, dtype=np.float64)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.world_max, dtype=np.float64)

    @property
    def voxel_size(self) -> np.ndarray:
        return (self.hi - self.lo) / np.array(self.shape, dtype=np.float64)

    def with_shape(self, shape, world_max=None) -> GridDims:
        return GridDims(*shape, self.world_min, self.world_max if world_max is None else world_max)

    def centers(self) -> np.ndarray:
        """World-space voxel centres, shape (nx, ny, nz, 3)."""
        axes = [self.lo[a] + (np.arange(n) + 0.5) * self.voxel_size[a] for a, n in enumerate(self.shape)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))


class SparseGrid:
    """Occupied voxels of a bounded grid.

    ``sigma`` (N,) and ``sh`` (N, 27) are float32 and stored in mask-iteration
    order (row-major, z fastest). ``index`` maps a voxel coordinate to its
    storage slot, or -1 when unoccupied. SH coefficients are channel-major:
    ``sh[:, 9 * c + b]`` is basis ``b`` of colour channel ``c``.
    """

    def __init__(self, dims: GridDims, mask: np.ndarray, sigma: np.ndarray, sh: np.ndarray):
        mask = np.ascontiguousarray(mask, dtype=bool)
        if mask.shape != dims.shape:
            raise ValueError(f"mask shape {mask.shape} does not match dims {dims.shape}")
        sigma = np.ascontiguousarray(sigma, dtype=np.float32).reshape(-1)
        sh = np.ascontiguousarray(sh, dtype=np.float32).reshape(-1, N_SH)
        n = int(mask.sum())
        if sigma.shape[0] != n or sh.shape[0] != n:
            raise ValueError(f"{n} occupied voxels but {sigma.shape[0]} sigma / {sh.shape[0]} sh rows")
        self.dims = dims
        self.mask = mask
        self.sigma = sigma
        self.sh = sh
        self._index = None

    # construction -------------------------------------------------------

    @classmethod
    def empty(cls, dims: GridDims) -> SparseGrid:
        return cls(dims, np.zeros(dims.shape, bool), np.zeros(0, np.float32), np.zeros((0, N_SH), np.float32))

    @classmethod
    def full(cls, dims: GridDims, sigma: float = 0.0, sh=None) -> SparseGrid:
        n = dims.n_cells
        sh_row = np.zeros(N_SH, np.float32) if sh is None else np.asarray(sh, np.float32)
        return cls(dims, np.ones(dims.shape, bool), np.full(n, sigma, np.float32), np.tile(sh_row, (n, 1)))

    @classmethod
    def from_dense(cls, dims: GridDims, mask, sigma_vol, sh_vol) -> SparseGrid:
        mask = np.asarray(mask, dtype=bool)
        return cls(dims, mask, np.asarray(sigma_vol)[mask], np.asarray(sh_vol)[mask])

    def copy(self) -> SparseGrid:
        return SparseGrid(self.dims, self.mask.copy(), self.sigma.copy(), self.sh.copy())

    # views --------------------------------------------------------------

    @property
    def n_voxels(self) -> int:
        return int(self.sigma.shape[0])

    @property
    def index(self) -> np.ndarray:
        if self._index is None:
            idx = np.full(self.dims.n_cells, -1, dtype=np.int32)
            flat = np.flatnonzero(self.mask)
            idx[flat] = np.arange(flat.size, dtype=np.int32)
            self._index = idx.reshape(self.dims.shape)
        return self._index

    def coords(self) -> np.ndarray:
        return np.argwhere(self.mask)

    def to_dense(self) -> tuple[np.ndarray, np.ndarray]:
        sig = np.zeros(self.dims.shape, np.float32)
        sh = np.zeros(self.dims.shape + (N_SH,), np.float32)
        sig[self.mask] = self.sigma
        sh[self.mask] = self.sh
        return sig, sh

    def values(self) -> np.ndarray:
        """(N, 28) float32 rows: sigma then the 27 SH coefficients."""
        return np.concatenate([self.sigma[:, None], self.sh], axis=1)

    def slot(self, coord) -> int:
        return int(self.index[tuple(coord)])

    def get(self, coord) -> tuple[float, np.ndarray]:
        s = self.slot(coord)
        if s < 0:
            raise KeyError(f"voxel {tuple(coord)} is not occupied")
        return float(self.sigma[s]), self.sh[s].copy()

    def set(self, coord, sigma: float, sh) -> None:
        """Write one voxel, inserting it if it is unoccupied."""
        coord = tuple(int(c) for c in coord)
        s = self.slot(coord)
        if s < 0:
            sig, shv = self.to_dense()
            self.mask = self.mask.copy()
            self.mask[coord] = True
            sig[coord] = sigma
            shv[coord] = sh
            self.sigma = np.ascontiguousarray(sig[self.mask])
            self.sh = np.ascontiguousarray(shv[self.mask])
            self._index = None
        else:
            self.sigma[s] = sigma
            self.sh[s] = sh

    def equals(self, other: SparseGrid) -> bool:
        """Bit-identical comparison of dims, occupancy and parameters."""
        return (
            self.dims == other.dims
            and np.array_equal(self.mask, other.mask)
            and self.sigma.tobytes() == other.sigma.tobytes()
            and self.sh.tobytes() == other.sh.tobytes()
        )

    def __repr__(self):
        return f"SparseGrid(shape={self.dims.shape}, occupied={self.n_voxels})"


def sample_points(grid: SparseGrid, points) -> tuple[np.ndarray, np.ndarray]:
    """Raw (pre-activation) trilinear sigma and SH at many world points."""
    points = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    return kernels.sample_points(grid.index, grid.sigma, grid.sh, grid.dims.lo, grid.dims.voxel_size, points)


def sample_trilinear(grid: SparseGrid, x) -> tuple[float, np.ndarray]:
    """Trilinear blend of the 8 voxels around ``x``.

    Unoccupied corners contribute zero. Blending happens on raw coefficients;
    activation is applied later by the renderer.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (3,) or not grid.dims.contains(x):
        raise ValueError(f"point {x} lies outside the grid box")
    s, sh = sample_points(grid, x[None])
    return float(s[0]), sh[0]


def prune(grid: SparseGrid, sigma_threshold: float, within=None) -> SparseGrid:
    """Drop voxels whose activated opacity is <= ``sigma_threshold``.

    With ``within`` (a boolean volume) only voxels inside it are candidates.
    """
    if sigma_threshold < 0:
        raise ValueError("sigma_threshold must be >= 0")
    keep = np.maximum(grid.sigma, 0.0) > sigma_threshold
    if within is not None:
        keep |= ~np.asarray(within, dtype=bool)[grid.mask]
    mask = np.zeros(grid.dims.shape, bool)
    mask[grid.mask] = keep
    return SparseGrid(grid.dims, mask, grid.sigma[keep], grid.sh[keep])


def upsample(grid: SparseGrid, factor: int = 2) -> SparseGrid:
    """Resample at ``factor``x resolution by trilinear lookup at the new centres."""
    if factor != 2:
        raise ValueError("only factor 2 is supported")
    dims = grid.dims.with_shape(tuple(2 * n for n in grid.dims.shape))
    pts = dims.centers().reshape(-1, 3)
    from ._fallback import _stencil

    ids, ws = _stencil(grid.index, grid.dims.lo, grid.dims.voxel_size, pts)
    mask = ((ids >= 0) & (ws > 0.0)).any(axis=1)
    sig, sh = sample_points(grid, pts[mask])
    return SparseGrid(dims, mask.reshape(dims.shape), sig.astype(np.float32), sh.astype(np.float32))


def downsample(grid: SparseGrid) -> SparseGrid:
    """Halve the resolution; each parent is the mean of its occupied children.

    Odd axes are padded by replicating the last slice, which extends the box by
    one child voxel along that axis.
    """
    d = grid.dims
    sig, sh = grid.to_dense()
    occ = grid.mask
    pad = [(0, n % 2) for n in d.shape]
    if any(p[1] for p in pad):
        occ = np.pad(occ, pad, mode="edge")
        sig = np.pad(sig, pad, mode="edge")
        sh = np.pad(sh, pad + [(0, 0)], mode="edge")
    half = tuple(n // 2 for n in occ.shape)
    hi = tuple(d.lo + d.voxel_size * np.array(occ.shape))
    out_dims = GridDims(*half, d.world_min, hi)

    def blocks(a):
        rest = a.shape[3:]
        a = a.reshape(half[0], 2, half[1], 2, half[2], 2, *rest)
        order = (0, 2, 4, 1, 3, 5) + tuple(range(6, 6 + len(rest)))
        return a.transpose(order).reshape(*half, 8, *rest)

    occ_b = blocks(occ)
    count = occ_b.sum(axis=3)
    mask = count > 0
    sig_b = blocks(sig.astype(np.float64))
    sh_b = blocks(sh.astype(np.float64))
    denom = np.maximum(count, 1)
    sig_mean = (sig_b * occ_b).sum(axis=3) / denom
    sh_mean = (sh_b * occ_b[..., None]).sum(axis=3) / denom[..., None]
    return SparseGrid.from_dense(out_dims, mask, sig_mean.astype(np.float32), sh_mean.astype(np.float32))


# checkpoint I/O -------------------------------------------------------------


def pack_mask(mask: np.ndarray) -> bytes:
    """Bit-pack a boolean volume, row-major z fastest, bit i of byte k = voxel 8k+i."""
    return np.packbits(np.ascontiguousarray(mask, dtype=bool).reshape(-1), bitorder="little").tobytes()


def unpack_mask(data: bytes, shape) -> np.ndarray:
    n = int(np.prod(shape))
    need = (n + 7) // 8
    if len(data) < need:
        raise ValueError(f"mask needs {need} bytes, got {len(data)}")
    bits = np.unpackbits(np.frombuffer(data[:need], np.uint8), count=n, bitorder="little")
    return bits.astype(bool).reshape(shape)


def grid_to_bytes(grid: SparseGrid, level: int = 9) -> bytes:
    d = grid.dims
    body = b"".join([
        struct.pack("<3I", *d.shape),
        struct.pack("<6f", *d.world_min, *d.world_max),
        pack_mask(grid.mask),
        grid.values().astype("<f4").tobytes(),
    ])
    return CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION) + zlib.compress(body, level)


def grid_from_bytes(data: bytes) -> SparseGrid:
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError("bad magic: not a grid checkpoint")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    try:
        body = zlib.decompress(data[8:])
    except zlib.error as exc:
        raise ValueError(f"corrupt checkpoint payload: {exc}") from exc
    shape = struct.unpack_from("<3I", body, 0)
    bbox = struct.unpack_from("<6f", body, 12)
    dims = GridDims(*shape, bbox[:3], bbox[3:])
    off = 36
    nbytes = (dims.n_cells + 7) // 8
    mask = unpack_mask(body[off:off + nbytes], shape)
    off += nbytes
    n = int(mask.sum())
    vals = np.frombuffer(body, dtype="<f4", offset=off)
    if vals.size != n * N_VALUES:
        raise ValueError(f"checkpoint holds {vals.size} floats, expected {n * N_VALUES}")
    vals = vals.reshape(n, N_VALUES).astype(np.float32)
    return SparseGrid(dims, mask, vals[:, 0], vals[:, 1:])


def save_grid(grid: SparseGrid, path) -> None:
    with open(path, "wb") as f:
        f.write(grid_to_bytes(grid))


def load_grid(path) -> SparseGrid:
    with open(path, "rb") as f:
        return grid_from_bytes(f.read())
