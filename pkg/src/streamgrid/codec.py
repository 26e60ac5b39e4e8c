"""Per-frame model differences: change masks, half-precision payloads, DEFLATE container.

Delta file layout (little-endian)::

    b"SDLT" | u32 version | u32 frame_index | 3 x u32 dims | f32 epsilon
    zlib( packed mask_next | packed m_remain
          | u32 n_add    | n_add x 28 f16 values (sigma first)
          | u32 n_remain | n_remain x 28 f16 diffs )

Only the new occupancy and the remain mask are stored; the add and erase
masks are recovered from the previous occupancy when decoding.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .grid import N_VALUES, SparseGrid, pack_mask, unpack_mask

DELTA_MAGIC = b"SDLT"
DELTA_VERSION = 1
HEADER = struct.Struct("<4sII3If")
HALF_MAX = float(np.finfo(np.float16).max)


class DeltaError(ValueError):
    pass


@dataclass
class DiffMasks:
    m_add: np.ndarray
    m_erase: np.ndarray
    m_remain: np.ndarray

    def merged(self) -> np.ndarray:
        return self.m_add | self.m_erase | self.m_remain


@dataclass
class FrameDelta:
    frame_index: int
    shape: tuple
    epsilon: float
    mask_next: np.ndarray
    m_remain: np.ndarray
    payload_add: np.ndarray  # (n_add, 28) float16
    payload_remain: np.ndarray  # (n_remain, 28) float16

    def __post_init__(self):
        for name in ("payload_add", "payload_remain"):
            arr = getattr(self, name)
            if arr.ndim != 2 or arr.shape[1] != N_VALUES:
                raise DeltaError(f"{name} must have {N_VALUES} columns, got shape {arr.shape}")
        if self.payload_remain.shape[0] != int(self.m_remain.sum()):
            raise DeltaError(f"{self.payload_remain.shape[0]} remain rows for "
                             f"{int(self.m_remain.sum())} remain voxels")

    @property
    def n_add(self) -> int:
        return int(self.payload_add.shape[0])

    @property
    def n_remain(self) -> int:
        return int(self.payload_remain.shape[0])


def compute_masks(mask_prev, mask_next, delta_sh=None, epsilon: float = 0.0) -> DiffMasks:
    """Add / erase / remain masks between two occupancies.

    ``delta_sh`` is a dense (..., 27) volume of SH differences (only read on
    the intersection); a voxel stays in the remain mask when the L1 norm of
    its difference is strictly above ``epsilon``.
    """
    prev = np.asarray(mask_prev, dtype=bool)
    nxt = np.asarray(mask_next, dtype=bool)
    if prev.shape != nxt.shape:
        raise DeltaError(f"mask shapes differ: {prev.shape} vs {nxt.shape}")
    both = prev & nxt
    if delta_sh is None:
        remain = np.zeros_like(both)
    else:
        l1 = np.abs(np.asarray(delta_sh, dtype=np.float64)).sum(axis=-1)
        remain = both & (l1 > epsilon)
    return DiffMasks(nxt & ~prev, prev & ~nxt, remain)


def grid_diff(grid_prev: SparseGrid, grid_next: SparseGrid):
    """Dense float32 differences (sigma, sh) on the shared occupancy, zero elsewhere."""
    if grid_prev.dims.shape != grid_next.dims.shape:
        raise DeltaError(f"dims mismatch: {grid_prev.dims.shape} vs {grid_next.dims.shape}")
    sp, hp = grid_prev.to_dense()
    sn, hn = grid_next.to_dense()
    both = (grid_prev.mask & grid_next.mask)
    d_sigma = np.where(both, sn - sp, np.float32(0))
    d_sh = np.where(both[..., None], hn - hp, np.float32(0))
    return d_sigma, d_sh


def _to_half(x) -> np.ndarray:
    return np.clip(np.asarray(x, dtype=np.float32), -HALF_MAX, HALF_MAX).astype(np.float16)


def make_delta(grid_prev: SparseGrid, grid_next: SparseGrid, epsilon: float, sigma_epsilon: float = 1e-3,
               frame_index: int = 0) -> tuple[FrameDelta, DiffMasks]:
    """Build the in-memory delta and the masks it was gated with."""
    if grid_prev.dims.shape != grid_next.dims.shape:
        raise DeltaError(f"dims mismatch: {grid_prev.dims.shape} vs {grid_next.dims.shape}")
    d_sigma, d_sh = grid_diff(grid_prev, grid_next)
    masks = compute_masks(grid_prev.mask, grid_next.mask, d_sh, epsilon)
    # opacity-only changes get their own gate so they are not dropped by the SH test
    both = grid_prev.mask & grid_next.mask
    masks.m_remain |= both & (np.abs(d_sigma) > sigma_epsilon)
    sn, hn = grid_next.to_dense()
    add_vals = np.concatenate([sn[masks.m_add][:, None], hn[masks.m_add]], axis=1)
    rem_vals = np.concatenate([d_sigma[masks.m_remain][:, None], d_sh[masks.m_remain]], axis=1)
    delta = FrameDelta(frame_index, grid_next.dims.shape, float(np.float32(epsilon)),
                       grid_next.mask.copy(), masks.m_remain.copy(), _to_half(add_vals), _to_half(rem_vals))
    return delta, masks


def delta_to_bytes(delta: FrameDelta, level: int = 9) -> bytes:
    body = b"".join([
        pack_mask(delta.mask_next),
        pack_mask(delta.m_remain),
        struct.pack("<I", delta.n_add),
        delta.payload_add.astype("<f2").tobytes(),
        struct.pack("<I", delta.n_remain),
        delta.payload_remain.astype("<f2").tobytes(),
    ])
    head = HEADER.pack(DELTA_MAGIC, DELTA_VERSION, delta.frame_index, *delta.shape, delta.epsilon)
    return head + zlib.compress(body, level)


def _split_body(data: bytes):
    if len(data) < HEADER.size:
        raise DeltaError("truncated delta header")
    magic, version, frame, nx, ny, nz, eps = HEADER.unpack_from(data, 0)
    if magic != DELTA_MAGIC:
        raise DeltaError("bad magic: not a delta file")
    if version != DELTA_VERSION:
        raise DeltaError(f"unsupported delta version {version}")
    try:
        body = zlib.decompress(data[HEADER.size:])
    except zlib.error as exc:
        raise DeltaError(f"corrupt delta payload: {exc}") from exc
    return frame, (nx, ny, nz), eps, body


def delta_from_bytes(data: bytes) -> FrameDelta:
    frame, shape, eps, body = _split_body(data)
    nbytes = (shape[0] * shape[1] * shape[2] + 7) // 8
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(body):
            raise DeltaError("delta payload shorter than its declared contents")
        chunk = body[off:off + n]
        off += n
        return chunk

    mask_next = unpack_mask(take(nbytes), shape)
    m_remain = unpack_mask(take(nbytes), shape)
    (n_add,) = struct.unpack("<I", take(4))
    add = np.frombuffer(take(2 * N_VALUES * n_add), dtype="<f2").reshape(n_add, N_VALUES)
    (n_rem,) = struct.unpack("<I", take(4))
    rem = np.frombuffer(take(2 * N_VALUES * n_rem), dtype="<f2").reshape(n_rem, N_VALUES)
    if off != len(body):
        raise DeltaError(f"{len(body) - off} trailing bytes in delta payload")
    if n_rem != int(m_remain.sum()):
        raise DeltaError(f"remain payload has {n_rem} rows but the mask marks {int(m_remain.sum())}")
    if (m_remain & ~mask_next).any():
        raise DeltaError("remain mask marks voxels outside the new occupancy")
    return FrameDelta(frame, shape, eps, mask_next, m_remain, add.astype(np.float16), rem.astype(np.float16))


def encode_delta(grid_prev: SparseGrid, grid_next: SparseGrid, epsilon: float, sigma_epsilon: float = 1e-3,
                 frame_index: int = 0) -> bytes:
    """Serialised difference that turns ``grid_prev`` into (approximately) ``grid_next``."""
    delta, _ = make_delta(grid_prev, grid_next, epsilon, sigma_epsilon, frame_index)
    return delta_to_bytes(delta)


def apply_delta(grid_prev: SparseGrid, delta) -> SparseGrid:
    """Next grid: new occupancy, added voxels from the payload, remain voxels incremented."""
    if isinstance(delta, (bytes, bytearray)):
        delta = delta_from_bytes(bytes(delta))
    if tuple(delta.shape) != grid_prev.dims.shape:
        raise DeltaError(f"delta dims {tuple(delta.shape)} do not match grid {grid_prev.dims.shape}")
    m_add = delta.mask_next & ~grid_prev.mask
    if int(m_add.sum()) != delta.n_add:
        raise DeltaError(f"add payload has {delta.n_add} rows but {int(m_add.sum())} voxels were added")
    if (delta.m_remain & ~grid_prev.mask).any():
        raise DeltaError("remain mask marks voxels absent from the previous grid")
    sig, sh = grid_prev.to_dense()
    add = delta.payload_add.astype(np.float32)
    sig[m_add] = add[:, 0]
    sh[m_add] = add[:, 1:]
    rem = delta.payload_remain.astype(np.float32)
    sig[delta.m_remain] += rem[:, 0]
    sh[delta.m_remain] += rem[:, 1:]
    return SparseGrid.from_dense(grid_prev.dims, delta.mask_next, sig, sh)


def delta_stats(data: bytes) -> dict:
    """Byte counts at each size-reduction stage, plus mask popcounts.

    Stages: ``raw`` stores every shared voxel in float32, ``threshold`` only
    the gated ones, ``half`` the same in float16, ``deflate`` is the file.
    """
    delta = delta_from_bytes(data)
    _, _, _, body = _split_body(data)
    mask_bytes = (int(np.prod(delta.shape)) + 7) // 8
    n_next = int(delta.mask_next.sum())
    n_shared = n_next - delta.n_add
    row32 = 4 * N_VALUES
    row16 = 2 * N_VALUES
    masks_raw = 2 * mask_bytes
    parts = {
        "M": zlib.compress(pack_mask(delta.mask_next), 9),
        "M_r": zlib.compress(pack_mask(delta.m_remain), 9),
        "V_r": zlib.compress(delta.payload_remain.astype("<f2").tobytes(), 9),
        "V_a": zlib.compress(delta.payload_add.astype("<f2").tobytes(), 9),
    }
    return {
        "frame_index": delta.frame_index,
        "epsilon": delta.epsilon,
        "shape": tuple(delta.shape),
        "n_occupied": n_next,
        "n_add": delta.n_add,
        "n_erase_or_shared": n_shared,
        "n_remain": delta.n_remain,
        "masks_raw": masks_raw,
        "masks_deflate": len(parts["M"]) + len(parts["M_r"]),
        "raw": masks_raw + (n_shared + delta.n_add) * row32,
        "threshold": masks_raw + (delta.n_remain + delta.n_add) * row32,
        "half": masks_raw + 8 + (delta.n_remain + delta.n_add) * row16,
        "deflate": len(data),
        "header": HEADER.size,
        "body_deflate": len(data) - HEADER.size,
        "body_raw": len(body),
        "parts_deflate": {k: len(v) for k, v in parts.items()},
    }


def save_delta(data: bytes, path) -> None:
    with open(path, "wb") as f:
        f.write(data)


def load_delta(path) -> FrameDelta:
    with open(path, "rb") as f:
        return delta_from_bytes(f.read())


def decode_delta(data: bytes) -> FrameDelta:
    return delta_from_bytes(data)
