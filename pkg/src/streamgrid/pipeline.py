"""Base-frame training and the per-frame streaming loop, plus checkpoint directories.

A checkpoint directory holds ``base.sgrd``, one ``delta_NNNN.sdlt`` per
streamed frame and a ``manifest.txt`` of ``key = value`` lines.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .band import activate_band, compute_band
from .codec import DeltaError, FrameDelta, apply_delta, compute_masks, delta_from_bytes, encode_delta, grid_diff
from .config import Config
from .grid import N_SH, SparseGrid, load_grid, prune, save_grid, upsample
from .pilot import fill_back, guidance_mask, guided_tune, make_pilot
from .train import rays_from_views, tune

log = logging.getLogger(__name__)

BASE_FILE = "base.sgrd"
MANIFEST_FILE = "manifest.txt"
DELTA_RE = re.compile(r"^delta_(\d{4,})\.sdlt$")


def delta_name(frame: int) -> str:
    return f"delta_{frame:04d}.sdlt"


# base frame -------------------------------------------------------------------


def init_grid(config: Config) -> SparseGrid:
    return SparseGrid.full(config.base_dims(), sigma=config.init_sigma, sh=np.zeros(N_SH, np.float32))


def stage_iters(total: int, stages: int) -> list[int]:
    """Split ``total`` iterations over ``stages`` as evenly as possible, remainder first."""
    base, extra = divmod(total, stages)
    return [base + (1 if s < extra else 0) for s in range(stages)]


def train_base(views, config: Config, rng: np.random.Generator | None = None) -> SparseGrid:
    """Coarse-to-fine training on [(Camera, image)] views.

    Each stage trains the whole grid, then prunes; every stage but the last
    is followed by a x2 upsample.
    """
    if len(views) < 2:
        raise ValueError("base training needs at least 2 views")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    grid = init_grid(config)
    rays = rays_from_views(views, grid.dims)
    if config.base_iters == 0:
        return grid
    tc = config.base_train_config()
    n_stages = config.upsample_stages + 1
    for s, iters in enumerate(stage_iters(config.base_iters, n_stages)):
        res = tune(grid, rays, grid.mask, replace(tc, iters=iters), rng)
        before = grid.n_voxels
        grid = prune(grid, config.base_prune_threshold)
        log.info("base stage %d %s: %d iters, loss %.5f, %d -> %d voxels", s, grid.dims.shape, iters,
                 res.losses[-1] if res.losses else float("nan"), before, grid.n_voxels)
        if s < n_stages - 1:
            grid = upsample(grid)
    return grid


# streaming ---------------------------------------------------------------------


@dataclass
class StepInfo:
    """What a stream step touched; ``trainable`` is the full-scale set that may change."""

    band: np.ndarray
    guidance: np.ndarray
    trainable: np.ndarray
    pilot_changed: int
    n_voxels: int


def _pilot_stage(grid_prev: SparseGrid, views, config: Config, rng):
    pilot_prev = make_pilot(grid_prev)
    if config.use_band:
        pband = compute_band(pilot_prev.mask, config.pilot_rho_d, config.pilot_rho_e)
    else:
        pband = pilot_prev.mask.copy()
    pilot, pband = activate_band(pilot_prev, pband)
    rays = rays_from_views(views, pilot.dims)
    tune(pilot, rays, pband, config.pilot_train_config(), rng)
    pilot = prune(pilot, config.stream_prune_threshold, within=pband)
    d_sigma, d_sh = grid_diff(pilot_prev, pilot)
    masks = compute_masks(pilot_prev.mask, pilot.mask, d_sh, config.pilot_epsilon)
    masks.m_remain |= pilot_prev.mask & pilot.mask & (np.abs(d_sigma) > config.pilot_sigma_epsilon)
    log.debug("pilot %s: add %d erase %d remain %d", pilot.dims.shape, int(masks.m_add.sum()),
              int(masks.m_erase.sum()), int(masks.m_remain.sum()))
    return pilot, masks


def stream_step(grid_prev: SparseGrid, views, config: Config, rng: np.random.Generator,
                frame_index: int = 0) -> tuple[SparseGrid, bytes, StepInfo]:
    """Tune ``grid_prev`` to frame ``views`` and encode the change.

    The returned grid is the decoded delta applied to ``grid_prev``, so a
    replay of the stored deltas reproduces it bit for bit.
    """
    shape = grid_prev.dims.shape
    if config.use_band:
        band = compute_band(grid_prev.mask, config.rho_d, config.rho_e)
    else:
        band = grid_prev.mask.copy()
    grid, band = activate_band(grid_prev, band)

    if config.use_pilot:
        pilot, pmasks = _pilot_stage(grid_prev, views, config, rng)
        guidance = guidance_mask(pmasks, grid_prev.dims)
        grid = fill_back(grid, pilot, pmasks)
        pilot_changed = int(pmasks.merged().sum())
    else:
        guidance = np.ones(shape, bool)
        pilot_changed = 0

    # voxels created by fill-back are new, so they are trainable like band voxels
    trainable = guidance & grid.mask & (band | ~grid_prev.mask)
    rays = rays_from_views(views, grid.dims)
    guided_tune(grid, rays, trainable, config.full_train_config(), rng)
    # frozen voxels must come through untouched, so only tuned voxels are pruned
    grid = prune(grid, config.stream_prune_threshold, within=trainable)

    data = encode_delta(grid_prev, grid, config.epsilon, config.sigma_epsilon, frame_index)
    grid_next = apply_delta(grid_prev, data)
    info = StepInfo(band, guidance, trainable, pilot_changed, grid_next.n_voxels)
    return grid_next, data, info


def replay(base: SparseGrid, deltas, t: int) -> SparseGrid:
    """Fold deltas 1..t onto ``base``; each must carry the next frame index."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t > len(deltas):
        raise DeltaError(f"frame {t} requested but only {len(deltas)} deltas available")
    grid = base
    for j in range(t):
        d = deltas[j]
        if isinstance(d, (bytes, bytearray)):
            d = delta_from_bytes(bytes(d))
        if not isinstance(d, FrameDelta):
            raise TypeError(f"expected delta bytes or FrameDelta, got {type(d).__name__}")
        if d.frame_index != j + 1:
            raise DeltaError(f"delta index gap: expected frame {j + 1}, got {d.frame_index}")
        grid = apply_delta(grid, d)
    return grid


# checkpoint directories ------------------------------------------------------------


def write_manifest(out_dir, config: Config, n_frames: int) -> None:
    dims = config.final_dims()
    lines = [
        f"dims = {' '.join(str(n) for n in dims.shape)}",
        f"world_min = {' '.join(repr(v) for v in dims.world_min)}",
        f"world_max = {' '.join(repr(v) for v in dims.world_max)}",
        f"epsilon = {config.epsilon!r}",
        f"sigma_epsilon = {config.sigma_epsilon!r}",
        f"rho_d = {config.rho_d}",
        f"rho_e = {config.rho_e}",
        f"frames = {n_frames}",
    ]
    Path(out_dir, MANIFEST_FILE).write_text("\n".join(lines) + "\n")


def read_manifest(ckpt_dir) -> dict:
    p = Path(ckpt_dir, MANIFEST_FILE)
    out = {}
    for line in p.read_text().splitlines():
        if "=" in line:
            k, v = (x.strip() for x in line.split("=", 1))
            out[k] = v
    return out


def list_deltas(ckpt_dir) -> list[Path]:
    """Delta files sorted by frame; raises on a gap in the numbering."""
    found = {}
    for p in Path(ckpt_dir).iterdir():
        m = DELTA_RE.match(p.name)
        if m:
            found[int(m.group(1))] = p
    frames = sorted(found)
    for j, f in enumerate(frames, start=1):
        if f != j:
            raise DeltaError(f"delta index gap in {ckpt_dir}: expected frame {j}, found {f}")
    return [found[f] for f in frames]


def load_checkpoint(ckpt_dir, t: int | None = None) -> SparseGrid:
    """Base grid of ``ckpt_dir`` with its deltas replayed up to frame ``t`` (default: last)."""
    ckpt_dir = Path(ckpt_dir)
    base_path = ckpt_dir / BASE_FILE
    if not base_path.exists():
        raise FileNotFoundError(f"no {BASE_FILE} in {ckpt_dir}")
    base = load_grid(base_path)
    paths = list_deltas(ckpt_dir)
    t = len(paths) if t is None else t
    if t > len(paths):
        raise DeltaError(f"frame {t} is beyond the last delta ({len(paths)})")
    return replay(base, [p.read_bytes() for p in paths[:t]], t)


def save_base(grid: SparseGrid, out_dir, config: Config) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_grid(grid, out / BASE_FILE)
    write_manifest(out, config, 0)


def frame_rng(seed: int, frame_index: int) -> np.random.Generator:
    """Per-frame generator, so a resumed run draws the same batches as an uninterrupted one."""
    return np.random.default_rng((seed, frame_index))


def stream_sequence(grid: SparseGrid, frames, config: Config):
    """Yield (FrameSet, grid, delta bytes, StepInfo) for each FrameSet after the base frame.

    Frames must arrive with consecutive indices.
    """
    from .dataset import split_views

    expected = None
    for fs in frames:
        if expected is not None and fs.frame_index != expected:
            raise DeltaError(f"frame gap: expected frame {expected}, got {fs.frame_index}")
        train, _ = split_views(fs, config.holdout_view)
        grid, data, info = stream_step(grid, train, config, frame_rng(config.seed, fs.frame_index),
                                       fs.frame_index)
        expected = fs.frame_index + 1
        yield fs, grid, data, info
