"""Streaming sparse-voxel radiance fields.

A base frame is trained coarse-to-fine into a :class:`SparseGrid`; every
later frame is tuned only inside a narrow band around the previous occupancy
(optionally steered by a half-resolution pilot model) and stored as a
compressed per-frame delta.

The ray-marching kernels come from a compiled extension when it is
available and from a numpy implementation otherwise; ``BACKEND`` names the
one in use and ``STREAMGRID_BACKEND=python`` forces the fallback.
"""

from ._backend import BACKEND
from .band import activate_band, compute_band, dilate, erode
from .codec import (DeltaError, DiffMasks, FrameDelta, apply_delta, compute_masks, decode_delta,
                    delta_stats, encode_delta)
from .config import Config, ConfigError, load_config, load_preset, parse_config
from .dataset import FrameSet, MovingSphere, generate_synthetic, load_dataset, ring_cameras, save_dataset
from .grid import GridDims, SparseGrid, downsample, load_grid, prune, sample_trilinear, save_grid, upsample
from .pilot import fill_back, guidance_mask, guided_tune, make_pilot
from .pipeline import replay, stream_step, train_base
from .render import Camera, composite, march_ray, psnr, render_image
from .sh import eval_color, sh_basis
from .train import TrainConfig, backward, photometric_loss, rmsprop_step, tune, tv_loss_grad

__version__ = "0.1.0"
