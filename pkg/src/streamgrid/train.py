"""Photometric loss, analytic gradients, TV regularisation and masked RMSProp."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ._backend import kernels
from .grid import N_SH, GridDims, SparseGrid
from .render import camera_rays, clip_rays, default_step

log = logging.getLogger(__name__)

RMS_EPS = 1e-8


@dataclass
class TrainConfig:
    # lr defaults are inherited Plenoxels values, not the reference-scale values
    lr_sigma: float = 3e1
    lr_sh: float = 1e-2
    rms_decay: float = 0.95
    lambda_tv_sigma: float = 5e-4
    lambda_tv_sh: float = 5e-3
    batch_rays: int = 2048
    iters: int = 100
    background: tuple = (0.0, 0.0, 0.0)
    step: float | None = None

    def __post_init__(self):
        if not 0.0 < self.rms_decay < 1.0:
            raise ValueError("rms_decay must lie in (0, 1)")
        if self.lr_sigma <= 0 or self.lr_sh <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_rays < 1 or self.iters < 0:
            raise ValueError("batch_rays must be >= 1 and iters >= 0")
        if self.lambda_tv_sigma < 0 or self.lambda_tv_sh < 0:
            raise ValueError("TV weights must be >= 0")

    def scaled_tv(self, factor: float) -> TrainConfig:
        return replace(self, lambda_tv_sigma=self.lambda_tv_sigma * factor,
                       lambda_tv_sh=self.lambda_tv_sh * factor)


@dataclass
class RayBatch:
    origins: np.ndarray
    dirs: np.ndarray
    t_near: np.ndarray
    t_far: np.ndarray
    colors: np.ndarray

    def __len__(self):
        return self.origins.shape[0]

    def subset(self, idx) -> RayBatch:
        return RayBatch(self.origins[idx], self.dirs[idx], self.t_near[idx], self.t_far[idx], self.colors[idx])


def rays_from_views(views, dims: GridDims) -> RayBatch:
    """All pixel rays of ``views`` [(Camera, image)] that hit the grid box."""
    parts = []
    for cam, img in views:
        o, d = camera_rays(cam)
        tn, tf, hit = clip_rays(o, d, dims)
        c = np.asarray(img, dtype=np.float64).reshape(-1, 3)
        parts.append((o[hit], d[hit], tn[hit], tf[hit], c[hit]))
    if not parts or sum(p[0].shape[0] for p in parts) == 0:
        raise ValueError("no training ray intersects the grid box")
    return RayBatch(*(np.ascontiguousarray(np.concatenate(x)) for x in zip(*parts)))


@dataclass
class RMSPropState:
    sigma: np.ndarray
    sh: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> RMSPropState:
        return cls(np.zeros(n), np.zeros((n, N_SH)))


def _kernel_args(grid: SparseGrid, rays: RayBatch, step, background):
    step = default_step(grid.dims) if step is None else float(step)
    return (grid.index, grid.sigma, grid.sh, grid.dims.lo, grid.dims.voxel_size,
            rays.origins, rays.dirs, rays.t_near, rays.t_far, step,
            np.asarray(background, dtype=np.float64))


def photometric_loss(grid: SparseGrid, rays: RayBatch, gt_colors=None, step=None,
                     background=(0.0, 0.0, 0.0)) -> float:
    """Mean over rays and channels of the squared colour error."""
    gt = rays.colors if gt_colors is None else np.asarray(gt_colors, dtype=np.float64)
    if gt.shape != (len(rays), 3):
        raise ValueError("need one ground-truth colour per ray")
    if len(rays) == 0:
        return 0.0
    rgb, _ = kernels.render_forward(*_kernel_args(grid, rays, step, background))
    return float(np.mean((rgb - gt) ** 2))


def backward(grid: SparseGrid, rays: RayBatch, gt_colors=None, trainable=None, step=None,
             background=(0.0, 0.0, 0.0)):
    """Loss and exact gradients w.r.t. raw per-voxel sigma (N,) and sh (N, 27).

    ``trainable`` is a boolean volume; gradients of voxels outside it are zero.
    """
    gt = rays.colors if gt_colors is None else np.asarray(gt_colors, dtype=np.float64)
    n = grid.n_voxels
    g_sigma = np.zeros(n)
    g_sh = np.zeros((n, N_SH))
    if len(rays) == 0:
        return 0.0, g_sigma, g_sh
    _, loss = kernels.render_backward(*_kernel_args(grid, rays, step, background),
                                      np.ascontiguousarray(gt), 1.0 / (3 * len(rays)), g_sigma, g_sh)
    if trainable is not None:
        frozen = ~np.asarray(trainable, dtype=bool)[grid.mask]
        g_sigma[frozen] = 0.0
        g_sh[frozen] = 0.0
    return loss, g_sigma, g_sh


def tv_pairs(grid: SparseGrid, trainable=None):
    """Storage slots of 6-connected neighbour pairs where both voxels are occupied.

    Returns (pairs, total) where ``pairs`` is one (a, b) slot-array tuple per
    axis and ``total`` counts every occupied pair in the grid. With
    ``trainable`` given, only pairs touching a trainable voxel are listed.
    """
    idx = grid.index
    tr = None if trainable is None else np.asarray(trainable, dtype=bool)
    out = []
    total = 0
    for axis in range(3):
        a = np.moveaxis(idx, axis, 0)[:-1]
        b = np.moveaxis(idx, axis, 0)[1:]
        ok = (a >= 0) & (b >= 0)
        total += int(ok.sum())
        if tr is not None:
            ta = np.moveaxis(tr, axis, 0)
            ok &= ta[:-1] | ta[1:]
        out.append((a[ok].astype(np.int64), b[ok].astype(np.int64)))
    return out, total


def tv_loss_grad(grid: SparseGrid, trainable=None, lambda_sigma: float = 5e-4, lambda_sh: float = 5e-3,
                 pairs=None):
    """Squared-difference TV over occupied 6-neighbour pairs, averaged over pairs.

    Returns (loss, grad_sigma, grad_sh); gradients are zero outside ``trainable``.
    """
    n = grid.n_voxels
    g_sigma = np.zeros(n)
    g_sh = np.zeros((n, N_SH))
    pairs, total = tv_pairs(grid, trainable) if pairs is None else pairs
    if total == 0:
        return 0.0, g_sigma, g_sh
    ls = lambda_sigma / total
    lh = lambda_sh / total
    loss = 0.0
    sig = grid.sigma.astype(np.float64)
    sh = grid.sh.astype(np.float64)
    for a, b in pairs:
        # a and b are each duplicate-free within one axis, so fancy += is safe
        ds = sig[a] - sig[b]
        dh = sh[a] - sh[b]
        loss += ls * float(ds @ ds) + lh * float(np.sum(dh * dh))
        g_sigma[a] += 2.0 * ls * ds
        g_sigma[b] -= 2.0 * ls * ds
        g_sh[a] += 2.0 * lh * dh
        g_sh[b] -= 2.0 * lh * dh
    if trainable is not None:
        frozen = ~np.asarray(trainable, dtype=bool)[grid.mask]
        g_sigma[frozen] = 0.0
        g_sh[frozen] = 0.0
    return loss, g_sigma, g_sh


def rmsprop_step(params, grads, state, lr: float, decay: float = 0.95, eps: float = RMS_EPS):
    """One RMSProp update; returns (new_params, new_state) in float64."""
    g = np.asarray(grads, dtype=np.float64)
    s = decay * np.asarray(state, dtype=np.float64) + (1.0 - decay) * g * g
    p = np.asarray(params, dtype=np.float64) - lr * g / (np.sqrt(s) + eps)
    return p, s


@dataclass
class TuneResult:
    losses: list = field(default_factory=list)
    trained_voxels: int = 0


def tune(grid: SparseGrid, rays: RayBatch, trainable, config: TrainConfig,
         rng: np.random.Generator) -> TuneResult:
    """Optimise the parameters of ``grid`` in place; occupancy is left untouched.

    Only voxels in ``trainable`` (a boolean volume) are written; every other
    parameter keeps its exact bit pattern.
    """
    trainable = np.asarray(trainable, dtype=bool) & grid.mask
    slots = np.flatnonzero(trainable[grid.mask])
    result = TuneResult(trained_voxels=int(slots.size))
    if slots.size == 0 or config.iters == 0 or len(rays) == 0:
        return result
    state = RMSPropState.zeros(slots.size)
    pairs = tv_pairs(grid, trainable)
    use_tv = config.lambda_tv_sigma > 0 or config.lambda_tv_sh > 0
    nrays = len(rays)
    for it in range(config.iters):
        if config.batch_rays >= nrays:
            batch = rays
        else:
            batch = rays.subset(np.sort(rng.choice(nrays, size=config.batch_rays, replace=False)))
        loss, g_sigma, g_sh = backward(grid, batch, step=config.step, background=config.background)
        if use_tv:
            _, tv_s, tv_h = tv_loss_grad(grid, None, config.lambda_tv_sigma, config.lambda_tv_sh, pairs)
            g_sigma += tv_s
            g_sh += tv_h
        p, state.sigma = rmsprop_step(grid.sigma[slots], g_sigma[slots], state.sigma,
                                      config.lr_sigma, config.rms_decay)
        grid.sigma[slots] = p
        p, state.sh = rmsprop_step(grid.sh[slots], g_sh[slots], state.sh, config.lr_sh, config.rms_decay)
        grid.sh[slots] = p
        result.losses.append(loss)
        if log.isEnabledFor(logging.DEBUG) and (it % 50 == 0 or it == config.iters - 1):
            log.debug("iter %d/%d loss %.6f", it + 1, config.iters, loss)
    return result
