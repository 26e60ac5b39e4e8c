"""Pinhole cameras, ray generation and volume rendering over a sparse grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from ._backend import kernels
from .grid import GridDims, SparseGrid, sample_points
from .sh import eval_color


@dataclass
class Camera:
    """Pinhole camera; ``pose`` is camera-to-world with OpenCV axes (x right, y down, z forward)."""

    fx: float
    fy: float
    cx: float
    cy: float
    pose: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64).reshape(4, 4)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        rot = self.pose[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-5):
            raise ValueError("pose rotation is not orthonormal")

    @classmethod
    def look_at(cls, eye, target, up, width: int, height: int, fov_deg: float) -> Camera:
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        pose = np.eye(4)
        pose[:3, 0] = right
        pose[:3, 1] = down
        pose[:3, 2] = fwd
        pose[:3, 3] = eye
        f = 0.5 * width / math.tan(math.radians(fov_deg) / 2)
        return cls(f, f, width / 2, height / 2, pose, width, height)

    @property
    def center(self) -> np.ndarray:
        return self.pose[:3, 3].copy()

    @property
    def forward(self) -> np.ndarray:
        return self.pose[:3, 2].copy()


@dataclass
class Ray:
    origin: np.ndarray
    dir: np.ndarray
    t_near: float
    t_far: float


@dataclass
class RaySample:
    t: float
    sigma: float
    rgb: np.ndarray = field(repr=False)
    delta: float


def default_step(dims: GridDims) -> float:
    """Half the smallest voxel edge."""
    return 0.5 * float(dims.voxel_size.min())


def camera_rays(cam: Camera, px=None, py=None) -> tuple[np.ndarray, np.ndarray]:
    """Origins and unit directions through pixel centres (all pixels by default)."""
    if px is None:
        py, px = np.meshgrid(np.arange(cam.height), np.arange(cam.width), indexing="ij")
    px = np.asarray(px, dtype=np.float64).reshape(-1)
    py = np.asarray(py, dtype=np.float64).reshape(-1)
    dx = (px + 0.5 - cam.cx) / cam.fx
    dy = (py + 0.5 - cam.cy) / cam.fy
    dz = np.ones_like(dx)
    r = cam.pose[:3, :3]
    w = [r[a, 0] * dx + r[a, 1] * dy + r[a, 2] * dz for a in range(3)]
    norm = np.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    dirs = np.stack([w[0] / norm, w[1] / norm, w[2] / norm], axis=-1)
    origins = np.broadcast_to(cam.pose[:3, 3], dirs.shape).copy()
    return origins, dirs


def clip_rays(origins, dirs, dims: GridDims):
    """Slab test against the grid box; returns (t_near, t_far, hit)."""
    lo, hi = dims.lo, dims.hi
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - origins) / dirs
        t2 = (hi - origins) / dirs
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    parallel = dirs == 0.0
    inside = (origins >= lo) & (origins <= hi)
    tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
    t_near = np.maximum(tmin.max(axis=1), 0.0)
    t_far = tmax.min(axis=1)
    hit = t_far > t_near
    return t_near, t_far, hit


def generate_ray(cam: Camera, px, dims: GridDims) -> Ray | None:
    """Ray through pixel ``px = (x, y)``, clipped to the grid box; None on a miss."""
    x, y = px
    if not (0 <= x < cam.width and 0 <= y < cam.height):
        raise ValueError(f"pixel {px} outside the {cam.width}x{cam.height} image")
    o, d = camera_rays(cam, [x], [y])
    tn, tf, hit = clip_rays(o, d, dims)
    if not hit[0]:
        return None
    return Ray(o[0], d[0], float(tn[0]), float(tf[0]))


def sample_ts(t_near: float, t_far: float, step: float) -> np.ndarray:
    n = int(math.floor((t_far - t_near) / step)) if t_far > t_near else 0
    return np.array([t_near + (j + 0.5) * step for j in range(n)])


def march_ray(grid: SparseGrid, ray: Ray, step: float | None = None, d=None) -> list[RaySample]:
    """Uniform samples along the ray, each evaluated by trilinear lookup + SH colour."""
    step = default_step(grid.dims) if step is None else step
    if step <= 0:
        raise ValueError("step must be positive")
    d = ray.dir if d is None else d
    ts = sample_ts(ray.t_near, ray.t_far, step)
    if ts.size == 0:
        return []
    pts = np.stack([ray.origin[a] + ts * ray.dir[a] for a in range(3)], axis=-1)
    sraw, sh = sample_points(grid, pts)
    return [
        RaySample(float(t), max(float(s), 0.0), eval_color(c, d), step)
        for t, s, c in zip(ts, sraw, sh)
    ]


def composite(samples) -> tuple[np.ndarray, float]:
    """Alpha-composite ordered samples; returns (colour, final transmittance)."""
    acc = 0.0
    rgb = np.zeros(3)
    for s in samples:
        sd = s.sigma * s.delta
        w = math.exp(-acc) * (1.0 - math.exp(-sd))
        for ch in range(3):
            rgb[ch] += w * float(s.rgb[ch])
        acc += sd
    return rgb, math.exp(-acc)


def render_rays(grid: SparseGrid, origins, dirs, t_near, t_far, step=None, background=(0.0, 0.0, 0.0)):
    """Batch render of already-clipped rays; returns (rgb, final transmittance)."""
    step = default_step(grid.dims) if step is None else float(step)
    return kernels.render_forward(
        grid.index, grid.sigma, grid.sh, grid.dims.lo, grid.dims.voxel_size,
        np.ascontiguousarray(origins, dtype=np.float64), np.ascontiguousarray(dirs, dtype=np.float64),
        np.ascontiguousarray(t_near, dtype=np.float64), np.ascontiguousarray(t_far, dtype=np.float64),
        step, np.asarray(background, dtype=np.float64),
    )


def render_image(grid: SparseGrid, cam: Camera, background=(0.0, 0.0, 0.0), step=None) -> np.ndarray:
    """Render a (height, width, 3) float64 image; rays missing the box get the background."""
    bg = np.asarray(background, dtype=np.float64)
    origins, dirs = camera_rays(cam)
    tn, tf, hit = clip_rays(origins, dirs, grid.dims)
    out = np.tile(bg, (origins.shape[0], 1))
    if hit.any():
        rgb, _ = render_rays(grid, origins[hit], dirs[hit], tn[hit], tf[hit], step, bg)
        out[hit] = rgb
    return out.reshape(cam.height, cam.width, 3)


def to_uint8(img) -> np.ndarray:
    return (np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_png(img, path) -> None:
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_raw(img, path) -> None:
    """Little-endian float32 dump of the image array."""
    np.asarray(img, dtype="<f4").tofile(path)


def psnr(pred, target) -> float:
    mse = float(np.mean((np.asarray(pred, np.float64) - np.asarray(target, np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)
