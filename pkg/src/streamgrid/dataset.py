"""Multi-view frame loading/saving and a synthetic moving-sphere scene."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import GridDims, SparseGrid
from .render import Camera, read_png, render_image, to_uint8, write_png
from .sh import dc_coefficients

POSES_FILE = "poses.txt"
FRAMES_DIR = "frames"


class DatasetError(ValueError):
    pass


@dataclass
class FrameSet:
    frame_index: int
    views: list = field(default_factory=list)  # [(Camera, image HxWx3 float in [0, 1])]

    def __post_init__(self):
        if not self.views:
            raise DatasetError(f"frame {self.frame_index} has no views")
        for v, (cam, img) in enumerate(self.views):
            if np.shape(img) != (cam.height, cam.width, 3):
                raise DatasetError(f"frame {self.frame_index} view {v}: image shape {np.shape(img)} "
                                   f"does not match camera {cam.height}x{cam.width}")

    @property
    def cameras(self) -> list[Camera]:
        return [c for c, _ in self.views]

    def select(self, view_ids) -> list:
        return [self.views[i] for i in view_ids]


# on-disk layout -------------------------------------------------------------


def format_pose_row(cam: Camera) -> str:
    vals = [cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height, *cam.pose.reshape(-1)]
    return " ".join(repr(float(v)) if i not in (4, 5) else str(int(v)) for i, v in enumerate(vals))


def parse_poses(text: str) -> list[Camera]:
    """Cameras from poses text: per line ``fx fy cx cy w h`` then 16 row-major pose floats."""
    cams = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 22:
            raise DatasetError(f"{POSES_FILE} line {lineno}: expected 22 values, got {len(parts)}")
        try:
            fx, fy, cx, cy = (float(p) for p in parts[:4])
            w, h = int(parts[4]), int(parts[5])
            pose = np.array([float(p) for p in parts[6:]]).reshape(4, 4)
            cams.append(Camera(fx, fy, cx, cy, pose, w, h))
        except ValueError as exc:
            raise DatasetError(f"{POSES_FILE} line {lineno}: {exc}") from exc
    return cams


def view_path(root, frame: int, view: int) -> Path:
    return Path(root) / FRAMES_DIR / f"{frame:04d}" / f"{view:02d}.png"


def load_dataset(path):
    """Yield FrameSets in frame order from ``poses.txt`` + ``frames/FFFF/VV.png``.

    A directory with no poses file and no frames yields nothing.
    """
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset not found: {root}")
    poses = root / POSES_FILE
    frames_dir = root / FRAMES_DIR
    frame_ids = sorted(int(p.name) for p in frames_dir.iterdir() if p.is_dir()) if frames_dir.is_dir() else []
    if not poses.exists():
        if frame_ids:
            raise DatasetError(f"{root} has frames but no {POSES_FILE}")
        return
    cams = parse_poses(poses.read_text())
    for f in frame_ids:
        views = []
        for v, cam in enumerate(cams):
            p = view_path(root, f, v)
            if not p.exists():
                raise DatasetError(f"missing image for frame {f} view {v}: {p}")
            views.append((cam, read_png(p)))
        yield FrameSet(f, views)


def save_dataset(path, frames) -> None:
    """Write FrameSets (all sharing one camera rig) in the loader's layout."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    cams = None
    for fs in frames:
        if cams is None:
            cams = fs.cameras
            (root / POSES_FILE).write_text("".join(format_pose_row(c) + "\n" for c in cams))
        for v, (_, img) in enumerate(fs.views):
            p = view_path(root, fs.frame_index, v)
            p.parent.mkdir(parents=True, exist_ok=True)
            write_png(img, p)


def quantize(img) -> np.ndarray:
    """Round-trip through 8 bits, as a PNG save/load would."""
    return to_uint8(img).astype(np.float64) / 255.0


# synthetic scenes -------------------------------------------------------------


@dataclass
class MovingSphere:
    """Solid-colour sphere with a soft one-voxel density edge moving at constant velocity.

    Positions are handled in voxel-index units so a velocity of exactly k
    voxels per frame shifts the voxelised occupancy by exactly k.
    """

    dims: GridDims = field(default_factory=lambda: GridDims.cube(64))
    radius: float = 0.35
    start: tuple = (-0.125, 0.0, 0.0)
    velocity: tuple = (0.0, 0.0, 0.0)  # world units per frame
    color: tuple = (0.9, 0.45, 0.2)
    sigma_max: float = 60.0
    edge_voxels: float = 1.0

    def center(self, frame: int) -> np.ndarray:
        return np.asarray(self.start, dtype=np.float64) + frame * np.asarray(self.velocity, dtype=np.float64)

    def voxelize(self, frame: int) -> SparseGrid:
        d = self.dims
        size = d.voxel_size
        c_idx = (self.center(frame) - d.lo) / size
        axes = [np.arange(n) + 0.5 - c_idx[a] for a, n in enumerate(d.shape)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        dist = np.sqrt((gx * size[0]) ** 2 + (gy * size[1]) ** 2 + (gz * size[2]) ** 2)
        edge = self.edge_voxels * float(size.min())
        sig = self.sigma_max * np.clip((self.radius - dist) / edge + 0.5, 0.0, 1.0)
        mask = sig > 0.0
        sh = np.broadcast_to(dc_coefficients(self.color).astype(np.float32), d.shape + (27,))
        return SparseGrid.from_dense(d, mask, sig.astype(np.float32), sh)


def ring_cameras(n: int, distance: float = 3.2, elevation_deg=(25.0, -20.0), size: int = 32,
                 fov_deg: float = 40.0, phase_deg: float = 0.0) -> list[Camera]:
    """``n`` cameras on a ring around the origin, alternating elevations."""
    cams = []
    for i in range(n):
        az = math.radians(phase_deg + 360.0 * i / n)
        el = math.radians(elevation_deg[i % len(elevation_deg)])
        eye = distance * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
        cams.append(Camera.look_at(eye, (0.0, 0.0, 0.0), (0.0, 0.0, 1.0), size, size, fov_deg))
    return cams


def generate_synthetic(scene: MovingSphere, n_frames: int, cameras, background=(0.0, 0.0, 0.0)):
    """Yield (FrameSet, ground-truth grid) per frame, images rendered from the voxelised truth."""
    if len(cameras) < 2:
        raise ValueError("need at least 2 views")
    for f in range(n_frames):
        gt = scene.voxelize(f)
        views = [(cam, render_image(gt, cam, background)) for cam in cameras]
        yield FrameSet(f, views), gt


def split_views(frame: FrameSet, holdout) -> tuple[list, list]:
    """(train views, held-out views); ``holdout`` is a view index or None."""
    if holdout is None:
        return list(frame.views), []
    h = holdout % len(frame.views)
    return [v for i, v in enumerate(frame.views) if i != h], [frame.views[h]]
