"""Command line: train-base, train-stream, render, inspect."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from .codec import DeltaError, delta_stats
from .config import ConfigError, load_config
from .dataset import DatasetError, load_dataset, parse_poses, split_views
from .grid import load_grid
from .pipeline import (BASE_FILE, delta_name, list_deltas, load_checkpoint, save_base, stream_sequence,
                       train_base, write_manifest)
from .render import Camera, psnr, render_image, write_png

log = logging.getLogger("streamgrid")

LOG_FILE = "stream_log.csv"
LOG_FIELDS = ("frame", "psnr", "delta_bytes", "seconds")


class CliError(Exception):
    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


def _setup_logging():
    level = os.environ.get("STREAMGRID_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "holdout", None) is not None:
        cfg = cfg.replace(holdout_view=args.holdout)
    return cfg


def _frames(path):
    if not Path(path).is_dir():
        raise CliError(f"dataset not found: {path}", 2)
    return load_dataset(path)


def _mean_psnr(grid, views, background) -> float:
    if not views:
        return float("nan")
    return float(np.mean([psnr(render_image(grid, cam, background), img) for cam, img in views]))


def cmd_train_base(args) -> int:
    cfg = _config(args)
    frames = _frames(args.dataset)
    if args.dry_run:
        print(f"config ok: base {cfg.base_dims().shape} -> final {cfg.final_dims().shape}")
        return 0
    first = next(frames, None)
    if first is None:
        raise CliError(f"dataset {args.dataset} has no frames")
    train, test = split_views(first, cfg.holdout_view)
    t0 = time.perf_counter()
    grid = train_base(train, cfg)
    save_base(grid, args.out, cfg)
    print(f"base frame {first.frame_index}: {grid.n_voxels} voxels in {time.perf_counter() - t0:.1f}s")
    print(f"train PSNR {_mean_psnr(grid, train, cfg.background):.2f} dB")
    if test:
        print(f"test PSNR {_mean_psnr(grid, test, cfg.background):.2f} dB")
    return 0


def cmd_train_stream(args) -> int:
    cfg = _config(args)
    frames = _frames(args.dataset)
    base_dir, out = Path(args.base), Path(args.out)
    if not (base_dir / BASE_FILE).exists():
        raise CliError(f"no {BASE_FILE} in {base_dir}")
    if args.dry_run:
        print("config ok")
        return 0
    out.mkdir(parents=True, exist_ok=True)
    if base_dir.resolve() != out.resolve():
        if (out / BASE_FILE).exists():
            if (out / BASE_FILE).read_bytes() != (base_dir / BASE_FILE).read_bytes():
                raise CliError(f"{out} already holds a different base checkpoint")
        else:
            shutil.copyfile(base_dir / BASE_FILE, out / BASE_FILE)
    done = len(list_deltas(out))
    grid = load_checkpoint(out, done)
    if done:
        print(f"resuming after frame {done}")
    log_path = out / LOG_FILE
    fresh = done == 0 or not log_path.exists()
    with open(log_path, "w" if fresh else "a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(LOG_FIELDS)
        # the first dataset frame is the base frame
        todo = _continue_from((fs for i, fs in enumerate(frames) if i > 0 and fs.frame_index > done), done + 1)
        t0 = time.perf_counter()
        for fs, grid, data, _ in stream_sequence(grid, todo, cfg):
            (out / delta_name(fs.frame_index)).write_bytes(data)
            seconds = time.perf_counter() - t0
            train, test = split_views(fs, cfg.holdout_view)
            quality = _mean_psnr(grid, test or train, cfg.background)
            writer.writerow([fs.frame_index, f"{quality:.4f}", len(data), f"{seconds:.3f}"])
            fh.flush()
            write_manifest(out, cfg, fs.frame_index)
            t0 = time.perf_counter()
    return 0


def _continue_from(frames, first_index):
    for i, fs in enumerate(frames):
        if i == 0 and fs.frame_index != first_index:
            raise DeltaError(f"frame gap: checkpoint ends at frame {first_index - 1}, "
                             f"dataset continues at {fs.frame_index}")
        yield fs


def parse_camera(spec: str, poses: str | None = None) -> Camera:
    """``orbit:AZ,EL,DIST[,SIZE[,FOV]]`` (degrees) or ``view:I`` with ``--poses``."""
    kind, _, rest = spec.partition(":")
    if kind == "view":
        if poses is None:
            raise CliError("view cameras need --poses")
        cams = parse_poses(Path(poses).read_text())
        i = int(rest)
        if not 0 <= i < len(cams):
            raise CliError(f"view {i} not in {poses} ({len(cams)} views)")
        return cams[i]
    if kind == "orbit":
        vals = [float(v) for v in rest.split(",")]
        if not 3 <= len(vals) <= 5:
            raise CliError("orbit camera needs AZ,EL,DIST[,SIZE[,FOV]]")
        az, el, dist = (np.radians(vals[0]), np.radians(vals[1]), vals[2])
        size = int(vals[3]) if len(vals) > 3 else 64
        fov = vals[4] if len(vals) > 4 else 40.0
        eye = dist * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        return Camera.look_at(eye, (0, 0, 0), (0, 0, 1), size, size, fov)
    raise CliError(f"bad camera spec {spec!r}")


def cmd_render(args) -> int:
    cam = parse_camera(args.camera, args.poses)
    ckpt = Path(args.checkpoint)
    if not (ckpt / BASE_FILE).exists():
        raise CliError(f"no {BASE_FILE} in {ckpt}")
    n = len(list_deltas(ckpt))
    if args.frame > n:
        raise CliError(f"frame {args.frame} is beyond the last delta ({n})")
    grid = load_checkpoint(ckpt, args.frame)
    bg = load_config(args.config).background if args.config else (0.0, 0.0, 0.0)
    write_png(render_image(grid, cam, bg), args.out)
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if not path.exists():
        raise CliError(f"no such file: {path}", 2)
    if path.is_dir() or path.suffix == ".sgrd":
        grid = load_grid(path / BASE_FILE if path.is_dir() else path)
        print(f"grid {grid.dims.shape} occupied {grid.n_voxels} bytes {path.stat().st_size}")
        return 0
    st = delta_stats(path.read_bytes())
    print(f"frame {st['frame_index']}  dims {'x'.join(map(str, st['shape']))}  epsilon {st['epsilon']:.6g}")
    print(f"occupied {st['n_occupied']}  add {st['n_add']}  remain {st['n_remain']}")
    print("stage sizes (bytes):")
    for k in ("raw", "threshold", "half", "deflate"):
        print(f"  {k:<10}{st[k]:>10}")
    print(f"file: header {st['header']} + deflate body {st['body_deflate']} = {st['deflate']}")
    parts = st["parts_deflate"]
    print("separately deflated parts: " + "  ".join(f"{k} {v}" for k, v in parts.items()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="desk", help="config file or preset name (default: desk)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: all cores; the kernels currently run on one)")
    common.add_argument("--dry-run", action="store_true", help="validate inputs and config, write nothing")

    p = argparse.ArgumentParser(prog="streamgrid", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train-base", parents=[common], help="train the base-frame grid")
    s.add_argument("dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--holdout", type=int, default=None, help="view index kept out of training")
    s.set_defaults(func=cmd_train_base)

    s = sub.add_parser("train-stream", parents=[common], help="stream the remaining frames as deltas")
    s.add_argument("dataset")
    s.add_argument("--base", required=True, help="directory holding base.sgrd")
    s.add_argument("--out", required=True)
    s.add_argument("--holdout", type=int, default=None)
    s.set_defaults(func=cmd_train_stream)

    s = sub.add_parser("render", help="replay a checkpoint to a frame and render one view")
    s.add_argument("checkpoint")
    s.add_argument("--frame", type=int, default=0)
    s.add_argument("--camera", required=True, help="orbit:AZ,EL,DIST[,SIZE[,FOV]] or view:I")
    s.add_argument("--poses", default=None, help="poses file for view:I cameras")
    s.add_argument("--config", default=None, help="config supplying the background colour")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("inspect", help="print delta size breakdown")
    s.add_argument("path")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, DatasetError, DeltaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
