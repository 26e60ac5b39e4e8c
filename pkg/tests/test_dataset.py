import numpy as np
import pytest

from streamgrid.dataset import (DatasetError, FrameSet, MovingSphere, format_pose_row, generate_synthetic,
                                load_dataset, parse_poses, quantize, ring_cameras, save_dataset, split_views)
from streamgrid.grid import GridDims
from streamgrid.render import render_image


def small_frames(n=3, views=2, velocity=(0.125, 0, 0)):
    scene = MovingSphere(dims=GridDims.cube(16), velocity=velocity)
    return list(generate_synthetic(scene, n, ring_cameras(views, size=8)))


def test_empty_directory(tmp_path):
    assert list(load_dataset(tmp_path)) == []


def test_missing_directory(tmp_path):
    with pytest.raises(FileNotFoundError, match="dataset not found"):
        list(load_dataset(tmp_path / "nope"))


def test_roundtrip_counts(tmp_path):
    frames = [fs for fs, _ in small_frames()]
    save_dataset(tmp_path, frames)
    back = list(load_dataset(tmp_path))
    assert [fs.frame_index for fs in back] == [0, 1, 2]
    assert all(len(fs.views) == 2 for fs in back)
    for a, b in zip(frames, back):
        for (ca, ia), (cb, ib) in zip(a.views, b.views):
            np.testing.assert_array_equal(quantize(ia), ib)
            np.testing.assert_array_equal(ca.pose, cb.pose)
            assert (ca.fx, ca.cy, ca.width) == (cb.fx, cb.cy, cb.width)


def test_save_of_load_is_identity(tmp_path):
    save_dataset(tmp_path / "a", [fs for fs, _ in small_frames(2)])
    save_dataset(tmp_path / "b", load_dataset(tmp_path / "a"))
    for p in sorted((tmp_path / "a").rglob("*.*")):
        assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()


def test_missing_view_image(tmp_path):
    save_dataset(tmp_path, [fs for fs, _ in small_frames(2)])
    (tmp_path / "frames" / "0001" / "01.png").unlink()
    with pytest.raises(DatasetError, match="frame 1 view 1"):
        list(load_dataset(tmp_path))


def test_malformed_pose_row():
    good = format_pose_row(ring_cameras(1, size=8)[0])
    with pytest.raises(DatasetError, match="line 2"):
        parse_poses(good + "\n1 2 3\n")


def test_frames_without_poses(tmp_path):
    save_dataset(tmp_path, [fs for fs, _ in small_frames(1)])
    (tmp_path / "poses.txt").unlink()
    with pytest.raises(DatasetError):
        list(load_dataset(tmp_path))


def test_frameset_checks_image_shape():
    cam = ring_cameras(1, size=8)[0]
    with pytest.raises(DatasetError):
        FrameSet(0, [(cam, np.zeros((4, 4, 3)))])
    with pytest.raises(DatasetError):
        FrameSet(0, [])


def test_static_scene_frames_identical():
    frames = small_frames(3, velocity=(0, 0, 0))
    for fs, _ in frames[1:]:
        for (_, a), (_, b) in zip(frames[0][0].views, fs.views):
            assert np.array_equal(a, b)


def test_integer_shift_moves_mask():
    scene = MovingSphere(dims=GridDims.cube(32), velocity=(2 * 2 / 32, 0, 0))
    m0 = scene.voxelize(0).mask
    m1 = scene.voxelize(1).mask
    assert np.array_equal(m1[2:], m0[:-2])
    assert not m1[:2].any()


def test_ground_truth_renders_exactly():
    for fs, gt in small_frames(2):
        for cam, img in fs.views:
            assert np.array_equal(render_image(gt, cam), img)


def test_deterministic():
    a = small_frames(2)
    b = small_frames(2)
    for (fa, ga), (fb, gb) in zip(a, b):
        assert ga.equals(gb)
        assert all(np.array_equal(x[1], y[1]) for x, y in zip(fa.views, fb.views))


def test_needs_two_views():
    with pytest.raises(ValueError):
        next(generate_synthetic(MovingSphere(), 1, ring_cameras(1)))


def test_split_views():
    fs = small_frames(1, views=3)[0][0]
    train, test = split_views(fs, -1)
    assert len(train) == 2 and test[0] is fs.views[2]
    train, test = split_views(fs, None)
    assert len(train) == 3 and test == []
