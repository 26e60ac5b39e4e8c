import math

import numpy as np
import pytest

from streamgrid.sh import N_BASIS, dc_coefficients, eval_color, eval_color_grad, sh_basis, sigmoid


def fibonacci_sphere(n):
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = math.pi * (1 + 5 ** 0.5) * i
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)


def test_dc_term():
    assert sh_basis([0.3, -0.2, 0.9])[0] == pytest.approx(0.5 / math.sqrt(math.pi), abs=1e-15)


def test_polar_axis_values():
    y = sh_basis([0, 0, 1])
    expect = np.zeros(N_BASIS)
    expect[0] = 0.5 / math.sqrt(math.pi)
    expect[2] = math.sqrt(3 / (4 * math.pi))
    expect[6] = 0.25 * math.sqrt(5 / math.pi) * 2
    np.testing.assert_allclose(y, expect, atol=1e-15)


def test_orthonormal_on_sphere():
    # quadrature over a dense Fibonacci lattice; the Gram matrix should be I
    dirs = fibonacci_sphere(20000)
    ys = np.array([sh_basis(d) for d in dirs])
    gram = ys.T @ ys * (4 * math.pi / len(dirs))
    np.testing.assert_allclose(gram, np.eye(N_BASIS), atol=2e-3)


def test_scale_invariant_direction():
    np.testing.assert_allclose(sh_basis([1, 2, 3]), sh_basis([10, 20, 30]), rtol=1e-14)


def test_zero_direction_rejected():
    with pytest.raises(ValueError):
        sh_basis([0, 0, 0])


def test_zero_coefficients_give_grey():
    np.testing.assert_array_equal(eval_color(np.zeros(27), [1, 0, 0]), [0.5, 0.5, 0.5])


def test_channel_major_layout():
    sh = np.zeros(27)
    sh[N_BASIS * 2] = 4.0  # blue DC
    rgb = eval_color(sh, [0, 1, 0])
    assert rgb[0] == rgb[1] == 0.5
    assert rgb[2] == pytest.approx(sigmoid(4.0 * 0.5 / math.sqrt(math.pi)))


def test_dc_coefficients_roundtrip():
    rgb = [0.9, 0.45, 0.2]
    for d in fibonacci_sphere(7):
        np.testing.assert_allclose(eval_color(dc_coefficients(rgb), d), rgb, atol=1e-12)


def test_color_gradient_matches_fd(rng):
    sh = rng.normal(size=27)
    d = rng.normal(size=3)
    jac = eval_color_grad(sh, d)
    h = 1e-6
    for k in range(27):
        e = np.zeros(27)
        e[k] = h
        fd = (eval_color(sh + e, d) - eval_color(sh - e, d)) / (2 * h)
        np.testing.assert_allclose(jac[:, k], fd, atol=1e-8)
