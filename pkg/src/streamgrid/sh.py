"""Real spherical harmonics up to degree 2 and view-dependent colour."""

import math

import numpy as np

SH_C0 = 0.28209479177387814  # 1 / (2 sqrt(pi))
SH_C1 = 0.4886025119029199  # sqrt(3 / (4 pi))
SH_C2_XY = 1.0925484305920792
SH_C2_ZZ = 0.31539156525252005
SH_C2_XX_YY = 0.5462742152960396

N_BASIS = 9


def sh_basis(d) -> np.ndarray:
    """The 9 real SH basis values for direction ``d``.

    Order is (0,0), (1,-1), (1,0), (1,1), (2,-2), (2,-1), (2,0), (2,1), (2,2)
    with positive constants (no Condon-Shortley phase). ``d`` is normalised
    first, so non-unit inputs are accepted.
    """
    x, y, z = (float(v) for v in d)
    norm = math.sqrt(x * x + y * y + z * z)
    if norm == 0.0:
        raise ValueError("direction must be non-zero")
    x = x / norm
    y = y / norm
    z = z / norm
    return np.array([
        SH_C0,
        SH_C1 * y,
        SH_C1 * z,
        SH_C1 * x,
        SH_C2_XY * (x * y),
        SH_C2_XY * (y * z),
        SH_C2_ZZ * (2.0 * (z * z) - (x * x) - (y * y)),
        SH_C2_XY * (x * z),
        SH_C2_XX_YY * ((x * x) - (y * y)),
    ])


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _sigmoid_scalar(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def eval_color(sh, d) -> np.ndarray:
    """RGB in (0, 1): per channel, sigmoid of the SH expansion along ``d``."""
    sh = np.asarray(sh, dtype=np.float64).reshape(3, N_BASIS)
    y = sh_basis(d)
    rgb = np.empty(3)
    for ch in range(3):
        logit = 0.0
        for k in range(N_BASIS):
            logit += float(sh[ch, k]) * float(y[k])
        rgb[ch] = _sigmoid_scalar(logit)
    return rgb


def eval_color_grad(sh, d) -> np.ndarray:
    """Jacobian d rgb / d sh, shape (3, 27)."""
    rgb = eval_color(sh, d)
    y = sh_basis(d)
    jac = np.zeros((3, 3 * N_BASIS))
    for ch in range(3):
        jac[ch, ch * N_BASIS:(ch + 1) * N_BASIS] = rgb[ch] * (1.0 - rgb[ch]) * y
    return jac


def dc_coefficients(rgb) -> np.ndarray:
    """27 coefficients whose view-independent colour is ``rgb``."""
    rgb = np.clip(np.asarray(rgb, dtype=np.float64), 1e-6, 1 - 1e-6)
    out = np.zeros(3 * N_BASIS)
    out[0::N_BASIS] = np.log(rgb / (1.0 - rgb)) / SH_C0
    return out
