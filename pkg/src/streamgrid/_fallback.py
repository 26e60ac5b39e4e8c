"""Pure numpy implementation of the ray-marching kernels.

Mirrors ``_kernels.pyx`` operation-for-operation. Exponentials go through
``math.exp`` (libm) rather than ``np.exp``, whose SIMD paths can differ in
the last ulp; keeping libm on both sides is what makes renders from the two
backends bit-identical.
"""

import math

import numpy as np

BACKEND = "python"

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2_XY = 1.0925484305920792
SH_C2_ZZ = 0.31539156525252005
SH_C2_XX_YY = 0.5462742152960396

_CHUNK_RAYS = 256
_uexp = np.frompyfunc(math.exp, 1, 1)


def _exp(x):
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    return _uexp(x).astype(np.float64)


def _sh_basis_rows(d):
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    norm = np.sqrt(x * x + y * y + z * z)
    x = x / norm
    y = y / norm
    z = z / norm
    out = np.empty((d.shape[0], 9))
    out[:, 0] = SH_C0
    out[:, 1] = SH_C1 * y
    out[:, 2] = SH_C1 * z
    out[:, 3] = SH_C1 * x
    out[:, 4] = SH_C2_XY * (x * y)
    out[:, 5] = SH_C2_XY * (y * z)
    out[:, 6] = SH_C2_ZZ * (2.0 * (z * z) - (x * x) - (y * y))
    out[:, 7] = SH_C2_XY * (x * z)
    out[:, 8] = SH_C2_XX_YY * ((x * x) - (y * y))
    return out


def _stencil(index, lo, size, pts):
    """Corner slots (P, 8) and trilinear weights (P, 8) for points (P, 3)."""
    n = np.array(index.shape, dtype=np.float64)
    g = (pts - lo) / size - 0.5
    g = np.where(g < 0.0, 0.0, g)
    g = np.where(g > n - 1, n - 1, g)
    i0 = np.floor(g).astype(np.int64)
    i0 = np.minimum(i0, np.array(index.shape) - 2)
    f = g - i0
    wx = (1.0 - f[:, 0], f[:, 0])
    wy = (1.0 - f[:, 1], f[:, 1])
    wz = (1.0 - f[:, 2], f[:, 2])
    ids = np.empty((pts.shape[0], 8), dtype=np.int64)
    ws = np.empty((pts.shape[0], 8))
    c = 0
    for dx in range(2):
        for dy in range(2):
            for dz in range(2):
                ids[:, c] = index[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
                ws[:, c] = (wx[dx] * wy[dy]) * wz[dz]
                c += 1
    return ids, ws


def _interp(ids, ws, sigma, sh):
    sraw = np.zeros(ids.shape[0])
    shv = np.zeros((ids.shape[0], 27))
    for c in range(8):
        vid = ids[:, c]
        occ = vid >= 0
        safe = np.where(occ, vid, 0)
        w = ws[:, c]
        sraw = sraw + np.where(occ, w * sigma[safe], 0.0)
        shv = shv + np.where(occ[:, None], w[:, None] * sh[safe], 0.0)
    return sraw, shv


def sample_points(index, sigma, sh, lo, size, points):
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.shape[0] == 0:
        return np.zeros(0), np.zeros((0, 27))
    ids, ws = _stencil(index, lo, size, points)
    return _interp(ids, ws, sigma, sh)


def _n_samples(t_near, t_far, step):
    span = np.where(t_far > t_near, (t_far - t_near) / step, 0.0)
    return np.floor(span).astype(np.int64)


def _march_chunk(index, sigma, sh, lo, size, origins, dirs, t_near, t_far, step):
    """Evaluate every sample of a ray chunk; returns per-sample arrays (R, S, ...)."""
    nr = origins.shape[0]
    n = _n_samples(t_near, t_far, step)
    s = int(n.max()) if nr else 0
    j = np.arange(s)
    t = t_near[:, None] + (j[None, :] + 0.5) * step
    pts = np.stack([origins[:, a, None] + t * dirs[:, a, None] for a in range(3)], axis=-1)
    ids, ws = _stencil(index, lo, size, pts.reshape(-1, 3))
    active = ((ids >= 0).any(axis=1).reshape(nr, s)) & (j[None, :] < n[:, None])
    sraw, shv = _interp(ids, ws, sigma, sh)
    sraw = np.where(active.ravel(), sraw, 0.0).reshape(nr, s)
    shv = shv.reshape(nr, s, 27)
    sig = np.where(sraw > 0.0, sraw, 0.0)
    sd = sig * step
    incl = np.cumsum(sd, axis=1)
    acc = np.zeros_like(sd)
    acc[:, 1:] = incl[:, :-1]
    T = np.zeros_like(sd)
    alpha = np.zeros_like(sd)
    T[active] = _exp(-acc[active])
    alpha[active] = 1.0 - _exp(-sd[active])
    w = T * alpha
    Y = _sh_basis_rows(dirs)
    col = np.full((nr, s, 3), 0.5)
    for ch in range(3):
        logit = np.zeros((nr, s))
        for k in range(9):
            logit = logit + shv[:, :, ch * 9 + k] * Y[:, None, k]
        col[:, :, ch][active] = 1.0 / (1.0 + _exp(-logit[active]))
    C = np.zeros((nr, 3))
    for jj in range(s):
        C = C + w[:, jj, None] * col[:, jj, :]
    total = incl[:, -1] if s else np.zeros(nr)
    Tf = _exp(-total)
    return {
        "ids": ids.reshape(nr, s, 8), "ws": ws.reshape(nr, s, 8), "active": active,
        "sraw": sraw, "T": T, "alpha": alpha, "w": w, "col": col, "C": C, "Tf": Tf, "Y": Y,
    }


def render_forward(index, sigma, sh, lo, size, origins, dirs, t_near, t_far, step, background):
    nrays = origins.shape[0]
    rgb = np.empty((nrays, 3))
    t_final = np.empty(nrays)
    bg = np.asarray(background, dtype=np.float64)
    for a in range(0, nrays, _CHUNK_RAYS):
        b = min(a + _CHUNK_RAYS, nrays)
        out = _march_chunk(index, sigma, sh, lo, size, origins[a:b], dirs[a:b],
                           t_near[a:b], t_far[a:b], step)
        t_final[a:b] = out["Tf"]
        rgb[a:b] = out["C"] + out["Tf"][:, None] * bg[None, :]
    return rgb, t_final


def render_backward(index, sigma, sh, lo, size, origins, dirs, t_near, t_far, step, background,
                    target, scale, grad_sigma, grad_sh):
    nrays = origins.shape[0]
    nvox = grad_sigma.shape[0]
    rgb = np.empty((nrays, 3))
    bg = np.asarray(background, dtype=np.float64)
    loss = 0.0
    for a in range(0, nrays, _CHUNK_RAYS):
        b = min(a + _CHUNK_RAYS, nrays)
        out = _march_chunk(index, sigma, sh, lo, size, origins[a:b], dirs[a:b],
                           t_near[a:b], t_far[a:b], step)
        rgb_c = out["C"] + out["Tf"][:, None] * bg[None, :]
        rgb[a:b] = rgb_c
        diff = rgb_c - target[a:b]
        loss += float(scale * np.sum(diff * diff))
        dC = 2.0 * scale * diff
        w, col, T, alpha = out["w"], out["col"], out["T"], out["alpha"]
        pre = np.cumsum(w[:, :, None] * col, axis=1)
        suffix = rgb_c[:, None, :] - pre
        tn = T * (1.0 - alpha)
        dsig = step * np.sum(dC[:, None, :] * (tn[:, :, None] * col - suffix), axis=2)
        dsig = np.where(out["sraw"] > 0.0, dsig, 0.0)
        dlogit = dC[:, None, :] * w[:, :, None] * col * (1.0 - col)
        act = out["active"]
        ids = out["ids"][act]
        ws = out["ws"][act]
        dsig = dsig[act]
        dlogit = dlogit[act]
        Y = np.broadcast_to(out["Y"][:, None, :], act.shape + (9,))[act]
        occ = ids >= 0
        flat_ids = ids[occ]
        flat_w = ws[occ]
        rows = np.nonzero(occ)[0]
        grad_sigma += np.bincount(flat_ids, weights=flat_w * dsig[rows], minlength=nvox)
        for ch in range(3):
            for k in range(9):
                vals = flat_w * (dlogit[rows, ch] * Y[rows, k])
                grad_sh[:, ch * 9 + k] += np.bincount(flat_ids, weights=vals, minlength=nvox)
    return rgb, loss
