# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled ray-marching kernels.

Every function here has a numpy twin in ``_fallback.py`` with the same
signature and the same floating-point operation order, so both backends
produce bit-identical renders.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, floor, sqrt

cnp.import_array()

cdef double SH_C0 = 0.28209479177387814
cdef double SH_C1 = 0.4886025119029199
cdef double SH_C2_XY = 1.0925484305920792
cdef double SH_C2_ZZ = 0.31539156525252005
cdef double SH_C2_XX_YY = 0.5462742152960396

BACKEND = "cython"


cdef struct Geom:
    double lo[3]
    double size[3]
    int n[3]


cdef inline void _sh_basis(double x, double y, double z, double* out) noexcept nogil:
    cdef double norm = sqrt(x * x + y * y + z * z)
    x = x / norm
    y = y / norm
    z = z / norm
    out[0] = SH_C0
    out[1] = SH_C1 * y
    out[2] = SH_C1 * z
    out[3] = SH_C1 * x
    out[4] = SH_C2_XY * (x * y)
    out[5] = SH_C2_XY * (y * z)
    out[6] = SH_C2_ZZ * (2.0 * (z * z) - (x * x) - (y * y))
    out[7] = SH_C2_XY * (x * z)
    out[8] = SH_C2_XX_YY * ((x * x) - (y * y))


cdef inline int _stencil(const int[:, :, ::1] index, Geom* g, double px, double py, double pz,
                         int* ids, double* ws) noexcept nogil:
    """Fill the 8 corner slots and weights; return the number of occupied corners."""
    cdef double p[3]
    cdef double f[3]
    cdef int i0[3]
    cdef double gc
    cdef int a, c, dx, dy, dz, found = 0
    cdef double wx[2]
    cdef double wy[2]
    cdef double wz[2]
    p[0] = px
    p[1] = py
    p[2] = pz
    for a in range(3):
        gc = (p[a] - g.lo[a]) / g.size[a] - 0.5
        if gc < 0.0:
            gc = 0.0
        if gc > g.n[a] - 1:
            gc = g.n[a] - 1
        i0[a] = <int>floor(gc)
        if i0[a] > g.n[a] - 2:
            i0[a] = g.n[a] - 2
        f[a] = gc - i0[a]
    wx[0] = 1.0 - f[0]
    wx[1] = f[0]
    wy[0] = 1.0 - f[1]
    wy[1] = f[1]
    wz[0] = 1.0 - f[2]
    wz[1] = f[2]
    c = 0
    for dx in range(2):
        for dy in range(2):
            for dz in range(2):
                ids[c] = index[i0[0] + dx, i0[1] + dy, i0[2] + dz]
                ws[c] = (wx[dx] * wy[dy]) * wz[dz]
                if ids[c] >= 0:
                    found += 1
                c += 1
    return found


cdef inline void _setup(Geom* g, double[::1] lo, double[::1] size, tuple shape):
    cdef int a
    for a in range(3):
        g.lo[a] = lo[a]
        g.size[a] = size[a]
        g.n[a] = shape[a]


def sample_points(const int[:, :, ::1] index, const float[::1] sigma, const float[:, ::1] sh,
                  double[::1] lo, double[::1] size, const double[:, ::1] points):
    """Raw trilinear (sigma, sh) at each point; unoccupied corners count as zero."""
    cdef Py_ssize_t npts = points.shape[0]
    out_sigma_arr = np.zeros(npts, dtype=np.float64)
    out_sh_arr = np.zeros((npts, 27), dtype=np.float64)
    cdef double[::1] out_sigma = out_sigma_arr
    cdef double[:, ::1] out_sh = out_sh_arr
    cdef Geom g
    cdef int ids[8]
    cdef double ws[8]
    cdef Py_ssize_t i
    cdef int c, k, vid
    cdef double w
    _setup(&g, lo, size, (index.shape[0], index.shape[1], index.shape[2]))
    with nogil:
        for i in range(npts):
            if _stencil(index, &g, points[i, 0], points[i, 1], points[i, 2], ids, ws) == 0:
                continue
            for c in range(8):
                vid = ids[c]
                if vid < 0:
                    continue
                w = ws[c]
                out_sigma[i] += w * sigma[vid]
                for k in range(27):
                    out_sh[i, k] += w * sh[vid, k]
    return out_sigma_arr, out_sh_arr


cdef inline int _n_samples(double tn, double tf, double step) noexcept nogil:
    if tf <= tn:
        return 0
    return <int>floor((tf - tn) / step)


def render_forward(const int[:, :, ::1] index, const float[::1] sigma, const float[:, ::1] sh,
                   double[::1] lo, double[::1] size,
                   const double[:, ::1] origins, const double[:, ::1] dirs,
                   const double[::1] t_near, const double[::1] t_far,
                   double step, double[::1] background):
    """Composite every ray; returns (rgb with background, final transmittance)."""
    cdef Py_ssize_t nrays = origins.shape[0]
    rgb_arr = np.empty((nrays, 3), dtype=np.float64)
    tf_arr = np.empty(nrays, dtype=np.float64)
    cdef double[:, ::1] rgb = rgb_arr
    cdef double[::1] t_final = tf_arr
    cdef Geom g
    cdef int ids[8]
    cdef double ws[8]
    cdef double Y[9]
    cdef double shv[27]
    cdef double col[3]
    cdef Py_ssize_t r
    cdef int j, n, c, k, ch, vid
    cdef double t, px, py, pz, w, sraw, sig, sd, T, alpha, acc, logit, Tf
    cdef double C[3]
    _setup(&g, lo, size, (index.shape[0], index.shape[1], index.shape[2]))
    with nogil:
        for r in range(nrays):
            _sh_basis(dirs[r, 0], dirs[r, 1], dirs[r, 2], Y)
            acc = 0.0
            C[0] = 0.0
            C[1] = 0.0
            C[2] = 0.0
            n = _n_samples(t_near[r], t_far[r], step)
            for j in range(n):
                t = t_near[r] + (j + 0.5) * step
                px = origins[r, 0] + t * dirs[r, 0]
                py = origins[r, 1] + t * dirs[r, 1]
                pz = origins[r, 2] + t * dirs[r, 2]
                if _stencil(index, &g, px, py, pz, ids, ws) == 0:
                    continue
                sraw = 0.0
                for k in range(27):
                    shv[k] = 0.0
                for c in range(8):
                    vid = ids[c]
                    if vid < 0:
                        continue
                    w = ws[c]
                    sraw += w * sigma[vid]
                    for k in range(27):
                        shv[k] += w * sh[vid, k]
                sig = sraw if sraw > 0.0 else 0.0
                sd = sig * step
                T = exp(-acc)
                alpha = 1.0 - exp(-sd)
                w = T * alpha
                for ch in range(3):
                    logit = 0.0
                    for k in range(9):
                        logit += shv[ch * 9 + k] * Y[k]
                    col[ch] = 1.0 / (1.0 + exp(-logit))
                    C[ch] += w * col[ch]
                acc += sd
            Tf = exp(-acc)
            t_final[r] = Tf
            for ch in range(3):
                rgb[r, ch] = C[ch] + Tf * background[ch]
    return rgb_arr, tf_arr


def render_backward(const int[:, :, ::1] index, const float[::1] sigma, const float[:, ::1] sh,
                    double[::1] lo, double[::1] size,
                    const double[:, ::1] origins, const double[:, ::1] dirs,
                    const double[::1] t_near, const double[::1] t_far,
                    double step, double[::1] background,
                    const double[:, ::1] target, double scale,
                    double[::1] grad_sigma, double[:, ::1] grad_sh):
    """Forward + backward of ``scale * sum((rgb - target)**2)``.

    Gradients w.r.t. raw voxel sigma / sh are accumulated into the given
    buffers. Returns (rgb, loss).
    """
    cdef Py_ssize_t nrays = origins.shape[0]
    cdef int max_n = 0
    cdef Py_ssize_t r
    for r in range(nrays):
        max_n = max(max_n, _n_samples(t_near[r], t_far[r], step))
    rgb_arr = np.empty((nrays, 3), dtype=np.float64)
    cdef double[:, ::1] rgb = rgb_arr
    s_ids_arr = np.empty((max(max_n, 1), 8), dtype=np.int32)
    s_ws_arr = np.empty((max(max_n, 1), 8), dtype=np.float64)
    s_f_arr = np.empty((max(max_n, 1), 6), dtype=np.float64)
    cdef int[:, ::1] s_ids = s_ids_arr
    cdef double[:, ::1] s_ws = s_ws_arr
    # per active sample: T, alpha, positive-flag, r, g, b
    cdef double[:, ::1] s_f = s_f_arr
    cdef Geom g
    cdef double Y[9]
    cdef double shv[27]
    cdef double col[3]
    cdef double C[3]
    cdef double dC[3]
    cdef double pre[3]
    cdef double dlogit[3]
    cdef int j, n, m, na, c, k, ch, vid
    cdef double t, px, py, pz, w, wc, sraw, sig, sd, T, alpha, acc, logit, Tf, Tn, dsig, diff
    cdef double loss = 0.0
    _setup(&g, lo, size, (index.shape[0], index.shape[1], index.shape[2]))
    with nogil:
        for r in range(nrays):
            _sh_basis(dirs[r, 0], dirs[r, 1], dirs[r, 2], Y)
            acc = 0.0
            C[0] = 0.0
            C[1] = 0.0
            C[2] = 0.0
            na = 0
            n = _n_samples(t_near[r], t_far[r], step)
            for j in range(n):
                t = t_near[r] + (j + 0.5) * step
                px = origins[r, 0] + t * dirs[r, 0]
                py = origins[r, 1] + t * dirs[r, 1]
                pz = origins[r, 2] + t * dirs[r, 2]
                if _stencil(index, &g, px, py, pz, &s_ids[na, 0], &s_ws[na, 0]) == 0:
                    continue
                sraw = 0.0
                for k in range(27):
                    shv[k] = 0.0
                for c in range(8):
                    vid = s_ids[na, c]
                    if vid < 0:
                        continue
                    w = s_ws[na, c]
                    sraw += w * sigma[vid]
                    for k in range(27):
                        shv[k] += w * sh[vid, k]
                sig = sraw if sraw > 0.0 else 0.0
                sd = sig * step
                T = exp(-acc)
                alpha = 1.0 - exp(-sd)
                w = T * alpha
                for ch in range(3):
                    logit = 0.0
                    for k in range(9):
                        logit += shv[ch * 9 + k] * Y[k]
                    col[ch] = 1.0 / (1.0 + exp(-logit))
                    C[ch] += w * col[ch]
                    s_f[na, 3 + ch] = col[ch]
                s_f[na, 0] = T
                s_f[na, 1] = alpha
                s_f[na, 2] = 1.0 if sraw > 0.0 else 0.0
                acc += sd
                na += 1
            Tf = exp(-acc)
            for ch in range(3):
                rgb[r, ch] = C[ch] + Tf * background[ch]
                diff = rgb[r, ch] - target[r, ch]
                loss += scale * diff * diff
                dC[ch] = 2.0 * scale * diff
                pre[ch] = 0.0
            for m in range(na):
                T = s_f[m, 0]
                alpha = s_f[m, 1]
                w = T * alpha
                Tn = T * (1.0 - alpha)
                dsig = 0.0
                for ch in range(3):
                    col[ch] = s_f[m, 3 + ch]
                    pre[ch] += w * col[ch]
                    dsig += dC[ch] * (Tn * col[ch] - (rgb[r, ch] - pre[ch]))
                    dlogit[ch] = dC[ch] * w * col[ch] * (1.0 - col[ch])
                dsig = dsig * step * s_f[m, 2]
                for c in range(8):
                    vid = s_ids[m, c]
                    if vid < 0:
                        continue
                    wc = s_ws[m, c]
                    grad_sigma[vid] += wc * dsig
                    for ch in range(3):
                        for k in range(9):
                            grad_sh[vid, ch * 9 + k] += wc * dlogit[ch] * Y[k]
    return rgb_arr, loss
