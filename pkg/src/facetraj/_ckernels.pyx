# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Semantics mirror ``facetraj._pykernels`` exactly."""
from libc.math cimport floor, sqrt, isfinite
from libc.stdint cimport uint64_t
from scipy.linalg.cython_blas cimport dgemm

import numpy as np


cdef inline uint64_t _rotl(uint64_t x, int k) nogil:
    return (x << k) | (x >> (64 - k))


def xoshiro_fill(uint64_t[::1] state, uint64_t[::1] out):
    """Advance xoshiro256** in place, writing len(out) outputs."""
    cdef uint64_t s0 = state[0], s1 = state[1], s2 = state[2], s3 = state[3]
    cdef uint64_t t
    cdef Py_ssize_t i, n = out.shape[0]
    with nogil:
        for i in range(n):
            out[i] = _rotl(s1 * 5, 7) * 9
            t = s1 << 17
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = _rotl(s3, 45)
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3


cdef inline double _bilinear(const double[:, ::1] img, double x, double y) nogil:
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t x0, y0
    cdef double fx, fy
    if x < 0.0:
        x = 0.0
    elif x > w - 1:
        x = w - 1
    if y < 0.0:
        y = 0.0
    elif y > h - 1:
        y = h - 1
    x0 = <Py_ssize_t>floor(x)
    y0 = <Py_ssize_t>floor(y)
    if x0 > w - 2:
        x0 = w - 2
    if y0 > h - 2:
        y0 = h - 2
    fx = x - x0
    fy = y - y0
    return ((1.0 - fx) * (1.0 - fy) * img[y0, x0]
            + fx * (1.0 - fy) * img[y0, x0 + 1]
            + (1.0 - fx) * fy * img[y0 + 1, x0]
            + fx * fy * img[y0 + 1, x0 + 1])


def lk_level(const double[:, ::1] I, const double[:, ::1] gx, const double[:, ::1] gy,
             const double[:, ::1] J, const double[:, ::1] pts, double[:, ::1] disp,
             unsigned char[::1] active, int half_win, int max_iter, double eps,
             double min_eig):
    """Refine ``disp`` for every active point on one pyramid level.

    Points whose structure tensor is near-singular, whose estimate leaves
    the image or becomes non-finite are marked inactive.
    """
    cdef Py_ssize_t n = pts.shape[0]
    cdef Py_ssize_t h = I.shape[0], w = I.shape[1]
    cdef int side = 2 * half_win + 1
    cdef int area = side * side
    cdef double[::1] tI = np.empty(area)
    cdef double[::1] tgx = np.empty(area)
    cdef double[::1] tgy = np.empty(area)
    cdef Py_ssize_t i, k
    cdef int it, u, v
    cdef double px, py, sx, sy, a, b, c, det, lam, bx, by, diff, ddx, ddy, qx, qy
    with nogil:
        for i in range(n):
            if not active[i]:
                continue
            px = pts[i, 0]
            py = pts[i, 1]
            a = 0.0
            b = 0.0
            c = 0.0
            k = 0
            for v in range(-half_win, half_win + 1):
                for u in range(-half_win, half_win + 1):
                    sx = px + u
                    sy = py + v
                    tI[k] = _bilinear(I, sx, sy)
                    tgx[k] = _bilinear(gx, sx, sy)
                    tgy[k] = _bilinear(gy, sx, sy)
                    a += tgx[k] * tgx[k]
                    b += tgx[k] * tgy[k]
                    c += tgy[k] * tgy[k]
                    k += 1
            lam = 0.5 * (a + c) - sqrt(0.25 * (a - c) * (a - c) + b * b)
            det = a * c - b * b
            if lam < min_eig or det <= 0.0:
                active[i] = 0
                continue
            for it in range(max_iter):
                qx = px + disp[i, 0]
                qy = py + disp[i, 1]
                if not (qx >= 0.0 and qy >= 0.0 and qx <= w - 1 and qy <= h - 1):
                    active[i] = 0
                    break
                bx = 0.0
                by = 0.0
                k = 0
                for v in range(-half_win, half_win + 1):
                    for u in range(-half_win, half_win + 1):
                        diff = tI[k] - _bilinear(J, qx + u, qy + v)
                        bx += diff * tgx[k]
                        by += diff * tgy[k]
                        k += 1
                ddx = (c * bx - b * by) / det
                ddy = (a * by - b * bx) / det
                if not (isfinite(ddx) and isfinite(ddy)):
                    active[i] = 0
                    break
                disp[i, 0] += ddx
                disp[i, 1] += ddy
                if ddx * ddx + ddy * ddy < eps * eps:
                    break


# --- GRU recurrences and Adam ----------------------------------------------

cdef extern from "_packed_gemm.h":
    int pg_available() nogil
    void pg_pack(int K, int N, const double* B, int ldb, double* Bp) nogil
    void pg_gemm(int M, int N, int K, const double* A, int lda, const double* Bp,
                 int accumulate, double* C, int ldc) nogil

cdef bint _packed = pg_available()


def use_packed_gemm(flag=None):
    """Query or switch the packed AVX-512 products in the GRU loops; returns the previous state."""
    global _packed
    old = bool(_packed)
    if flag is not None:
        _packed = bool(flag) and pg_available()
    return old


cdef class _Operand:
    """Row-major (K, N) right operand, packed once when the packed kernel applies."""
    cdef const double* B
    cdef int K, N
    cdef bint packed
    cdef double[::1] buf

    def __init__(self, const double[:, ::1] B):
        self.K, self.N = B.shape[0], B.shape[1]
        self.B = &B[0, 0]
        self.packed = _packed and self.N % 32 == 0
        if self.packed:
            # 64-byte aligned panels: the kernel's vector loads must not straddle cache lines
            raw = np.empty(self.K * self.N + 8)
            off = (-raw.ctypes.data % 64) // 8
            self.buf = raw[off:off + self.K * self.N]
            pg_pack(self.K, self.N, self.B, self.N, &self.buf[0])


cdef inline void _gemm(int M, int N, int K, double alpha, const double* A, int lda,
                       const double* B, int ldb, double beta, double* C, int ldc) noexcept nogil:
    # row-major C = alpha * A @ B + beta * C via column-major dgemm on transposes
    cdef char nt = b'N'
    dgemm(&nt, &nt, &N, &M, &K, &alpha, <double*>B, &ldb, <double*>A, &lda, &beta, C, &ldc)


cdef inline void _mul(int M, const double* A, int lda, _Operand B, bint accumulate,
                      double* C, int ldc) noexcept nogil:
    if B.packed:
        pg_gemm(M, B.N, B.K, A, lda, &B.buf[0], accumulate, C, ldc)
    else:
        _gemm(M, B.N, B.K, 1.0, A, lda, B.B, B.N, 1.0 if accumulate else 0.0, C, ldc)


def gru_forward_loop(const double[:, ::1] pre, double[:, ::1] h0, double[:, ::1] UzrT, double[:, ::1] UcT,
                     double[:, :, ::1] hs, double[:, :, ::1] zr, double[:, :, ::1] rh, double[:, :, ::1] cc):
    """Fill hidden states and gate caches.

    ``pre`` holds the input projection plus bias, (T*B, 3H), or a single
    (B, 3H) block reused at every step. Its z/r columns and ``UzrT`` arrive
    pre-halved so that ``tanh`` yields the sigmoid.
    """
    cdef Py_ssize_t T = hs.shape[0], B = hs.shape[1], H = hs.shape[2]
    cdef Py_ssize_t t, i, j, n = B * H
    cdef int H2 = 2 * H, H3 = 3 * H
    cdef Py_ssize_t pstride = B * H3 if pre.shape[0] == T * B else 0
    cdef const double* pp
    cdef const double* hp
    cdef double* zp
    cdef double* rp
    cdef double* cp
    cdef double* hn
    cdef _Operand Uzr = _Operand(UzrT), Uc = _Operand(UcT)
    tanh = np.tanh
    zr2 = np.asarray(zr).reshape(T, B * H2)
    c2 = np.asarray(cc).reshape(T, B * H)
    for t in range(T):
        pp = &pre[0, 0] + t * pstride
        hp = &h0[0, 0] if t == 0 else &hs[t - 1, 0, 0]
        zp = &zr[t, 0, 0]
        rp = &rh[t, 0, 0]
        cp = &cc[t, 0, 0]
        hn = &hs[t, 0, 0]
        with nogil:
            for i in range(B):
                for j in range(H2):
                    zp[i * H2 + j] = pp[i * H3 + j]
            _mul(B, hp, H, Uzr, True, zp, H2)
        row = zr2[t]
        tanh(row, out=row)
        with nogil:
            for i in range(n * 2):
                zp[i] = 0.5 * zp[i] + 0.5
            for i in range(B):
                for j in range(H):
                    rp[i * H + j] = zp[i * H2 + H + j] * hp[i * H + j]
                    cp[i * H + j] = pp[i * H3 + H2 + j]
            _mul(B, rp, H, Uc, True, cp, H)
        row = c2[t]
        tanh(row, out=row)
        with nogil:
            for i in range(B):
                for j in range(H):
                    hn[i * H + j] = hp[i * H + j] + zp[i * H2 + j] * (cp[i * H + j] - hp[i * H + j])


def gru_backward_loop(dhs, double[:, ::1] dh_last, double[:, ::1] h0, double[:, :, ::1] hs,
                      double[:, :, ::1] zr, double[:, :, ::1] cc, double[:, ::1] Uzr_, double[:, ::1] Uc_,
                      double[:, :, ::1] dA):
    """Fill gate pre-activation gradients ``dA`` (T, B, 3H); return dh0."""
    cdef Py_ssize_t T = hs.shape[0], B = hs.shape[1], H = hs.shape[2]
    cdef Py_ssize_t t, i, j, k
    cdef int H2 = 2 * H, H3 = 3 * H
    cdef bint has_dhs = dhs is not None
    cdef const double[:, :, ::1] dhv
    bufs = np.empty((3, B, H))
    bufs[0] = dh_last
    cdef double[:, :, ::1] bv = bufs
    cdef double* dh = &bv[0, 0, 0]
    cdef double* dhp = &bv[1, 0, 0]
    cdef double* drh = &bv[2, 0, 0]
    cdef double* tmp
    cdef const double* hp
    cdef const double* zp
    cdef const double* cp
    cdef const double* gp = NULL
    cdef double* ap
    cdef double z, r, c, g, dr, h
    cdef _Operand Uzr = _Operand(Uzr_), Uc = _Operand(Uc_)
    if has_dhs:
        dhv = dhs
    with nogil:
        for t in range(T - 1, -1, -1):
            hp = &h0[0, 0] if t == 0 else &hs[t - 1, 0, 0]
            zp = &zr[t, 0, 0]
            cp = &cc[t, 0, 0]
            ap = &dA[t, 0, 0]
            if has_dhs:
                gp = &dhv[t, 0, 0]
                for k in range(B * H):
                    dh[k] += gp[k]
            for i in range(B):
                for j in range(H):
                    c = cp[i * H + j]
                    ap[i * H3 + H2 + j] = dh[i * H + j] * (zp[i * H2 + j] * (1.0 - c * c))
            _mul(B, ap + H2, H3, Uc, False, drh, H)
            for i in range(B):
                for j in range(H):
                    z = zp[i * H2 + j]
                    r = zp[i * H2 + H + j]
                    g = dh[i * H + j]
                    dr = drh[i * H + j]
                    h = hp[i * H + j]
                    ap[i * H3 + j] = g * ((cp[i * H + j] - h) * z * (1.0 - z))
                    ap[i * H3 + H + j] = dr * (h * r * (1.0 - r))
                    dhp[i * H + j] = g * (1.0 - z) + dr * r
            _mul(B, ap, H3, Uzr, True, dhp, H)
            tmp = dh
            dh = dhp
            dhp = tmp
    return np.array(bufs[0] if dh == &bv[0, 0, 0] else bufs[1])


def adam_update(double[::1] p, const double[::1] g, double[::1] m, double[::1] v,
                double beta1, double beta2, double one_m_b1, double one_m_b2,
                double c2, double eps, double lr_c1):
    """Fused Adam step; same operation order as the numpy version."""
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double d
    with nogil:
        for i in range(n):
            m[i] = m[i] * beta1 + one_m_b1 * g[i]
            v[i] = v[i] * beta2 + one_m_b2 * (g[i] * g[i])
            d = sqrt(v[i] / c2) + eps
            p[i] -= (m[i] / d) * lr_c1
