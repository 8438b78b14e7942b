"""Fallback kernels used when the compiled extension is unavailable.

The LK level and the GRU loops are vectorized with numpy; the xoshiro
stream is a plain Python loop. LK, xoshiro and Adam follow ``_ckernels.pyx``
operation for operation; the GRU loops agree with it up to summation order.
"""
import numpy as np

_MASK = (1 << 64) - 1


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _MASK


def xoshiro_fill(state, out):
    s0, s1, s2, s3 = (int(v) for v in state)
    buf = [0] * len(out)
    for i in range(len(out)):
        buf[i] = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
    out[:] = np.array(buf, dtype=np.uint64)
    state[:] = np.array([s0, s1, s2, s3], dtype=np.uint64)


def bilinear(img, x, y):
    h, w = img.shape
    x = np.clip(x, 0.0, w - 1)
    y = np.clip(y, 0.0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.intp), w - 2)
    y0 = np.minimum(np.floor(y).astype(np.intp), h - 2)
    fx = x - x0
    fy = y - y0
    return ((1.0 - fx) * (1.0 - fy) * img[y0, x0]
            + fx * (1.0 - fy) * img[y0, x0 + 1]
            + (1.0 - fx) * fy * img[y0 + 1, x0]
            + fx * fy * img[y0 + 1, x0 + 1])


def lk_level(I, gx, gy, J, pts, disp, active, half_win, max_iter, eps, min_eig):
    h, w = I.shape
    r = np.arange(-half_win, half_win + 1, dtype=np.float64)
    v, u = np.meshgrid(r, r, indexing="ij")
    u = u.ravel()
    v = v.ravel()

    idx = np.flatnonzero(active)
    if idx.size == 0:
        return
    sx = pts[idx, 0][:, None] + u
    sy = pts[idx, 1][:, None] + v
    tI = bilinear(I, sx, sy)
    tgx = bilinear(gx, sx, sy)
    tgy = bilinear(gy, sx, sy)
    a = np.sum(tgx * tgx, axis=1)
    b = np.sum(tgx * tgy, axis=1)
    c = np.sum(tgy * tgy, axis=1)
    lam = 0.5 * (a + c) - np.sqrt(0.25 * (a - c) * (a - c) + b * b)
    det = a * c - b * b
    singular = (lam < min_eig) | (det <= 0.0)
    active[idx[singular]] = 0

    keep = ~singular
    idx, tI, tgx, tgy = idx[keep], tI[keep], tgx[keep], tgy[keep]
    a, b, c, det = a[keep], b[keep], c[keep], det[keep]
    for _ in range(max_iter):
        if idx.size == 0:
            break
        qx = pts[idx, 0] + disp[idx, 0]
        qy = pts[idx, 1] + disp[idx, 1]
        inside = (qx >= 0.0) & (qy >= 0.0) & (qx <= w - 1) & (qy <= h - 1)
        active[idx[~inside]] = 0
        if not inside.all():
            idx, tI, tgx, tgy = idx[inside], tI[inside], tgx[inside], tgy[inside]
            a, b, c, det = a[inside], b[inside], c[inside], det[inside]
            qx, qy = qx[inside], qy[inside]
        diff = tI - bilinear(J, qx[:, None] + u, qy[:, None] + v)
        bx = np.sum(diff * tgx, axis=1)
        by = np.sum(diff * tgy, axis=1)
        ddx = (c * bx - b * by) / det
        ddy = (a * by - b * bx) / det
        finite = np.isfinite(ddx) & np.isfinite(ddy)
        active[idx[~finite]] = 0
        upd = idx[finite]
        disp[upd, 0] += ddx[finite]
        disp[upd, 1] += ddy[finite]
        running = finite & (ddx * ddx + ddy * ddy >= eps * eps)
        idx, tI, tgx, tgy = idx[running], tI[running], tgx[running], tgy[running]
        a, b, c, det = a[running], b[running], c[running], det[running]


def gru_forward_loop(pre, h0, UzrT, UcT, hs, zr, rh, c):
    """Fill hidden states and gate caches.

    ``pre`` holds the input projection plus bias, (T*B, 3H), or a single
    (B, 3H) block reused at every step. Its z/r columns and ``UzrT`` arrive
    pre-halved so that ``tanh`` yields the sigmoid.
    """
    T, B, H = hs.shape
    pre = pre.reshape(T, B, 3 * H) if pre.shape[0] == T * B else np.broadcast_to(pre, (T, B, 3 * H))
    tmp = np.empty((B, H))
    for t in range(T):
        hp = h0 if t == 0 else hs[t - 1]
        zr_t = zr[t]
        np.matmul(hp, UzrT, out=zr_t)
        zr_t += pre[t, :, :2 * H]
        np.tanh(zr_t, out=zr_t)
        zr_t *= 0.5
        zr_t += 0.5
        np.multiply(zr_t[:, H:], hp, out=rh[t])
        c_t = c[t]
        np.matmul(rh[t], UcT, out=c_t)
        c_t += pre[t, :, 2 * H:]
        np.tanh(c_t, out=c_t)
        np.subtract(c_t, hp, out=tmp)
        tmp *= zr_t[:, :H]
        np.add(hp, tmp, out=hs[t])


def gru_backward_loop(dhs, dh_last, h0, hs, zr, c, Uzr, Uc, dA):
    """Fill gate pre-activation gradients ``dA`` (T, B, 3H); return dh0."""
    T, B, H = hs.shape
    dh = np.array(dh_last, dtype=np.float64)
    drh = np.empty((B, H))
    dhp = np.empty((B, H))
    for t in range(T - 1, -1, -1):
        if dhs is not None:
            dh += dhs[t]
        hp = h0 if t == 0 else hs[t - 1]
        z = zr[t, :, :H]
        r = zr[t, :, H:]
        c_t = c[t]
        np.multiply(dh, z * (1.0 - c_t * c_t), out=dA[t, :, 2 * H:])
        np.matmul(dA[t, :, 2 * H:], Uc, out=drh)
        np.multiply(dh, (c_t - hp) * z * (1.0 - z), out=dA[t, :, :H])
        np.multiply(drh, hp * r * (1.0 - r), out=dA[t, :, H:2 * H])
        np.matmul(dA[t, :, :2 * H], Uzr, out=dhp)
        dhp += dh * (1.0 - z) + drh * r
        dh, dhp = dhp, dh
    return dh


def adam_update(p, g, m, v, beta1, beta2, one_m_b1, one_m_b2, c2, eps, lr_c1):
    """Adam step on flat arrays, in place."""
    m *= beta1
    m += one_m_b1 * g
    v *= beta2
    v += one_m_b2 * (g * g)
    d = v / c2
    np.sqrt(d, out=d)
    d += eps
    np.divide(m, d, out=d)
    d *= lr_c1
    p -= d
