"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Times the pyramidal LK tracker, the xoshiro stream, a GRU forward/backward
pass at training size and an Adam update over all network parameters, and
one full training step of the detector on a 32-window batch. The compiled
GRU is also timed with its per-step products on plain BLAS dgemm instead
of the packed AVX-512 kernel. Allocator settings match training.
"""
import argparse
import time

import numpy as np

from facetraj import _backend, flow, ftdn, nncore, training
from facetraj.rng import Xoshiro256


def _texture(shape, seed):
    rng = np.random.default_rng(seed)
    spec = np.fft.fft2(rng.standard_normal(shape))
    fy = np.fft.fftfreq(shape[0])[:, None]
    fx = np.fft.fftfreq(shape[1])[None, :]
    spec[np.hypot(fx, fy) > 0.1] = 0
    img = np.real(np.fft.ifft2(spec))
    return (img - img.min()) / np.ptp(img)


def _best(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases():
    img = _texture((240, 320), 1)
    moved = np.roll(img, (1, 2), axis=(0, 1))
    ys, xs = np.mgrid[30:210:4, 30:290:4]
    pts = np.column_stack([xs.ravel(), ys.ravel()]).astype(float)

    rng = np.random.default_rng(0)
    H, D, T, B = ftdn.HIDDEN, 56, 64, 32
    W, U, b = rng.normal(size=(3 * H, D)) * 0.1, rng.normal(size=(3 * H, H)) * 0.05, np.zeros(3 * H)
    X, h0 = rng.normal(size=(T, B, D)), np.zeros((B, H))

    params = ftdn.init_params(0)
    grads = {k: rng.normal(size=v.shape) for k, v in params.items()}
    x = rng.normal(size=(32, 28, 64))
    y = (np.arange(32) % 2).astype(float)

    def lk(be):
        return lambda: flow.lk_track(img, moved, pts, backend=be)

    def rng_fill(be):
        return lambda: Xoshiro256(1, backend=be).next_uint64(100_000)

    def gru(be):
        def run():
            hs, cache = nncore.gru_forward(X, h0, W, U, b, backend=be)
            nncore.gru_backward(None, np.ones((B, H)), cache)
        return run

    def adam(be):
        state = nncore.AdamState()
        p = {k: v.copy() for k, v in params.items()}
        return lambda: nncore.adam_step(p, grads, state, 1e-6, backend=be)

    return [(f"LK track, {len(pts)} points", lk), ("xoshiro, 1e5 draws", rng_fill),
            ("GRU fwd+bwd, T=64 B=32 H=256", gru), ("Adam, all parameters", adam)], (x, y, params)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    try:
        _backend.get("cython")
        backends = ["python", "cython"]
    except ImportError:
        backends = ["python"]
        print("compiled extension not built; timing the fallback only")
    training._keep_freed_memory()
    table, (x, y, params) = cases()
    print(f"{'kernel':<32}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for name, make in table:
        t = [_best(make(be), args.repeat) for be in backends]
        row = f"{name:<32}" + "".join(f"{v * 1e3:>10.2f}ms" for v in t)
        if len(t) == 2:
            row += f"{t[0] / t[1]:>11.1f}x"
        print(row)
    if "cython" in backends:
        ck = _backend.get("cython")
        if ck.use_packed_gemm():
            gru = dict(table)["GRU fwd+bwd, T=64 B=32 H=256"]("cython")
            packed = _best(gru, args.repeat)
            ck.use_packed_gemm(False)
            blas = _best(gru, args.repeat)
            ck.use_packed_gemm(True)
            print(f"compiled GRU step products: packed {packed * 1e3:.2f}ms, dgemm {blas * 1e3:.2f}ms")
    p = {k: v.copy() for k, v in params.items()}
    state = nncore.AdamState()
    step = _best(lambda: ftdn.train_step(p, state, x, y, 1e-3), args.repeat)
    print(f"training step, batch 32 ({_backend.NAME} backend): {step * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
