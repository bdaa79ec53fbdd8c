"""Time the compiled kernels against the NumPy fallback and check they agree.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from rtescatter._core import load_backend
from rtescatter.fields import Blob, BlobField
from rtescatter.geometry import Domain, chord_lengths
from rtescatter.quadrature import fibonacci_rule
from rtescatter.recon import VoxelGrid, parallel_chord_families, siddon_system


def _time(fn, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    dom = Domain(np.zeros(3), 1.0)
    sigma = BlobField([Blob([0.2, 0.0, 0.1], 0.3, 0.8), Blob([-0.3, 0.2, 0.0], 0.25, 0.5)], background=0.3)
    spec = sigma.spec()

    p0 = rng.normal(size=(2000, 3))
    p0 /= np.linalg.norm(p0, axis=1, keepdims=True)
    p1 = -p0 + 0.1 * rng.normal(size=p0.shape)
    p1 /= np.linalg.norm(p1, axis=1, keepdims=True)
    yield "optical_depths (2000 chords, blob field)", lambda k: k.optical_depths(p0, p1, spec, 0.01)

    n = 17
    g = np.linspace(-1, 1, n)
    X = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1)
    act = np.linalg.norm(X, axis=-1) <= 1 + np.sqrt(3) * (2 / (n - 1))
    starts = dom.project_inside(X[act])
    dirs = fibonacci_rule(64).nodes
    back, _ = chord_lengths(dom, starts[:, None, :], dirs[None])
    src = rng.random((64, n, n, n))
    sig_grid = sigma(X.reshape(-1, 3)).reshape(n, n, n)
    origin, sp = np.full(3, -1.0), np.full(3, 2 / (n - 1))
    yield "march_tinv (17^3 x 64, gridded sigma)", lambda k: k.march_tinv(
        starts, dirs, back, src, sig_grid, origin, sp, 2 / (n - 1), -1.0
    )

    vg = VoxelGrid.covering(dom, 17)
    chords = parallel_chord_families(dom, 16, pitch=0.95 * vg.size)
    indptr, indices, data = siddon_system(chords, vg)
    b = rng.random(len(chords))

    def art(k):
        x = np.zeros(vg.n**3)
        k.kaczmarz(indptr, indices, data, b, x, 0.5, 10, True)
        return x

    yield "kaczmarz (696 chords, 17^3 voxels, 10 sweeps)", art


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    py = load_backend("python")
    try:
        cc = load_backend("compiled")
    except ImportError:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':48s} {'python [s]':>11s} {'compiled [s]':>13s} {'speedup':>8s} {'max diff':>10s}")
    for name, fn in cases(rng):
        rp, rc = fn(py), fn(cc)
        rp = rp if isinstance(rp, tuple) else (rp,)
        rc = rc if isinstance(rc, tuple) else (rc,)
        diff = max(float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) for a, b in zip(rp, rc))
        tp, tc = _time(lambda: fn(py), args.repeat), _time(lambda: fn(cc), args.repeat)
        print(f"{name:48s} {tp:11.4f} {tc:13.4f} {tp / tc:8.1f} {diff:10.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
