"""NumPy implementations of the hot kernels.

Same signatures and semantics as the compiled ``_kernels`` module; used
when the extension is not built or ``RTESCATTER_PURE_PYTHON`` is set.
"""
from __future__ import annotations

import numpy as np

from ..fields import trilinear

_GL4_X = 0.5 * (np.polynomial.legendre.leggauss(4)[0] + 1.0)
_GL4_W = 0.5 * np.polynomial.legendre.leggauss(4)[1]
_CHUNK = 1 << 20


def eval_spec(spec, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    if spec.kind == 0:
        return np.full(pts.shape[:-1], spec.value)
    if spec.kind == 1:
        out = np.full(pts.shape[:-1], spec.value)
        for c, iw, a in zip(spec.centers, spec.inv_two_w2, spec.amps):
            out += a * np.exp(-iw * np.sum((pts - c) ** 2, axis=-1))
        return out
    return trilinear(spec.grid, spec.origin, spec.spacing, pts)


def optical_depths(p0, p1, spec, panel: float) -> np.ndarray:
    """Line integral of the field over each segment p0[i] -> p1[i].

    Composite 4-point Gauss-Legendre on ceil(len/panel) equal panels;
    exact length times value for constant fields.
    """
    p0 = np.ascontiguousarray(p0, dtype=float).reshape(-1, 3)
    p1 = np.ascontiguousarray(p1, dtype=float).reshape(-1, 3)
    seg = p1 - p0
    length = np.linalg.norm(seg, axis=1)
    if spec.kind == 0:
        return spec.value * length
    npan = np.maximum(np.ceil(length / panel - 1e-12), 1).astype(np.int64)
    out = np.zeros(len(length))
    # chunk over segments so the node arrays stay bounded
    starts = np.concatenate([[0], np.cumsum(npan)])
    i = 0
    while i < len(length):
        j = int(np.searchsorted(starts, starts[i] + _CHUNK // 4, side="right")) - 1
        j = max(j, i + 1)
        j = min(j, len(length))
        np_ = npan[i:j]
        owner = np.repeat(np.arange(i, j), np_)
        first = np.repeat(starts[i:j] - starts[i], np_)
        k = np.arange(len(owner)) - first  # panel index within segment
        h = length[owner] / npan[owner]
        s = (k[:, None] + _GL4_X[None, :]) / npan[owner][:, None]  # fraction along segment
        pts = p0[owner][:, None, :] + s[..., None] * seg[owner][:, None, :]
        vals = eval_spec(spec, pts) @ _GL4_W * h
        out[i:j] = np.bincount(owner - i, weights=vals, minlength=j - i)
        i = j
    return out


def _phi01(a):
    """int_0^1 exp(-a u) (1-u) du and int_0^1 exp(-a u) u du."""
    a = np.asarray(a, dtype=float)
    small = a < 1e-3
    safe = np.where(small, 1.0, a)
    e = np.exp(-safe)
    p0 = np.where(small, 0.5 - a / 6 + a * a / 24 - a**3 / 120, (safe - 1 + e) / safe**2)
    p1 = np.where(small, 0.5 - a / 3 + a * a / 8 - a**3 / 30, (1 - (1 + safe) * e) / safe**2)
    return p0, p1


def march_tinv(starts, dirs, lengths, source, sigma_grid, origin, spacing, step, const_sigma=-1.0):
    """Attenuated backward line integral of a gridded source for every (node, direction).

    ``source`` has shape (ndir, nx, ny, nz); ``lengths[m, j]`` is the
    backward chord from ``starts[m]`` along ``-dirs[j]``. Each chord is cut
    into equal steps no longer than ``step``; on each step sigma is the
    trapezoid mean and the source is linear, integrated exactly against the
    exponential. Returns (integral, optical_depth), both (m, ndir).
    """
    starts = np.asarray(starts, dtype=float)
    M, J = lengths.shape
    if M > 4096:
        parts = [
            march_tinv(starts[i : i + 4096], dirs, lengths[i : i + 4096], source, sigma_grid, origin, spacing, step, const_sigma)
            for i in range(0, M, 4096)
        ]
        return np.vstack([p[0] for p in parts]), np.vstack([p[1] for p in parts])
    out = np.zeros((M, J))
    taus = np.zeros((M, J))
    for j in range(J):
        L = lengths[:, j]
        n = np.maximum(np.ceil(L / step - 1e-12), 1).astype(np.int64)
        ell = L / n
        K = int(n.max())
        k = np.arange(K + 1)
        pts = starts[:, None, :] - (k[None, :, None] * ell[:, None, None]) * dirs[j][None, None, :]
        S = trilinear(source[j], origin, spacing, pts)
        if const_sigma >= 0:
            sg = np.full(S.shape, const_sigma)
        else:
            sg = trilinear(sigma_grid, origin, spacing, pts)
        valid = k[None, 1:] <= n[:, None]
        a = 0.5 * ell[:, None] * (sg[:, :-1] + sg[:, 1:]) * valid
        tau_before = np.concatenate([np.zeros((M, 1)), np.cumsum(a, axis=1)[:, :-1]], axis=1)
        p0, p1 = _phi01(a)
        contrib = np.exp(-tau_before) * ell[:, None] * (p0 * S[:, :-1] + p1 * S[:, 1:]) * valid
        out[:, j] = np.where(L > 0, contrib.sum(axis=1), 0.0)
        taus[:, j] = np.where(L > 0, a.sum(axis=1), 0.0)
    return out, taus


def kaczmarz(indptr, indices, data, b, x, relaxation, sweeps, nonneg=True):
    """Cyclic ART sweeps in place on ``x``; rows with zero norm are skipped."""
    indptr = np.asarray(indptr)
    rows = np.repeat(np.arange(len(b)), np.diff(indptr))
    rn = np.bincount(rows, weights=data * data, minlength=len(b))
    for _ in range(sweeps):
        for i in range(len(b)):
            if rn[i] <= 0:
                continue
            lo, hi = indptr[i], indptr[i + 1]
            cols = indices[lo:hi]
            vals = data[lo:hi]
            r = b[i] - vals @ x[cols]
            x[cols] += (relaxation * r / rn[i]) * vals
        if nonneg:
            np.maximum(x, 0.0, out=x)
    return x
