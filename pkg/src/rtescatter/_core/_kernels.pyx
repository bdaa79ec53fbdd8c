# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops; see ``_fallback`` for the reference semantics."""
import numpy as np

from libc.math cimport ceil, exp, floor, sqrt

cdef double GLX[4]
cdef double GLW[4]
GLX[:] = [0.06943184420297371, 0.33000947820757187, 0.6699905217924281, 0.9305681557970262]
GLW[:] = [0.17392742256872692, 0.32607257743127305, 0.32607257743127305, 0.17392742256872692]


cdef struct Field:
    int kind
    double value
    int nblob
    const double* centers
    const double* inv2w2
    const double* amps
    const double* grid
    int nx, ny, nz
    double ox, oy, oz
    double dx, dy, dz


cdef inline double _tri(const double* g, int nx, int ny, int nz,
                        double fx, double fy, double fz) noexcept nogil:
    cdef int ix, iy, iz
    cdef double tx, ty, tz, c00, c10, c01, c11
    cdef Py_ssize_t sx = ny * nz, sy = nz, b
    if fx < 0: fx = 0
    if fy < 0: fy = 0
    if fz < 0: fz = 0
    if fx > nx - 1: fx = nx - 1
    if fy > ny - 1: fy = ny - 1
    if fz > nz - 1: fz = nz - 1
    ix = <int>floor(fx)
    iy = <int>floor(fy)
    iz = <int>floor(fz)
    if ix > nx - 2: ix = nx - 2
    if iy > ny - 2: iy = ny - 2
    if iz > nz - 2: iz = nz - 2
    tx = fx - ix
    ty = fy - iy
    tz = fz - iz
    b = ix * sx + iy * sy + iz
    c00 = g[b] * (1 - tx) + g[b + sx] * tx
    c10 = g[b + sy] * (1 - tx) + g[b + sx + sy] * tx
    c01 = g[b + 1] * (1 - tx) + g[b + sx + 1] * tx
    c11 = g[b + sy + 1] * (1 - tx) + g[b + sx + sy + 1] * tx
    c00 = c00 * (1 - ty) + c10 * ty
    c01 = c01 * (1 - ty) + c11 * ty
    return c00 * (1 - tz) + c01 * tz


cdef inline double _eval(Field* f, double x, double y, double z) noexcept nogil:
    cdef int i
    cdef double acc, rx, ry, rz
    if f.kind == 0:
        return f.value
    if f.kind == 1:
        acc = f.value
        for i in range(f.nblob):
            rx = x - f.centers[3 * i]
            ry = y - f.centers[3 * i + 1]
            rz = z - f.centers[3 * i + 2]
            acc += f.amps[i] * exp(-f.inv2w2[i] * (rx * rx + ry * ry + rz * rz))
        return acc
    return _tri(f.grid, f.nx, f.ny, f.nz, (x - f.ox) / f.dx, (y - f.oy) / f.dy, (z - f.oz) / f.dz)


cdef class _FieldHolder:
    """Keeps the numpy buffers alive while a Field struct points into them."""
    cdef Field f
    cdef object refs

    def __init__(self, spec):
        centers = np.ascontiguousarray(spec.centers, dtype=np.float64).reshape(-1)
        inv2w2 = np.ascontiguousarray(spec.inv_two_w2, dtype=np.float64)
        amps = np.ascontiguousarray(spec.amps, dtype=np.float64)
        grid = np.ascontiguousarray(spec.grid, dtype=np.float64)
        self.refs = (centers, inv2w2, amps, grid)
        cdef const double[::1] c = centers if centers.size else np.zeros(1)
        cdef const double[::1] w = inv2w2 if inv2w2.size else np.zeros(1)
        cdef const double[::1] a = amps if amps.size else np.zeros(1)
        cdef const double[::1] g = grid.reshape(-1)
        self.refs = self.refs + (c, w, a, g)
        self.f.kind = spec.kind
        self.f.value = spec.value
        self.f.nblob = amps.shape[0]
        self.f.centers = &c[0]
        self.f.inv2w2 = &w[0]
        self.f.amps = &a[0]
        self.f.grid = &g[0]
        self.f.nx, self.f.ny, self.f.nz = grid.shape
        self.f.ox, self.f.oy, self.f.oz = [float(v) for v in spec.origin]
        self.f.dx, self.f.dy, self.f.dz = [float(v) for v in spec.spacing]


def optical_depths(p0, p1, spec, double panel):
    cdef const double[:, ::1] a = np.ascontiguousarray(p0, dtype=np.float64).reshape(-1, 3)
    cdef const double[:, ::1] b = np.ascontiguousarray(p1, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t m = a.shape[0], i
    out = np.zeros(m)
    cdef double[::1] o = out
    cdef _FieldHolder holder = _FieldHolder(spec)
    cdef Field* f = &holder.f
    cdef double sx, sy, sz, L, h, acc, s
    cdef long npan, k
    cdef int q
    with nogil:
        for i in range(m):
            sx = b[i, 0] - a[i, 0]
            sy = b[i, 1] - a[i, 1]
            sz = b[i, 2] - a[i, 2]
            L = sqrt(sx * sx + sy * sy + sz * sz)
            if f.kind == 0:
                o[i] = f.value * L
                continue
            npan = <long>ceil(L / panel - 1e-12)
            if npan < 1:
                npan = 1
            h = L / npan
            acc = 0.0
            for k in range(npan):
                for q in range(4):
                    s = (k + GLX[q]) / npan
                    acc += GLW[q] * _eval(f, a[i, 0] + s * sx, a[i, 1] + s * sy, a[i, 2] + s * sz)
            o[i] = acc * h
    return out


cdef inline void _phi01(double a, double* p0, double* p1) noexcept nogil:
    cdef double e
    if a < 1e-3:
        p0[0] = 0.5 - a / 6 + a * a / 24 - a * a * a / 120
        p1[0] = 0.5 - a / 3 + a * a / 8 - a * a * a / 30
    else:
        e = exp(-a)
        p0[0] = (a - 1 + e) / (a * a)
        p1[0] = (1 - (1 + a) * e) / (a * a)


def march_tinv(starts, dirs, lengths, source, sigma_grid, origin, spacing,
               double step, double const_sigma=-1.0):
    cdef const double[:, ::1] P = np.ascontiguousarray(starts, dtype=np.float64)
    cdef const double[:, ::1] D = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef const double[:, ::1] Lm = np.ascontiguousarray(lengths, dtype=np.float64)
    src = np.ascontiguousarray(source, dtype=np.float64)
    sg = np.ascontiguousarray(sigma_grid, dtype=np.float64)
    cdef const double[::1] S = src.reshape(-1)
    cdef const double[::1] G = sg.reshape(-1)
    cdef int nx = src.shape[1], ny = src.shape[2], nz = src.shape[3]
    cdef Py_ssize_t slab = nx * ny * nz
    cdef double ox = origin[0], oy = origin[1], oz = origin[2]
    cdef double idx = 1.0 / spacing[0], idy = 1.0 / spacing[1], idz = 1.0 / spacing[2]
    cdef Py_ssize_t M = Lm.shape[0], J = Lm.shape[1], m, j
    out_a = np.zeros((M, J))
    tau_a = np.zeros((M, J))
    cdef double[:, ::1] out = out_a
    cdef double[:, ::1] taus = tau_a
    cdef const double* Sj
    cdef double L, ell, px, py, pz, ux, uy, uz, qx, qy, qz
    cdef double Sprev, Scur, sprev, scur, a, tau, acc, p0, p1
    cdef long n, k
    cdef bint cs = const_sigma >= 0
    with nogil:
        for m in range(M):
            px = P[m, 0]
            py = P[m, 1]
            pz = P[m, 2]
            for j in range(J):
                L = Lm[m, j]
                if L <= 0:
                    continue
                Sj = &S[j * slab]
                ux = D[j, 0]
                uy = D[j, 1]
                uz = D[j, 2]
                n = <long>ceil(L / step - 1e-12)
                if n < 1:
                    n = 1
                ell = L / n
                Sprev = _tri(Sj, nx, ny, nz, (px - ox) * idx, (py - oy) * idy, (pz - oz) * idz)
                if cs:
                    sprev = const_sigma
                else:
                    sprev = _tri(&G[0], nx, ny, nz, (px - ox) * idx, (py - oy) * idy, (pz - oz) * idz)
                scur = sprev
                tau = 0.0
                acc = 0.0
                for k in range(1, n + 1):
                    qx = px - k * ell * ux
                    qy = py - k * ell * uy
                    qz = pz - k * ell * uz
                    Scur = _tri(Sj, nx, ny, nz, (qx - ox) * idx, (qy - oy) * idy, (qz - oz) * idz)
                    if not cs:
                        scur = _tri(&G[0], nx, ny, nz, (qx - ox) * idx, (qy - oy) * idy, (qz - oz) * idz)
                    a = 0.5 * ell * (sprev + scur)
                    _phi01(a, &p0, &p1)
                    acc += exp(-tau) * ell * (p0 * Sprev + p1 * Scur)
                    tau += a
                    Sprev = Scur
                    sprev = scur
                out[m, j] = acc
                taus[m, j] = tau
    return out_a, tau_a


def kaczmarz(indptr, indices, data, b, x, double relaxation, int sweeps, bint nonneg=True):
    cdef const long[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const long[::1] ix = np.ascontiguousarray(indices, dtype=np.int64)
    cdef const double[::1] dv = np.ascontiguousarray(data, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[::1] xv = x
    cdef Py_ssize_t nrow = bv.shape[0], i, p
    rn_a = np.zeros(nrow)
    cdef double[::1] rn = rn_a
    cdef double r, c
    cdef int s
    with nogil:
        for i in range(nrow):
            for p in range(ip[i], ip[i + 1]):
                rn[i] += dv[p] * dv[p]
        for s in range(sweeps):
            for i in range(nrow):
                if rn[i] <= 0:
                    continue
                r = bv[i]
                for p in range(ip[i], ip[i + 1]):
                    r -= dv[p] * xv[ix[p]]
                c = relaxation * r / rn[i]
                for p in range(ip[i], ip[i + 1]):
                    xv[ix[p]] += c * dv[p]
            if nonneg:
                for p in range(xv.shape[0]):
                    if xv[p] < 0:
                        xv[p] = 0.0
    return x
