# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# distutils: language = c++
"""Compiled kernels: factored fast marching and geodesic back-tracing.

All array arguments live in index space (node (i, j, k) sits at
``origin + h * (i, j, k)``); callers in :mod:`nanopat.eikonal` do the
physical/index conversion.  :mod:`nanopat._fallback` mirrors every
function here operation for operation.
"""
import numpy as np

from libc.math cimport sqrt, floor, isnan, NAN, INFINITY
from libcpp.queue cimport priority_queue
from libcpp.pair cimport pair

ctypedef pair[double, long] entry


cdef inline double _update(double[:, :, ::1] tau, double[:, :, ::1] u,
                           signed char[:, :, ::1] state, const double[:, :, ::1] c,
                           long i, long j, long k, long nx, long ny, long nz,
                           double h, long i0, long j0, long k0, double c_src,
                           double* u_out) nogil:
    cdef double tnb[3]
    cdef double unb[3]
    cdef double snb[3]
    cdef double gnb[3]
    cdef long idx[3]
    cdef long src[3]
    cdef long dims[3]
    cdef int cnt = 0, axis, side, m, p, q
    cdef long ni, nj, nk
    cdef double best_t, best_u, best_s, tmp
    cdef double r, tau0, sa, sb, sc, disc, uu, t, cand, ucand, A, B, rhs
    idx[0] = i; idx[1] = j; idx[2] = k
    src[0] = i0; src[1] = j0; src[2] = k0
    dims[0] = nx; dims[1] = ny; dims[2] = nz
    r = sqrt(<double>((i - i0) * (i - i0) + (j - j0) * (j - j0) + (k - k0) * (k - k0)))
    tau0 = h * r / c_src
    for axis in range(3):
        best_t = INFINITY
        best_u = 0.0
        best_s = 0.0
        for side in range(-1, 2, 2):
            ni = i; nj = j; nk = k
            if axis == 0:
                ni = i + side
            elif axis == 1:
                nj = j + side
            else:
                nk = k + side
            if ni < 0 or nj < 0 or nk < 0 or ni >= nx or nj >= ny or nk >= nz:
                continue
            if state[ni, nj, nk] != 2:
                continue
            if tau[ni, nj, nk] < best_t:
                best_t = tau[ni, nj, nk]
                best_u = u[ni, nj, nk]
                best_s = -side
        if best_t < INFINITY:
            tnb[cnt] = best_t
            unb[cnt] = best_u
            snb[cnt] = best_s
            gnb[cnt] = (idx[axis] - src[axis]) / (c_src * r)
            cnt += 1
    if cnt == 0:
        u_out[0] = NAN
        return INFINITY
    # insertion sort by neighbour time
    for p in range(1, cnt):
        q = p
        while q > 0 and tnb[q - 1] > tnb[q]:
            tmp = tnb[q]; tnb[q] = tnb[q - 1]; tnb[q - 1] = tmp
            tmp = unb[q]; unb[q] = unb[q - 1]; unb[q - 1] = tmp
            tmp = snb[q]; snb[q] = snb[q - 1]; snb[q - 1] = tmp
            tmp = gnb[q]; gnb[q] = gnb[q - 1]; gnb[q - 1] = tmp
            q -= 1
    rhs = 1.0 / (c[i, j, k] * c[i, j, k])
    cand = INFINITY
    ucand = NAN
    for m in range(1, cnt + 1):
        sa = 0.0; sb = 0.0; sc = -rhs
        for p in range(m):
            A = gnb[p] + snb[p] * tau0 / h
            B = snb[p] * tau0 * unb[p] / h
            sa += A * A
            sb += A * B
            sc += B * B
        disc = sb * sb - sa * sc
        if disc < 0.0 or sa <= 0.0:
            break
        uu = (sb + sqrt(disc)) / sa
        t = tau0 * uu
        if t < tnb[m - 1]:
            break
        cand = t
        ucand = uu
        if m < cnt and t <= tnb[m]:
            break
    if cand == INFINITY:
        cand = tnb[0] + h / c[i, j, k]
        ucand = cand / tau0
    u_out[0] = ucand
    return cand


def fmm_factored(const double[:, :, ::1] c, double h, long i0, long j0, long k0):
    """Factored first-order fast marching from the node (i0, j0, k0).

    Returns ``(tau, u, order)`` where ``tau = u * |y - x| / c(x)`` and
    ``order`` is the acceptance rank of each node.
    """
    cdef long nx = c.shape[0], ny = c.shape[1], nz = c.shape[2]
    cdef long nyz = ny * nz
    tau_arr = np.full((nx, ny, nz), np.inf)
    u_arr = np.full((nx, ny, nz), np.nan)
    state_arr = np.zeros((nx, ny, nz), dtype=np.int8)
    order_arr = np.full((nx, ny, nz), -1, dtype=np.int64)
    cdef double[:, :, ::1] tau = tau_arr
    cdef double[:, :, ::1] u = u_arr
    cdef signed char[:, :, ::1] state = state_arr
    cdef long[:, :, ::1] order = order_arr
    cdef double c_src = c[i0, j0, k0]
    cdef priority_queue[entry] pq
    cdef entry top
    cdef long n, i, j, k, ni, nj, nk, rank = 0
    cdef int di, dj, dk, nb
    cdef double t, ut
    cdef long off[6][3]
    off[0][0] = -1; off[0][1] = 0; off[0][2] = 0
    off[1][0] = 1; off[1][1] = 0; off[1][2] = 0
    off[2][0] = 0; off[2][1] = -1; off[2][2] = 0
    off[3][0] = 0; off[3][1] = 1; off[3][2] = 0
    off[4][0] = 0; off[4][1] = 0; off[4][2] = -1
    off[5][0] = 0; off[5][1] = 0; off[5][2] = 1

    init = []
    for di in range(-1, 2):
        for dj in range(-1, 2):
            for dk in range(-1, 2):
                i = i0 + di; j = j0 + dj; k = k0 + dk
                if i < 0 or j < 0 or k < 0 or i >= nx or j >= ny or k >= nz:
                    continue
                tau[i, j, k] = h * sqrt(<double>(di * di + dj * dj + dk * dk)) / c_src
                u[i, j, k] = 1.0
                state[i, j, k] = 2
                init.append((tau[i, j, k], (i * ny + j) * nz + k))
    init.sort()
    for _, n in init:
        order[n // nyz, (n // nz) % ny, n % nz] = rank
        rank += 1

    with nogil:
        for i in range(max(i0 - 1, 0), min(i0 + 2, nx)):
            for j in range(max(j0 - 1, 0), min(j0 + 2, ny)):
                for k in range(max(k0 - 1, 0), min(k0 + 2, nz)):
                    for nb in range(6):
                        ni = i + off[nb][0]; nj = j + off[nb][1]; nk = k + off[nb][2]
                        if ni < 0 or nj < 0 or nk < 0 or ni >= nx or nj >= ny or nk >= nz:
                            continue
                        if state[ni, nj, nk] == 2:
                            continue
                        t = _update(tau, u, state, c, ni, nj, nk, nx, ny, nz, h, i0, j0, k0, c_src, &ut)
                        if t < tau[ni, nj, nk]:
                            tau[ni, nj, nk] = t
                            u[ni, nj, nk] = ut
                            state[ni, nj, nk] = 1
                            pq.push(entry(-t, -((ni * ny + nj) * nz + nk)))
        while not pq.empty():
            top = pq.top()
            pq.pop()
            n = -top.second
            i = n // nyz; j = (n // nz) % ny; k = n % nz
            if state[i, j, k] == 2:
                continue
            if -top.first != tau[i, j, k]:
                continue
            state[i, j, k] = 2
            order[i, j, k] = rank
            rank += 1
            for nb in range(6):
                ni = i + off[nb][0]; nj = j + off[nb][1]; nk = k + off[nb][2]
                if ni < 0 or nj < 0 or nk < 0 or ni >= nx or nj >= ny or nk >= nz:
                    continue
                if state[ni, nj, nk] == 2:
                    continue
                t = _update(tau, u, state, c, ni, nj, nk, nx, ny, nz, h, i0, j0, k0, c_src, &ut)
                if t < tau[ni, nj, nk]:
                    tau[ni, nj, nk] = t
                    u[ni, nj, nk] = ut
                    state[ni, nj, nk] = 1
                    pq.push(entry(-t, -((ni * ny + nj) * nz + nk)))
    return tau_arr, u_arr, order_arr


cdef inline double _lerp(double a, double b, double t) nogil:
    # zero-weight corners are skipped so NaN neighbours of a node do not leak
    if t == 0.0:
        return a
    if t == 1.0:
        return b
    return (1 - t) * a + t * b


cdef inline double _tri(const double[:, :, ::1] f, double fx, double fy, double fz) nogil:
    cdef long nx = f.shape[0], ny = f.shape[1], nz = f.shape[2]
    cdef long i, j, k
    cdef double tx, ty, tz
    if fx < 0.0:
        fx = 0.0
    if fy < 0.0:
        fy = 0.0
    if fz < 0.0:
        fz = 0.0
    if fx > nx - 1:
        fx = nx - 1
    if fy > ny - 1:
        fy = ny - 1
    if fz > nz - 1:
        fz = nz - 1
    i = <long>floor(fx)
    j = <long>floor(fy)
    k = <long>floor(fz)
    if i > nx - 2:
        i = nx - 2
    if j > ny - 2:
        j = ny - 2
    if k > nz - 2:
        k = nz - 2
    tx = fx - i
    ty = fy - j
    tz = fz - k
    return _lerp(_lerp(_lerp(f[i, j, k], f[i, j, k + 1], tz),
                       _lerp(f[i, j + 1, k], f[i, j + 1, k + 1], tz), ty),
                 _lerp(_lerp(f[i + 1, j, k], f[i + 1, j, k + 1], tz),
                       _lerp(f[i + 1, j + 1, k], f[i + 1, j + 1, k + 1], tz), ty), tx)


cdef inline int _descent(const double[:, :, ::1] u, const double[:, :, ::1] gu0,
                         const double[:, :, ::1] gu1, const double[:, :, ::1] gu2,
                         double px, double py, double pz,
                         double sx, double sy, double sz,
                         double c_src, double h, double* d) nogil:
    # unit vector along -grad tau, grad tau = u grad tau0 + tau0 grad u
    cdef double dx = (px - sx) * h, dy = (py - sy) * h, dz = (pz - sz) * h
    cdef double r = sqrt(dx * dx + dy * dy + dz * dz)
    cdef double tau0, uu, gx, gy, gz, nrm
    if r < 1e-14:
        return 0
    tau0 = r / c_src
    uu = _tri(u, px, py, pz)
    gx = uu * dx / (r * c_src) + tau0 * _tri(gu0, px, py, pz)
    gy = uu * dy / (r * c_src) + tau0 * _tri(gu1, px, py, pz)
    gz = uu * dz / (r * c_src) + tau0 * _tri(gu2, px, py, pz)
    nrm = sqrt(gx * gx + gy * gy + gz * gz)
    if not (nrm > 0.0):
        return 0
    d[0] = -gx / nrm
    d[1] = -gy / nrm
    d[2] = -gz / nrm
    return 1


cdef inline double _tau_at(const double[:, :, ::1] u, double px, double py, double pz,
                           double sx, double sy, double sz, double c_src, double h) nogil:
    cdef double dx = (px - sx) * h, dy = (py - sy) * h, dz = (pz - sz) * h
    return sqrt(dx * dx + dy * dy + dz * dz) / c_src * _tri(u, px, py, pz)


cdef int _trace(const double[:, :, ::1] u, const double[:, :, ::1] gu0, const double[:, :, ::1] gu1,
                const double[:, :, ::1] gu2, const double[:, :, ::1] c,
                const double[:, :, ::1] F, bint use_F,
                const double[:, :, ::1] G0, const double[:, :, ::1] G1, const double[:, :, ::1] G2, bint use_G,
                double px, double py, double pz, double sx, double sy, double sz,
                double c_src, double h, double step, double term, int kpow, long max_steps,
                double* out, double[:, ::1] path, bint keep_path, long* npts) nogil:
    # out[0] = int F tau^k dtau, out[1] = int G . dxi (source -> start), out[2] = metric length
    cdef long nx = u.shape[0], ny = u.shape[1], nz = u.shape[2]
    cdef double d1[3]
    cdef double d2[3]
    cdef double mx, my, mz, qx, qy, qz, L, dt, fprev, fnew, tq, last_f
    cdef double gpx = 0.0, gpy = 0.0, gpz = 0.0, gnx, gny, gnz
    cdef double sF = 0.0, sG = 0.0, arclen = 0.0, dist, fx, fy, fz
    cdef long nstep = 0
    cdef int p
    cdef double hs = step / h
    npts[0] = 0
    if keep_path:
        path[0, 0] = px; path[0, 1] = py; path[0, 2] = pz
        path[0, 3] = 0.0
        npts[0] = 1
    last_f = NAN
    fprev = 0.0
    if use_F:
        fprev = _tri(F, px, py, pz)
        last_f = fprev
        if kpow > 0:
            tq = _tau_at(u, px, py, pz, sx, sy, sz, c_src, h)
            for p in range(kpow):
                fprev *= tq
    if use_G:
        gpx = _tri(G0, px, py, pz); gpy = _tri(G1, px, py, pz); gpz = _tri(G2, px, py, pz)
    while True:
        dist = h * sqrt((px - sx) * (px - sx) + (py - sy) * (py - sy) + (pz - sz) * (pz - sz))
        if dist <= term:
            # closing segment onto the source node
            mx = 0.5 * (px + sx); my = 0.5 * (py + sy); mz = 0.5 * (pz + sz)
            L = dist
            dt = L / _tri(c, mx, my, mz)
            if use_F:
                fnew = _tri(F, sx, sy, sz)
                if isnan(fnew):
                    fnew = last_f
                if kpow > 0:
                    fnew = 0.0
                sF += 0.5 * (fprev + fnew) * dt
            if use_G:
                gnx = _tri(G0, sx, sy, sz); gny = _tri(G1, sx, sy, sz); gnz = _tri(G2, sx, sy, sz)
                sG -= 0.5 * ((gpx + gnx) * (sx - px) + (gpy + gny) * (sy - py)
                             + (gpz + gnz) * (sz - pz)) * h
            arclen += dt
            if keep_path:
                path[npts[0], 0] = sx; path[npts[0], 1] = sy; path[npts[0], 2] = sz
                path[npts[0], 3] = arclen
                npts[0] += 1
            break
        if nstep >= max_steps:
            out[0] = sF; out[1] = sG; out[2] = arclen
            return 1
        if not _descent(u, gu0, gu1, gu2, px, py, pz, sx, sy, sz, c_src, h, d1):
            out[0] = sF; out[1] = sG; out[2] = arclen
            return 3
        mx = px + 0.5 * hs * d1[0]; my = py + 0.5 * hs * d1[1]; mz = pz + 0.5 * hs * d1[2]
        if not _descent(u, gu0, gu1, gu2, mx, my, mz, sx, sy, sz, c_src, h, d2):
            out[0] = sF; out[1] = sG; out[2] = arclen
            return 3
        qx = px + hs * d2[0]; qy = py + hs * d2[1]; qz = pz + hs * d2[2]
        if qx < 0 or qy < 0 or qz < 0 or qx > nx - 1 or qy > ny - 1 or qz > nz - 1:
            out[0] = sF; out[1] = sG; out[2] = arclen
            return 2
        fx = 0.5 * (px + qx); fy = 0.5 * (py + qy); fz = 0.5 * (pz + qz)
        dt = step / _tri(c, fx, fy, fz)
        if use_F:
            fnew = _tri(F, qx, qy, qz)
            if isnan(fnew):
                fnew = last_f
            else:
                last_f = fnew
            if kpow > 0:
                tq = _tau_at(u, qx, qy, qz, sx, sy, sz, c_src, h)
                for p in range(kpow):
                    fnew *= tq
            sF += 0.5 * (fprev + fnew) * dt
            fprev = fnew
        if use_G:
            gnx = _tri(G0, qx, qy, qz); gny = _tri(G1, qx, qy, qz); gnz = _tri(G2, qx, qy, qz)
            sG -= 0.5 * ((gpx + gnx) * (qx - px) + (gpy + gny) * (qy - py)
                         + (gpz + gnz) * (qz - pz)) * h
            gpx = gnx; gpy = gny; gpz = gnz
        arclen += dt
        px = qx; py = qy; pz = qz
        nstep += 1
        if keep_path:
            path[npts[0], 0] = px; path[npts[0], 1] = py; path[npts[0], 2] = pz
            path[npts[0], 3] = arclen
            npts[0] += 1
    out[0] = sF; out[1] = sG; out[2] = arclen
    return 0


def trace_integrate(const double[:, :, ::1] u, const double[:, :, :, ::1] gu, const double[:, :, ::1] c,
                    F, G, const double[:, ::1] starts, source, double c_src, double h,
                    double step, double term, int kpow, max_steps):
    """Back-trace geodesics from every start point and integrate along them.

    ``F`` (scalar field or None) is integrated as ``F * tau**kpow dtau``;
    ``G`` (3-vector field or None) as the 1-form ``G . dxi`` oriented from
    the source to the start point.  Returns ``(int_F, int_G, arclen, status)``.
    """
    cdef long n = starts.shape[0], q
    cdef const long[::1] msteps = np.ascontiguousarray(max_steps, dtype=np.int64)
    cdef const double[:, :, ::1] Fv = F if F is not None else c
    cdef bint use_F = F is not None
    cdef const double[:, :, :, ::1] Gv
    cdef bint use_G = G is not None
    if use_G:
        Gv = G
    else:
        Gv = gu
    cdef double sx = source[0], sy = source[1], sz = source[2]
    out_F = np.empty(n)
    out_G = np.empty(n)
    out_L = np.empty(n)
    status = np.empty(n, dtype=np.int64)
    cdef double[::1] oF = out_F, oG = out_G, oL = out_L
    cdef long[::1] st = status
    cdef double buf[3]
    cdef double[:, ::1] dummy = np.zeros((1, 4))
    cdef long npts
    with nogil:
        for q in range(n):
            st[q] = _trace(u, gu[0], gu[1], gu[2], c, Fv, use_F, Gv[0], Gv[1], Gv[2], use_G,
                           starts[q, 0], starts[q, 1], starts[q, 2], sx, sy, sz,
                           c_src, h, step, term, kpow, msteps[q], buf, dummy, False, &npts)
            oF[q] = buf[0]
            oG[q] = buf[1]
            oL[q] = buf[2]
    return out_F, out_G, out_L, status


def trace_path(const double[:, :, ::1] u, const double[:, :, :, ::1] gu, const double[:, :, ::1] c,
               start, source, double c_src, double h, double step, double term,
               long max_steps):
    """Back-trace one geodesic; returns ``(points[:, :4], status)``.

    Column 3 of ``points`` holds the cumulative metric length measured from
    the start point.
    """
    path_arr = np.zeros((max_steps + 2, 4))
    cdef double[:, ::1] path = path_arr
    cdef double buf[3]
    cdef long npts = 0
    cdef int status
    status = _trace(u, gu[0], gu[1], gu[2], c, c, False, gu[0], gu[1], gu[2], False,
                    start[0], start[1], start[2], source[0], source[1], source[2],
                    c_src, h, step, term, 0, max_steps, buf, path, True, &npts)
    return path_arr[:npts].copy(), status
