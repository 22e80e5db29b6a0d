"""Pure-Python versions of the compiled kernels in ``_core.pyx``.

Same signatures, same arithmetic, same tie-breaking; only practical on
small grids (a few tens of thousands of nodes).
"""
import heapq
import math

import numpy as np

_OFFSETS = ((-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1))


def _update(tau, u, state, c, i, j, k, shape, h, src, c_src):
    nx, ny, nz = shape
    i0, j0, k0 = src
    idx = (i, j, k)
    r = math.sqrt((i - i0) ** 2 + (j - j0) ** 2 + (k - k0) ** 2)
    tau0 = h * r / c_src
    nbs = []
    for axis in range(3):
        best = None
        for side in (-1, 1):
            n = [i, j, k]
            n[axis] += side
            ni, nj, nk = n
            if ni < 0 or nj < 0 or nk < 0 or ni >= nx or nj >= ny or nk >= nz:
                continue
            if state[ni, nj, nk] != 2:
                continue
            if best is None or tau[ni, nj, nk] < best[0]:
                best = (tau[ni, nj, nk], u[ni, nj, nk], -side)
        if best is not None:
            g = (idx[axis] - src[axis]) / (c_src * r)
            nbs.append((best[0], best[1], best[2], g))
    if not nbs:
        return math.inf, math.nan
    # stable insertion order matches the compiled sort
    for p in range(1, len(nbs)):
        q = p
        while q > 0 and nbs[q - 1][0] > nbs[q][0]:
            nbs[q - 1], nbs[q] = nbs[q], nbs[q - 1]
            q -= 1
    rhs = 1.0 / (c[i, j, k] * c[i, j, k])
    cand, ucand = math.inf, math.nan
    cnt = len(nbs)
    for m in range(1, cnt + 1):
        sa = sb = 0.0
        sc = -rhs
        for p in range(m):
            tnb, unb, snb, gnb = nbs[p]
            A = gnb + snb * tau0 / h
            B = snb * tau0 * unb / h
            sa += A * A
            sb += A * B
            sc += B * B
        disc = sb * sb - sa * sc
        if disc < 0.0 or sa <= 0.0:
            break
        uu = (sb + math.sqrt(disc)) / sa
        t = tau0 * uu
        if t < nbs[m - 1][0]:
            break
        cand, ucand = t, uu
        if m < cnt and t <= nbs[m][0]:
            break
    if cand == math.inf:
        cand = nbs[0][0] + h / c[i, j, k]
        ucand = cand / tau0
    return cand, ucand


def fmm_factored(c, h, i0, j0, k0):
    c = np.asarray(c, dtype=float)
    shape = c.shape
    nx, ny, nz = shape
    tau = np.full(shape, np.inf)
    u = np.full(shape, np.nan)
    state = np.zeros(shape, dtype=np.int8)
    order = np.full(shape, -1, dtype=np.int64)
    src = (i0, j0, k0)
    c_src = float(c[i0, j0, k0])

    init = []
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            for dk in (-1, 0, 1):
                i, j, k = i0 + di, j0 + dj, k0 + dk
                if i < 0 or j < 0 or k < 0 or i >= nx or j >= ny or k >= nz:
                    continue
                tau[i, j, k] = h * math.sqrt(di * di + dj * dj + dk * dk) / c_src
                u[i, j, k] = 1.0
                state[i, j, k] = 2
                init.append((tau[i, j, k], (i * ny + j) * nz + k))
    init.sort()
    rank = 0
    for _, n in init:
        order[n // (ny * nz), (n // nz) % ny, n % nz] = rank
        rank += 1

    heap = []

    def relax(i, j, k):
        for oi, oj, ok in _OFFSETS:
            ni, nj, nk = i + oi, j + oj, k + ok
            if ni < 0 or nj < 0 or nk < 0 or ni >= nx or nj >= ny or nk >= nz:
                continue
            if state[ni, nj, nk] == 2:
                continue
            t, ut = _update(tau, u, state, c, ni, nj, nk, shape, h, src, c_src)
            if t < tau[ni, nj, nk]:
                tau[ni, nj, nk] = t
                u[ni, nj, nk] = ut
                state[ni, nj, nk] = 1
                heapq.heappush(heap, (t, (ni * ny + nj) * nz + nk))

    for i in range(max(i0 - 1, 0), min(i0 + 2, nx)):
        for j in range(max(j0 - 1, 0), min(j0 + 2, ny)):
            for k in range(max(k0 - 1, 0), min(k0 + 2, nz)):
                relax(i, j, k)
    while heap:
        t, n = heapq.heappop(heap)
        i, j, k = n // (ny * nz), (n // nz) % ny, n % nz
        if state[i, j, k] == 2 or t != tau[i, j, k]:
            continue
        state[i, j, k] = 2
        order[i, j, k] = rank
        rank += 1
        relax(i, j, k)
    return tau, u, order


def _lerp(a, b, t):
    # zero-weight corners are skipped so NaN neighbours of a node do not leak
    if t == 0.0:
        return a
    if t == 1.0:
        return b
    return (1 - t) * a + t * b


def _tri(f, fx, fy, fz):
    nx, ny, nz = f.shape
    fx = min(max(fx, 0.0), nx - 1)
    fy = min(max(fy, 0.0), ny - 1)
    fz = min(max(fz, 0.0), nz - 1)
    i = min(int(math.floor(fx)), nx - 2)
    j = min(int(math.floor(fy)), ny - 2)
    k = min(int(math.floor(fz)), nz - 2)
    tx, ty, tz = fx - i, fy - j, fz - k
    return _lerp(_lerp(_lerp(f[i, j, k], f[i, j, k + 1], tz),
                       _lerp(f[i, j + 1, k], f[i, j + 1, k + 1], tz), ty),
                 _lerp(_lerp(f[i + 1, j, k], f[i + 1, j, k + 1], tz),
                       _lerp(f[i + 1, j + 1, k], f[i + 1, j + 1, k + 1], tz), ty), tx)


def _descent(u, gu, p, s, c_src, h):
    dx, dy, dz = (p[0] - s[0]) * h, (p[1] - s[1]) * h, (p[2] - s[2]) * h
    r = math.sqrt(dx * dx + dy * dy + dz * dz)
    if r < 1e-14:
        return None
    tau0 = r / c_src
    uu = _tri(u, *p)
    gx = uu * dx / (r * c_src) + tau0 * _tri(gu[0], *p)
    gy = uu * dy / (r * c_src) + tau0 * _tri(gu[1], *p)
    gz = uu * dz / (r * c_src) + tau0 * _tri(gu[2], *p)
    nrm = math.sqrt(gx * gx + gy * gy + gz * gz)
    if not nrm > 0.0:
        return None
    return (-gx / nrm, -gy / nrm, -gz / nrm)


def _tau_at(u, p, s, c_src, h):
    dx, dy, dz = (p[0] - s[0]) * h, (p[1] - s[1]) * h, (p[2] - s[2]) * h
    return math.sqrt(dx * dx + dy * dy + dz * dz) / c_src * _tri(u, *p)


def _trace(u, gu, c, F, G, start, s, c_src, h, step, term, kpow, max_steps, keep_path):
    nx, ny, nz = u.shape
    hs = step / h
    p = tuple(float(v) for v in start)
    path = [(p[0], p[1], p[2], 0.0)] if keep_path else None
    sF = sG = arclen = 0.0
    last_f = math.nan
    fprev = 0.0
    if F is not None:
        fprev = _tri(F, *p)
        last_f = fprev
        if kpow > 0:
            fprev *= _tau_at(u, p, s, c_src, h) ** kpow
    if G is not None:
        gp = [_tri(G[a], *p) for a in range(3)]
    nstep = 0
    while True:
        dist = h * math.sqrt(sum((p[a] - s[a]) ** 2 for a in range(3)))
        if dist <= term:
            m = tuple(0.5 * (p[a] + s[a]) for a in range(3))
            dt = dist / _tri(c, *m)
            if F is not None:
                fnew = _tri(F, *s)
                if math.isnan(fnew):
                    fnew = last_f
                if kpow > 0:
                    fnew = 0.0
                sF += 0.5 * (fprev + fnew) * dt
            if G is not None:
                gn = [_tri(G[a], *s) for a in range(3)]
                sG -= 0.5 * sum((gp[a] + gn[a]) * (s[a] - p[a]) for a in range(3)) * h
            arclen += dt
            if keep_path:
                path.append((s[0], s[1], s[2], arclen))
            status = 0
            break
        if nstep >= max_steps:
            status = 1
            break
        d1 = _descent(u, gu, p, s, c_src, h)
        if d1 is None:
            status = 3
            break
        m = tuple(p[a] + 0.5 * hs * d1[a] for a in range(3))
        d2 = _descent(u, gu, m, s, c_src, h)
        if d2 is None:
            status = 3
            break
        q = tuple(p[a] + hs * d2[a] for a in range(3))
        if min(q) < 0 or q[0] > nx - 1 or q[1] > ny - 1 or q[2] > nz - 1:
            status = 2
            break
        mid = tuple(0.5 * (p[a] + q[a]) for a in range(3))
        dt = step / _tri(c, *mid)
        if F is not None:
            fnew = _tri(F, *q)
            if math.isnan(fnew):
                fnew = last_f
            else:
                last_f = fnew
            if kpow > 0:
                fnew *= _tau_at(u, q, s, c_src, h) ** kpow
            sF += 0.5 * (fprev + fnew) * dt
            fprev = fnew
        if G is not None:
            gn = [_tri(G[a], *q) for a in range(3)]
            sG -= 0.5 * sum((gp[a] + gn[a]) * (q[a] - p[a]) for a in range(3)) * h
            gp = gn
        arclen += dt
        p = q
        nstep += 1
        if keep_path:
            path.append((p[0], p[1], p[2], arclen))
    return status, sF, sG, arclen, path


def trace_integrate(u, gu, c, F, G, starts, source, c_src, h, step, term, kpow, max_steps):
    starts = np.asarray(starts, dtype=float)
    n = starts.shape[0]
    msteps = np.broadcast_to(np.asarray(max_steps, dtype=np.int64), (n,))
    out_F, out_G, out_L = np.empty(n), np.empty(n), np.empty(n)
    status = np.empty(n, dtype=np.int64)
    s = tuple(float(v) for v in source)
    for q in range(n):
        st, sF, sG, L, _ = _trace(u, gu, c, F, G, starts[q], s, c_src, h, step, term,
                                  kpow, int(msteps[q]), False)
        status[q], out_F[q], out_G[q], out_L[q] = st, sF, sG, L
    return out_F, out_G, out_L, status


def trace_path(u, gu, c, start, source, c_src, h, step, term, max_steps):
    s = tuple(float(v) for v in source)
    st, _, _, _, path = _trace(u, gu, c, None, None, start, s, c_src, h, step, term,
                               0, int(max_steps), True)
    return np.array(path, dtype=float).reshape(-1, 4), st
