"""Voxel ray traversal and per-view visibility sums.

Every kernel has a numba implementation (``*_nb``) and a pure-numpy one
(``*_numpy``). Both perform the same floating-point operations in the same
order, so their outputs agree bit for bit; ``trace_rays`` and
``score_nodes`` dispatch on :data:`vsfscan._accel.USE_NUMBA`.

Grids handed to the tracer hold per-voxel codes:

``CODE_FREE`` (0)
    the ray passes; recorded as ``KIND_PASS`` once it is past ``rmin``.
``CODE_SOLID`` (1)
    the ray stops; recorded as ``KIND_HIT`` when the voxel starts at or
    beyond ``rmin`` (closer surfaces give no return but still occlude).
``CODE_UNKNOWN`` (2)
    inside the dead zone (voxel ends before ``rmin``) the ray passes
    unrecorded; otherwise it stops there, recorded as ``KIND_TERMINAL``.

A ray also stops when it leaves the grid or once the voxel it enters starts
at or beyond ``rmax``.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit

CODE_FREE, CODE_SOLID, CODE_UNKNOWN = 0, 1, 2
KIND_PASS, KIND_HIT, KIND_TERMINAL = 0, 1, 2


def max_ray_steps(res: float, rmax: float) -> int:
    """Upper bound on voxels one ray of length ``rmax`` can touch."""
    return int(math.ceil(math.sqrt(3.0) * rmax / res)) + 4


def _trace_ray(codes, ox, oy, oz, dx, dy, dz, res, rmin, rmax, out_vox, out_kind, out_t0):
    nx, ny, nz = codes.shape
    ix = int(math.floor(ox / res))
    iy = int(math.floor(oy / res))
    iz = int(math.floor(oz / res))
    if ix < 0 or iy < 0 or iz < 0 or ix >= nx or iy >= ny or iz >= nz:
        return 0
    inf = math.inf
    if dx > 0:
        sx, tmx, tdx = 1, ((ix + 1) * res - ox) / dx, res / dx
    elif dx < 0:
        sx, tmx, tdx = -1, (ix * res - ox) / dx, -res / dx
    else:
        sx, tmx, tdx = 0, inf, inf
    if dy > 0:
        sy, tmy, tdy = 1, ((iy + 1) * res - oy) / dy, res / dy
    elif dy < 0:
        sy, tmy, tdy = -1, (iy * res - oy) / dy, -res / dy
    else:
        sy, tmy, tdy = 0, inf, inf
    if dz > 0:
        sz, tmz, tdz = 1, ((iz + 1) * res - oz) / dz, res / dz
    elif dz < 0:
        sz, tmz, tdz = -1, (iz * res - oz) / dz, -res / dz
    else:
        sz, tmz, tdz = 0, inf, inf

    cap = out_vox.shape[0]
    n = 0
    t0 = 0.0
    while t0 < rmax and n < cap:
        t1 = min(tmx, tmy, tmz)
        flat = (ix * ny + iy) * nz + iz
        c = codes[ix, iy, iz]
        if c == 1:
            if t0 >= rmin:
                out_vox[n] = flat
                out_kind[n] = 1
                out_t0[n] = t0
                n += 1
            break
        if c == 2:
            if t1 > rmin:
                out_vox[n] = flat
                out_kind[n] = 2
                out_t0[n] = t0
                n += 1
                break
        elif t1 > rmin:
            out_vox[n] = flat
            out_kind[n] = 0
            out_t0[n] = t0
            n += 1
        # ties go x, then y, then z
        if tmx <= tmy and tmx <= tmz:
            ix += sx
            t0 = tmx
            tmx += tdx
            if ix < 0 or ix >= nx:
                break
        elif tmy <= tmz:
            iy += sy
            t0 = tmy
            tmy += tdy
            if iy < 0 or iy >= ny:
                break
        else:
            iz += sz
            t0 = tmz
            tmz += tdz
            if iz < 0 or iz >= nz:
                break
    return n


trace_ray_nb = njit(_trace_ray)
trace_ray_py = _trace_ray


def _trace_rays(codes, origins, dirs, res, rmin, rmax, max_steps):
    n = dirs.shape[0]
    out_vox = np.full((n, max_steps), -1, np.int64)
    out_kind = np.zeros((n, max_steps), np.int8)
    out_t0 = np.zeros((n, max_steps), np.float64)
    cnt = np.zeros(n, np.int64)
    for r in range(n):
        cnt[r] = trace_ray_nb(
            codes, origins[r, 0], origins[r, 1], origins[r, 2],
            dirs[r, 0], dirs[r, 1], dirs[r, 2], res, rmin, rmax,
            out_vox[r], out_kind[r], out_t0[r],
        )
    return out_vox, out_kind, out_t0, cnt


trace_rays_nb = njit(_trace_rays)


def trace_rays_numpy(codes, origins, dirs, res, rmin, rmax, max_steps):
    """Lock-step traversal of all rays at once; same output layout as the numba kernel."""
    dirs = np.asarray(dirs, dtype=np.float64)
    n = dirs.shape[0]
    o = np.ascontiguousarray(np.broadcast_to(origins, (n, 3)), dtype=np.float64)
    shape = np.array(codes.shape, dtype=np.int64)
    ny, nz = codes.shape[1], codes.shape[2]
    flatcodes = codes.ravel()

    out_vox = np.full((n, max_steps), -1, np.int64)
    out_kind = np.zeros((n, max_steps), np.int8)
    out_t0 = np.zeros((n, max_steps), np.float64)
    cnt = np.zeros(n, np.int64)
    if n == 0:
        return out_vox, out_kind, out_t0, cnt

    idx = np.floor(o / res).astype(np.int64)
    step = np.sign(dirs).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        tmax = np.where(dirs > 0, ((idx + 1) * res - o) / dirs,
                        np.where(dirs < 0, (idx * res - o) / dirs, np.inf))
        tdelta = np.where(dirs > 0, res / dirs, np.where(dirs < 0, -res / dirs, np.inf))
    t0 = np.zeros(n)
    active = np.nonzero(np.all((idx >= 0) & (idx < shape), axis=1))[0]

    while active.size:
        active = active[(t0[active] < rmax) & (cnt[active] < max_steps)]
        if not active.size:
            break
        ia = idx[active]
        tm = tmax[active]
        t1 = np.minimum(np.minimum(tm[:, 0], tm[:, 1]), tm[:, 2])
        flat = (ia[:, 0] * ny + ia[:, 1]) * nz + ia[:, 2]
        c = flatcodes[flat]
        t0a = t0[active]
        rec_hit = (c == CODE_SOLID) & (t0a >= rmin)
        rec_term = (c == CODE_UNKNOWN) & (t1 > rmin)
        rec_pass = (c == CODE_FREE) & (t1 > rmin)
        rec = rec_hit | rec_term | rec_pass
        rows = active[rec]
        cols = cnt[rows]
        out_vox[rows, cols] = flat[rec]
        out_kind[rows, cols] = np.where(rec_hit[rec], KIND_HIT, np.where(rec_term[rec], KIND_TERMINAL, KIND_PASS))
        out_t0[rows, cols] = t0a[rec]
        cnt[rows] += 1

        go = ~((c == CODE_SOLID) | rec_term)
        active = active[go]
        tm = tm[go]
        ax = np.where((tm[:, 0] <= tm[:, 1]) & (tm[:, 0] <= tm[:, 2]), 0,
                      np.where(tm[:, 1] <= tm[:, 2], 1, 2))
        t0[active] = tm[np.arange(active.size), ax]
        idx[active, ax] += step[active, ax]
        tmax[active, ax] += tdelta[active, ax]
        moved = idx[active, ax]
        active = active[(moved >= 0) & (moved < shape[ax])]
    return out_vox, out_kind, out_t0, cnt


def trace_rays(codes, origins, dirs, res, rmin, rmax, max_steps=None):
    """Trace ``dirs`` from ``origins`` (one row per ray or a single point).

    Returns ``(vox, kind, t0, count)``: per-ray rows of flat voxel indices in
    traversal order (padded with -1), their record kinds, entry distances and
    the number of valid entries.
    """
    if max_steps is None:
        max_steps = max_ray_steps(res, rmax)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    origins = np.ascontiguousarray(np.broadcast_to(origins, dirs.shape), dtype=np.float64)
    if USE_NUMBA:
        return trace_rays_nb(codes, origins, dirs, float(res), float(rmin), float(rmax), int(max_steps))
    return trace_rays_numpy(codes, origins, dirs, float(res), float(rmin), float(rmax), int(max_steps))


def _score_nodes(codes, frontier, gain, origins, dirs, bin_rays, res, rmin, rmax, max_steps):
    n_nodes = origins.shape[0]
    n_rays = dirs.shape[0]
    n_bins, per_bin = bin_rays.shape
    vis = np.zeros((n_nodes, n_bins))
    tot = np.zeros((n_nodes, n_bins))
    buf_vox = np.empty((n_rays, max_steps), np.int64)
    buf_kind = np.empty((n_rays, max_steps), np.int8)
    buf_t0 = np.empty((n_rays, max_steps), np.float64)
    cnt = np.zeros(n_rays, np.int64)
    stamp = np.zeros(frontier.shape[0], np.int64)
    fstamp = np.zeros(frontier.shape[0], np.int64)
    sid = 0
    for i in range(n_nodes):
        for r in range(n_rays):
            cnt[r] = trace_ray_nb(
                codes, origins[i, 0], origins[i, 1], origins[i, 2],
                dirs[r, 0], dirs[r, 1], dirs[r, 2], res, rmin, rmax,
                buf_vox[r], buf_kind[r], buf_t0[r],
            )
        for b in range(n_bins):
            sid += 1
            v = 0.0
            g = 0.0
            for k in range(per_bin):
                r = bin_rays[b, k]
                if r < 0:
                    continue
                m = cnt[r]
                for s in range(m):
                    q = buf_vox[r, s]
                    if stamp[q] != sid:
                        stamp[q] = sid
                        g += gain[q]
                # frontier voxel the ray crosses into Unknown through
                if m >= 2 and buf_kind[r, m - 1] == 2:
                    q = buf_vox[r, m - 2]
                    if fstamp[q] != sid:
                        fstamp[q] = sid
                        v += frontier[q]
            vis[i, b] = v
            tot[i, b] = g
    return vis, tot


score_nodes_nb = njit(_score_nodes)


def score_nodes_numpy(codes, frontier, gain, origins, dirs, bin_rays, res, rmin, rmax, max_steps, chunk=8):
    n_nodes = origins.shape[0]
    n_rays = dirs.shape[0]
    n_bins = bin_rays.shape[0]
    vis = np.zeros((n_nodes, n_bins))
    tot = np.zeros((n_nodes, n_bins))
    masks = [bin_rays[b][bin_rays[b] >= 0] for b in range(n_bins)]
    for c0 in range(0, n_nodes, chunk):
        c1 = min(c0 + chunk, n_nodes)
        org = np.repeat(origins[c0:c1], n_rays, axis=0)
        d = np.tile(dirs, (c1 - c0, 1))
        vox, kind, _, cnt = trace_rays_numpy(codes, org, d, res, rmin, rmax, max_steps)
        # voxel before a terminal Unknown, per ray (-1 if the ray did not end in Unknown)
        last = np.maximum(cnt - 1, 0)
        rows_idx = np.arange(cnt.size)
        entry = np.where((cnt >= 2) & (kind[rows_idx, last] == 2), vox[rows_idx, np.maximum(cnt - 2, 0)], -1)
        for i in range(c1 - c0):
            rows_all = vox[i * n_rays:(i + 1) * n_rays]
            entry_all = entry[i * n_rays:(i + 1) * n_rays]
            for b in range(n_bins):
                ent = entry_all[masks[b]]
                ent = np.unique(ent[ent >= 0])
                if ent.size:
                    vis[c0 + i, b] = np.cumsum(frontier[ent])[-1]
                rows = rows_all[masks[b]]
                seq = rows[rows >= 0]
                if seq.size == 0:
                    continue
                _, first = np.unique(seq, return_index=True)
                q = seq[np.sort(first)]
                # cumsum is strictly sequential, matching the compiled loop
                tot[c0 + i, b] = np.cumsum(gain[q])[-1]
    return vis, tot


def score_nodes(codes, frontier, gain, origins, dirs, bin_rays, res, rmin, rmax, max_steps=None):
    """Per node and per view bin: (visible-frontier sum, visible-gain sum).

    ``frontier`` and ``gain`` are flat per-voxel values. Each voxel counts
    once per view even when several of the bin's rays touch it. A frontier
    voxel is visible when a ray passes through it into Unknown space, so
    frontier cells whose unknown side faces away from every ray (the top of
    an object at camera height, say) do not keep a view attractive.
    """
    if max_steps is None:
        max_steps = max_ray_steps(res, rmax)
    args = (
        codes,
        np.ascontiguousarray(frontier, dtype=np.float64),
        np.ascontiguousarray(gain, dtype=np.float64),
        np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3),
        np.ascontiguousarray(dirs, dtype=np.float64),
        np.ascontiguousarray(bin_rays, dtype=np.int64),
        float(res), float(rmin), float(rmax), int(max_steps),
    )
    if USE_NUMBA:
        return score_nodes_nb(*args)
    return score_nodes_numpy(*args)


def _frontier_update(state, frontier, idx, offsets, seen, out_add, out_rem):
    """Re-derive frontier flags for ``idx`` and their neighbors (state 1 = Free, 0 = Unknown)."""
    nx, ny, nz = state.shape
    n_add = 0
    n_rem = 0
    for q in range(idx.shape[0]):
        v = idx[q]
        vi = v // (ny * nz)
        vj = (v // nz) % ny
        vk = v % nz
        for o in range(-1, offsets.shape[0]):
            if o < 0:
                ci, cj, ck = vi, vj, vk
            else:
                ci = vi + offsets[o, 0]
                cj = vj + offsets[o, 1]
                ck = vk + offsets[o, 2]
                if ci < 0 or cj < 0 or ck < 0 or ci >= nx or cj >= ny or ck >= nz:
                    continue
            c = (ci * ny + cj) * nz + ck
            if seen[c]:
                continue
            seen[c] = True
            flag = False
            if state[ci, cj, ck] == 1:
                for p in range(offsets.shape[0]):
                    ai = ci + offsets[p, 0]
                    aj = cj + offsets[p, 1]
                    ak = ck + offsets[p, 2]
                    if ai < 0 or aj < 0 or ak < 0 or ai >= nx or aj >= ny or ak >= nz:
                        continue
                    if state[ai, aj, ak] == 0:
                        flag = True
                        break
            if flag != frontier[ci, cj, ck]:
                frontier[ci, cj, ck] = flag
                if flag:
                    out_add[n_add] = c
                    n_add += 1
                else:
                    out_rem[n_rem] = c
                    n_rem += 1
    # reset the scratch marks
    for q in range(idx.shape[0]):
        v = idx[q]
        vi = v // (ny * nz)
        vj = (v // nz) % ny
        vk = v % nz
        seen[v] = False
        for o in range(offsets.shape[0]):
            ci = vi + offsets[o, 0]
            cj = vj + offsets[o, 1]
            ck = vk + offsets[o, 2]
            if ci < 0 or cj < 0 or ck < 0 or ci >= nx or cj >= ny or ck >= nz:
                continue
            seen[(ci * ny + cj) * nz + ck] = False
    return n_add, n_rem


frontier_update_nb = njit(_frontier_update)
