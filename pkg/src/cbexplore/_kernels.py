"""Numba kernels: grid traversal, scan integration and lattice search.

All kernels work in grid units (1.0 == one cell side). Cell (ix, iy) covers
[ix, ix+1) x [iy, iy+1); arrays are indexed [iy, ix]. Distances returned are
measured along the ray from its origin, also in grid units.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_EPS = 1e-12


@njit(cache=True, inline="always")
def _h_bits(lo):
    # Bernoulli entropy in bits; lo is assumed clamped away from +-inf.
    p = 1.0 / (1.0 + math.exp(-lo))
    return -(p * math.log2(p) + (1.0 - p) * math.log2(1.0 - p))


@njit(cache=True, inline="always")
def _update_cell(lo, iy, ix, delta, lo_lim):
    # Additive log-odds update, clamped; returns the entropy drop in bits.
    old = lo[iy, ix]
    new = old + delta
    if new > lo_lim:
        new = lo_lim
    elif new < -lo_lim:
        new = -lo_lim
    lo[iy, ix] = new
    return _h_bits(old) - _h_bits(new)


@njit(cache=True)
def raycast_occupied(occ_test, w, h, x0, y0, angle, max_d):
    """DDA walk until a cell flagged in `occ_test` is entered.

    `occ_test` is a float array where values >= 1.0 mean "terminates the ray".
    Returns (distance, hit). Rays leaving the grid report (max_d, False).
    """
    ix = int(math.floor(x0))
    iy = int(math.floor(y0))
    if ix < 0 or ix >= w or iy < 0 or iy >= h:
        return max_d, False
    dx = math.cos(angle)
    dy = math.sin(angle)
    step_x = 1 if dx > 0.0 else -1
    step_y = 1 if dy > 0.0 else -1
    tdx = abs(1.0 / dx) if abs(dx) > _EPS else 1e18
    tdy = abs(1.0 / dy) if abs(dy) > _EPS else 1e18
    tmx = ((ix + 1 - x0) / dx) if dx > _EPS else (((ix - x0) / dx) if dx < -_EPS else 1e18)
    tmy = ((iy + 1 - y0) / dy) if dy > _EPS else (((iy - y0) / dy) if dy < -_EPS else 1e18)
    t = 0.0
    while t <= max_d:
        if occ_test[iy, ix] >= 1.0:
            return t, True
        if tmx < tmy:
            t = tmx
            tmx += tdx
            ix += step_x
        else:
            t = tmy
            tmy += tdy
            iy += step_y
        if ix < 0 or ix >= w or iy < 0 or iy >= h:
            return max_d, False
    return max_d, False


@njit(cache=True)
def raycast_visited(w, h, x0, y0, angle, max_d, out_ix, out_iy):
    """Record the cells a ray visits (for traversal audits). Returns count."""
    n = 0
    ix = int(math.floor(x0))
    iy = int(math.floor(y0))
    if ix < 0 or ix >= w or iy < 0 or iy >= h:
        return 0
    dx = math.cos(angle)
    dy = math.sin(angle)
    step_x = 1 if dx > 0.0 else -1
    step_y = 1 if dy > 0.0 else -1
    tdx = abs(1.0 / dx) if abs(dx) > _EPS else 1e18
    tdy = abs(1.0 / dy) if abs(dy) > _EPS else 1e18
    tmx = ((ix + 1 - x0) / dx) if dx > _EPS else (((ix - x0) / dx) if dx < -_EPS else 1e18)
    tmy = ((iy + 1 - y0) / dy) if dy > _EPS else (((iy - y0) / dy) if dy < -_EPS else 1e18)
    t = 0.0
    while t <= max_d and n < out_ix.shape[0]:
        out_ix[n] = ix
        out_iy[n] = iy
        n += 1
        if tmx < tmy:
            t = tmx
            tmx += tdx
            ix += step_x
        else:
            t = tmy
            tmy += tdy
            iy += step_y
        if ix < 0 or ix >= w or iy < 0 or iy >= h:
            return n
    return n


@njit(cache=True)
def scan_ranges(occ_test, x0, y0, angles, max_d):
    """Raycast a fan of beams; returns distances in grid units."""
    h, w = occ_test.shape
    out = np.empty(angles.shape[0])
    for b in range(angles.shape[0]):
        d, _ = raycast_occupied(occ_test, w, h, x0, y0, angles[b], max_d)
        out[b] = d
    return out


@njit(cache=True)
def integrate_scan_kernel(lo, x0, y0, angles, ranges, max_d, lo_hit, lo_miss, lo_lim):
    """Integrate one scan into a log-odds grid.

    Cells fully crossed by a beam get `lo_miss`; the cell containing the
    beam endpoint gets `lo_hit` unless the beam reached max range (no
    endpoint update then). Returns the total entropy drop in bits.
    """
    h, w = lo.shape
    drop = 0.0
    for b in range(angles.shape[0]):
        r = ranges[b]
        if r > max_d:
            r = max_d
        ix = int(math.floor(x0))
        iy = int(math.floor(y0))
        if ix < 0 or ix >= w or iy < 0 or iy >= h:
            continue
        a = angles[b]
        dx = math.cos(a)
        dy = math.sin(a)
        step_x = 1 if dx > 0.0 else -1
        step_y = 1 if dy > 0.0 else -1
        tdx = abs(1.0 / dx) if abs(dx) > _EPS else 1e18
        tdy = abs(1.0 / dy) if abs(dy) > _EPS else 1e18
        tmx = ((ix + 1 - x0) / dx) if dx > _EPS else (((ix - x0) / dx) if dx < -_EPS else 1e18)
        tmy = ((iy + 1 - y0) / dy) if dy > _EPS else (((iy - y0) / dy) if dy < -_EPS else 1e18)
        while True:
            t_exit = tmx if tmx < tmy else tmy
            if t_exit > r:
                # endpoint lies inside the current cell
                if r < max_d - 1e-9:
                    drop += _update_cell(lo, iy, ix, lo_hit, lo_lim)
                break
            drop += _update_cell(lo, iy, ix, lo_miss, lo_lim)
            if tmx < tmy:
                tmx += tdx
                ix += step_x
            else:
                tmy += tdy
                iy += step_y
            if ix < 0 or ix >= w or iy < 0 or iy >= h:
                break
    return drop


@njit(cache=True)
def simulate_ig_scan(lo, x0, y0, angles, max_d, occ_lo, free_lo, unknown_blocking,
                     lo_hit, lo_miss, lo_lim):
    """Simulate one noise-free scan against the belief and integrate it.

    Beams terminate at the first cell believed occupied (log-odds >= occ_lo),
    which then receives a hit update; otherwise they run to max range with no
    endpoint update. With `unknown_blocking`, beams also stop (without any
    update) at the first unobserved cell (log-odds in [free_lo, occ_lo)).
    Per-update entropy gains are floored at zero so the accumulated
    information gain is non-decreasing. Returns the entropy drop in bits.
    """
    h, w = lo.shape
    drop = 0.0
    for b in range(angles.shape[0]):
        ix = int(math.floor(x0))
        iy = int(math.floor(y0))
        if ix < 0 or ix >= w or iy < 0 or iy >= h:
            continue
        a = angles[b]
        dx = math.cos(a)
        dy = math.sin(a)
        step_x = 1 if dx > 0.0 else -1
        step_y = 1 if dy > 0.0 else -1
        tdx = abs(1.0 / dx) if abs(dx) > _EPS else 1e18
        tdy = abs(1.0 / dy) if abs(dy) > _EPS else 1e18
        tmx = ((ix + 1 - x0) / dx) if dx > _EPS else (((ix - x0) / dx) if dx < -_EPS else 1e18)
        tmy = ((iy + 1 - y0) / dy) if dy > _EPS else (((iy - y0) / dy) if dy < -_EPS else 1e18)
        while True:
            v = lo[iy, ix]
            if v >= occ_lo:
                d = _update_cell(lo, iy, ix, lo_hit, lo_lim)
                if d > 0.0:
                    drop += d
                break
            if unknown_blocking and v >= free_lo:
                break
            t_exit = tmx if tmx < tmy else tmy
            if t_exit > max_d:
                break
            d = _update_cell(lo, iy, ix, lo_miss, lo_lim)
            if d > 0.0:
                drop += d
            if tmx < tmy:
                tmx += tdx
                ix += step_x
            else:
                tmy += tdy
                iy += step_y
            if ix < 0 or ix >= w or iy < 0 or iy >= h:
                break
    return drop


@njit(cache=True)
def entropy_bits(lo):
    h, w = lo.shape
    total = 0.0
    for iy in range(h):
        for ix in range(w):
            total += _h_bits(lo[iy, ix])
    return total


# ---------------------------------------------------------------------------
# Lattice A* over (cell, heading-bin) states with continuous poses
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _heap_push(hk, hn, size, key, node):
    i = size
    hk[i] = key
    hn[i] = node
    while i > 0:
        parent = (i - 1) >> 1
        if hk[parent] <= hk[i]:
            break
        hk[parent], hk[i] = hk[i], hk[parent]
        hn[parent], hn[i] = hn[i], hn[parent]
        i = parent
    return size + 1


@njit(cache=True, inline="always")
def _heap_pop(hk, hn, size):
    key = hk[0]
    node = hn[0]
    size -= 1
    hk[0] = hk[size]
    hn[0] = hn[size]
    i = 0
    while True:
        l = 2 * i + 1
        r = l + 1
        smallest = i
        if l < size and hk[l] < hk[smallest]:
            smallest = l
        if r < size and hk[r] < hk[smallest]:
            smallest = r
        if smallest == i:
            break
        hk[smallest], hk[i] = hk[i], hk[smallest]
        hn[smallest], hn[i] = hn[i], hn[smallest]
        i = smallest
    return key, node, size


@njit(cache=True)
def astar_lattice(safe, ox, oy, res, sx, sy, sh, gx, gy, goal_tol,
                  prim_lx, prim_ly, prim_dt, samp_lx, samp_ly,
                  step_len, heading_bins, max_expansions,
                  nodes_x, nodes_y, nodes_t, parent, prim_id):
    """A* over motion primitives with (cell, heading-bin) duplicate pruning.

    `safe` marks cells whose robot-radius disc is free of occupied and
    unobserved cells. Primitive geometry is given in the robot frame; poses
    stay continuous, only the closed set is discretized. Returns
    (found, end_node_index, node_count).
    """
    h, w = safe.shape
    n_prims = prim_lx.shape[0]
    n_samp = samp_lx.shape[1]
    two_pi = 2.0 * math.pi
    bin_w = two_pi / heading_bins

    cap = nodes_x.shape[0]
    heap_cap = cap + 8
    hk = np.empty(heap_cap)
    hn = np.empty(heap_cap, dtype=np.int64)
    g_best = np.full((h, w, heading_bins), 1e18, dtype=np.float32)

    nodes_x[0] = sx
    nodes_y[0] = sy
    nodes_t[0] = sh
    parent[0] = -1
    prim_id[0] = -1
    n_nodes = 1
    g_cost = np.empty(cap)
    g_cost[0] = 0.0

    heap_size = _heap_push(hk, hn, 0, math.hypot(gx - sx, gy - sy), 0)
    expansions = 0

    while heap_size > 0 and expansions < max_expansions:
        _, node, heap_size = _heap_pop(hk, hn, heap_size)
        x = nodes_x[node]
        y = nodes_y[node]
        th = nodes_t[node]
        if (x - gx) * (x - gx) + (y - gy) * (y - gy) <= goal_tol * goal_tol:
            return 1, node, n_nodes
        ix = int((x - ox) / res)
        iy = int((y - oy) / res)
        hb = int(((th % two_pi) + two_pi) % two_pi / bin_w) % heading_bins
        if g_cost[node] > g_best[iy, ix, hb]:
            continue
        expansions += 1
        c = math.cos(th)
        s = math.sin(th)
        for p in range(n_prims):
            ok = True
            for k in range(n_samp):
                px = x + c * samp_lx[p, k] - s * samp_ly[p, k]
                py = y + s * samp_lx[p, k] + c * samp_ly[p, k]
                jx = int((px - ox) / res)
                jy = int((py - oy) / res)
                if jx < 0 or jx >= w or jy < 0 or jy >= h or not safe[jy, jx]:
                    ok = False
                    break
            if not ok:
                continue
            ex = x + c * prim_lx[p] - s * prim_ly[p]
            ey = y + s * prim_lx[p] + c * prim_ly[p]
            et = th + prim_dt[p]
            jx = int((ex - ox) / res)
            jy = int((ey - oy) / res)
            if jx < 0 or jx >= w or jy < 0 or jy >= h:
                continue
            jb = int(((et % two_pi) + two_pi) % two_pi / bin_w) % heading_bins
            g_new = g_cost[node] + step_len
            if g_new >= g_best[jy, jx, jb]:
                continue
            if n_nodes >= cap or heap_size >= heap_cap - 1:
                return 0, -1, n_nodes
            g_best[jy, jx, jb] = g_new
            nodes_x[n_nodes] = ex
            nodes_y[n_nodes] = ey
            nodes_t[n_nodes] = et
            parent[n_nodes] = node
            prim_id[n_nodes] = p
            g_cost[n_nodes] = g_new
            heap_size = _heap_push(hk, hn, heap_size,
                                   g_new + math.hypot(gx - ex, gy - ey), n_nodes)
            n_nodes += 1
    return 0, -1, n_nodes
