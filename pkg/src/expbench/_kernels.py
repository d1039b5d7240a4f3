"""Numba-compiled inner loops for the simulator hot path.

Everything here is a pure function of its arguments; callers own all
validation. Grids are row-major with cell (row, col) covering the world
rectangle [col*cell, (col+1)*cell) x [row*cell, (row+1)*cell) in meters.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# Sampling pitch for ray marching and swept collision tests: a quarter cell,
# so a 5 cm cell is never stepped over.
SAMPLE_STEP = 0.0125


@njit(cache=True)
def raycast(occ, x, y, theta, offsets, depth_max):
    """March rays through `occ` and return the distance each travels.

    A ray stops at the first occupied cell; the reported distance is the
    marching distance at which that cell was first sampled, clamped to
    depth_max. Rays leaving the grid read depth_max.
    """
    h, w = occ.shape
    n = offsets.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        ang = theta + offsets[i]
        dx = np.cos(ang) * SAMPLE_STEP
        dy = np.sin(ang) * SAMPLE_STEP
        px = x
        py = y
        dist = 0.0
        reading = depth_max
        while dist < depth_max:
            px += dx
            py += dy
            dist += SAMPLE_STEP
            r = int(np.floor(py / 0.05))
            c = int(np.floor(px / 0.05))
            if r < 0 or r >= h or c < 0 or c >= w:
                break
            if occ[r, c] != 0:
                reading = dist
                break
        if reading > depth_max:
            reading = depth_max
        out[i] = reading
    return out


@njit(cache=True)
def paint_local(readings, offsets, depth_max, size):
    """Rasterize a scan into a local occupancy/explored pair.

    The agent sits at cell (size-1, size//2) facing up (decreasing row).
    Cells crossed by a ray before its endpoint become explored free space;
    the endpoint cell becomes explored occupied when the reading is shorter
    than depth_max.
    """
    occ = np.zeros((size, size), dtype=np.uint8)
    expl = np.zeros((size, size), dtype=np.uint8)
    ar = size - 1
    ac = size // 2
    expl[ar, ac] = 1
    n = readings.shape[0]
    for i in range(n):
        reading = readings[i]
        # Local frame: +col is right, -row is forward; positive offsets
        # turn left.
        fx = -np.sin(offsets[i])
        fy = np.cos(offsets[i])
        dist = 0.0
        while dist + SAMPLE_STEP < reading:
            dist += SAMPLE_STEP
            c = ac + int(np.floor(fx * dist / 0.05 + 0.5))
            r = ar - int(np.floor(fy * dist / 0.05 + 0.5))
            if r < 0 or r >= size or c < 0 or c >= size:
                break
            if occ[r, c] == 0:
                expl[r, c] = 1
        if reading < depth_max:
            c = ac + int(np.floor(fx * reading / 0.05 + 0.5))
            r = ar - int(np.floor(fy * reading / 0.05 + 0.5))
            if 0 <= r < size and 0 <= c < size:
                expl[r, c] = 1
                occ[r, c] = 1
    return occ, expl


@njit(cache=True)
def register_scan(sums, counts, loc_occ, loc_expl, px, py, ptheta):
    """Fold an explored local map into the global running-mean map.

    Local cells are rototranslated by the pose (meters, radians), resampled
    to the nearest global cell, deduplicated keeping the first local cell in
    row-major order, and merged as new = (count*old + obs) / (count + 1).
    Returns the flat indices of the global cells that were updated.
    """
    gh, gw = counts.shape
    size = loc_occ.shape[0]
    ar = size - 1
    ac = size // 2
    cos_f = np.cos(ptheta)
    sin_f = np.sin(ptheta)
    touched = np.empty(size * size, dtype=np.int64)
    seen = np.zeros(gh * gw, dtype=np.uint8)
    k = 0
    for r in range(size):
        for c in range(size):
            if loc_expl[r, c] == 0:
                continue
            # local offsets in meters: right (+col) and forward (-row)
            x_l = (c - ac) * 0.05
            y_l = (ar - r) * 0.05
            wx = px + y_l * cos_f + x_l * sin_f
            wy = py + y_l * sin_f - x_l * cos_f
            gc = int(np.floor(wx / 0.05))
            gr = int(np.floor(wy / 0.05))
            if gr < 0 or gr >= gh or gc < 0 or gc >= gw:
                continue
            flat = gr * gw + gc
            if seen[flat] != 0:
                continue
            seen[flat] = 1
            cnt = counts[gr, gc]
            sums[gr, gc] += loc_occ[r, c]
            counts[gr, gc] = cnt + 1
            touched[k] = flat
            k += 1
    return touched[:k].copy()


@njit(cache=True)
def astar_grid(cost_class, start, goal):
    """A* over a grid of cost classes: 0 free (1.0), 1 unknown (1.5), 2 blocked.

    4-connected moves pay the cost of the cell being entered. The heuristic
    is Manhattan distance times the cheapest cost, so returned paths are
    optimal. Ties break on lower heuristic, then lower flat index, giving a
    deterministic (row, col)-lexicographic order. Returns (parents, cost);
    cost is negative when the goal is unreachable.
    """
    h, w = cost_class.shape
    n = h * w
    g = np.full(n, np.inf, dtype=np.float64)
    parent = np.full(n, -1, dtype=np.int64)
    closed = np.zeros(n, dtype=np.uint8)
    cap = 4 * n + 4
    keys = np.empty(cap, dtype=np.uint64)
    idxs = np.empty(cap, dtype=np.int64)
    size = 0
    gr = goal // w
    gc = goal % w

    g[start] = 0.0
    h0 = abs(start // w - gr) + abs(start % w - gc)
    keys[0] = (np.uint64(2 * h0) << np.uint64(40)) | (np.uint64(h0) << np.uint64(24)) | np.uint64(start)
    idxs[0] = start
    size = 1

    while size > 0:
        cur = idxs[0]
        size -= 1
        keys[0] = keys[size]
        idxs[0] = idxs[size]
        i = 0
        while True:
            l = 2 * i + 1
            r = l + 1
            m = i
            if l < size and keys[l] < keys[m]:
                m = l
            if r < size and keys[r] < keys[m]:
                m = r
            if m == i:
                break
            keys[i], keys[m] = keys[m], keys[i]
            idxs[i], idxs[m] = idxs[m], idxs[i]
            i = m
        if closed[cur] != 0:
            continue
        closed[cur] = 1
        if cur == goal:
            return parent, g[goal]
        cr = cur // w
        cc = cur % w
        for d in range(4):
            if d == 0:
                nr, nc = cr - 1, cc
            elif d == 1:
                nr, nc = cr, cc - 1
            elif d == 2:
                nr, nc = cr, cc + 1
            else:
                nr, nc = cr + 1, cc
            if nr < 0 or nr >= h or nc < 0 or nc >= w:
                continue
            klass = cost_class[nr, nc]
            if klass == 2:
                continue
            ni = nr * w + nc
            if closed[ni] != 0:
                continue
            step_cost = 1.0 if klass == 0 else 1.5
            ng = g[cur] + step_cost
            if ng < g[ni]:
                g[ni] = ng
                parent[ni] = cur
                hh = abs(nr - gr) + abs(nc - gc)
                f2 = np.uint64(int(2.0 * (ng + hh) + 0.5))
                key = (f2 << np.uint64(40)) | (np.uint64(hh) << np.uint64(24)) | np.uint64(ni)
                j = size
                keys[j] = key
                idxs[j] = ni
                size += 1
                while j > 0:
                    p = (j - 1) // 2
                    if keys[p] <= keys[j]:
                        break
                    keys[p], keys[j] = keys[j], keys[p]
                    idxs[p], idxs[j] = idxs[j], idxs[p]
                    j = p
    return parent, -1.0


@njit(cache=True)
def bfs_grid(passable, start_r, start_c):
    """4-connected BFS hop distances over a passable mask; -1 = unreachable."""
    h, w = passable.shape
    dist = np.full((h, w), -1, dtype=np.int32)
    if start_r < 0 or start_r >= h or start_c < 0 or start_c >= w:
        return dist
    if not passable[start_r, start_c]:
        return dist
    queue = np.empty(h * w, dtype=np.int64)
    head = 0
    tail = 0
    dist[start_r, start_c] = 0
    queue[tail] = start_r * w + start_c
    tail += 1
    while head < tail:
        cur = queue[head]
        head += 1
        cr = cur // w
        cc = cur % w
        d = dist[cr, cc]
        for k in range(4):
            if k == 0:
                nr, nc = cr - 1, cc
            elif k == 1:
                nr, nc = cr, cc - 1
            elif k == 2:
                nr, nc = cr, cc + 1
            else:
                nr, nc = cr + 1, cc
            if nr < 0 or nr >= h or nc < 0 or nc >= w:
                continue
            if not passable[nr, nc] or dist[nr, nc] >= 0:
                continue
            dist[nr, nc] = d + 1
            queue[tail] = nr * w + nc
            tail += 1
    return dist


@njit(cache=True)
def segment_hits(occ, x0, y0, x1, y1):
    """True when the straight segment crosses an occupied or out-of-grid cell.

    Sampled at quarter-cell pitch including the endpoint; the start point is
    not tested (the agent already stands there).
    """
    h, w = occ.shape
    dx = x1 - x0
    dy = y1 - y0
    length = np.hypot(dx, dy)
    if length == 0.0:
        return False
    steps = int(length / SAMPLE_STEP) + 1
    for i in range(1, steps + 1):
        t = min(i * SAMPLE_STEP / length, 1.0)
        px = x0 + dx * t
        py = y0 + dy * t
        r = int(np.floor(py / 0.05))
        c = int(np.floor(px / 0.05))
        if r < 0 or r >= h or c < 0 or c >= w:
            return True
        if occ[r, c] != 0:
            return True
    return False
