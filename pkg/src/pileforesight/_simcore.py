"""Compiled kernels for the pushing simulator.

Pieces are stored as a padded ``(P, Vmax, 2)`` vertex array plus a ``(P,)``
vertex count. Every kernel mutates ``verts`` in place.
"""
import math

import numpy as np
from numba import njit

_SLOP = 1e-9


@njit(cache=True)
def _bbox(verts, nv, k):
    x0 = verts[k, 0, 0]
    x1 = x0
    y0 = verts[k, 0, 1]
    y1 = y0
    for m in range(1, nv[k]):
        x = verts[k, m, 0]
        y = verts[k, m, 1]
        if x < x0:
            x0 = x
        if x > x1:
            x1 = x
        if y < y0:
            y0 = y
        if y > y1:
            y1 = y
    return x0, y0, x1, y1


@njit(cache=True)
def _proj(verts, nv, k, ax, ay):
    lo = verts[k, 0, 0] * ax + verts[k, 0, 1] * ay
    hi = lo
    for m in range(1, nv[k]):
        t = verts[k, m, 0] * ax + verts[k, m, 1] * ay
        if t < lo:
            lo = t
        if t > hi:
            hi = t
    return lo, hi


@njit(cache=True)
def _translate(verts, nv, k, dx, dy):
    for m in range(nv[k]):
        verts[k, m, 0] += dx
        verts[k, m, 1] += dy


@njit(cache=True)
def _centroid_ref(verts, nv, k):
    cx = 0.0
    cy = 0.0
    for m in range(nv[k]):
        cx += verts[k, m, 0]
        cy += verts[k, m, 1]
    return cx / nv[k], cy / nv[k]


@njit(cache=True)
def sat_mtv(verts, nv, i, j):
    """Minimum translation separating convex pieces i and j.

    Returns ``(depth, nx, ny)``; moving j by ``depth * n`` (or i by the
    opposite) separates them. ``depth <= 0`` means no overlap.
    """
    best = np.inf
    bx = 0.0
    by = 0.0
    for which in range(2):
        k = i if which == 0 else j
        cnt = nv[k]
        for m in range(cnt):
            ex = verts[k, (m + 1) % cnt, 0] - verts[k, m, 0]
            ey = verts[k, (m + 1) % cnt, 1] - verts[k, m, 1]
            ln = math.sqrt(ex * ex + ey * ey)
            if ln == 0.0:
                continue
            ax = ey / ln
            ay = -ex / ln
            lo_i, hi_i = _proj(verts, nv, i, ax, ay)
            lo_j, hi_j = _proj(verts, nv, j, ax, ay)
            o1 = hi_i - lo_j
            o2 = hi_j - lo_i
            if o1 <= 0.0 or o2 <= 0.0:
                return 0.0, 0.0, 0.0
            if o1 < o2:
                if o1 < best:
                    best = o1
                    bx = ax
                    by = ay
            else:
                if o2 < best:
                    best = o2
                    bx = -ax
                    by = -ay
    return best, bx, by


@njit(cache=True)
def pusher_project(verts, nv, px, py, c, s, pos, half_w):
    """Push pieces out of the region swept so far (pusher edge at ``pos``)."""
    moved = False
    for k in range(verts.shape[0]):
        ulo = np.inf
        uhi = -np.inf
        vlo = np.inf
        vhi = -np.inf
        for m in range(nv[k]):
            rx = verts[k, m, 0] - px
            ry = verts[k, m, 1] - py
            u = rx * c + ry * s
            v = -rx * s + ry * c
            ulo = min(ulo, u)
            uhi = max(uhi, u)
            vlo = min(vlo, v)
            vhi = max(vhi, v)
        if vhi <= -half_w or vlo >= half_w or ulo >= pos or uhi <= 0.0:
            continue
        vmid = 0.5 * (vlo + vhi)
        # pieces centred beside the pusher slide off its corner; the rest are carried
        if vmid < -half_w:
            left = vhi + half_w
            _translate(verts, nv, k, s * (left + _SLOP), -c * (left + _SLOP))
        elif vmid > half_w:
            right = half_w - vlo
            _translate(verts, nv, k, -s * (right + _SLOP), c * (right + _SLOP))
        else:
            fwd = pos - ulo
            _translate(verts, nv, k, c * (fwd + _SLOP), s * (fwd + _SLOP))
        moved = True
    return moved


@njit(cache=True)
def pusher_land(verts, nv, px, py, c, s, half_w):
    """Clear pieces cut by the pusher edge at the start line by the shorter way out."""
    for k in range(verts.shape[0]):
        ulo = np.inf
        uhi = -np.inf
        vlo = np.inf
        vhi = -np.inf
        for m in range(nv[k]):
            rx = verts[k, m, 0] - px
            ry = verts[k, m, 1] - py
            u = rx * c + ry * s
            v = -rx * s + ry * c
            ulo = min(ulo, u)
            uhi = max(uhi, u)
            vlo = min(vlo, v)
            vhi = max(vhi, v)
        if vhi <= -half_w or vlo >= half_w or ulo >= 0.0 or uhi <= 0.0:
            continue
        if uhi < -ulo:
            _translate(verts, nv, k, -c * (uhi + _SLOP), -s * (uhi + _SLOP))
        else:
            _translate(verts, nv, k, -c * (ulo - _SLOP), -s * (ulo - _SLOP))


@njit(cache=True)
def clamp_to_box(verts, nv, x0, y0, x1, y1):
    for k in range(verts.shape[0]):
        bx0, by0, bx1, by1 = _bbox(verts, nv, k)
        dx = 0.0
        dy = 0.0
        if bx0 < x0:
            dx = x0 - bx0
        elif bx1 > x1:
            dx = x1 - bx1
        if by0 < y0:
            dy = y0 - by0
        elif by1 > y1:
            dy = y1 - by1
        if dx != 0.0 or dy != 0.0:
            _translate(verts, nv, k, dx, dy)


@njit(cache=True)
def clamp_centroids(verts, nv, x0, y0, x1, y1):
    for k in range(verts.shape[0]):
        cx, cy = _centroid_ref(verts, nv, k)
        dx = 0.0
        dy = 0.0
        if cx < x0:
            dx = x0 - cx
        elif cx > x1:
            dx = x1 - cx
        if cy < y0:
            dy = y0 - cy
        elif cy > y1:
            dy = y1 - cy
        if dx != 0.0 or dy != 0.0:
            _translate(verts, nv, k, dx, dy)


@njit(cache=True)
def separate_pairs(verts, nv):
    """One round of pairwise separation, splitting each correction equally.

    Returns the deepest penetration found at the start of each pair test.
    """
    p = verts.shape[0]
    boxes = np.empty((p, 4))
    for k in range(p):
        b = _bbox(verts, nv, k)
        boxes[k, 0] = b[0]
        boxes[k, 1] = b[1]
        boxes[k, 2] = b[2]
        boxes[k, 3] = b[3]
    worst = 0.0
    for i in range(p):
        for j in range(i + 1, p):
            if (boxes[i, 2] <= boxes[j, 0] or boxes[j, 2] <= boxes[i, 0]
                    or boxes[i, 3] <= boxes[j, 1] or boxes[j, 3] <= boxes[i, 1]):
                continue
            depth, nx, ny = sat_mtv(verts, nv, i, j)
            if depth <= 0.0:
                continue
            worst = max(worst, depth)
            half = 0.5 * (depth + _SLOP)
            _translate(verts, nv, i, -nx * half, -ny * half)
            _translate(verts, nv, j, nx * half, ny * half)
            for k in (i, j):
                b = _bbox(verts, nv, k)
                boxes[k, 0] = b[0]
                boxes[k, 1] = b[1]
                boxes[k, 2] = b[2]
                boxes[k, 3] = b[3]
    return worst


@njit(cache=True)
def settle(verts, nv, rounds, use_pusher, px, py, c, s, pos, half_w, x0, y0, x1, y1):
    """Iterative pairwise separation with the pusher and box walls held fixed."""
    for _ in range(rounds):
        worst = separate_pairs(verts, nv)
        if use_pusher:
            pusher_project(verts, nv, px, py, c, s, pos, half_w)
        clamp_to_box(verts, nv, x0, y0, x1, y1)
        if worst <= 0.0:
            break


@njit(cache=True)
def push(verts, nv, px, py, theta, length, half_w, nsub, rounds):
    c = math.cos(theta)
    s = math.sin(theta)
    pusher_land(verts, nv, px, py, c, s, half_w)
    for step in range(1, nsub + 1):
        pos = length * step / nsub
        pusher_project(verts, nv, px, py, c, s, pos, half_w)
        settle(verts, nv, rounds, True, px, py, c, s, pos, half_w, 0.0, 0.0, 1.0, 1.0)
        clamp_to_box(verts, nv, 0.0, 0.0, 1.0, 1.0)


@njit(cache=True)
def touches_swept(verts, nv, px, py, theta, length, half_w):
    """True if any piece overlaps the full swept rectangle of a push."""
    c = math.cos(theta)
    s = math.sin(theta)
    for k in range(verts.shape[0]):
        ulo = np.inf
        uhi = -np.inf
        vlo = np.inf
        vhi = -np.inf
        for m in range(nv[k]):
            rx = verts[k, m, 0] - px
            ry = verts[k, m, 1] - py
            u = rx * c + ry * s
            v = -rx * s + ry * c
            ulo = min(ulo, u)
            uhi = max(uhi, u)
            vlo = min(vlo, v)
            vhi = max(vhi, v)
        if vhi > -half_w and vlo < half_w and ulo < length and uhi > 0.0:
            return True
    return False


@njit(cache=True)
def _inside(verts, nv, k, x, y):
    cnt = nv[k]
    for m in range(cnt):
        ax = verts[k, m, 0]
        ay = verts[k, m, 1]
        bx = verts[k, (m + 1) % cnt, 0]
        by = verts[k, (m + 1) % cnt, 1]
        if (bx - ax) * (y - ay) - (by - ay) * (x - ax) < 0.0:
            return False
    return True


@njit(cache=True)
def rasterize(verts, nv, n, ss):
    """Union coverage fraction of every pixel over an ``ss x ss`` subsample grid."""
    m = n * ss
    hit = np.zeros((m, m), dtype=np.uint8)
    for k in range(verts.shape[0]):
        x0, y0, x1, y1 = _bbox(verts, nv, k)
        c0 = max(0, int(math.floor(x0 * m - 0.5)))
        c1 = min(m - 1, int(math.ceil(x1 * m - 0.5)))
        r0 = max(0, int(math.floor(y0 * m - 0.5)))
        r1 = min(m - 1, int(math.ceil(y1 * m - 0.5)))
        for r in range(r0, r1 + 1):
            y = (r + 0.5) / m
            for cc in range(c0, c1 + 1):
                if hit[r, cc]:
                    continue
                if _inside(verts, nv, k, (cc + 0.5) / m, y):
                    hit[r, cc] = 1
    out = np.zeros((n, n))
    for r in range(m):
        for cc in range(m):
            if hit[r, cc]:
                out[r // ss, cc // ss] += 1.0
    return out / (ss * ss)
