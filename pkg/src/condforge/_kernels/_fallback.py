"""Pure NumPy/Python implementations of the hot kernels.

Selected at import time when the compiled extension is unavailable (or when
``CONDFORGE_PURE_PYTHON`` is set).  Every function here is semantically
interchangeable with its twin in ``_native.pyx``: identical traversal orders,
identical per-element arithmetic.  The only tolerated divergence is the
last-ulp rounding of reductions (NumPy sums pairwise, the native kernel sums
sequentially), which never changes support sets or painted pixels.
"""

import math
from collections import deque

import numpy as np

NAME = "fallback"

# Fixed 8-neighbourhood scan order; the native kernel uses the same order, so
# region growth is reproducible across backends.
_NEIGHBOURS = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)]


def _fold_half_pi(diff):
    """Fold an absolute angle difference of orientations into [0, pi/2]."""
    if diff > math.pi / 2.0:
        diff = math.pi - diff
    return diff


def grow_regions(mag, ang, order, mag_min, ang_tol, labels):
    """Grow orientation-coherent regions over a gradient field.

    Seeds are visited in ``order`` (flat indices, strongest gradient first).
    A BFS claims 8-connected unlabelled cells whose orientation agrees with
    the running region orientation within ``ang_tol``.  ``labels`` must be a
    preallocated int32 array filled with -1; it is written in place.

    Returns the number of regions grown.
    """
    rows, cols = mag.shape
    magf = mag.ravel()
    angf = ang.ravel()
    labf = labels.ravel()
    next_label = 0
    for seed in order:
        seed = int(seed)
        if labf[seed] != -1:
            continue
        # Running orientation uses doubled-angle sums so that orientations
        # (mod pi) average correctly.
        theta = float(angf[seed])
        cs = math.cos(2.0 * theta)
        sn = math.sin(2.0 * theta)
        region_theta = theta
        labf[seed] = next_label
        queue = deque((seed,))
        while queue:
            p = queue.popleft()
            py, px = divmod(p, cols)
            for dx, dy in _NEIGHBOURS:
                qx = px + dx
                qy = py + dy
                if qx < 0 or qx >= cols or qy < 0 or qy >= rows:
                    continue
                q = qy * cols + qx
                if labf[q] != -1 or magf[q] < mag_min:
                    continue
                tq = float(angf[q])
                if _fold_half_pi(abs(tq - region_theta)) > ang_tol:
                    continue
                labf[q] = next_label
                queue.append(q)
                cs += math.cos(2.0 * tq)
                sn += math.sin(2.0 * tq)
                region_theta = 0.5 * math.atan2(sn, cs)
                if region_theta < 0.0:
                    region_theta += math.pi
        next_label += 1
    return next_label


def residuals_to_point(vp, mids, dirs):
    """Angular residual of each segment against one homogeneous point.

    The residual is the angle between the segment direction and the direction
    from the segment midpoint toward ``vp`` (the point's own direction when it
    lies at infinity), folded into [0, pi/2].
    """
    vx, vy, vw = float(vp[0]), float(vp[1]), float(vp[2])
    if vw == 0.0:
        dx = np.full(len(mids), vx)
        dy = np.full(len(mids), vy)
    else:
        dx = vx / vw - mids[:, 0]
        dy = vy / vw - mids[:, 1]
    cr = dx * dirs[:, 1] - dy * dirs[:, 0]
    dt = dx * dirs[:, 0] + dy * dirs[:, 1]
    # atan2(+0, +0) is +0, which covers the point-on-midpoint case.
    return np.arctan2(np.abs(cr), np.abs(dt))


def pair_support(lines, mids, dirs, lens, tau):
    """Intersect every unordered line pair and score segment support.

    ``lines`` are unit homogeneous line coefficients of the pairing pool;
    support is evaluated against all ``mids``/``dirs``/``lens`` segments.
    Returns (vps, counts, lengths, pair_a, pair_b) for non-degenerate pairs,
    in pair-enumeration order (a < b, lexicographic).
    """
    k = len(lines)
    npts = k * (k - 1) // 2
    ia = np.empty(npts, dtype=np.int32)
    ib = np.empty(npts, dtype=np.int32)
    pos = 0
    for a in range(k - 1):
        run = k - 1 - a
        ia[pos : pos + run] = a
        ib[pos : pos + run] = np.arange(a + 1, k, dtype=np.int32)
        pos += run
    la = lines[ia]
    lb = lines[ib]
    vx = la[:, 1] * lb[:, 2] - la[:, 2] * lb[:, 1]
    vy = la[:, 2] * lb[:, 0] - la[:, 0] * lb[:, 2]
    vw = la[:, 0] * lb[:, 1] - la[:, 1] * lb[:, 0]
    norm = np.sqrt(vx * vx + vy * vy + vw * vw)
    keep = norm >= 1e-12
    vx, vy, vw, norm = vx[keep], vy[keep], vw[keep], norm[keep]
    ia, ib = ia[keep], ib[keep]
    vx = vx / norm
    vy = vy / norm
    vw = vw / norm
    # Canonical sign: first non-zero component positive.
    sign = np.where(vx != 0.0, np.sign(vx), np.where(vy != 0.0, np.sign(vy), np.sign(vw)))
    vx, vy, vw = vx * sign, vy * sign, vw * sign

    vps = np.column_stack([vx, vy, vw])
    counts = np.empty(len(vps), dtype=np.int64)
    lengths = np.empty(len(vps), dtype=np.float64)
    mx = mids[:, 0]
    my = mids[:, 1]
    ux = dirs[:, 0]
    uy = dirs[:, 1]
    chunk = 256
    for lo in range(0, len(vps), chunk):
        hi = min(lo + chunk, len(vps))
        cvx = vx[lo:hi, None]
        cvy = vy[lo:hi, None]
        cvw = vw[lo:hi, None]
        finite = cvw != 0.0
        safe_w = np.where(finite, cvw, 1.0)
        dx = np.where(finite, cvx / safe_w - mx[None, :], cvx)
        dy = np.where(finite, cvy / safe_w - my[None, :], cvy)
        cr = dx * uy[None, :] - dy * ux[None, :]
        dt = dx * ux[None, :] + dy * uy[None, :]
        res = np.arctan2(np.abs(cr), np.abs(dt))
        ok = res <= tau
        counts[lo:hi] = ok.sum(axis=1)
        lengths[lo:hi] = (ok * lens[None, :]).sum(axis=1)
    return vps, counts, lengths, ia, ib


def _paint_mask(img, x_lo, x_hi, y_lo, y_hi, mask, value):
    region = img[y_lo:y_hi, x_lo:x_hi]
    region[mask] = value


def paint_capsule(img, x0, y0, x1, y1, radius, value):
    """Paint pixels whose centre lies within ``radius`` of segment (x0,y0)-(x1,y1).

    Coordinates are continuous pixel space (pixel (px,py) has centre
    (px+0.5, py+0.5)); the boundary is inclusive.
    """
    h, w = img.shape
    x_lo = max(0, int(math.floor(min(x0, x1) - radius - 1.0)))
    x_hi = min(w, int(math.ceil(max(x0, x1) + radius + 1.0)))
    y_lo = max(0, int(math.floor(min(y0, y1) - radius - 1.0)))
    y_hi = min(h, int(math.ceil(max(y0, y1) + radius + 1.0)))
    if x_lo >= x_hi or y_lo >= y_hi:
        return
    px = np.arange(x_lo, x_hi, dtype=np.float64) + 0.5
    py = np.arange(y_lo, y_hi, dtype=np.float64) + 0.5
    rx = px[None, :] - x0
    ry = py[:, None] - y0
    dx = x1 - x0
    dy = y1 - y0
    dd = dx * dx + dy * dy
    if dd == 0.0:
        d2 = rx * rx + ry * ry
    else:
        t = (rx * dx + ry * dy) / dd
        t = np.clip(t, 0.0, 1.0)
        ex = rx - t * dx
        ey = ry - t * dy
        d2 = ex * ex + ey * ey
    _paint_mask(img, x_lo, x_hi, y_lo, y_hi, d2 <= radius * radius, value)


def paint_box_ring(img, bx0, by0, bx1, by1, radius, value):
    """Paint a rectangular outline band of half-width ``radius``.

    A pixel is painted when its centre lies inside the rectangle grown by
    ``radius`` but not strictly inside the rectangle shrunk by ``radius``.
    """
    h, w = img.shape
    x_lo = max(0, int(math.floor(bx0 - radius - 1.0)))
    x_hi = min(w, int(math.ceil(bx1 + radius + 1.0)))
    y_lo = max(0, int(math.floor(by0 - radius - 1.0)))
    y_hi = min(h, int(math.ceil(by1 + radius + 1.0)))
    if x_lo >= x_hi or y_lo >= y_hi:
        return
    px = np.arange(x_lo, x_hi, dtype=np.float64) + 0.5
    py = np.arange(y_lo, y_hi, dtype=np.float64) + 0.5
    in_x = (px >= bx0 - radius) & (px <= bx1 + radius)
    in_y = (py >= by0 - radius) & (py <= by1 + radius)
    core_x = (px > bx0 + radius) & (px < bx1 - radius)
    core_y = (py > by0 + radius) & (py < by1 - radius)
    outer = in_y[:, None] & in_x[None, :]
    inner = core_y[:, None] & core_x[None, :]
    _paint_mask(img, x_lo, x_hi, y_lo, y_hi, outer & ~inner, value)
