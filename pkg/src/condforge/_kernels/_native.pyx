# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot kernels.

Semantics mirror ``_fallback`` exactly: same traversal orders, same
per-element arithmetic (both ultimately call the platform libm), so results
agree bit-for-bit apart from last-ulp rounding of summed support lengths.
"""

from libc.math cimport atan2, cos, fabs, sin, sqrt, floor, ceil
from libc.stdlib cimport free, malloc

import numpy as np

NAME = "native"

DEF PI = 3.141592653589793

cdef int NB_DX[8]
cdef int NB_DY[8]
NB_DX[0] = -1; NB_DY[0] = -1
NB_DX[1] = 0;  NB_DY[1] = -1
NB_DX[2] = 1;  NB_DY[2] = -1
NB_DX[3] = -1; NB_DY[3] = 0
NB_DX[4] = 1;  NB_DY[4] = 0
NB_DX[5] = -1; NB_DY[5] = 1
NB_DX[6] = 0;  NB_DY[6] = 1
NB_DX[7] = 1;  NB_DY[7] = 1


def grow_regions(double[:, ::1] mag, double[:, ::1] ang, long[::1] order,
                 double mag_min, double ang_tol, int[:, ::1] labels):
    """See ``_fallback.grow_regions``; identical contract."""
    cdef Py_ssize_t rows = mag.shape[0]
    cdef Py_ssize_t cols = mag.shape[1]
    cdef Py_ssize_t n = rows * cols
    cdef Py_ssize_t* queue = <Py_ssize_t*> malloc(n * sizeof(Py_ssize_t))
    if queue == NULL:
        raise MemoryError()
    cdef int next_label = 0
    cdef Py_ssize_t i, seed, head, tail, p, q, px, py, qx, qy
    cdef int k
    cdef double theta, cs, sn, region_theta, tq, diff
    with nogil:
        for i in range(order.shape[0]):
            seed = order[i]
            if labels[seed // cols, seed % cols] != -1:
                continue
            theta = ang[seed // cols, seed % cols]
            cs = cos(2.0 * theta)
            sn = sin(2.0 * theta)
            region_theta = theta
            labels[seed // cols, seed % cols] = next_label
            queue[0] = seed
            head = 0
            tail = 1
            while head < tail:
                p = queue[head]
                head += 1
                py = p // cols
                px = p % cols
                for k in range(8):
                    qx = px + NB_DX[k]
                    qy = py + NB_DY[k]
                    if qx < 0 or qx >= cols or qy < 0 or qy >= rows:
                        continue
                    if labels[qy, qx] != -1 or mag[qy, qx] < mag_min:
                        continue
                    tq = ang[qy, qx]
                    diff = fabs(tq - region_theta)
                    if diff > PI / 2.0:
                        diff = PI - diff
                    if diff > ang_tol:
                        continue
                    labels[qy, qx] = next_label
                    q = qy * cols + qx
                    queue[tail] = q
                    tail += 1
                    cs += cos(2.0 * tq)
                    sn += sin(2.0 * tq)
                    region_theta = 0.5 * atan2(sn, cs)
                    if region_theta < 0.0:
                        region_theta += PI
            next_label += 1
    free(queue)
    return next_label


def residuals_to_point(double[::1] vp, double[:, ::1] mids, double[:, ::1] dirs):
    """See ``_fallback.residuals_to_point``; identical contract."""
    cdef Py_ssize_t n = mids.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] res = out
    cdef double vx = vp[0], vy = vp[1], vw = vp[2]
    cdef double dx, dy, cr, dt
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            if vw == 0.0:
                dx = vx
                dy = vy
            else:
                dx = vx / vw - mids[i, 0]
                dy = vy / vw - mids[i, 1]
            cr = dx * dirs[i, 1] - dy * dirs[i, 0]
            dt = dx * dirs[i, 0] + dy * dirs[i, 1]
            res[i] = atan2(fabs(cr), fabs(dt))
    return out


def pair_support(double[:, ::1] lines, double[:, ::1] mids, double[:, ::1] dirs,
                 double[::1] lens, double tau):
    """See ``_fallback.pair_support``; identical contract."""
    cdef Py_ssize_t k = lines.shape[0]
    cdef Py_ssize_t n = mids.shape[0]
    cdef Py_ssize_t cap = k * (k - 1) // 2
    vps_arr = np.empty((cap, 3), dtype=np.float64)
    counts_arr = np.empty(cap, dtype=np.int64)
    lengths_arr = np.empty(cap, dtype=np.float64)
    pa_arr = np.empty(cap, dtype=np.int32)
    pb_arr = np.empty(cap, dtype=np.int32)
    cdef double[:, ::1] vps = vps_arr
    cdef long long[::1] counts = counts_arr
    cdef double[::1] lengths = lengths_arr
    cdef int[::1] pa = pa_arr
    cdef int[::1] pb = pb_arr
    cdef Py_ssize_t a, b, i, pos = 0
    cdef double vx, vy, vw, norm, sign, dx, dy, cr, dt, tot
    cdef long long cnt
    with nogil:
        for a in range(k - 1):
            for b in range(a + 1, k):
                vx = lines[a, 1] * lines[b, 2] - lines[a, 2] * lines[b, 1]
                vy = lines[a, 2] * lines[b, 0] - lines[a, 0] * lines[b, 2]
                vw = lines[a, 0] * lines[b, 1] - lines[a, 1] * lines[b, 0]
                norm = sqrt(vx * vx + vy * vy + vw * vw)
                if norm < 1e-12:
                    continue
                vx /= norm
                vy /= norm
                vw /= norm
                if vx != 0.0:
                    sign = 1.0 if vx > 0.0 else -1.0
                elif vy != 0.0:
                    sign = 1.0 if vy > 0.0 else -1.0
                else:
                    sign = 1.0 if vw > 0.0 else (-1.0 if vw < 0.0 else 0.0)
                vx *= sign
                vy *= sign
                vw *= sign
                cnt = 0
                tot = 0.0
                for i in range(n):
                    if vw == 0.0:
                        dx = vx
                        dy = vy
                    else:
                        dx = vx / vw - mids[i, 0]
                        dy = vy / vw - mids[i, 1]
                    cr = dx * dirs[i, 1] - dy * dirs[i, 0]
                    dt = dx * dirs[i, 0] + dy * dirs[i, 1]
                    if atan2(fabs(cr), fabs(dt)) <= tau:
                        cnt += 1
                        tot += lens[i]
                vps[pos, 0] = vx
                vps[pos, 1] = vy
                vps[pos, 2] = vw
                counts[pos] = cnt
                lengths[pos] = tot
                pa[pos] = <int> a
                pb[pos] = <int> b
                pos += 1
    return (vps_arr[:pos], counts_arr[:pos], lengths_arr[:pos],
            pa_arr[:pos], pb_arr[:pos])


def paint_capsule(unsigned char[:, ::1] img, double x0, double y0,
                  double x1, double y1, double radius, unsigned char value):
    """See ``_fallback.paint_capsule``; identical contract."""
    cdef Py_ssize_t h = img.shape[0]
    cdef Py_ssize_t w = img.shape[1]
    cdef double xmin = x0 if x0 < x1 else x1
    cdef double xmax = x0 if x0 > x1 else x1
    cdef double ymin = y0 if y0 < y1 else y1
    cdef double ymax = y0 if y0 > y1 else y1
    cdef Py_ssize_t x_lo = <Py_ssize_t> floor(xmin - radius - 1.0)
    cdef Py_ssize_t x_hi = <Py_ssize_t> ceil(xmax + radius + 1.0)
    cdef Py_ssize_t y_lo = <Py_ssize_t> floor(ymin - radius - 1.0)
    cdef Py_ssize_t y_hi = <Py_ssize_t> ceil(ymax + radius + 1.0)
    if x_lo < 0: x_lo = 0
    if y_lo < 0: y_lo = 0
    if x_hi > w: x_hi = w
    if y_hi > h: y_hi = h
    cdef double dx = x1 - x0
    cdef double dy = y1 - y0
    cdef double dd = dx * dx + dy * dy
    cdef double r2 = radius * radius
    cdef Py_ssize_t px, py
    cdef double rx, ry, t, ex, ey, d2
    with nogil:
        for py in range(y_lo, y_hi):
            ry = (py + 0.5) - y0
            for px in range(x_lo, x_hi):
                rx = (px + 0.5) - x0
                if dd == 0.0:
                    d2 = rx * rx + ry * ry
                else:
                    t = (rx * dx + ry * dy) / dd
                    if t < 0.0:
                        t = 0.0
                    elif t > 1.0:
                        t = 1.0
                    ex = rx - t * dx
                    ey = ry - t * dy
                    d2 = ex * ex + ey * ey
                if d2 <= r2:
                    img[py, px] = value


def paint_box_ring(unsigned char[:, ::1] img, double bx0, double by0,
                   double bx1, double by1, double radius, unsigned char value):
    """See ``_fallback.paint_box_ring``; identical contract."""
    cdef Py_ssize_t h = img.shape[0]
    cdef Py_ssize_t w = img.shape[1]
    cdef Py_ssize_t x_lo = <Py_ssize_t> floor(bx0 - radius - 1.0)
    cdef Py_ssize_t x_hi = <Py_ssize_t> ceil(bx1 + radius + 1.0)
    cdef Py_ssize_t y_lo = <Py_ssize_t> floor(by0 - radius - 1.0)
    cdef Py_ssize_t y_hi = <Py_ssize_t> ceil(by1 + radius + 1.0)
    if x_lo < 0: x_lo = 0
    if y_lo < 0: y_lo = 0
    if x_hi > w: x_hi = w
    if y_hi > h: y_hi = h
    cdef Py_ssize_t px, py
    cdef double x, y
    cdef bint outer, inner
    with nogil:
        for py in range(y_lo, y_hi):
            y = py + 0.5
            for px in range(x_lo, x_hi):
                x = px + 0.5
                outer = (x >= bx0 - radius and x <= bx1 + radius and
                         y >= by0 - radius and y <= by1 + radius)
                inner = (x > bx0 + radius and x < bx1 - radius and
                         y > by0 + radius and y < by1 - radius)
                if outer and not inner:
                    img[py, px] = value
