"""Line-segment extraction from raster images.

Region growing over the gradient field groups 8-connected cells whose
level-line orientation agrees with the running region orientation; each
region is fitted by principal-axis regression, then nearly-collinear
detections are merged (a bright stroke produces one edge response per side,
and junctions split runs).  Output is deterministic for identical input.
"""

import math
from dataclasses import dataclass

import numpy as np

from .geometry import LineSegment, normalize_pixel
from ._kernels import grow_regions

MIN_IMAGE_SIDE = 16


@dataclass(frozen=True)
class DetectorParams:
    """Detection thresholds; angles in radians, distances in pixels."""

    gradient_threshold: float = 16.0  # 8-bit gradient units
    angle_tolerance: float = math.radians(22.5)
    min_length_fraction: float = 0.02  # of the image diagonal
    merge_angle: float = math.radians(3.0)
    merge_offset: float = 4.0
    merge_gap: float = 12.0
    min_region_cells: int = 5


def gradient_field(img):
    """2x2 block gradient magnitude and orientation (mod pi).

    Cell (r, c) aggregates pixels (r..r+1, c..c+1); its geometric centre is
    (c + 1, r + 1) in continuous pixel space, which keeps the detector
    equivariant under 90-degree rotations.
    """
    f = img.astype(np.float64)
    gx = (f[:-1, 1:] - f[:-1, :-1] + f[1:, 1:] - f[1:, :-1]) / 2.0
    gy = (f[1:, :-1] - f[:-1, :-1] + f[1:, 1:] - f[:-1, 1:]) / 2.0
    mag = np.sqrt(gx * gx + gy * gy)
    ang = np.arctan2(gy, gx)
    ang = np.where(ang < 0.0, ang + np.pi, ang)
    ang = np.where(ang >= np.pi, ang - np.pi, ang)
    return mag, ang


def _fit_regions(labels, n_regions, mag, params):
    """Principal-axis fit of every region; returns pixel-space segments.

    Each segment is (x1, y1, x2, y2, length, angle).
    """
    lab = labels.ravel()
    valid = lab >= 0
    if not valid.any():
        return []
    rows, cols = labels.shape
    yy, xx = np.divmod(np.arange(rows * cols), cols)
    l = lab[valid]
    x = xx[valid] + 1.0
    y = yy[valid] + 1.0
    w = mag.ravel()[valid]

    counts = np.bincount(l, minlength=n_regions)
    sw = np.bincount(l, weights=w, minlength=n_regions)
    mx = np.bincount(l, weights=w * x, minlength=n_regions) / sw
    my = np.bincount(l, weights=w * y, minlength=n_regions) / sw
    dx = x - mx[l]
    dy = y - my[l]
    cxx = np.bincount(l, weights=w * dx * dx, minlength=n_regions)
    cxy = np.bincount(l, weights=w * dx * dy, minlength=n_regions)
    cyy = np.bincount(l, weights=w * dy * dy, minlength=n_regions)
    theta = 0.5 * np.arctan2(2.0 * cxy, cxx - cyy)
    ct = np.cos(theta)
    st = np.sin(theta)

    t = dx * ct[l] + dy * st[l]
    tmin = np.full(n_regions, np.inf)
    tmax = np.full(n_regions, -np.inf)
    np.minimum.at(tmin, l, t)
    np.maximum.at(tmax, l, t)

    segs = []
    for r in range(n_regions):
        if counts[r] < params.min_region_cells:
            continue
        length = tmax[r] - tmin[r]
        if not np.isfinite(length) or length <= 0.0:
            continue
        x1 = mx[r] + tmin[r] * ct[r]
        y1 = my[r] + tmin[r] * st[r]
        x2 = mx[r] + tmax[r] * ct[r]
        y2 = my[r] + tmax[r] * st[r]
        segs.append((float(x1), float(y1), float(x2), float(y2)))
    return [_with_pose(s) for s in segs]


def _with_pose(seg):
    x1, y1, x2, y2 = seg[:4]
    length = math.hypot(x2 - x1, y2 - y1)
    angle = math.atan2(y2 - y1, x2 - x1)
    if angle < 0.0:
        angle += math.pi
    if angle >= math.pi:
        angle -= math.pi
    return (x1, y1, x2, y2, length, angle)


def _angle_diff(a, b):
    d = abs(a - b)
    if d > math.pi / 2.0:
        d = math.pi - d
    return d


def _lateral(px, py, seg):
    """Perpendicular distance of a point from a segment's infinite line."""
    x1, y1, x2, y2, length, _ = seg
    ux = (x2 - x1) / length
    uy = (y2 - y1) / length
    return abs((px - x1) * uy - (py - y1) * ux)


def _try_merge(a, b, params):
    if _angle_diff(a[5], b[5]) > params.merge_angle:
        return None
    amx, amy = (a[0] + a[2]) / 2.0, (a[1] + a[3]) / 2.0
    bmx, bmy = (b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0
    if _lateral(bmx, bmy, a) > params.merge_offset or _lateral(amx, amy, b) > params.merge_offset:
        return None
    # Length-weighted merged pose.
    wa, wb = a[4], b[4]
    cx = (wa * amx + wb * bmx) / (wa + wb)
    cy = (wa * amy + wb * bmy) / (wa + wb)
    cs = wa * math.cos(2.0 * a[5]) + wb * math.cos(2.0 * b[5])
    sn = wa * math.sin(2.0 * a[5]) + wb * math.sin(2.0 * b[5])
    theta = 0.5 * math.atan2(sn, cs)
    ux, uy = math.cos(theta), math.sin(theta)
    ts = [
        (px - cx) * ux + (py - cy) * uy
        for px, py in ((a[0], a[1]), (a[2], a[3]), (b[0], b[1]), (b[2], b[3]))
    ]
    ta = sorted(ts[:2])
    tb = sorted(ts[2:])
    gap = max(tb[0] - ta[1], ta[0] - tb[1])
    if gap > params.merge_gap:
        return None
    lo, hi = min(ts), max(ts)
    return _with_pose((cx + lo * ux, cy + lo * uy, cx + hi * ux, cy + hi * uy))


def _merge_collinear(segs, params):
    segs = sorted(segs, key=lambda s: (-s[4], s[0], s[1], s[2], s[3]))
    changed = True
    while changed:
        changed = False
        i = 0
        while i < len(segs):
            j = i + 1
            while j < len(segs):
                merged = _try_merge(segs[i], segs[j], params)
                if merged is not None:
                    segs[i] = merged
                    del segs[j]
                    changed = True
                else:
                    j += 1
            i += 1
    return segs


def detect_segments(img, params=None):
    """Detect line segments in an 8-bit grayscale image.

    Returns ``LineSegment`` objects in normalized coordinates, sorted by
    descending length.  Raises ValueError for images below the minimum size.
    """
    params = params or DetectorParams()
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("detect_segments expects a single-channel image")
    h, w = img.shape
    if h < MIN_IMAGE_SIDE or w < MIN_IMAGE_SIDE:
        raise ValueError(f"image too small: {w}x{h} (minimum side {MIN_IMAGE_SIDE})")
    img = img.astype(np.uint8, copy=False)

    mag, ang = gradient_field(img)
    flat_mag = mag.ravel()
    active = np.nonzero(flat_mag >= params.gradient_threshold)[0]
    if len(active) == 0:
        return []
    order = active[np.argsort(-flat_mag[active], kind="stable")].astype(np.int64)

    labels = np.full(mag.shape, -1, dtype=np.int32)
    n_regions = grow_regions(
        np.ascontiguousarray(mag),
        np.ascontiguousarray(ang),
        order,
        float(params.gradient_threshold),
        float(params.angle_tolerance),
        labels,
    )

    min_len_px = params.min_length_fraction * math.hypot(w, h)
    fitted = _fit_regions(labels, n_regions, mag, params)
    # Keep sub-threshold fragments around for the merge pass (junction splits),
    # then apply the real length floor to the merged result.
    fitted = [s for s in fitted if s[4] >= max(4.0, 0.4 * min_len_px)]
    merged = _merge_collinear(fitted, params)
    merged = [s for s in merged if s[4] >= min_len_px]
    merged.sort(key=lambda s: (-s[4], s[0], s[1], s[2], s[3]))

    out = []
    for x1, y1, x2, y2, _, _ in merged:
        p1 = normalize_pixel(x1, y1, w, h)
        p2 = normalize_pixel(x2, y2, w, h)
        out.append(LineSegment.from_endpoints(p1.x, p1.y, p2.x, p2.y))
    return out
