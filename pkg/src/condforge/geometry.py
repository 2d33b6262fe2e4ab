"""Projective-geometry core for perspective analysis.

Vanishing-point hypotheses from exhaustive segment pairing, orthogonal-frame
completion under a pinhole camera, 1/2/3-point classification, and the
strong-perspective corpus filter.

Coordinates are normalized image units: the image centre is the origin and
all pixels lie in [-1, 1] along the longer axis.  Points at infinity are
first-class citizens (homogeneous w = 0), which is what makes 1-point
perspective representable at all.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import pair_support, residuals_to_point


class GeometryError(ValueError):
    """Raised for degenerate geometric inputs (coincident points, identical lines)."""


@dataclass(frozen=True)
class Point:
    """2D point in normalized image coordinates."""

    x: float
    y: float


@dataclass(frozen=True)
class HomogeneousPoint:
    """Projective point stored at unit Euclidean norm with canonical sign.

    w == 0 encodes a point at infinity (a pure direction).
    """

    x: float
    y: float
    w: float

    @classmethod
    def make(cls, x, y, w):
        v = canonicalize(np.array([x, y, w], dtype=np.float64))
        return cls(float(v[0]), float(v[1]), float(v[2]))

    @classmethod
    def from_array(cls, v):
        return cls.make(v[0], v[1], v[2])

    @property
    def is_infinite(self):
        return self.w == 0.0

    def euclidean(self):
        """(x/w, y/w); raises for points at infinity."""
        if self.w == 0.0:
            raise GeometryError("point at infinity has no Euclidean position")
        return (self.x / self.w, self.y / self.w)

    def as_array(self):
        return np.array([self.x, self.y, self.w], dtype=np.float64)


def canonicalize(v):
    """Scale a homogeneous 3-vector to unit norm, first non-zero component positive.

    Idempotent: an already-unit vector is not re-divided, so canonical values
    survive serialization round trips bit-for-bit.
    """
    v = np.asarray(v, dtype=np.float64)
    n = math.sqrt(float(v @ v))
    if n == 0.0:
        raise GeometryError("zero homogeneous vector")
    if abs(n - 1.0) > 1e-12:
        v = v / n
    for c in v:
        if c != 0.0:
            if c < 0.0:
                v = -v
            break
    return v + 0.0  # flush -0.0 components to +0.0


@dataclass(frozen=True)
class LineSegment:
    """Detected or synthetic image segment in normalized coordinates.

    direction_angle is the undirected orientation in [0, pi).
    """

    p1: Point
    p2: Point
    length: float
    direction_angle: float

    @classmethod
    def from_endpoints(cls, x1, y1, x2, y2):
        dx = x2 - x1
        dy = y2 - y1
        length = math.hypot(dx, dy)
        if length == 0.0:
            raise GeometryError("degenerate segment: endpoints coincide")
        angle = math.atan2(dy, dx)
        if angle < 0.0:
            angle += math.pi
        if angle >= math.pi:
            angle -= math.pi
        return cls(Point(x1, y1), Point(x2, y2), length, angle)

    @property
    def midpoint(self):
        return Point((self.p1.x + self.p2.x) / 2.0, (self.p1.y + self.p2.y) / 2.0)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole prior used to back-project image VPs to 3D directions.

    focal is in normalized units; 1.0 is roughly a 53-degree half-diagonal
    field of view on the long axis.
    """

    focal: float = 1.0
    principal_point: Point = Point(0.0, 0.0)

    def __post_init__(self):
        if self.focal <= 0.0:
            raise GeometryError("focal must be positive")


@dataclass(frozen=True)
class GeometryParams:
    """Thresholds for hypothesis generation, completion and filtering.

    Angles are radians.  Defaults are conservative and deliberately explicit;
    every run config can override them.
    """

    focal: float = 1.0
    tau_support: float = math.radians(2.0)
    dedup_angle: float = math.radians(2.0)
    tol_ortho: float = math.radians(5.0)
    max_segments: int = 200
    completion_top_k: int = 30
    completion_min_separation: float = math.radians(10.0)
    k_extent: float = 4.0
    min_support_count: int = 8
    min_support_fraction: float = 0.25
    max_hypotheses: int | None = None

    def camera(self):
        return CameraModel(focal=self.focal)


@dataclass(frozen=True)
class VpHypothesis:
    """Candidate vanishing point born from one segment pair."""

    point: HomogeneousPoint
    support_count: int
    support_length: float
    member_ids: tuple
    pair: tuple


@dataclass(frozen=True)
class ManhattanFrame:
    """Orthogonal triple of 3D directions with per-axis segment support."""

    directions: np.ndarray  # (3, 3), rows are unit vectors
    vps: tuple  # three HomogeneousPoint (image projections, possibly infinite)
    score: float
    axis_counts: tuple
    axis_lengths: tuple
    axis_members: tuple
    mean_residual: float


class PerspectiveClass:
    """Perspective class tags; the count of finite VPs among the frame's three."""

    NONE = "None"
    ONE_POINT = "OnePoint"
    TWO_POINT = "TwoPoint"
    THREE_POINT = "ThreePoint"

    BY_FINITE_COUNT = (NONE, ONE_POINT, TWO_POINT, THREE_POINT)


def normalize_pixel(px, py, width, height):
    """Map pixel coordinates to normalized image coordinates."""
    s = max(width, height) / 2.0
    return Point((px - width / 2.0) / s, (py - height / 2.0) / s)


def canvas_half_extents(width, height):
    """Normalized half extents of a width x height canvas (long axis is 1.0)."""
    m = float(max(width, height))
    return (width / m, height / m)


def segment_to_line(seg):
    """Homogeneous line coefficients through a segment, unit-normalized."""
    a = np.array([seg.p1.x, seg.p1.y, 1.0])
    b = np.array([seg.p2.x, seg.p2.y, 1.0])
    line = np.cross(a, b)
    n = math.sqrt(float(line @ line))
    if n < 1e-15:
        raise GeometryError("degenerate segment: endpoints coincide")
    return line / n


def intersect_lines(l1, l2):
    """Intersection of two homogeneous lines; w == 0 for parallel lines."""
    v = np.cross(np.asarray(l1, dtype=np.float64), np.asarray(l2, dtype=np.float64))
    n = math.sqrt(float(v @ v))
    if n < 1e-12:
        raise GeometryError("identical lines have no unique intersection")
    return HomogeneousPoint.from_array(v)


def consistency(seg, vp, tau):
    """Does ``seg`` point at ``vp`` within ``tau`` radians?

    Returns (consistent, residual); the residual is the angle between the
    segment direction and the midpoint-to-vp direction, folded into
    [0, pi/2].  A vp coincident with the midpoint has residual 0.
    """
    if not 0.0 < tau < math.pi / 2.0:
        raise GeometryError("tau must lie in (0, pi/2)")
    mid = seg.midpoint
    if vp.w == 0.0:
        dx, dy = vp.x, vp.y
    else:
        dx = vp.x / vp.w - mid.x
        dy = vp.y / vp.w - mid.y
    ux = math.cos(seg.direction_angle)
    uy = math.sin(seg.direction_angle)
    residual = math.atan2(abs(dx * uy - dy * ux), abs(dx * ux + dy * uy))
    return residual <= tau, residual


def _segment_arrays(segments):
    mids = np.array([[(s.p1.x + s.p2.x) / 2.0, (s.p1.y + s.p2.y) / 2.0] for s in segments])
    dirs = np.array([[math.cos(s.direction_angle), math.sin(s.direction_angle)] for s in segments])
    lens = np.array([s.length for s in segments])
    return mids, dirs, lens


def backproject(vp, cam):
    """Unit 3D direction of an image point under the pinhole camera."""
    if vp.w == 0.0:
        d = np.array([vp.x, vp.y, 0.0])
    else:
        d = np.array(
            [
                vp.x / vp.w - cam.principal_point.x,
                vp.y / vp.w - cam.principal_point.y,
                cam.focal,
            ]
        )
    return canonicalize(d)


def _backproject_array(vps, cam):
    """Vectorized ``backproject`` over an (N, 3) array of unit homogeneous points."""
    x, y, w = vps[:, 0], vps[:, 1], vps[:, 2]
    finite = w != 0.0
    safe_w = np.where(finite, w, 1.0)
    out = np.empty_like(vps)
    out[:, 0] = np.where(finite, x / safe_w - cam.principal_point.x, x)
    out[:, 1] = np.where(finite, y / safe_w - cam.principal_point.y, y)
    out[:, 2] = np.where(finite, cam.focal, 0.0)
    out /= np.sqrt((out * out).sum(axis=1))[:, None]
    sign = np.where(
        out[:, 0] != 0.0,
        np.sign(out[:, 0]),
        np.where(out[:, 1] != 0.0, np.sign(out[:, 1]), np.sign(out[:, 2])),
    )
    return out * sign[:, None]


def project_direction(d, cam):
    """Image vanishing point of a 3D direction (inverse of ``backproject``)."""
    if d[2] == 0.0:
        return HomogeneousPoint.make(d[0], d[1], 0.0)
    return HomogeneousPoint.make(
        cam.principal_point.x + cam.focal * d[0] / d[2],
        cam.principal_point.y + cam.focal * d[1] / d[2],
        1.0,
    )


def hypothesize_vps(segments, max_segments=None, params=None, cam=None):
    """Exhaustive 2-line vanishing-point hypotheses.

    All unordered pairs among the ``max_segments`` longest segments are
    intersected; every candidate is scored for support over *all* input
    segments at ``params.tau_support``.  Candidates whose back-projected
    directions are closer than ``params.dedup_angle`` are merged, keeping the
    higher support length.  The result is sorted by descending support
    length (ties keep pair-enumeration order).
    """
    params = params or GeometryParams()
    cam = cam or params.camera()
    if max_segments is None:
        max_segments = params.max_segments
    n = len(segments)
    if n < 2:
        raise GeometryError("need at least 2 segments to hypothesize VPs")

    order = sorted(range(n), key=lambda i: (-segments[i].length, i))
    top = order[:max_segments]
    lines = np.stack([segment_to_line(segments[i]) for i in top])
    mids, dirs, lens = _segment_arrays(segments)

    vps, counts, lengths, pa, pb = pair_support(lines, mids, dirs, lens, params.tau_support)
    if len(vps) == 0:
        return []

    rank = np.argsort(-lengths, kind="stable")
    dirs3 = _backproject_array(vps, cam)
    cos_dedup = math.cos(params.dedup_angle)
    limit = params.max_hypotheses or len(vps)
    kept_dirs = np.empty((min(limit, len(vps)), 3))
    kept = []
    for idx in rank:
        if len(kept) >= limit:
            break
        if kept and np.any(np.abs(kept_dirs[: len(kept)] @ dirs3[idx]) > cos_dedup):
            continue  # merged into an already-kept, higher-support candidate
        kept_dirs[len(kept)] = dirs3[idx]
        kept.append(int(idx))

    hyps = []
    for idx in kept:
        res = residuals_to_point(np.ascontiguousarray(vps[idx]), mids, dirs)
        members = np.nonzero(res <= params.tau_support)[0]
        hyps.append(
            VpHypothesis(
                point=HomogeneousPoint.from_array(vps[idx]),
                support_count=int(len(members)),
                support_length=float(lens[members].sum()),
                member_ids=tuple(int(i) for i in members),
                pair=(top[pa[idx]], top[pb[idx]]),
            )
        )
    # Stable order: support length descending, ties keep pair-enumeration order.
    enum_pos = {id(h): i for i, h in enumerate(hyps)}
    hyps.sort(key=lambda h: (-h.support_length, enum_pos[id(h)]))
    return hyps


def complete_manhattan(hyps, segments, cam=None, params=None):
    """Best orthogonal VP triple from the top hypotheses, or None.

    Pairs of the top-K hypotheses whose back-projected directions are
    orthogonal within ``tol_ortho`` seed a frame; the third direction is
    their cross product.  Every segment is assigned to at most one axis (its
    lowest-residual consistent axis); the frame score is the summed length
    of assigned segments.  Ties break on lower mean residual, then on lower
    hypothesis pair index.
    """
    params = params or GeometryParams()
    cam = cam or params.camera()
    if not hyps:
        return None
    top = hyps[: params.completion_top_k]
    dirs3 = [backproject(h.point, cam) for h in top]
    mids, dirs, lens = _segment_arrays(segments)
    sin_tol = math.sin(params.tol_ortho)

    best = None
    best_key = None
    for i in range(len(top) - 1):
        for j in range(i + 1, len(top)):
            dot = float(dirs3[i] @ dirs3[j])
            if abs(dot) > sin_tol:
                continue
            d1 = dirs3[i]
            d2 = dirs3[j] - dot * d1
            n2 = math.sqrt(float(d2 @ d2))
            if n2 < 1e-9:
                continue
            d2 = d2 / n2
            d3 = np.cross(d1, d2)
            frame_dirs = np.stack([canonicalize(d1), canonicalize(d2), canonicalize(d3)])
            vps = tuple(project_direction(d, cam) for d in frame_dirs)

            res = np.stack(
                [residuals_to_point(v.as_array(), mids, dirs) for v in vps]
            )  # (3, N)
            axis = np.argmin(res, axis=0)
            min_res = res[axis, np.arange(res.shape[1])]
            assigned = min_res <= params.tau_support
            score = float(lens[assigned].sum())
            mean_res = float(min_res[assigned].mean()) if assigned.any() else math.inf
            key = (-score, mean_res, (i, j))
            if best_key is None or key < best_key:
                counts = []
                lengths = []
                members = []
                for k in range(3):
                    on_axis = assigned & (axis == k)
                    counts.append(int(on_axis.sum()))
                    lengths.append(float(lens[on_axis].sum()))
                    members.append(tuple(int(m) for m in np.nonzero(on_axis)[0]))
                best = ManhattanFrame(
                    directions=frame_dirs,
                    vps=vps,
                    score=score,
                    axis_counts=tuple(counts),
                    axis_lengths=tuple(lengths),
                    axis_members=tuple(members),
                    mean_residual=mean_res,
                )
                best_key = key
    return best


def is_finite_vp(vp, k_extent, half_extents=(1.0, 1.0)):
    """True when the VP is a Euclidean point within the canvas scaled by k_extent."""
    if k_extent < 1.0:
        raise GeometryError("k_extent must be >= 1")
    if vp.w == 0.0:
        return False
    x = vp.x / vp.w
    y = vp.y / vp.w
    return abs(x) <= k_extent * half_extents[0] and abs(y) <= k_extent * half_extents[1]


def classify(frame, k_extent, half_extents=(1.0, 1.0)):
    """1/2/3-point perspective tag from the count of finite frame VPs."""
    finite = sum(1 for v in frame.vps if is_finite_vp(v, k_extent, half_extents))
    return PerspectiveClass.BY_FINITE_COUNT[finite]


def strong_perspective_filter(frame, segments, params=None, half_extents=(1.0, 1.0)):
    """Corpus filter: does the frame show a strong perspective structure?

    Passes when a frame exists, classifies to a non-None class, and its
    dominant finite axis carries at least ``min_support_count`` segments and
    ``min_support_fraction`` of the total segment length.
    Returns (passed, perspective_class).
    """
    params = params or GeometryParams()
    if frame is None:
        return False, PerspectiveClass.NONE
    cls = classify(frame, params.k_extent, half_extents)
    if cls == PerspectiveClass.NONE:
        return False, cls
    finite_axes = [
        k for k in range(3) if is_finite_vp(frame.vps[k], params.k_extent, half_extents)
    ]
    dominant = max(finite_axes, key=lambda k: (frame.axis_lengths[k], -k))
    total_length = sum(s.length for s in segments)
    passed = (
        frame.axis_counts[dominant] >= params.min_support_count
        and frame.axis_lengths[dominant] >= params.min_support_fraction * total_length
    )
    return passed, cls


def estimate_frame(segments, params=None, cam=None):
    """Segments -> hypotheses -> completed frame (None when degenerate)."""
    params = params or GeometryParams()
    cam = cam or params.camera()
    if len(segments) < 2:
        return None
    hyps = hypothesize_vps(segments, params=params, cam=cam)
    if not hyps:
        return None
    return complete_manhattan(hyps, segments, cam=cam, params=params)
