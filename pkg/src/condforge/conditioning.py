"""Conditioning raster synthesis.

Two modalities: axis-aligned bounding-box outlines (proportion control) and
vanishing-line bundles (perspective control).  Rendering is deterministic and
byte-exact: strokes are painted by an inclusive distance test against
continuous-coordinate segments (no anti-aliasing), so identical inputs always
produce identical rasters and horizontal mirroring commutes with rendering.

Also defines the scene-spec authoring format (a JSON key-value tree) and the
annotation-to-scene policy that turns pipeline records into render inputs.
"""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import HomogeneousPoint, Point, normalize_pixel
from ._kernels import paint_box_ring, paint_capsule

log = logging.getLogger(__name__)

MIN_CANVAS_SIDE = 64
STYLE_REFERENCE_CANVAS = 1024


class SceneSpecError(ValueError):
    """Malformed or constraint-violating scene spec; message carries the field path."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in fractions of canvas width/height.

    The label is metadata only; it never affects rendering (a single global
    prompt describes content, boxes only reserve space).
    """

    x0: float
    y0: float
    x1: float
    y1: float
    label: str | None = None

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise SceneSpecError(f"box requires x0 < x1 and y0 < y1, got {self}")


@dataclass(frozen=True)
class VanishingLineBundle:
    """Lines through anchor points converging toward one vanishing point."""

    vp: HomogeneousPoint
    anchors: tuple
    extend_to_vp: bool = True

    def __post_init__(self):
        if len(self.anchors) < 1:
            raise SceneSpecError("bundle requires at least one anchor")


@dataclass(frozen=True)
class RenderStyle:
    line_width: int = 3
    foreground: int = 255
    background: int = 0
    max_lines_per_bundle: int = 8

    def __post_init__(self):
        if self.line_width < 1:
            raise SceneSpecError("line_width must be >= 1")
        for name in ("foreground", "background"):
            v = getattr(self, name)
            if not 0 <= v <= 255:
                raise SceneSpecError(f"{name} must be an 8-bit gray level, got {v}")
        if self.foreground == self.background:
            raise SceneSpecError("foreground and background must differ")


@dataclass(frozen=True)
class RenderPolicy:
    """How automatic annotations become scenes."""

    lines_per_axis: int = 6
    style: RenderStyle = field(default_factory=RenderStyle)


@dataclass(frozen=True)
class SceneSpec:
    canvas_width: int
    canvas_height: int
    boxes: tuple = ()
    bundles: tuple = ()
    style: RenderStyle = field(default_factory=RenderStyle)

    def __post_init__(self):
        if self.canvas_width < MIN_CANVAS_SIDE or self.canvas_height < MIN_CANVAS_SIDE:
            raise SceneSpecError(
                f"canvas must be at least {MIN_CANVAS_SIDE}px per side, "
                f"got {self.canvas_width}x{self.canvas_height}"
            )


def scaled_style(style, canvas_width, canvas_height):
    """Scale the stroke width proportionally to the canvas long side.

    Style widths are declared at the 1024px reference scale.
    """
    w = max(1, round(style.line_width * max(canvas_width, canvas_height) / STYLE_REFERENCE_CANVAS))
    return RenderStyle(w, style.foreground, style.background, style.max_lines_per_bundle)


def _blank(canvas, style):
    w, h = canvas
    return np.full((h, w), style.background, dtype=np.uint8)


def render_boxes(boxes, canvas, style=None, out=None):
    """Rasterize box outlines (not filled) onto a canvas.

    Overlapping strokes are idempotent; output is byte-exact deterministic.
    """
    style = style or RenderStyle()
    img = out if out is not None else _blank(canvas, style)
    w, h = canvas
    r = style.line_width / 2.0
    for b in boxes:
        paint_box_ring(img, b.x0 * w, b.y0 * h, b.x1 * w, b.y1 * h, r, style.foreground)
    return img


def _to_pixel(p, w, h):
    s = max(w, h) / 2.0
    return (w / 2.0 + p.x * s, h / 2.0 + p.y * s)


def _clip_to_canvas(ax, ay, dx, dy, t_lo, t_hi, w, h):
    """Liang-Barsky clip of the parametric line (ax,ay) + t*(dx,dy) to the canvas.

    Returns the clipped (t0, t1) within [t_lo, t_hi], or None.
    """
    for p, q in ((-dx, ax - 0.0), (dx, w - ax), (-dy, ay - 0.0), (dy, h - ay)):
        if p == 0.0:
            if q < 0.0:
                return None
            continue
        t = q / p
        if p < 0.0:
            if t > t_lo:
                t_lo = t
        else:
            if t < t_hi:
                t_hi = t
        if t_lo > t_hi:
            return None
    return t_lo, t_hi


def render_vanishing_lines(bundles, canvas, style=None, out=None):
    """Rasterize vanishing-line bundles onto a canvas.

    Each line passes through its anchor and heads toward the bundle's VP; for
    a VP at infinity the full line through the anchor is drawn parallel to
    the VP direction.  With ``extend_to_vp`` and a finite in-canvas VP the
    stroke terminates at the VP.  Lines are clipped to the canvas.
    """
    style = style or RenderStyle()
    img = out if out is not None else _blank(canvas, style)
    w, h = canvas
    r = style.line_width / 2.0
    big = 4.0 * (w + h)
    for bundle in bundles:
        vp = bundle.vp
        for anchor in bundle.anchors[: style.max_lines_per_bundle]:
            ax, ay = _to_pixel(anchor, w, h)
            if vp.w == 0.0:
                dx, dy = vp.x, vp.y
                span = _clip_to_canvas(ax, ay, dx, dy, -big, big, w, h)
            else:
                vx, vy = vp.euclidean()
                px = w / 2.0 + vx * (max(w, h) / 2.0)
                py = h / 2.0 + vy * (max(w, h) / 2.0)
                dx, dy = px - ax, py - ay
                if dx == 0.0 and dy == 0.0:
                    log.warning("skipping vanishing line: anchor coincides with VP at (%g, %g)", vx, vy)
                    continue
                vp_inside = 0.0 <= px <= w and 0.0 <= py <= h
                t_hi = 1.0 if (bundle.extend_to_vp and vp_inside) else big
                span = _clip_to_canvas(ax, ay, dx, dy, 0.0, t_hi, w, h)
            if span is None:
                continue
            t0, t1 = span
            paint_capsule(
                img,
                ax + t0 * dx,
                ay + t0 * dy,
                ax + t1 * dx,
                ay + t1 * dy,
                r,
                style.foreground,
            )
    return img


def render_scene(spec):
    """Render a full scene spec (boxes then bundles) to one grayscale raster."""
    canvas = (spec.canvas_width, spec.canvas_height)
    img = _blank(canvas, spec.style)
    render_boxes(spec.boxes, canvas, spec.style, out=img)
    render_vanishing_lines(spec.bundles, canvas, spec.style, out=img)
    return img


def annotation_to_scene(record, policy=None):
    """Build a renderable scene from an annotated pipeline record.

    Perspective records contribute one bundle per frame axis, anchored at the
    midpoints of the axis's longest supporting segments; proportion records
    contribute their boxes verbatim.
    """
    policy = policy or RenderPolicy()
    boxes = list(getattr(record, "boxes", None) or [])
    frame = getattr(record, "frame", None)
    if not boxes and frame is None:
        raise ValueError("record carries neither boxes nor a Manhattan frame")
    style = scaled_style(policy.style, record.width, record.height)

    spec_boxes = tuple(g.box for g in boxes)
    bundles = []
    if frame is not None:
        segments = record.segments
        for k in range(3):
            members = sorted(
                frame.axis_members[k], key=lambda i: (-segments[i].length, i)
            )[: policy.lines_per_axis]
            if not members:
                continue
            anchors = tuple(segments[i].midpoint for i in members)
            bundles.append(VanishingLineBundle(vp=frame.vps[k], anchors=anchors, extend_to_vp=True))
    return SceneSpec(
        canvas_width=record.width,
        canvas_height=record.height,
        boxes=spec_boxes,
        bundles=tuple(bundles),
        style=style,
    )


# --- scene-spec text format ------------------------------------------------

_STYLE_KEYS = {"line_width", "foreground", "background", "max_lines_per_bundle"}


def _reject_unknown(obj, allowed, path):
    for key in obj:
        if key not in allowed:
            raise SceneSpecError(f"{path}.{key}: unknown field")


def _need(obj, key, path, types, convert=None):
    if key not in obj:
        raise SceneSpecError(f"{path}.{key}: required field missing")
    value = obj[key]
    # bool is an int subclass; numeric fields must not accept JSON booleans.
    if isinstance(value, bool) or not isinstance(value, types):
        raise SceneSpecError(f"{path}.{key}: expected a number, got {type(value).__name__}")
    return convert(value) if convert else value


def _fraction(obj, key, path):
    v = _need(obj, key, path, (int, float), float)
    if not 0.0 <= v <= 1.0:
        raise SceneSpecError(f"{path}.{key}: coordinate {v} outside [0, 1]")
    return v


def parse_scene_spec(text):
    """Parse the scene-spec document format into a SceneSpec.

    Syntax errors report line/column; constraint violations report the field
    path and the violated constraint.  Unknown fields are rejected.
    """
    try:
        root = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneSpecError(f"syntax error at line {e.lineno}, column {e.colno}: {e.msg}") from e
    if not isinstance(root, dict):
        raise SceneSpecError("top level: expected an object")
    _reject_unknown(root, {"canvas", "style", "boxes", "bundles"}, "spec")

    canvas = root.get("canvas")
    if not isinstance(canvas, dict):
        raise SceneSpecError("canvas: required object missing")
    _reject_unknown(canvas, {"width", "height"}, "canvas")
    width = _need(canvas, "width", "canvas", int)
    height = _need(canvas, "height", "canvas", int)

    style_obj = root.get("style", {})
    if not isinstance(style_obj, dict):
        raise SceneSpecError("style: expected an object")
    _reject_unknown(style_obj, _STYLE_KEYS, "style")
    defaults = RenderStyle()
    merged = {
        k: (_need(style_obj, k, "style", int) if k in style_obj else getattr(defaults, k))
        for k in ("line_width", "foreground", "background", "max_lines_per_bundle")
    }
    try:
        style = RenderStyle(**merged)
    except SceneSpecError as e:
        raise SceneSpecError(f"style: {e}") from e

    boxes = []
    raw_boxes = root.get("boxes", [])
    if not isinstance(raw_boxes, list):
        raise SceneSpecError("boxes: expected a list")
    for i, obj in enumerate(raw_boxes):
        path = f"boxes[{i}]"
        if not isinstance(obj, dict):
            raise SceneSpecError(f"{path}: expected an object")
        _reject_unknown(obj, {"x0", "y0", "x1", "y1", "label"}, path)
        x0 = _fraction(obj, "x0", path)
        y0 = _fraction(obj, "y0", path)
        x1 = _fraction(obj, "x1", path)
        y1 = _fraction(obj, "y1", path)
        if x0 >= x1:
            raise SceneSpecError(f"{path}: constraint x0 < x1 violated ({x0} >= {x1})")
        if y0 >= y1:
            raise SceneSpecError(f"{path}: constraint y0 < y1 violated ({y0} >= {y1})")
        label = obj.get("label")
        if label is not None and not isinstance(label, str):
            raise SceneSpecError(f"{path}.label: expected a string")
        boxes.append(BoundingBox(x0, y0, x1, y1, label))

    bundles = []
    raw_bundles = root.get("bundles", [])
    if not isinstance(raw_bundles, list):
        raise SceneSpecError("bundles: expected a list")
    for i, obj in enumerate(raw_bundles):
        path = f"bundles[{i}]"
        if not isinstance(obj, dict):
            raise SceneSpecError(f"{path}: expected an object")
        _reject_unknown(obj, {"vp", "anchors", "extend_to_vp"}, path)
        vp_obj = obj.get("vp")
        if not isinstance(vp_obj, dict):
            raise SceneSpecError(f"{path}.vp: required object missing")
        _reject_unknown(vp_obj, {"x", "y", "w"}, f"{path}.vp")
        try:
            vp = HomogeneousPoint.make(
                _need(vp_obj, "x", f"{path}.vp", (int, float), float),
                _need(vp_obj, "y", f"{path}.vp", (int, float), float),
                _need(vp_obj, "w", f"{path}.vp", (int, float), float),
            )
        except ValueError as e:
            raise SceneSpecError(f"{path}.vp: {e}") from e
        raw_anchors = obj.get("anchors")
        if not isinstance(raw_anchors, list) or not raw_anchors:
            raise SceneSpecError(f"{path}.anchors: expected a non-empty list")
        anchors = []
        for j, a in enumerate(raw_anchors):
            apath = f"{path}.anchors[{j}]"
            if not isinstance(a, dict):
                raise SceneSpecError(f"{apath}: expected an object")
            _reject_unknown(a, {"x", "y"}, apath)
            anchors.append(
                Point(
                    _need(a, "x", apath, (int, float), float),
                    _need(a, "y", apath, (int, float), float),
                )
            )
        extend = obj.get("extend_to_vp", True)
        if not isinstance(extend, bool):
            raise SceneSpecError(f"{path}.extend_to_vp: expected a boolean")
        bundles.append(VanishingLineBundle(vp, tuple(anchors), extend))

    try:
        return SceneSpec(width, height, tuple(boxes), tuple(bundles), style)
    except SceneSpecError as e:
        raise SceneSpecError(f"canvas: {e}") from e


def serialize_scene_spec(spec):
    """Serialize a SceneSpec so that parse(serialize(s)) == s."""
    doc = {
        "canvas": {"width": spec.canvas_width, "height": spec.canvas_height},
        "style": {
            "line_width": spec.style.line_width,
            "foreground": spec.style.foreground,
            "background": spec.style.background,
            "max_lines_per_bundle": spec.style.max_lines_per_bundle,
        },
        "boxes": [
            {"x0": b.x0, "y0": b.y0, "x1": b.x1, "y1": b.y1}
            | ({"label": b.label} if b.label is not None else {})
            for b in spec.boxes
        ],
        "bundles": [
            {
                "vp": {"x": u.vp.x, "y": u.vp.y, "w": u.vp.w},
                "anchors": [{"x": a.x, "y": a.y} for a in u.anchors],
                "extend_to_vp": u.extend_to_vp,
            }
            for u in spec.bundles
        ],
    }
    return json.dumps(doc, indent=2) + "\n"
