"""Single-binary command line for the triplet factory and its verifiable pieces.

JSON results go to stdout, logs and the resolved effective config to stderr,
so outputs stay pipeable.  Exit codes: 0 success, 1 usage error, 2 runtime
failure.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import flowmatch, pipeline
from ._kernels import BACKEND_NAME
from .clients import ServiceEndpoint
from .conditioning import parse_scene_spec, render_scene
from .geometry import (
    GeometryParams,
    canvas_half_extents,
    classify,
    estimate_frame,
    strong_perspective_filter,
)
from .mock_server import MockModelServer
from .segments import DetectorParams, detect_segments

log = logging.getLogger("condforge")

ENV_URLS = {
    "aesthetic": "CONDFORGE_AESTHETIC_URL",
    "caption": "CONDFORGE_CAPTION_URL",
    "ground": "CONDFORGE_GROUND_URL",
}
DEFAULT_SERVICE_URL = "http://127.0.0.1:8876"


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this artifact's contract is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="condforge", description=__doc__)
    p.add_argument("--config", help="JSON config file; flags override file values")
    p.add_argument("--seed", type=int, default=0, help="seed for randomized defaults")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    b = sub.add_parser("build", help="run a triplet factory over an image corpus")
    b.add_argument("--kind", choices=[pipeline.KIND_PROPORTION, pipeline.KIND_PERSPECTIVE],
                   required=True, help="which conditioning factory to run")
    b.add_argument("--corpus", required=True, help="corpus root directory")
    b.add_argument("--out", required=True, help="output directory")
    b.add_argument("--resume", action="store_true", help="resume a checkpointed run")
    b.add_argument("--workers", type=int, default=None, help="worker pool size")
    b.add_argument("--aesthetic-threshold", type=float, default=None,
                   help="override the kind's default aesthetic cut")

    d = sub.add_parser("detect-vp", help="Manhattan frame and perspective class of one image")
    d.add_argument("--image", required=True, help="input PNG/JPEG")
    d.add_argument("--focal", type=float, default=None, help="pinhole focal, normalized units")
    d.add_argument("--dump-segments", action="store_true", help="include detected segments")

    r = sub.add_parser("render", help="rasterize a scene-spec file to a PNG")
    r.add_argument("--spec", required=True, help="scene-spec document")
    r.add_argument("--out", required=True, help="output PNG path")

    s = sub.add_parser("stats", help="corpus statistics from a manifest")
    s.add_argument("--manifest", required=True, help="manifest.jsonl path")

    f = sub.add_parser("fm-demo", help="flow-matching demo: fit a planted velocity field")
    f.add_argument("--steps", type=int, default=500, help="gradient steps")
    f.add_argument("--lr", type=float, default=0.05, help="learning rate")
    f.add_argument("--out", required=True, help="loss-curve CSV path")

    m = sub.add_parser("mock-serve", help="serve the scripted annotation mock")
    m.add_argument("--fixtures", required=True, help="fixture JSON file")
    m.add_argument("--port", type=int, default=0, help="port (0 picks a free one)")
    return p


def _load_config_file(path):
    if not path:
        return {}
    cfg = json.loads(Path(path).read_text())
    if not isinstance(cfg, dict):
        raise pipeline.PipelineError("config file must hold a JSON object")
    return cfg


def _params_with_overrides(params, overrides, label):
    """Apply {field: value} overrides; keys ending in _deg are degrees."""
    updates = {}
    for key, value in (overrides or {}).items():
        name = key[:-4] if key.endswith("_deg") else key
        if not hasattr(params, name):
            raise pipeline.PipelineError(f"unknown {label} setting: {key}")
        updates[name] = math.radians(value) if key.endswith("_deg") else value
    return replace(params, **updates)


def _endpoint(name, file_cfg):
    url = (
        os.environ.get(ENV_URLS[name])
        or file_cfg.get(f"{name}_url")
        or file_cfg.get("service_url")
        or DEFAULT_SERVICE_URL
    )
    return ServiceEndpoint(
        base_url=url,
        timeout=file_cfg.get("endpoint_timeout", 10.0),
        max_retries=file_cfg.get("endpoint_max_retries", 3),
        backoff_base=file_cfg.get("endpoint_backoff_base", 0.25),
        token=file_cfg.get("endpoint_token"),
    )


def _echo_config(payload):
    print("resolved config: " + json.dumps(payload, sort_keys=True, default=str), file=sys.stderr)


def _cmd_build(args, file_cfg):
    geometry = _params_with_overrides(
        GeometryParams(max_hypotheses=120), file_cfg.get("geometry"), "geometry"
    )
    detector = _params_with_overrides(DetectorParams(), file_cfg.get("detector"), "detector")
    config = pipeline.PipelineConfig(
        kind=args.kind,
        corpus_root=args.corpus,
        output_dir=args.out,
        aesthetic=_endpoint("aesthetic", file_cfg),
        caption=_endpoint("caption", file_cfg),
        ground=_endpoint("ground", file_cfg),
        aesthetic_threshold=(
            args.aesthetic_threshold
            if args.aesthetic_threshold is not None
            else file_cfg.get("aesthetic_threshold")
        ),
        box_threshold=file_cfg.get("box_threshold", 0.35),
        geometry=geometry,
        detector=detector,
        worker_count=args.workers if args.workers is not None else file_cfg.get("worker_count", 1),
        failure_budget=file_cfg.get("failure_budget", 10),
    )
    _echo_config(
        {
            "command": "build",
            "kind": config.kind,
            "corpus": config.corpus_root,
            "out": config.output_dir,
            "resume": args.resume,
            "threshold": config.threshold,
            "box_threshold": config.box_threshold,
            "workers": config.worker_count,
            "backend": BACKEND_NAME,
            "endpoints": {n: _endpoint(n, file_cfg).base_url for n in ENV_URLS},
        }
    )

    def progress(done, outcome):
        if done % 25 == 0:
            log.info("processed %d records (last: %s -> %s)", done, outcome.record.id[:8],
                     outcome.record.status)

    runner = pipeline.PipelineRunner(config)
    report = runner.run(resume=args.resume, progress=progress)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def _cmd_detect_vp(args, file_cfg):
    geometry = _params_with_overrides(
        GeometryParams(max_hypotheses=120), file_cfg.get("geometry"), "geometry"
    )
    if args.focal is not None:
        geometry = replace(geometry, focal=args.focal)
    detector = _params_with_overrides(DetectorParams(), file_cfg.get("detector"), "detector")
    _echo_config({"command": "detect-vp", "image": args.image, "focal": geometry.focal,
                  "backend": BACKEND_NAME})

    with Image.open(args.image) as im:
        width, height = im.size
        gray = np.asarray(im.convert("L"))
    segments = detect_segments(gray, detector)
    half_extents = canvas_half_extents(width, height)
    frame = estimate_frame(segments, params=geometry) if len(segments) >= 2 else None
    passed, cls = strong_perspective_filter(frame, segments, geometry, half_extents)

    out = {
        "image": args.image,
        "width": width,
        "height": height,
        "segments": len(segments),
        "class": cls,
        "filter_pass": passed,
        "frame": None,
    }
    if frame is not None:
        out["frame"] = {
            "directions": [list(map(float, d)) for d in frame.directions],
            "vps": [{"x": v.x, "y": v.y, "w": v.w} for v in frame.vps],
            "score": frame.score,
            "axis_counts": list(frame.axis_counts),
            "class": classify(frame, geometry.k_extent, half_extents),
        }
    if args.dump_segments:
        out["segment_list"] = [
            {"x1": s.p1.x, "y1": s.p1.y, "x2": s.p2.x, "y2": s.p2.y, "length": s.length}
            for s in segments
        ]
    print(json.dumps(out, indent=2))
    return 0


def _cmd_render(args, file_cfg):
    _echo_config({"command": "render", "spec": args.spec, "out": args.out})
    spec = parse_scene_spec(Path(args.spec).read_text())
    raster = render_scene(spec)
    Image.fromarray(raster, mode="L").save(args.out, format="PNG")
    print(json.dumps({"out": args.out, "width": spec.canvas_width,
                      "height": spec.canvas_height}))
    return 0


def _cmd_stats(args, file_cfg):
    _echo_config({"command": "stats", "manifest": args.manifest})
    report = pipeline.stats(args.manifest)
    if report.retention_percent is not None:
        log.info("retention %.2f%%", report.retention_percent)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def _cmd_fm_demo(args, file_cfg, seed):
    _echo_config({"command": "fm-demo", "steps": args.steps, "lr": args.lr,
                  "out": args.out, "seed": seed})
    planted, dataset = flowmatch.make_planted_dataset(256, seed=seed)
    model = flowmatch.LinearVelocityModel.zeros(2, 4, 4)
    rows = []
    fitted = flowmatch.fit(model, dataset, args.steps, args.lr,
                           on_step=lambda step, loss: rows.append((step, loss)))
    final_loss = flowmatch.fm_loss(fitted, dataset)
    rows.append((args.steps, final_loss))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        writer.writerows(rows)
    optimum = flowmatch.fm_loss(flowmatch.least_squares_optimum(model, dataset), dataset)
    print(json.dumps({"steps": args.steps, "final_loss": final_loss,
                      "optimum_loss": optimum, "excess": final_loss - optimum,
                      "csv": args.out}))
    return 0


def _cmd_mock_serve(args, file_cfg):
    server = MockModelServer.from_fixture_file(args.fixtures, port=args.port)
    _echo_config({"command": "mock-serve", "fixtures": args.fixtures, "port": server.port})
    print(json.dumps({"url": server.url}), flush=True)
    server.start()
    try:
        while True:
            server._thread.join(1.0)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    np.random.seed(args.seed)
    try:
        file_cfg = _load_config_file(args.config)
        if args.command == "build":
            return _cmd_build(args, file_cfg)
        if args.command == "detect-vp":
            return _cmd_detect_vp(args, file_cfg)
        if args.command == "render":
            return _cmd_render(args, file_cfg)
        if args.command == "stats":
            return _cmd_stats(args, file_cfg)
        if args.command == "fm-demo":
            return _cmd_fm_demo(args, file_cfg, args.seed)
        if args.command == "mock-serve":
            return _cmd_mock_serve(args, file_cfg)
        raise pipeline.PipelineError(f"unhandled command {args.command}")
    except KeyboardInterrupt:
        log.error("interrupted")
        return 2
    except Exception as e:
        log.error("%s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
