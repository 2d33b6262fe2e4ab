"""End-to-end triplet factories.

Two pipelines share one engine: proportion (aesthetic filter, captioning,
grounded boxes, box raster) and perspective (aesthetic filter, vanishing-point
detection and the strong-perspective filter, captioning, vanishing-line
raster).  Execution is checkpointed through an append-only binary journal so
interrupted runs resume to a byte-identical manifest, and every record always
reaches a terminal status.

Output layout: ``output_dir/{images,conditioning,manifest.jsonl,
checkpoint.journal,report.json}``.
"""

import hashlib
import io
import json
import logging
import struct
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import clients as model_clients
from ._kernels import BACKEND_NAME
from .clients import AnnotationClient, ProtocolError, RemoteUnavailable, ServiceEndpoint
from .conditioning import RenderPolicy, annotation_to_scene, render_scene
from .geometry import (
    GeometryParams,
    canvas_half_extents,
    estimate_frame,
    strong_perspective_filter,
)
from .ids import content_id
from .segments import DetectorParams, detect_segments

log = logging.getLogger(__name__)

KIND_PROPORTION = "proportion"
KIND_PERSPECTIVE = "perspective"
DEFAULT_THRESHOLDS = {KIND_PROPORTION: 5.0, KIND_PERSPECTIVE: 3.5}
IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg"}


class PipelineError(RuntimeError):
    pass


class PipelineAborted(PipelineError):
    """Endpoint hard-down: the failure budget ran out; the checkpoint is intact."""


# Record statuses (monotone along the stage order).
PENDING = "Pending"
FILTERED_AESTHETIC = "FilteredAesthetic"
FILTERED_GEOMETRY = "FilteredGeometry"
ANNOTATED = "Annotated"
EMITTED = "Emitted"
FAILED = "Failed"

_STATUS_CODES = {
    PENDING: 0,
    FILTERED_AESTHETIC: 1,
    FILTERED_GEOMETRY: 2,
    ANNOTATED: 3,
    EMITTED: 4,
    FAILED: 5,
}
_STATUS_BY_CODE = {v: k for k, v in _STATUS_CODES.items()}
TERMINAL_STATUSES = {FILTERED_AESTHETIC, FILTERED_GEOMETRY, EMITTED, FAILED}

# Journal stage codes, in pipeline order.
STAGE_INGEST = 0
STAGE_AESTHETIC = 1
STAGE_GEOMETRY = 2
STAGE_CAPTION = 3
STAGE_GROUND = 4
STAGE_EMIT = 5
_STAGE_HEADER = 255


@dataclass
class ImageRecord:
    """Per-image annotation accumulator."""

    id: str
    source_path: str
    width: int = 0
    height: int = 0
    aesthetic: float | None = None
    captions: model_clients.CaptionPair | None = None
    boxes: list | None = None
    segments_count: int | None = None
    frame: object | None = None
    perspective: str | None = None
    status: str = PENDING
    failure_reason: str | None = None
    segments: list | None = None  # transient; never journaled


@dataclass(frozen=True)
class PipelineConfig:
    kind: str
    corpus_root: str
    output_dir: str
    aesthetic: ServiceEndpoint
    caption: ServiceEndpoint
    ground: ServiceEndpoint
    aesthetic_threshold: float | None = None  # None -> kind default
    box_threshold: float = model_clients.DEFAULT_BOX_THRESHOLD
    geometry: GeometryParams = field(default_factory=lambda: GeometryParams(max_hypotheses=120))
    detector: DetectorParams = field(default_factory=DetectorParams)
    policy: RenderPolicy = field(default_factory=RenderPolicy)
    worker_count: int = 1
    failure_budget: int = 10

    def __post_init__(self):
        if self.kind not in (KIND_PROPORTION, KIND_PERSPECTIVE):
            raise PipelineError(f"unknown pipeline kind: {self.kind!r}")
        if self.worker_count < 1:
            raise PipelineError("worker_count must be >= 1")

    @property
    def threshold(self):
        if self.aesthetic_threshold is not None:
            return self.aesthetic_threshold
        return DEFAULT_THRESHOLDS[self.kind]

    def fingerprint(self):
        """Digest of every setting that changes record outcomes.

        Endpoints and worker counts are deliberately excluded: a resumed run
        may move to different servers or parallelism, but never to different
        thresholds.
        """
        payload = {
            "kind": self.kind,
            "threshold": self.threshold,
            "box_threshold": self.box_threshold,
            "geometry": _public_numbers(self.geometry),
            "detector": _public_numbers(self.detector),
            "policy": {
                "lines_per_axis": self.policy.lines_per_axis,
                "style": _public_numbers(self.policy.style),
            },
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _public_numbers(obj):
    return {
        k: v for k, v in vars(obj).items() if isinstance(v, (int, float)) or v is None
    }


def ingest(corpus_root):
    """Deterministic (id, path) stream over an image tree.

    Lexicographic traversal; ids are 128-bit content hashes; byte-identical
    duplicates collapse to the first path; unreadable files are logged and
    skipped.
    """
    root = Path(corpus_root)
    if not root.is_dir():
        raise PipelineError(f"corpus root is not a directory: {corpus_root}")
    seen = set()
    paths = sorted(
        (p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS),
        key=lambda p: str(p),
    )
    for path in paths:
        try:
            data = path.read_bytes()
        except OSError as e:
            log.warning("skipping unreadable file %s: %s", path, e)
            continue
        cid = content_id(data)
        if cid in seen:
            log.info("duplicate content %s at %s (first path wins)", cid, path)
            continue
        seen.add(cid)
        yield cid, path


# --- checkpoint journal ------------------------------------------------------

_RECORD_HEAD = struct.Struct("<16sBBd")


class Journal:
    """Append-only, length-prefixed binary journal of status transitions."""

    def __init__(self, path, mode="ab"):
        self.path = Path(path)
        self._fh = open(self.path, mode)

    def write(self, record_id, stage, status, reason="", timestamp=None):
        ts = time.time() if timestamp is None else timestamp
        rid = bytes.fromhex(record_id) if record_id else b"\x00" * 16
        payload = _RECORD_HEAD.pack(rid, stage, _STATUS_CODES[status], ts) + reason.encode()
        self._fh.write(struct.pack("<I", len(payload)) + payload)
        self._fh.flush()

    def write_header(self, fingerprint):
        ts = time.time()
        payload = _RECORD_HEAD.pack(b"\x00" * 16, _STAGE_HEADER, 0, ts) + fingerprint.encode()
        self._fh.write(struct.pack("<I", len(payload)) + payload)
        self._fh.flush()

    def close(self):
        self._fh.close()


def read_journal(path):
    """All journal entries as (id_hex, stage, status, timestamp, reason).

    The header carries the config fingerprint in its reason field.
    """
    entries = []
    raw = Path(path).read_bytes()
    pos = 0
    while pos + 4 <= len(raw):
        (length,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        if pos + length > len(raw):
            break  # truncated trailing record from a crash; ignore
        payload = raw[pos : pos + length]
        pos += length
        rid, stage, status_code, ts = _RECORD_HEAD.unpack_from(payload)
        reason = payload[_RECORD_HEAD.size :].decode(errors="replace")
        entries.append((rid.hex(), stage, _STATUS_BY_CODE[status_code], ts, reason))
    return entries


def audit_journal(path):
    """Verify stage monotonicity; return {id: (stage, status, reason)} finals.

    Raises PipelineError when any record's stage moves backward or a terminal
    status is followed by further transitions.
    """
    finals = {}
    fingerprint = None
    for rid, stage, status, ts, reason in read_journal(path):
        if stage == _STAGE_HEADER:
            fingerprint = reason
            continue
        prev = finals.get(rid)
        if prev is not None:
            if prev[1] in TERMINAL_STATUSES:
                raise PipelineError(f"journal violation: {rid} transitions after terminal {prev[1]}")
            if stage < prev[0]:
                raise PipelineError(f"journal violation: {rid} stage moved backward")
        finals[rid] = (stage, status, reason)
    return fingerprint, finals


# --- the engine ---------------------------------------------------------------


@dataclass
class RunReport:
    kind: str
    funnel: dict
    status_counts: dict
    perspective_histogram: dict
    box_histogram: dict
    wall_time_s: float
    processed: int
    backend: str = BACKEND_NAME

    def to_dict(self):
        return {
            "kind": self.kind,
            "funnel": self.funnel,
            "status_counts": self.status_counts,
            "perspective_histogram": self.perspective_histogram,
            "box_histogram": self.box_histogram,
            "wall_time_s": self.wall_time_s,
            "processed": self.processed,
            "backend": self.backend,
        }


@dataclass
class _Outcome:
    record: ImageRecord
    transitions: list
    manifest_entry: dict | None = None
    remote_failure: str | None = None


class PipelineRunner:
    def __init__(self, config, sleep=time.sleep):
        self.config = config
        self.out = Path(config.output_dir)
        self.aesthetic = AnnotationClient(config.aesthetic, sleep=sleep)
        self.caption = AnnotationClient(config.caption, sleep=sleep)
        self.ground = AnnotationClient(config.ground, sleep=sleep)

    # -- per-record processing (pure w.r.t. shared state; thread-safe) --------

    def _process(self, rid, path):
        rec = ImageRecord(id=rid, source_path=str(path))
        transitions = []
        try:
            raw = Path(path).read_bytes()
            try:
                with Image.open(io.BytesIO(raw)) as im:
                    im.load()
                    rec.width, rec.height = im.size
                    gray = np.asarray(im.convert("L"))  # Rec. 601 luminance
            except Exception as e:
                rec.status = FAILED
                rec.failure_reason = f"decode failed: {e}"
                transitions.append((STAGE_INGEST, FAILED, rec.failure_reason))
                return _Outcome(rec, transitions)

            rec.aesthetic = model_clients.score_aesthetic(self.aesthetic, raw)
            # Strictly-greater threshold semantics: an exact tie is dropped.
            if not rec.aesthetic > self.config.threshold:
                rec.status = FILTERED_AESTHETIC
                transitions.append((STAGE_AESTHETIC, FILTERED_AESTHETIC, ""))
                return _Outcome(rec, transitions)
            transitions.append((STAGE_AESTHETIC, PENDING, ""))

            if self.config.kind == KIND_PERSPECTIVE:
                return self._process_perspective(rec, raw, gray, transitions)
            return self._process_proportion(rec, raw, transitions)
        except RemoteUnavailable as e:
            # Not terminal: the record stays pending so a resume retries it.
            return _Outcome(rec, [], remote_failure=str(e))
        except ProtocolError as e:
            rec.status = FAILED
            rec.failure_reason = f"protocol error: {e}"
            transitions.append((self._current_stage(transitions), FAILED, rec.failure_reason))
            return _Outcome(rec, transitions)
        except ValueError as e:
            rec.status = FAILED
            rec.failure_reason = str(e)
            transitions.append((self._current_stage(transitions), FAILED, rec.failure_reason))
            return _Outcome(rec, transitions)

    @staticmethod
    def _current_stage(transitions):
        return transitions[-1][0] if transitions else STAGE_INGEST

    def _process_perspective(self, rec, raw, gray, transitions):
        cfg = self.config
        segments = detect_segments(gray, cfg.detector)
        rec.segments = segments
        rec.segments_count = len(segments)
        half_extents = canvas_half_extents(rec.width, rec.height)
        frame = None
        if len(segments) >= 2:
            frame = estimate_frame(segments, params=cfg.geometry)
        passed, cls = strong_perspective_filter(frame, segments, cfg.geometry, half_extents)
        if not passed:
            rec.status = FILTERED_GEOMETRY
            transitions.append((STAGE_GEOMETRY, FILTERED_GEOMETRY, ""))
            return _Outcome(rec, transitions)
        rec.frame = frame
        rec.perspective = cls
        transitions.append((STAGE_GEOMETRY, PENDING, ""))

        rec.captions = model_clients.caption(self.caption, raw)
        rec.status = ANNOTATED
        transitions.append((STAGE_CAPTION, ANNOTATED, ""))
        return self._emit(rec, raw, transitions)

    def _process_proportion(self, rec, raw, transitions):
        cfg = self.config
        rec.captions = model_clients.caption(self.caption, raw)
        transitions.append((STAGE_CAPTION, PENDING, ""))
        rec.boxes = model_clients.ground(
            self.ground, raw, rec.captions.detailed, cfg.box_threshold
        )
        if not rec.boxes:
            rec.status = FILTERED_GEOMETRY
            transitions.append((STAGE_GROUND, FILTERED_GEOMETRY, ""))
            return _Outcome(rec, transitions)
        rec.status = ANNOTATED
        transitions.append((STAGE_GROUND, ANNOTATED, ""))
        return self._emit(rec, raw, transitions)

    def _emit(self, rec, raw, transitions):
        scene = annotation_to_scene(rec, self.config.policy)
        raster = render_scene(scene)
        cond_rel = f"conditioning/{rec.id}.png"
        Image.fromarray(raster, mode="L").save(self.out / cond_rel, format="PNG")
        ext = Path(rec.source_path).suffix.lower()
        image_rel = f"images/{rec.id}{ext}"
        (self.out / image_rel).write_bytes(raw)
        entry = {
            "id": rec.id,
            "image_path": image_rel,
            "conditioning_path": cond_rel,
            "prompt": rec.captions.short,
        }
        if self.config.kind == KIND_PERSPECTIVE:
            entry["perspective"] = rec.perspective
        else:
            entry["boxes"] = len(rec.boxes)
        rec.status = EMITTED
        transitions.append((STAGE_EMIT, EMITTED, ""))
        return _Outcome(rec, transitions, manifest_entry=entry)

    # -- orchestration ---------------------------------------------------------

    def run(self, resume=False, progress=None):
        cfg = self.config
        start = time.monotonic()
        journal_path = self.out / "checkpoint.journal"
        manifest_path = self.out / "manifest.jsonl"

        if journal_path.exists() and not resume:
            raise PipelineError(
                f"output dir already holds a checkpoint: {journal_path} (use resume)"
            )
        if resume and not journal_path.exists():
            raise PipelineError(f"nothing to resume: {journal_path} missing")

        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "images").mkdir(exist_ok=True)
        (self.out / "conditioning").mkdir(exist_ok=True)

        finals = {}
        if resume:
            fingerprint, finals = audit_journal(journal_path)
            if fingerprint != cfg.fingerprint():
                raise PipelineError(
                    "checkpoint/config mismatch: the journal was written with "
                    "different pipeline settings (kind or thresholds)"
                )
            journal = Journal(journal_path, "ab")
            manifest = open(manifest_path, "ab")
        else:
            journal = Journal(journal_path, "wb")
            journal.write_header(cfg.fingerprint())
            manifest = open(manifest_path, "wb")

        out_resolved = self.out.resolve()
        todo = []
        for rid, path in ingest(cfg.corpus_root):
            if Path(path).resolve().is_relative_to(out_resolved):
                continue  # never re-ingest our own outputs
            state = finals.get(rid)
            if state is None:
                journal.write(rid, STAGE_INGEST, PENDING)
                finals[rid] = (STAGE_INGEST, PENDING, "")
                todo.append((rid, path))
            elif state[1] not in TERMINAL_STATUSES:
                todo.append((rid, path))

        processed = 0
        remote_failures = 0
        try:
            with ThreadPoolExecutor(max_workers=cfg.worker_count) as pool:
                futures = {pool.submit(self._process, rid, path): rid for rid, path in todo}
                try:
                    for fut in as_completed(futures):
                        outcome = fut.result()
                        if outcome.remote_failure is not None:
                            remote_failures += 1
                            log.warning("remote failure: %s", outcome.remote_failure)
                            if remote_failures > cfg.failure_budget:
                                raise PipelineAborted(
                                    f"aborting after {remote_failures} remote failures "
                                    f"(budget {cfg.failure_budget}); checkpoint intact"
                                )
                            continue
                        if outcome.manifest_entry is not None:
                            line = json.dumps(outcome.manifest_entry) + "\n"
                            manifest.write(line.encode())
                            manifest.flush()
                        for stage, status, reason in outcome.transitions:
                            journal.write(outcome.record.id, stage, status, reason)
                        finals[outcome.record.id] = (
                            outcome.transitions[-1][0],
                            outcome.record.status,
                            outcome.record.failure_reason or "",
                        )
                        processed += 1
                        if progress is not None:
                            progress(processed, outcome)
                except BaseException:
                    for f in futures:
                        f.cancel()
                    raise
        finally:
            manifest.close()
            journal.close()

        _canonicalize_manifest(manifest_path)
        _compact_journal(journal_path, cfg.fingerprint(), finals)
        report = self._report(cfg, finals, manifest_path, processed, time.monotonic() - start)
        (self.out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
        return report

    def _report(self, cfg, finals, manifest_path, processed, wall):
        status_counts = Counter(status for _, status, _ in finals.values())
        aesthetic_gate = STAGE_AESTHETIC
        geometry_gate = STAGE_GEOMETRY if cfg.kind == KIND_PERSPECTIVE else STAGE_GROUND
        post_aesthetic = 0
        post_geometry = 0
        for stage, status, _ in finals.values():
            past_aesthetic = (
                status in (FILTERED_GEOMETRY, ANNOTATED, EMITTED)
                or (status in (FAILED, PENDING) and stage > aesthetic_gate)
            )
            if past_aesthetic:
                post_aesthetic += 1
                if status in (ANNOTATED, EMITTED) or (
                    status in (FAILED, PENDING) and stage > geometry_gate
                ):
                    post_geometry += 1
        perspective_hist = Counter()
        box_hist = Counter()
        for entry in _iter_manifest(manifest_path):
            if "perspective" in entry:
                perspective_hist[entry["perspective"]] += 1
            if "boxes" in entry:
                box_hist[str(entry["boxes"])] += 1
        funnel = {
            "ingested": len(finals),
            "post_aesthetic": post_aesthetic,
            "post_geometry": post_geometry,
            "emitted": status_counts.get(EMITTED, 0),
        }
        return RunReport(
            kind=cfg.kind,
            funnel=funnel,
            status_counts=dict(status_counts),
            perspective_histogram=dict(perspective_hist),
            box_histogram=dict(box_hist),
            wall_time_s=wall,
            processed=processed,
        )


def _iter_manifest(path):
    path = Path(path)
    if not path.exists():
        return
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def _canonicalize_manifest(path):
    """Rewrite the manifest deduplicated by id and sorted by id."""
    by_id = {}
    for entry in _iter_manifest(path):
        by_id.setdefault(entry["id"], entry)
    with open(path, "w", encoding="utf-8") as fh:
        for rid in sorted(by_id):
            fh.write(json.dumps(by_id[rid]) + "\n")


def _compact_journal(path, fingerprint, finals):
    """Rewrite the journal with one final record per id (clean-shutdown compaction)."""
    journal = Journal(Path(path).with_suffix(".journal.tmp"), "wb")
    journal.write_header(fingerprint)
    for rid in sorted(finals):
        stage, status, reason = finals[rid]
        journal.write(rid, stage, status, reason)
    journal.close()
    Path(path).with_suffix(".journal.tmp").replace(path)


def run(config, progress=None):
    """Execute a pipeline from scratch (see module docstring)."""
    return PipelineRunner(config).run(resume=False, progress=progress)


def resume(config, progress=None):
    """Resume a checkpointed run; config must match the checkpoint fingerprint."""
    return PipelineRunner(config).run(resume=True, progress=progress)


# --- stats --------------------------------------------------------------------


@dataclass
class StatsReport:
    totals: int
    perspective_histogram: dict | None
    perspective_fractions: dict | None
    box_histogram: dict | None
    funnel: dict | None
    retention_fraction: float | None
    retention_percent: float | None
    malformed: list

    def to_dict(self):
        return {
            "totals": self.totals,
            "perspective_histogram": self.perspective_histogram,
            "perspective_fractions": self.perspective_fractions,
            "box_histogram": self.box_histogram,
            "funnel": self.funnel,
            "retention_fraction": self.retention_fraction,
            "retention_percent": self.retention_percent,
            "malformed": self.malformed,
        }


def stats(manifest_path, report_path=None):
    """Corpus statistics from a manifest plus its sibling run report.

    Malformed manifest lines are reported with their line number and skipped.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise PipelineError(f"manifest not found: {manifest_path}")
    if report_path is None:
        candidate = manifest_path.parent / "report.json"
        report_path = candidate if candidate.exists() else None

    totals = 0
    perspective_hist = Counter()
    box_hist = Counter()
    malformed = []
    with open(manifest_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                entry = json.loads(line)
                if not isinstance(entry, dict) or "id" not in entry:
                    raise ValueError("manifest entry must be an object with an 'id'")
            except ValueError as e:
                malformed.append({"line": lineno, "error": str(e)})
                continue
            totals += 1
            if "perspective" in entry:
                perspective_hist[entry["perspective"]] += 1
            if "boxes" in entry:
                box_hist[str(entry["boxes"])] += 1

    fractions = None
    if perspective_hist:
        n = sum(perspective_hist.values())
        fractions = {k: v / n for k, v in perspective_hist.items()}

    funnel = None
    retention_fraction = None
    retention_percent = None
    if report_path is not None:
        report = json.loads(Path(report_path).read_text())
        funnel = report.get("funnel")
        if funnel and funnel.get("ingested"):
            retention_fraction = funnel.get("emitted", 0) / funnel["ingested"]
            retention_percent = 100.0 * retention_fraction

    return StatsReport(
        totals=totals,
        perspective_histogram=dict(perspective_hist) or None,
        perspective_fractions=fractions,
        box_histogram=dict(box_hist) or None,
        funnel=funnel,
        retention_fraction=retention_fraction,
        retention_percent=retention_percent,
        malformed=malformed,
    )
