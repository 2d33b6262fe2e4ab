"""Remote-inference clients for the annotation services.

Three HTTP endpoints with one wire convention: POST JSON carrying a base64
image, JSON back.  Transport failures and 5xx responses are retried with
exponential backoff; 4xx and malformed payloads are terminal.  The services
are consumed as black boxes; any model server honouring the shim protocol
plugs in.
"""

import base64
import logging
import threading
import time
from dataclasses import dataclass

import requests

from .conditioning import BoundingBox, SceneSpecError

DEFAULT_BOX_THRESHOLD = 0.35


class ClientError(Exception):
    """Base class for annotation-service client failures."""


class RemoteUnavailable(ClientError):
    """Transport failure or 5xx persisting through the retry budget."""


class ProtocolError(ClientError):
    """The service answered, but not in the agreed protocol (or 4xx)."""


@dataclass(frozen=True)
class ServiceEndpoint:
    base_url: str
    timeout: float = 10.0
    max_retries: int = 3
    backoff_base: float = 0.25
    token: str | None = None
    max_concurrent: int = 8

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class CaptionPair:
    short: str
    detailed: str


@dataclass(frozen=True)
class GroundedBox:
    box: BoundingBox
    phrase: str
    confidence: float


class AnnotationClient:
    """Thread-safe client for one endpoint, enforcing a concurrent-request cap."""

    def __init__(self, endpoint, sleep=time.sleep):
        self.endpoint = endpoint
        self._sem = threading.BoundedSemaphore(endpoint.max_concurrent)
        self._sleep = sleep

    def post(self, path, payload):
        ep = self.endpoint
        url = ep.base_url.rstrip("/") + path
        headers = {}
        if ep.token:
            headers["Authorization"] = f"Bearer {ep.token}"
        last_failure = None
        for attempt in range(ep.max_retries + 1):
            if attempt > 0:
                # Exponential backoff: delays never decrease across retries.
                self._sleep(ep.backoff_base * (2.0 ** (attempt - 1)))
            with self._sem:
                try:
                    resp = requests.post(url, json=payload, timeout=ep.timeout, headers=headers)
                except requests.RequestException as e:
                    last_failure = f"transport error: {e}"
                    continue
            if resp.status_code >= 500:
                last_failure = f"server error {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise ProtocolError(f"{url} answered {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as e:
                raise ProtocolError(f"{url} returned non-JSON payload: {e}") from e
        raise RemoteUnavailable(
            f"{url} unavailable after {ep.max_retries + 1} attempts ({last_failure})"
        )


_shared = {}
_shared_lock = threading.Lock()


def _client_for(endpoint):
    if isinstance(endpoint, AnnotationClient):
        return endpoint
    with _shared_lock:
        client = _shared.get(endpoint)
        if client is None:
            client = AnnotationClient(endpoint)
            _shared[endpoint] = client
        return client


def _image_payload(image_bytes):
    return {"image": base64.b64encode(image_bytes).decode("ascii")}


def score_aesthetic(endpoint, image_bytes):
    """Scalar aesthetic score for an encoded image."""
    data = _client_for(endpoint).post("/aesthetic", _image_payload(image_bytes))
    score = data.get("score") if isinstance(data, dict) else None
    if not isinstance(score, (int, float)) or isinstance(score, bool):
        raise ProtocolError(f"aesthetic payload lacks a numeric 'score': {data!r}")
    return float(score)


def caption(endpoint, image_bytes):
    """Short (prompt) and detailed captions for an encoded image."""
    data = _client_for(endpoint).post("/caption", _image_payload(image_bytes))
    if not isinstance(data, dict):
        raise ProtocolError(f"caption payload is not an object: {data!r}")
    for key in ("short", "detailed"):
        value = data.get(key)
        if not isinstance(value, str) or not value:
            raise ProtocolError(f"caption payload lacks a non-empty '{key}' field")
    return CaptionPair(short=data["short"], detailed=data["detailed"])


def ground(endpoint, image_bytes, detailed_caption, box_threshold=DEFAULT_BOX_THRESHOLD):
    """Grounded boxes for caption phrases, filtered by confidence.

    Coordinates are clipped to [0, 1]; boxes degenerate after clipping are
    dropped with a warning rather than failing the call.  An empty list is a
    valid success.
    """
    if not 0.0 <= box_threshold <= 1.0:
        raise ValueError("box_threshold must lie in [0, 1]")
    payload = _image_payload(image_bytes)
    payload["caption"] = detailed_caption
    payload["box_threshold"] = box_threshold
    data = _client_for(endpoint).post("/ground", payload)
    raw = data.get("boxes") if isinstance(data, dict) else None
    if not isinstance(raw, list):
        raise ProtocolError(f"ground payload lacks a 'boxes' list: {data!r}")
    out = []
    for i, obj in enumerate(raw):
        if not isinstance(obj, dict):
            raise ProtocolError(f"ground box {i} is not an object: {obj!r}")
        try:
            coords = [float(obj[k]) for k in ("x0", "y0", "x1", "y1")]
            confidence = float(obj["confidence"])
            phrase = obj.get("phrase", "")
        except (KeyError, TypeError, ValueError) as e:
            raise ProtocolError(f"ground box {i} malformed: {e}") from e
        if not 0.0 <= confidence <= 1.0:
            raise ProtocolError(f"ground box {i} confidence {confidence} outside [0, 1]")
        if confidence < box_threshold:
            continue
        x0, y0, x1, y1 = (min(1.0, max(0.0, c)) for c in coords)
        try:
            box = BoundingBox(x0, y0, x1, y1, label=str(phrase))
        except SceneSpecError:
            logging.getLogger(__name__).warning(
                "dropping degenerate grounded box %d: (%g, %g, %g, %g)", i, x0, y0, x1, y1
            )
            continue
        out.append(GroundedBox(box=box, phrase=str(phrase), confidence=confidence))
    return out
