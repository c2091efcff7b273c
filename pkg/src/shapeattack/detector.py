"""Query-only detector oracle.

Two backends share one call signature:

``mock``
    Deterministic darkness-coverage detector. Each registered target box
    yields one detection whose objectness drops linearly with the fraction
    of dark pixels inside the box.
``remote``
    JSON over HTTP. ``POST <endpoint>/detect`` with::

        {"width": W, "height": H, "channels": C,
         "image": "<base64 PNG>", "image_id": "<optional str>"}

    and the reply::

        {"detections": [{"bbox": [x1, y1, x2, y2], "objectness": float,
                         "class_id": int, "class_score": float}, ...]}

    Boxes are pixel coordinates of the submitted frame. ``image_id`` is a
    hint that real detectors ignore; the bundled mock server uses it to look
    up registered targets.
"""
from __future__ import annotations

import base64
import json
import logging
import os
import socket
import threading
import urllib.error
import urllib.request
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (InvalidParameterError, OracleResponseError, OracleTimeoutError,
                     OracleTransportError)
from .imaging import as_frame, decode_png, encode_png, frame_size, scale_box

logger = logging.getLogger(__name__)

MOCK = "mock"
REMOTE = "remote"
ENDPOINT_ENV = "SHAPEATTACK_ENDPOINT"

Box = tuple  # (x1, y1, x2, y2)


@dataclass(frozen=True)
class Detection:
    bbox: tuple
    objectness: float
    class_id: int = 0
    class_score: float = 1.0

    def __post_init__(self):
        x1, y1, x2, y2 = (float(v) for v in self.bbox)
        if not (x1 < x2 and y1 < y2):
            raise InvalidParameterError(f"bbox must satisfy x1<x2, y1<y2: {self.bbox}")
        for name in ("objectness", "class_score"):
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise InvalidParameterError(f"{name} must be in [0, 1], got {v}")
        object.__setattr__(self, "bbox", tuple(self.bbox))

    def to_dict(self) -> dict:
        return {"bbox": list(self.bbox), "objectness": float(self.objectness),
                "class_id": int(self.class_id), "class_score": float(self.class_score)}

    @classmethod
    def from_dict(cls, d: dict) -> "Detection":
        bbox = d["bbox"]
        if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
            raise InvalidParameterError(f"bbox must have 4 numbers: {bbox!r}")
        return cls(tuple(bbox), float(d["objectness"]), int(d.get("class_id", 0)),
                   float(d.get("class_score", 1.0)))


@dataclass(frozen=True)
class OracleConfig:
    backend: str = MOCK
    endpoint: Optional[str] = None
    mock_beta: float = 2.0
    mock_dark_threshold: float = 64
    timeout: float = 10.0
    retries: int = 3

    def __post_init__(self):
        if self.backend not in (MOCK, REMOTE):
            raise InvalidParameterError(f"unknown oracle backend {self.backend!r}")
        if self.backend == REMOTE and not self.endpoint:
            endpoint = os.environ.get(ENDPOINT_ENV)
            if not endpoint:
                raise InvalidParameterError("remote oracle needs an endpoint")
            object.__setattr__(self, "endpoint", endpoint)
        if not self.mock_beta > 0:
            raise InvalidParameterError("mock_beta must be positive")
        if not 0 <= self.mock_dark_threshold <= 255:
            raise InvalidParameterError("mock_dark_threshold must be in [0, 255]")
        if self.retries < 0:
            raise InvalidParameterError("retries must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


class QueryLedger:
    """Thread-safe count of successful oracle forward passes."""

    def __init__(self, count: int = 0):
        self._count = count
        self._lock = threading.Lock()

    @property
    def count(self) -> int:
        return self._count

    def increment(self, n: int = 1) -> int:
        with self._lock:
            self._count += n
            return self._count

    def __repr__(self) -> str:
        return f"QueryLedger(count={self._count})"


@dataclass
class TargetRegistry:
    """Targets the mock detector knows about, per image id.

    Boxes are stored at the resolution they were annotated at and rescaled
    to whatever frame size is queried, so resampled frames still locate
    their target.
    """

    entries: dict = field(default_factory=dict)

    def register(self, image_id: Optional[str], size: tuple[int, int], boxes: Sequence[Box]):
        self.entries[image_id] = (tuple(size), [tuple(b) for b in boxes])
        return self

    @classmethod
    def single(cls, size: tuple[int, int], boxes: Sequence[Box]) -> "TargetRegistry":
        return cls().register(None, size, boxes)

    def boxes_for(self, frame: np.ndarray, image_id: Optional[str] = None) -> list[Box]:
        entry = self.entries.get(image_id)
        if entry is None:
            entry = self.entries.get(None)
        if entry is None:
            return []
        size, boxes = entry
        dst = frame_size(frame)
        if dst == size:
            return [tuple(int(v) for v in b) for b in boxes]
        return [scale_box(b, size, dst) for b in boxes]


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union) if union > 0 else 0.0


def dark_fraction(frame: np.ndarray, target_bbox: Sequence[float], dark_threshold: float) -> float:
    """Fraction of box pixels whose mean channel intensity is below ``dark_threshold``."""
    frame = as_frame(frame)
    h, w = frame.shape[:2]
    x1, y1, x2, y2 = (int(v) for v in target_bbox)
    x1, y1, x2, y2 = max(0, x1), max(0, y1), min(w, x2), min(h, y2)
    if x2 <= x1 or y2 <= y1:
        raise InvalidParameterError(f"empty target box {tuple(target_bbox)} on {w}x{h} frame")
    region = frame[y1:y2, x1:x2].astype(np.float64).mean(axis=2)
    return float(np.count_nonzero(region < dark_threshold)) / region.size


def mock_objectness(frame: np.ndarray, target_bbox: Sequence[float], config: OracleConfig) -> float:
    d = dark_fraction(frame, target_bbox, config.mock_dark_threshold)
    return float(min(1.0, max(0.0, 1.0 - config.mock_beta * d)))


def mock_detect(frame: np.ndarray, config: OracleConfig,
                registry: Optional[TargetRegistry] = None,
                image_id: Optional[str] = None) -> list[Detection]:
    if registry is None:
        return []
    out = []
    for box in registry.boxes_for(frame, image_id):
        obj = mock_objectness(frame, box, config)
        if obj > 0.0:
            out.append(Detection(tuple(box), obj, 0, 1.0))
    return out


# -- wire protocol -------------------------------------------------------------

def encode_request(frame: np.ndarray, image_id: Optional[str] = None) -> dict:
    frame = as_frame(frame)
    body = {"width": int(frame.shape[1]), "height": int(frame.shape[0]),
            "channels": int(frame.shape[2]),
            "image": base64.b64encode(encode_png(frame)).decode("ascii")}
    if image_id is not None:
        body["image_id"] = str(image_id)
    return body


def decode_request(body: dict) -> tuple[np.ndarray, Optional[str]]:
    """Server side: recover the frame, checking the declared dimensions."""
    try:
        frame = decode_png(base64.b64decode(body["image"], validate=True))
        w, h = int(body["width"]), int(body["height"])
    except (KeyError, TypeError, ValueError, OSError) as exc:
        raise InvalidParameterError(f"bad detect request: {exc}") from exc
    if frame_size(frame) != (w, h):
        raise InvalidParameterError(
            f"declared size {w}x{h} does not match image {frame.shape[1]}x{frame.shape[0]}"
        )
    return frame, body.get("image_id")


def encode_response(detections: Sequence[Detection]) -> dict:
    return {"detections": [d.to_dict() for d in detections]}


def decode_response(doc) -> list[Detection]:
    try:
        items = doc["detections"]
        if not isinstance(items, list):
            raise TypeError("detections is not a list")
        return [Detection.from_dict(d) for d in items]
    except (KeyError, TypeError, ValueError) as exc:
        raise OracleResponseError(f"malformed detector response: {exc}") from exc


def remote_detect(frame: np.ndarray, config: OracleConfig,
                  image_id: Optional[str] = None) -> list[Detection]:
    url = config.endpoint.rstrip("/") + "/detect"
    data = json.dumps(encode_request(frame, image_id)).encode("utf-8")
    req = urllib.request.Request(url, data=data, method="POST",
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=config.timeout) as resp:
            raw = resp.read()
    except urllib.error.HTTPError as exc:
        raise OracleTransportError(f"{url}: HTTP {exc.code}") from exc
    except urllib.error.URLError as exc:
        if isinstance(exc.reason, (socket.timeout, TimeoutError)):
            raise OracleTimeoutError(f"{url}: timed out after {config.timeout}s") from exc
        raise OracleTransportError(f"{url}: {exc.reason}") from exc
    except (socket.timeout, TimeoutError) as exc:
        raise OracleTimeoutError(f"{url}: timed out after {config.timeout}s") from exc
    except OSError as exc:
        raise OracleTransportError(f"{url}: {exc}") from exc
    try:
        doc = json.loads(raw)
    except ValueError as exc:
        raise OracleResponseError(f"{url}: response is not JSON") from exc
    return decode_response(doc)


def query(frame: np.ndarray, config: OracleConfig, ledger: QueryLedger,
          registry: Optional[TargetRegistry] = None,
          image_id: Optional[str] = None) -> list[Detection]:
    """One forward pass. The ledger is charged only when detections come back."""
    if config.backend == MOCK:
        dets = mock_detect(as_frame(frame), config, registry, image_id)
    else:
        dets = remote_detect(frame, config, image_id)
    ledger.increment()
    return dets


def match_target(detections: Sequence[Detection], target_bbox: Sequence[float],
                 iou_threshold: float = 0.5) -> float:
    """Highest objectness among detections overlapping the target; 0.0 if it vanished."""
    if not 0.0 < iou_threshold <= 1.0:
        raise InvalidParameterError("iou_threshold must be in (0, 1]")
    best = 0.0
    for det in detections:
        if iou(det.bbox, target_bbox) >= iou_threshold:
            best = max(best, float(det.objectness))
    return best
