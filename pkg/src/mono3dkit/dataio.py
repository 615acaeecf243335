"""Readers and writers for every file format crossing the toolkit boundary.

Formats:

* KITTI object labels: 15 or 16 whitespace-separated fields per line,
  floats at 2 decimal places.  write(read(write(x))) is byte-identical.
* KITTI calibration files: "KEY: v0 v1 ..." lines; camera intrinsics are
  derived from a 3x4 projection matrix.
* Detections: JSON-lines with a schema header line, one image per record.
* Depth rasters: binary "DPR1" magic, uint32 width/height, little-endian
  float32 payload; non-finite or <= 0 values mark invalid pixels.

Readers reject malformed input instead of repairing it, and every parse
error names the file and line.  All serialization is locale-independent.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .errors import DataIOError, InvalidIntrinsicsError, ParseError
from .geometry import CameraIntrinsics
from .pseudolabel import Detection2D, DepthRaster

__all__ = [
    "KittiLabelRecord",
    "CalibRecord",
    "DetectionEntry",
    "DetectionFile",
    "DETECTION_SCHEMA",
    "DETECTION_VERSION",
    "DEPTH_MAGIC",
    "read_labels",
    "write_labels",
    "read_calib",
    "read_depth",
    "write_depth",
    "read_detections",
    "write_detections",
]

DETECTION_SCHEMA = "mono3dkit-detections"
DETECTION_VERSION = 1
DEPTH_MAGIC = b"DPR1"


@dataclass(frozen=True)
class KittiLabelRecord:
    """One line of a KITTI object label file."""

    type: str
    truncated: float
    occluded: int
    alpha: float
    left: float
    top: float
    right: float
    bottom: float
    h: float
    w: float
    l: float
    x: float
    y: float
    z: float
    rotation_y: float
    score: Optional[float] = None


def _parse_float(token: str, path, lineno, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"bad {what} value {token!r}", path=path, line=lineno) from None


def _parse_label_line(line: str, path, lineno: int) -> KittiLabelRecord:
    fields = line.split()
    if len(fields) not in (15, 16):
        raise ParseError(f"expected 15 or 16 fields, got {len(fields)}", path=path, line=lineno)
    occ = _parse_float(fields[2], path, lineno, "occluded")
    if not occ.is_integer():
        raise ParseError(f"occluded must be an integer, got {fields[2]!r}", path=path, line=lineno)
    values = [_parse_float(fields[i], path, lineno, f"field {i}") for i in range(3, 15)]
    score = _parse_float(fields[15], path, lineno, "score") if len(fields) == 16 else None
    return KittiLabelRecord(
        type=fields[0],
        truncated=_parse_float(fields[1], path, lineno, "truncated"),
        occluded=int(occ),
        alpha=values[0],
        left=values[1],
        top=values[2],
        right=values[3],
        bottom=values[4],
        h=values[5],
        w=values[6],
        l=values[7],
        x=values[8],
        y=values[9],
        z=values[10],
        rotation_y=values[11],
        score=score,
    )


def format_label_line(rec: KittiLabelRecord) -> str:
    line = (
        f"{rec.type} {rec.truncated:.2f} {rec.occluded:d} {rec.alpha:.2f} "
        f"{rec.left:.2f} {rec.top:.2f} {rec.right:.2f} {rec.bottom:.2f} "
        f"{rec.h:.2f} {rec.w:.2f} {rec.l:.2f} "
        f"{rec.x:.2f} {rec.y:.2f} {rec.z:.2f} {rec.rotation_y:.2f}"
    )
    if rec.score is not None:
        line += f" {rec.score:.2f}"
    return line


def read_labels(path) -> List[KittiLabelRecord]:
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except OSError as exc:
        raise DataIOError(f"cannot read label file {path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        records.append(_parse_label_line(line, path, lineno))
    return records


def write_labels(records, path) -> None:
    path = Path(path)
    body = "".join(format_label_line(rec) + "\n" for rec in records)
    try:
        path.write_text(body, encoding="ascii")
    except OSError as exc:
        raise DataIOError(f"cannot write label file {path}: {exc}") from exc


@dataclass(frozen=True)
class CalibRecord:
    """Named 3x4 projection matrices from a KITTI calibration file."""

    projections: Dict[str, np.ndarray]

    def intrinsics(self, width: int, height: int, camera: str = "P2") -> CameraIntrinsics:
        """Pinhole intrinsics of one camera at a known image size."""
        if camera not in self.projections:
            raise DataIOError(f"calibration has no {camera} entry")
        p = self.projections[camera]
        fx, fy = float(p[0, 0]), float(p[1, 1])
        if fx <= 0 or fy <= 0:
            raise InvalidIntrinsicsError(f"non-positive focal length in {camera}: fx={fx}, fy={fy}")
        return CameraIntrinsics(fx=fx, fy=fy, cx=float(p[0, 2]), cy=float(p[1, 2]), width=width, height=height)


def read_calib(path) -> CalibRecord:
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except OSError as exc:
        raise DataIOError(f"cannot read calib file {path}: {exc}") from exc
    projections = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if ":" not in line:
            raise ParseError("expected 'KEY: values' line", path=path, line=lineno)
        key, _, rest = line.partition(":")
        values = [_parse_float(tok, path, lineno, key.strip()) for tok in rest.split()]
        if len(values) == 12:
            projections[key.strip()] = np.array(values, dtype=float).reshape(3, 4)
    if not projections:
        raise ParseError("no 3x4 projection entries found", path=path)
    return CalibRecord(projections=projections)


def read_depth(path) -> DepthRaster:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read depth file {path}: {exc}") from exc
    header = len(DEPTH_MAGIC) + 8
    if len(blob) < header:
        raise DataIOError(f"{path}: truncated header ({len(blob)} bytes)")
    if blob[: len(DEPTH_MAGIC)] != DEPTH_MAGIC:
        raise DataIOError(f"{path}: bad magic {blob[:len(DEPTH_MAGIC)]!r}")
    width, height = struct.unpack_from("<II", blob, len(DEPTH_MAGIC))
    if width == 0 or height == 0:
        raise DataIOError(f"{path}: zero raster dimension {width}x{height}")
    expected = width * height * 4
    payload = len(blob) - header
    if payload != expected:
        raise DataIOError(f"{path}: payload is {payload} bytes, expected {expected} for {width}x{height}")
    values = np.frombuffer(blob, dtype="<f4", count=width * height, offset=header)
    return DepthRaster.from_values(values.reshape(height, width).astype(np.float64))


def write_depth(values, path) -> None:
    """Write a depth raster; encode invalid pixels as NaN (or <= 0) values."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"depth raster must be 2-d, got shape {arr.shape}")
    height, width = arr.shape
    blob = DEPTH_MAGIC + struct.pack("<II", width, height) + arr.astype("<f4").tobytes()
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise DataIOError(f"cannot write depth file {path}: {exc}") from exc


@dataclass(frozen=True)
class DetectionEntry:
    """One detection of one image, with an optional yaw estimate."""

    detection: Detection2D
    yaw: Optional[float] = None


@dataclass(frozen=True)
class DetectionFile:
    """Parsed detection interchange file: schema version + per-image lists."""

    version: int
    images: Dict[str, List[DetectionEntry]]


def _parse_detection_obj(obj, path, lineno) -> DetectionEntry:
    if not isinstance(obj, dict):
        raise ParseError("detection must be a JSON object", path=path, line=lineno)
    unknown = set(obj) - {"class", "bbox", "score", "yaw"}
    if unknown:
        raise ParseError(f"unknown detection keys {sorted(unknown)}", path=path, line=lineno)
    for key in ("class", "bbox", "score"):
        if key not in obj:
            raise ParseError(f"detection missing {key!r}", path=path, line=lineno)
    bbox = obj["bbox"]
    if not (isinstance(bbox, list) and len(bbox) == 4):
        raise ParseError("bbox must be [left, top, right, bottom]", path=path, line=lineno)
    left, top, right, bottom = (float(v) for v in bbox)
    if not (left < right and top < bottom):
        raise ParseError(f"bbox edges out of order: {bbox}", path=path, line=lineno)
    score = float(obj["score"])
    if not (0.0 <= score <= 1.0):
        raise ParseError(f"score {score} outside [0, 1]", path=path, line=lineno)
    det = Detection2D(
        class_id=str(obj["class"]), left=left, top=top, right=right, bottom=bottom, score=score
    )
    yaw = obj.get("yaw")
    return DetectionEntry(detection=det, yaw=None if yaw is None else float(yaw))


def read_detections(path) -> DetectionFile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"cannot read detection file {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise ParseError("missing schema header line", path=path, line=1)

    def load(lineno, line):
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", path=path, line=lineno) from None

    header = load(1, lines[0])
    if not isinstance(header, dict) or header.get("schema") != DETECTION_SCHEMA:
        raise ParseError(f"first line must declare schema {DETECTION_SCHEMA!r}", path=path, line=1)
    version = header.get("version")
    if version != DETECTION_VERSION:
        raise ParseError(f"unsupported schema version {version!r}", path=path, line=1)

    images: Dict[str, List[DetectionEntry]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        record = load(lineno, line)
        if not isinstance(record, dict):
            raise ParseError("image record must be a JSON object", path=path, line=lineno)
        unknown = set(record) - {"image", "detections"}
        if unknown:
            raise ParseError(f"unknown record keys {sorted(unknown)}", path=path, line=lineno)
        if "image" not in record or "detections" not in record:
            raise ParseError("record needs 'image' and 'detections'", path=path, line=lineno)
        image = str(record["image"])
        if image in images:
            raise ParseError(f"duplicate image id {image!r}", path=path, line=lineno)
        dets = record["detections"]
        if not isinstance(dets, list):
            raise ParseError("'detections' must be a list", path=path, line=lineno)
        images[image] = [_parse_detection_obj(obj, path, lineno) for obj in dets]
    return DetectionFile(version=version, images=images)


def write_detections(images: Dict[str, List[DetectionEntry]], path) -> None:
    lines = [json.dumps({"schema": DETECTION_SCHEMA, "version": DETECTION_VERSION})]
    for image in images:
        dets = []
        for entry in images[image]:
            d = entry.detection
            obj = {
                "class": d.class_id,
                "bbox": [d.left, d.top, d.right, d.bottom],
                "score": d.score,
            }
            if entry.yaw is not None:
                obj["yaw"] = entry.yaw
            dets.append(obj)
        lines.append(json.dumps({"image": image, "detections": dets}))
    try:
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"cannot write detection file {path}: {exc}") from exc
