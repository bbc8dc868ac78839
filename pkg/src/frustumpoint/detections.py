"""2D detection data model, CSV wire format, and the oversized-box filter.

Wire format: one record per line,
``frame_id,camera_id,class_id,score,x_min,y_min,x_max,y_max`` with an
optional header line recognized by the literal prefix ``frame_id``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import FrustumPointError, ParseError
from .geometry import Intrinsics

__all__ = [
    "COCO_CLASS_NAMES",
    "NUM_CLASSES",
    "BBox",
    "Detection",
    "DetectionSet",
    "DetectionError",
    "class_name",
    "parse_detections",
    "serialize_detections",
    "filter_oversized",
]

# The standard 80-class COCO label set, in detector output order.
COCO_CLASS_NAMES: tuple[str, ...] = (
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train",
    "truck", "boat", "traffic light", "fire hydrant", "stop sign",
    "parking meter", "bench", "bird", "cat", "dog", "horse", "sheep", "cow",
    "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella", "handbag",
    "tie", "suitcase", "frisbee", "skis", "snowboard", "sports ball", "kite",
    "baseball bat", "baseball glove", "skateboard", "surfboard",
    "tennis racket", "bottle", "wine glass", "cup", "fork", "knife", "spoon",
    "bowl", "banana", "apple", "sandwich", "orange", "broccoli", "carrot",
    "hot dog", "pizza", "donut", "cake", "chair", "couch", "potted plant",
    "bed", "dining table", "toilet", "tv", "laptop", "mouse", "remote",
    "keyboard", "cell phone", "microwave", "oven", "toaster", "sink",
    "refrigerator", "book", "clock", "vase", "scissors", "teddy bear",
    "hair drier", "toothbrush",
)
NUM_CLASSES = len(COCO_CLASS_NAMES)

_HEADER = "frame_id,camera_id,class_id,score,x_min,y_min,x_max,y_max"


class DetectionError(FrustumPointError):
    """A detection violates an invariant outside of CSV parsing."""


def class_name(class_id: int) -> str:
    """Standard COCO name for a class id in [0, 80)."""
    if not 0 <= class_id < NUM_CLASSES:
        raise DetectionError(f"class_id {class_id} outside [0, {NUM_CLASSES})")
    return COCO_CLASS_NAMES[class_id]


@dataclass(frozen=True)
class BBox:
    """Axis-aligned 2D box in continuous pixel coordinates."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise DetectionError(
                f"degenerate box ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def contains(self, u: float, v: float) -> bool:
        """Half-open containment: x_min <= u < x_max, y_min <= v < y_max."""
        return self.x_min <= u < self.x_max and self.y_min <= v < self.y_max


@dataclass(frozen=True)
class Detection:
    """One 2D detection bound to a frame and camera."""

    frame_id: int
    camera_id: int
    class_id: int
    score: float
    box: BBox

    def __post_init__(self):
        for name in ("frame_id", "camera_id", "class_id"):
            object.__setattr__(self, name, int(getattr(self, name)))
        object.__setattr__(self, "score", float(self.score))
        if not 0 <= self.class_id < NUM_CLASSES:
            raise DetectionError(f"class_id {self.class_id} outside [0, {NUM_CLASSES})")
        if not 0.0 <= self.score <= 1.0:
            raise DetectionError(f"score {self.score} outside [0, 1]")


class DetectionSet:
    """Detections grouped by (frame_id, camera_id), preserving input order.

    The groups partition the input list; iteration yields detections in the
    order they were parsed.
    """

    def __init__(self, detections: Iterable[Detection]):
        self._detections = tuple(detections)
        groups: dict[tuple[int, int], list[Detection]] = {}
        by_frame: dict[int, list[Detection]] = {}
        for det in self._detections:
            groups.setdefault((det.frame_id, det.camera_id), []).append(det)
            by_frame.setdefault(det.frame_id, []).append(det)
        self._groups = {key: tuple(dets) for key, dets in groups.items()}
        self._by_frame = {fid: tuple(dets) for fid, dets in by_frame.items()}

    def __len__(self) -> int:
        return len(self._detections)

    def __iter__(self) -> Iterator[Detection]:
        return iter(self._detections)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DetectionSet):
            return NotImplemented
        return self._detections == other._detections

    def __hash__(self):
        return hash(self._detections)

    @property
    def detections(self) -> tuple[Detection, ...]:
        return self._detections

    def group(self, frame_id: int, camera_id: int) -> tuple[Detection, ...]:
        return self._groups.get((frame_id, camera_id), ())

    def frame_group(self, frame_id: int) -> tuple[Detection, ...]:
        """All detections of one frame across cameras, in input order."""
        return self._by_frame.get(frame_id, ())

    def frame_ids(self) -> tuple[int, ...]:
        """Distinct frame ids in first-appearance order."""
        return tuple(self._by_frame.keys())

    def groups(self) -> Mapping[tuple[int, int], tuple[Detection, ...]]:
        return dict(self._groups)


def _parse_line(line: str, lineno: int) -> Detection:
    fields = line.split(",")
    if len(fields) != 8:
        raise ParseError(f"expected 8 fields, got {len(fields)}", line=lineno)
    try:
        frame_id = int(fields[0])
        camera_id = int(fields[1])
        class_id = int(fields[2])
    except ValueError:
        raise ParseError(f"non-integer id field in {line!r}", line=lineno) from None
    try:
        score = float(fields[3])
        coords = [float(f) for f in fields[4:8]]
    except ValueError:
        raise ParseError(f"non-numeric field in {line!r}", line=lineno) from None
    if not 0 <= class_id < NUM_CLASSES:
        raise ParseError(f"class_id {class_id} outside [0, {NUM_CLASSES})", line=lineno)
    if not 0.0 <= score <= 1.0:
        raise ParseError(f"score {score} outside [0, 1]", line=lineno)
    try:
        box = BBox(*coords)
        return Detection(frame_id, camera_id, class_id, score, box)
    except DetectionError as exc:
        raise ParseError(str(exc), line=lineno) from None


def parse_detections(source: str | Iterable[str]) -> DetectionSet:
    """Parse the detections CSV from a string or an iterable of lines."""
    lines = source.splitlines() if isinstance(source, str) else source
    dets: list[Detection] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if lineno == 1 and line.startswith("frame_id"):
            continue
        dets.append(_parse_line(line, lineno))
    return DetectionSet(dets)


def serialize_detections(dset: DetectionSet | Sequence[Detection], header: bool = True) -> str:
    """Render detections back to the CSV wire format (round-trips exactly)."""
    lines = [_HEADER] if header else []
    for d in dset:
        b = d.box
        lines.append(
            f"{d.frame_id},{d.camera_id},{d.class_id},{d.score!r},"
            f"{b.x_min!r},{b.y_min!r},{b.x_max!r},{b.y_max!r}"
        )
    return "\n".join(lines) + "\n"


def filter_oversized(
    dset: DetectionSet,
    intr_by_camera: Mapping[int, Intrinsics],
    ratio: float = 0.25,
) -> DetectionSet:
    """Drop detections whose box area exceeds ``ratio`` of their camera's
    image area (strictly greater; a box of exactly the threshold survives).
    """
    if not 0.0 < ratio <= 1.0:
        raise DetectionError(f"ratio {ratio} outside (0, 1]")
    kept = []
    for det in dset:
        try:
            intr = intr_by_camera[det.camera_id]
        except KeyError:
            raise DetectionError(f"unknown camera_id {det.camera_id} in detection") from None
        if det.box.area > ratio * intr.width * intr.height:
            continue
        kept.append(det)
    return DetectionSet(kept)
