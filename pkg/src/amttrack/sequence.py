"""Sequence directory layout shared by the generator, tracker and evaluator.

::

    <seq>/rgb/000000.ppm ...   RGB frames
    <seq>/events.csv           t_us,x,y,p per line
    <seq>/groundtruth.txt      cx,cy,w,h per frame (all zeros = absent)
    <seq>/attributes.txt       attribute codes, one per line
    <seq>/meta.json            width, height, dt_us, frame_count
"""

from dataclasses import dataclass, field
import json
from pathlib import Path

import numpy as np

from .boxes import BBox
from .events import (
    DEFAULT_DT_US,
    SENSOR_HEIGHT,
    SENSOR_WIDTH,
    EventStream,
    load_rgb,
    parse_events,
    stack_events,
)
from .exceptions import ParseError, ValidationError

ATTRIBUTES = {
    "ST": "small target",
    "OE": "over exposure",
    "IV": "illumination variation",
    "NMO": "no motion",
    "ARC": "aspect ratio change",
    "BI": "background influence",
    "SV": "scale variation",
    "POC": "partial occlusion",
    "OV": "out of view",
    "LI": "low illumination",
    "FOC": "full occlusion",
    "DEF": "deformation",
    "VT": "view transformation",
    "FM": "fast motion",
}


def check_attributes(codes):
    unknown = [c for c in codes if c not in ATTRIBUTES]
    if unknown:
        raise ValidationError(f"unknown attribute code(s): {', '.join(unknown)}")
    return list(codes)


def format_float(v):
    """Shortest text that parses back to the same float."""
    return repr(float(v))


def format_boxes(rows):
    return "".join(",".join(format_float(v) for v in row) + "\n" for row in rows)


def parse_rows(path, ncols):
    rows = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.replace("\t", ",").split(",")
        if len(parts) != ncols:
            raise ParseError(f"expected {ncols} comma-separated values, got {len(parts)}", lineno)
        try:
            rows.append([float(v) for v in parts])
        except ValueError:
            raise ParseError(f"non-numeric value in {line!r}", lineno) from None
    return np.array(rows, dtype=np.float64).reshape(-1, ncols)


def read_groundtruth(path):
    """``(n, 4)`` array of ``cx, cy, w, h``; all-zero rows mark absent frames."""
    return parse_rows(path, 4)


def write_groundtruth(path, boxes):
    Path(path).write_text(format_boxes(np.asarray(boxes, dtype=np.float64).reshape(-1, 4)), encoding="utf-8")


def read_predictions(path):
    """Prediction file: ``cx, cy, w, h, score`` per frame. Returns (boxes, scores)."""
    rows = parse_rows(path, 5)
    return rows[:, :4], rows[:, 4]


def write_predictions(path, boxes, scores):
    rows = np.column_stack([np.asarray(boxes, dtype=np.float64).reshape(-1, 4), np.asarray(scores, dtype=np.float64)])
    Path(path).write_text(format_boxes(rows), encoding="utf-8")


def read_attributes(path):
    path = Path(path)
    if not path.exists():
        return []
    codes = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    return check_attributes(codes)


@dataclass
class SequenceMeta:
    width: int = SENSOR_WIDTH
    height: int = SENSOR_HEIGHT
    dt_us: int = DEFAULT_DT_US
    frame_count: int = 0

    @classmethod
    def load(cls, path):
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        unknown = set(raw) - {"width", "height", "dt_us", "frame_count"}
        if unknown:
            raise ValidationError(f"unknown meta.json keys: {sorted(unknown)}")
        return cls(**{k: int(v) for k, v in raw.items()})

    def dump(self, path):
        Path(path).write_text(json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass
class Sequence:
    """A sequence directory opened for one-pass reading."""

    root: Path
    meta: SequenceMeta
    groundtruth: np.ndarray
    attributes: list = field(default_factory=list)
    _events: EventStream = None

    @classmethod
    def open(cls, root):
        root = Path(root)
        meta = SequenceMeta.load(root / "meta.json")
        gt = read_groundtruth(root / "groundtruth.txt")
        return cls(root, meta, gt, read_attributes(root / "attributes.txt"))

    @property
    def name(self):
        return self.root.name

    def __len__(self):
        return self.meta.frame_count

    @property
    def events(self):
        if self._events is None:
            path = self.root / "events.csv"
            self._events = parse_events(path, self.meta.width, self.meta.height) if path.exists() else EventStream.empty()
        return self._events

    def rgb_path(self, i):
        return self.root / "rgb" / f"{i:06d}.ppm"

    def init_box(self):
        return BBox.from_array(self.groundtruth[0]) if len(self.groundtruth) else None

    def frames(self):
        """Yield ``(index, rgb, event_frame)`` in order; frame ``i`` only sees events before ``(i + 1) * dt``."""
        m = self.meta
        for i in range(m.frame_count):
            rgb = load_rgb(self.rgb_path(i))
            ev = stack_events(self.events, i * m.dt_us, m.dt_us, m.width, m.height)
            yield i, rgb, ev
