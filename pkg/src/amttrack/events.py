"""Event-stream and RGB frame ingestion.

Events are stored column-wise in :class:`EventStream` (timestamps in
microseconds, pixel column ``x``, pixel row ``y``, polarity ``p`` in {-1, +1}).
Images are float64 ``H x W x 3`` arrays with values in [0, 1].
"""

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple
import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import FormatError, OrderingError, ParameterError, ParseError

SENSOR_WIDTH = 346
SENSOR_HEIGHT = 260
DEFAULT_DT_US = 33_333


class Event(NamedTuple):
    t: int
    x: int
    y: int
    p: int


@dataclass
class EventStream:
    """Time-ordered events held as parallel int64 columns."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64)
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=np.int64)

    @classmethod
    def empty(cls):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), z.copy(), z.copy())

    @classmethod
    def from_events(cls, events):
        events = list(events)
        if not events:
            return cls.empty()
        t, x, y, p = zip(*events)
        return cls(t, x, y, p)

    @classmethod
    def concat(cls, streams):
        streams = [s for s in streams if len(s)]
        if not streams:
            return cls.empty()
        return cls(*(np.concatenate([getattr(s, f) for s in streams]) for f in "txyp"))

    def __len__(self):
        return int(self.t.shape[0])

    def __getitem__(self, i):
        if isinstance(i, slice):
            return EventStream(self.t[i], self.x[i], self.y[i], self.p[i])
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in "txyp")

    def window(self, t0, dt):
        """Events with ``t0 <= t < t0 + dt`` (requires sorted timestamps)."""
        lo = np.searchsorted(self.t, t0, side="left")
        hi = np.searchsorted(self.t, t0 + dt, side="left")
        return self[lo:hi]


def _validate_columns(t, x, y, p, width, height):
    """Index of the first invalid event and a message, or (None, None)."""
    checks = [(~np.isin(p, (-1, 1)), "polarity must be -1 or 1")]
    if width is not None:
        checks.append(((x < 0) | (x >= width), f"x outside [0, {width})"))
    if height is not None:
        checks.append(((y < 0) | (y >= height), f"y outside [0, {height})"))
    checks.append(((t < 0), "negative timestamp"))
    first = None
    for bad, msg in checks:
        idx = np.flatnonzero(bad)
        if idx.size and (first is None or idx[0] < first[0]):
            first = (int(idx[0]), msg)
    dec = np.flatnonzero(np.diff(t) < 0)
    if dec.size and (first is None or dec[0] + 1 < first[0]):
        return int(dec[0]) + 1, "timestamp decreases"
    return first if first is not None else (None, None)


def _parse_slow(lines, width, height):
    cols = [[], [], [], []]
    last_t = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise ParseError(f"expected 4 fields t_us,x,y,p, got {len(parts)}", lineno)
        try:
            t, x, y, p = (int(v) for v in parts)
        except ValueError:
            raise ParseError(f"non-integer field in {line!r}", lineno) from None
        if p not in (-1, 1):
            raise ParseError(f"polarity must be -1 or 1, got {p}", lineno)
        if t < 0:
            raise ParseError("negative timestamp", lineno)
        if (width is not None and not 0 <= x < width) or (height is not None and not 0 <= y < height):
            raise ParseError(f"pixel ({x}, {y}) outside sensor", lineno)
        if last_t is not None and t < last_t:
            raise OrderingError(f"timestamp {t} after {last_t}", lineno)
        last_t = t
        for c, v in zip(cols, (t, x, y, p)):
            c.append(v)
    return EventStream(*cols)


def parse_events(path, width=None, height=None):
    """Read a ``t_us,x,y,p`` CSV file into an :class:`EventStream`.

    Coordinates are bounds-checked when sensor dimensions are given.

    Raises:
        ParseError: malformed line (message carries the line number).
        OrderingError: a timestamp decreases.
    """
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        return EventStream.empty()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            arr = np.loadtxt(text.splitlines(), delimiter=",", dtype=np.int64, ndmin=2)
    except ValueError:
        arr = None
    if arr is None or arr.shape[1] != 4 or "\n\n" in text:
        return _parse_slow(text.splitlines(), width, height)
    t, x, y, p = arr.T
    bad, _ = _validate_columns(t, x, y, p, width, height)
    if bad is not None:
        # re-parse to raise with the exact line number
        return _parse_slow(text.splitlines(), width, height)
    return EventStream(t, x, y, p)


def format_events(events):
    """Canonical CSV text for an event stream."""
    if not len(events):
        return ""
    rows = np.stack([events.t, events.x, events.y, events.p], axis=1)
    return "".join(f"{t},{x},{y},{p}\n" for t, x, y, p in rows.tolist())


def write_events(path, events):
    Path(path).write_text(format_events(events), encoding="utf-8")


def count_events(events, t0, dt, width=SENSOR_WIDTH, height=SENSOR_HEIGHT):
    """Raw per-pixel polarity counts in ``[t0, t0 + dt)``, shape ``H x W x 2``."""
    if not dt > 0:
        raise ParameterError(f"dt must be > 0, got {dt}")
    win = events.window(t0, dt)
    counts = np.zeros((2, height * width), dtype=np.int64)
    if len(win):
        flat = win.y * width + win.x
        pos = win.p > 0
        counts[0] = np.bincount(flat[pos], minlength=height * width)
        counts[1] = np.bincount(flat[~pos], minlength=height * width)
    return counts.reshape(2, height, width).transpose(1, 2, 0)


def normalize_counts(counts):
    """Scale each polarity channel by its own maximum and append a zero channel."""
    h, w, _ = counts.shape
    frame = np.zeros((h, w, 3))
    for c in range(2):
        peak = counts[..., c].max()
        if peak > 0:
            frame[..., c] = counts[..., c] / peak
    return frame


def stack_events(events, t0, dt=DEFAULT_DT_US, width=SENSOR_WIDTH, height=SENSOR_HEIGHT):
    """Stack the events of one fixed interval into a 3-channel frame.

    Channel 0 holds positive-event counts, channel 1 negative-event counts,
    channel 2 is zero; count channels are max-normalized to [0, 1].
    """
    return normalize_counts(count_events(events, t0, dt, width, height))


class EventFrameStacker(TransformerMixin, BaseEstimator):
    """Turn an event stream into consecutive fixed-interval event frames."""

    def __init__(self, dt_us=DEFAULT_DT_US, width=SENSOR_WIDTH, height=SENSOR_HEIGHT, n_frames=None):
        self.dt_us = dt_us
        self.width = width
        self.height = height
        self.n_frames = n_frames

    def fit(self, X=None, y=None):
        if not self.dt_us > 0:
            raise ParameterError(f"dt_us must be > 0, got {self.dt_us}")
        return self

    def transform(self, X):
        n = self.n_frames
        if n is None:
            n = int(X.t[-1] // self.dt_us) + 1 if len(X) else 0
        frames = np.zeros((n, self.height, self.width, 3))
        for i in range(n):
            frames[i] = stack_events(X, i * self.dt_us, self.dt_us, self.width, self.height)
        return frames


def _read_token(data, pos):
    """Next whitespace-delimited PPM header token, skipping comments."""
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("truncated PPM header")
    return data[start:pos], pos


def decode_ppm(data):
    """Decode binary P6 bytes (maxval 255) to a uint8 ``H x W x 3`` array."""
    magic, pos = _read_token(data, 0)
    if magic != b"P6":
        raise FormatError(f"not a binary PPM (magic {magic!r})")
    try:
        w_tok, pos = _read_token(data, pos)
        h_tok, pos = _read_token(data, pos)
        m_tok, pos = _read_token(data, pos)
        width, height, maxval = int(w_tok), int(h_tok), int(m_tok)
    except ValueError:
        raise FormatError("non-numeric PPM header field") from None
    if maxval != 255:
        raise FormatError(f"unsupported PPM maxval {maxval}")
    if width < 1 or height < 1:
        raise FormatError(f"invalid PPM size {width}x{height}")
    pos += 1  # single whitespace byte after maxval
    need = width * height * 3
    payload = data[pos : pos + need]
    if len(payload) != need:
        raise FormatError(f"truncated PPM payload: {len(payload)} of {need} bytes")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()


def encode_ppm(pixels):
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        pixels = to_uint8(pixels)
    h, w, _ = pixels.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def to_uint8(image):
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def load_rgb(path):
    """Load a P6 PPM as float64 values in [0, 1]."""
    return decode_ppm(Path(path).read_bytes()).astype(np.float64) / 255.0


def save_rgb(path, image):
    """Write an image (uint8, or float in [0, 1]) as binary PPM."""
    Path(path).write_bytes(encode_ppm(image))
