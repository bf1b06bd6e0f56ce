"""Deterministic synthetic RGB/event sequences with exact ground truth.

A scene is a static colour-gradient background, one textured target moving
along a piecewise-linear path, an optional moving distractor, and optional
attribute injections (occlusion, out-of-view, appearance morph, scale change,
illumination ramp, no-motion spans). Events come from thresholding the
per-pixel log-intensity change between consecutive render sub-steps.
"""

from dataclasses import asdict, dataclass, field
import json
from pathlib import Path

import numpy as np

from .events import DEFAULT_DT_US, SENSOR_HEIGHT, SENSOR_WIDTH, EventStream, save_rgb, to_uint8, write_events
from .exceptions import ValidationError
from .sequence import SequenceMeta, check_attributes, write_groundtruth

CONTRAST_THRESHOLD = 0.15
SUBSTEPS = 4
LOG_EPS = 1e-3
TEXTURES = ("solid", "checker", "stripes", "gradient")


@dataclass
class Appearance:
    texture: str = "checker"
    colors: list = field(default_factory=lambda: [[0.9, 0.15, 0.1], [0.1, 0.1, 0.8]])
    cell: float = 8.0

    def validate(self):
        if self.texture not in TEXTURES:
            raise ValidationError(f"unknown texture {self.texture!r}; expected one of {TEXTURES}")
        if len(self.colors) != 2 or any(len(c) != 3 for c in self.colors):
            raise ValidationError("appearance needs two RGB colours")
        if not all(0.0 <= v <= 1.0 for c in self.colors for v in c):
            raise ValidationError("appearance colours must lie in [0, 1]")
        if not self.cell > 0:
            raise ValidationError("texture cell size must be > 0")

    def render(self, tx, ty, w, h):
        """Colour at texture coordinates ``(tx, ty)`` in [0, w) x [0, h)."""
        c0 = np.asarray(self.colors[0], dtype=np.float64)
        c1 = np.asarray(self.colors[1], dtype=np.float64)
        if self.texture == "solid":
            mix = np.zeros_like(tx)
        elif self.texture == "checker":
            mix = ((np.floor(tx / self.cell) + np.floor(ty / self.cell)) % 2).astype(np.float64)
        elif self.texture == "stripes":
            mix = (np.floor(ty / self.cell) % 2).astype(np.float64)
        else:
            mix = np.clip(tx / max(w, 1e-9), 0.0, 1.0)
        return c0 * (1 - mix[..., None]) + c1 * mix[..., None]


@dataclass
class Mover:
    """An object following waypoints at constant speed, bouncing back at the path ends."""

    size: list = field(default_factory=lambda: [40.0, 40.0])
    waypoints: list = field(default_factory=lambda: [[120.0, 130.0], [220.0, 130.0]])
    speed: float = 1.5
    appearance: Appearance = field(default_factory=Appearance)

    def validate(self, width, height):
        if len(self.size) != 2 or min(self.size) <= 0:
            raise ValidationError("object size must be two positive numbers")
        if not self.waypoints or any(len(p) != 2 for p in self.waypoints):
            raise ValidationError("waypoints must be a non-empty list of [x, y] pairs")
        for x, y in self.waypoints:
            if not (0 <= x <= width and 0 <= y <= height):
                raise ValidationError(f"waypoint ({x}, {y}) outside the {width}x{height} canvas")
        if self.speed < 0:
            raise ValidationError("speed must be >= 0")
        self.appearance.validate()

    def position(self, distance):
        pts = np.asarray(self.waypoints, dtype=np.float64)
        if len(pts) == 1:
            return pts[0].copy()
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        total = seg.sum()
        if total == 0:
            return pts[0].copy()
        d = distance % (2 * total)
        if d > total:
            d = 2 * total - d
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        i = min(int(np.searchsorted(cum, d, side="right")) - 1, len(seg) - 1)
        frac = 0.0 if seg[i] == 0 else (d - cum[i]) / seg[i]
        return pts[i] + frac * (pts[i + 1] - pts[i])


def _span_list(spans, name):
    out = []
    for s in spans:
        if len(s) != 2 or s[0] > s[1] or s[0] < 0:
            raise ValidationError(f"{name} span {s} must be [start, end] with 0 <= start <= end")
        out.append((float(s[0]), float(s[1])))
    return out


@dataclass
class SceneSpec:
    seed: int = 0
    width: int = SENSOR_WIDTH
    height: int = SENSOR_HEIGHT
    dt_us: int = DEFAULT_DT_US
    background: list = field(default_factory=lambda: [[0.35, 0.45, 0.4], [0.55, 0.5, 0.45]])
    target: Mover = field(default_factory=Mover)
    distractor: Mover = None
    occlusions: list = field(default_factory=list)  # {"start", "end", "kind": "POC"|"FOC"}
    out_of_view: list = field(default_factory=list)  # [start, end]
    no_motion: list = field(default_factory=list)  # [start, end]
    morph: dict = None  # {"start", "end", "appearance": {...}}
    scale: dict = None  # {"start", "end", "factor"}
    illumination: dict = None  # {"start", "end", "gain"}
    attributes: list = field(default_factory=list)

    def validate(self):
        if self.width < 16 or self.height < 16:
            raise ValidationError("canvas must be at least 16x16")
        if self.dt_us <= 0:
            raise ValidationError("dt_us must be > 0")
        if len(self.background) != 2 or any(len(c) != 3 for c in self.background):
            raise ValidationError("background needs two RGB colours")
        if not all(0.0 <= v <= 1.0 for c in self.background for v in c):
            raise ValidationError("background colours must lie in [0, 1]")
        self.target.validate(self.width, self.height)
        if self.distractor is not None:
            self.distractor.validate(self.width, self.height)
        for occ in self.occlusions:
            if occ.get("kind") not in ("POC", "FOC"):
                raise ValidationError(f"occlusion kind must be POC or FOC, got {occ.get('kind')!r}")
            _span_list([[occ["start"], occ["end"]]], "occlusion")
        _span_list(self.out_of_view, "out_of_view")
        _span_list(self.no_motion, "no_motion")
        for name, extra in (("morph", "appearance"), ("scale", "factor"), ("illumination", "gain")):
            block = getattr(self, name)
            if block is None:
                continue
            if extra not in block or "start" not in block or "end" not in block:
                raise ValidationError(f"{name} needs start, end and {extra}")
            _span_list([[block["start"], block["end"]]], name)
        if self.scale is not None and not self.scale["factor"] > 0:
            raise ValidationError("scale factor must be > 0")
        if self.illumination is not None and not self.illumination["gain"] > 0:
            raise ValidationError("illumination gain must be > 0")
        check_attributes(self.attributes)

    def derived_attributes(self):
        codes = set(self.attributes)
        codes.update(o["kind"] for o in self.occlusions)
        if self.out_of_view:
            codes.add("OV")
        if self.no_motion:
            codes.add("NMO")
        if self.morph:
            codes.add("DEF")
        if self.scale:
            codes.add("SV")
        if self.illumination:
            codes.add("IV")
        if self.distractor is not None:
            codes.add("BI")
        return sorted(codes)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown scene spec keys: {sorted(unknown)}")
        try:
            for key in ("target", "distractor"):
                if raw.get(key) is not None:
                    mover = dict(raw[key])
                    mover["appearance"] = Appearance(**mover.get("appearance", {}))
                    raw[key] = Mover(**mover)
            spec = cls(**raw)
        except TypeError as exc:
            raise ValidationError(f"invalid scene spec: {exc}") from exc
        if spec.morph is not None and isinstance(spec.morph.get("appearance"), dict):
            spec.morph = dict(spec.morph, appearance=Appearance(**spec.morph["appearance"]))
        spec.validate()
        return spec

    @classmethod
    def load(cls, path):
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"scene spec {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)


def _ramp(block, t):
    """0 before ``start``, 1 after ``end``, linear in between."""
    if block is None:
        return 0.0
    s, e = float(block["start"]), float(block["end"])
    if t <= s:
        return 0.0
    if t >= e:
        return 1.0
    return (t - s) / (e - s)


def _in_spans(spans, t):
    return any(s <= t <= e for s, e in spans)


class Renderer:
    def __init__(self, spec):
        spec.validate()
        self.spec = spec
        w, h = spec.width, spec.height
        self.xs = np.arange(w) + 0.5
        self.ys = np.arange(h) + 0.5
        c0 = np.asarray(spec.background[0], dtype=np.float64)
        c1 = np.asarray(spec.background[1], dtype=np.float64)
        gx = (self.xs / w)[None, :, None]
        gy = (self.ys / h)[:, None, None]
        self.background = c0 * (1 - 0.5 * (gx + gy)) + c1 * 0.5 * (gx + gy)
        self.nmo = _span_list(spec.no_motion, "no_motion")
        self.ov = _span_list(spec.out_of_view, "out_of_view")

    def moving_time(self, t):
        """Scene time with no-motion spans removed."""
        frozen = sum(max(0.0, min(t, e) - s) for s, e in self.nmo if t > s)
        return t - frozen

    def target_box(self, t):
        """Analytic (cx, cy, w, h) of the target at time ``t`` (frames)."""
        spec = self.spec
        cx, cy = spec.target.position(spec.target.speed * self.moving_time(t))
        factor = 1.0
        if spec.scale is not None:
            factor = 1.0 + (float(spec.scale["factor"]) - 1.0) * _ramp(spec.scale, t)
        return np.array([cx, cy, spec.target.size[0] * factor, spec.target.size[1] * factor])

    def target_visible(self, t):
        return not _in_spans(self.ov, t)

    def groundtruth(self, f):
        """Ground truth at frame ``f``: clipped to the canvas, all-zero when not visible."""
        if not self.target_visible(f):
            return np.zeros(4)
        cx, cy, w, h = self.target_box(f)
        x0, y0 = max(cx - w / 2, 0.0), max(cy - h / 2, 0.0)
        x1, y1 = min(cx + w / 2, self.spec.width), min(cy + h / 2, self.spec.height)
        if x1 <= x0 or y1 <= y0:
            return np.zeros(4)
        return np.array([(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0])

    def _paint(self, img, box, appearance, blend_to=None, blend=0.0):
        cx, cy, w, h = box
        x0, y0 = cx - w / 2, cy - h / 2
        cols = np.flatnonzero((self.xs >= x0) & (self.xs < x0 + w))
        rows = np.flatnonzero((self.ys >= y0) & (self.ys < y0 + h))
        if cols.size == 0 or rows.size == 0:
            return
        tx = self.xs[cols][None, :] - x0
        ty = self.ys[rows][:, None] - y0
        tx, ty = np.broadcast_arrays(tx, ty)
        patch = appearance.render(tx, ty, w, h)
        if blend_to is not None and blend > 0:
            patch = (1 - blend) * patch + blend * blend_to.render(tx, ty, w, h)
        img[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1] = patch

    def render(self, t):
        """Float RGB image of the scene at time ``t`` (frames)."""
        spec = self.spec
        img = self.background.copy()
        if spec.distractor is not None:
            d = spec.distractor
            pos = d.position(d.speed * t)
            self._paint(img, (pos[0], pos[1], d.size[0], d.size[1]), d.appearance)
        if self.target_visible(t):
            box = self.target_box(t)
            morph_to = spec.morph["appearance"] if spec.morph else None
            self._paint(img, box, spec.target.appearance, morph_to, _ramp(spec.morph, t))
            for occ in spec.occlusions:
                if occ["start"] <= t <= occ["end"]:
                    cx, cy, w, h = box
                    if occ["kind"] == "FOC":
                        occ_box = (cx, cy, w * 1.3, h * 1.3)
                    else:
                        occ_box = (cx - w / 4, cy, w / 2 + 2, h * 1.3)
                    self._paint(img, occ_box, Appearance("solid", [[0.2, 0.2, 0.2], [0.2, 0.2, 0.2]]))
        if spec.illumination is not None:
            gain = 1.0 + (float(spec.illumination["gain"]) - 1.0) * _ramp(spec.illumination, t)
            img *= gain
            np.minimum(img, 1.0, out=img)
        # colours are validated to [0, 1] and gain is positive, so only the top can overflow
        return img


def log_intensity(img):
    lum = img @ np.array([0.299, 0.587, 0.114])
    return np.log(lum + LOG_EPS)


def generate(spec, frames, out_dir):
    """Render ``frames`` frames of ``spec`` into the sequence directory ``out_dir``.

    Returns:
        The output directory as a :class:`~pathlib.Path`.
    """
    if int(frames) < 2:
        raise ValidationError("a sequence needs at least 2 frames")
    frames = int(frames)
    spec.validate()
    r = Renderer(spec)
    out = Path(out_dir)
    (out / "rgb").mkdir(parents=True, exist_ok=True)

    dt = spec.dt_us
    chunks = []
    gt = np.zeros((frames, 4))
    prev_log = None
    for f in range(frames):
        if f > 0:
            # sub-steps between frame f-1 and f; events are stamped inside window f
            for k in range(1, SUBSTEPS + 1):
                cur = log_intensity(r.render(f - 1 + k / SUBSTEPS))
                diff = cur - prev_log
                ys, xs = np.nonzero(np.abs(diff) > CONTRAST_THRESHOLD)
                if ys.size:
                    t_us = f * dt + int((k - 0.5) * dt / SUBSTEPS)
                    pol = np.where(diff[ys, xs] > 0, 1, -1)
                    chunks.append(EventStream(np.full(ys.size, t_us), xs, ys, pol))
                prev_log = cur
            image = r.render(f)
        else:
            image = r.render(0.0)
            prev_log = log_intensity(image)
        save_rgb(out / "rgb" / f"{f:06d}.ppm", to_uint8(image))
        gt[f] = r.groundtruth(f)

    write_events(out / "events.csv", EventStream.concat(chunks))
    write_groundtruth(out / "groundtruth.txt", gt)
    (out / "attributes.txt").write_text("".join(c + "\n" for c in spec.derived_attributes()), encoding="utf-8")
    SequenceMeta(spec.width, spec.height, dt, frames).dump(out / "meta.json")
    (out / "scene.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


MORPH_SPAN = (40, 140)


def easy_scene(seed):
    """Mild-motion scene: one checker target on a gradient, slow piecewise-linear path."""
    rng = np.random.default_rng(seed)
    size = float(rng.uniform(36, 48))
    margin = 60.0
    pts = [[float(rng.uniform(margin, SENSOR_WIDTH - margin)), float(rng.uniform(margin, SENSOR_HEIGHT - margin))]
           for _ in range(3)]
    hue = int(rng.integers(3))
    palette = np.full((2, 3), 0.1)
    palette[0, hue] = 0.95
    palette[1, hue] = 0.7
    palette[1, (hue + 1) % 3] = 0.85
    return SceneSpec(
        seed=int(seed),
        target=Mover(
            size=[size, size * float(rng.uniform(0.85, 1.15))],
            waypoints=pts,
            speed=float(rng.uniform(0.8, 1.6)),
            appearance=Appearance("checker", palette.tolist(), cell=float(rng.choice([8.0, 10.0, 12.0]))),
        ),
    )


def morph_scene(seed=0):
    """Deformation fixture: the target's texture and colours morph away from its first-frame look.

    The morph runs over frames 40 to 140 (see :data:`MORPH_SPAN`) while the
    target slides right and back along a horizontal path.
    """
    return SceneSpec(
        seed=int(seed),
        target=Mover(
            size=[40.0, 40.0],
            waypoints=[[110.0, 130.0], [236.0, 130.0]],
            speed=1.0,
            appearance=Appearance("checker", [[0.9, 0.15, 0.1], [0.1, 0.1, 0.8]], cell=6.0),
        ),
        morph={"start": MORPH_SPAN[0], "end": MORPH_SPAN[1],
               "appearance": Appearance("stripes", [[0.95, 0.9, 0.2], [0.1, 0.6, 0.2]], 7.0)},
    )
