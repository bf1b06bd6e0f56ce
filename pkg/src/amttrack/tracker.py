"""Frame-by-frame RGB-event tracker with associative template memory."""

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .backbone import LayerSchedule, ModelWeights, forward
from .boxes import BBox
from .config import TrackerConfig
from .embedding import PatchEmbedWeights, crop_resize, patch_embed
from .exceptions import InitError
from .head import decode_box, head_forward
from .memory import TemplateEntry, TemplateMemory, assemble, enhance

MODALITIES = ("rgb", "event")


def target_mask(box, context_factor, size, patch_size):
    """Template cells whose centres fall inside the target box."""
    side = context_factor * np.sqrt(box.w * box.h)
    scale = size / side
    half_w, half_h = box.w * scale / 2, box.h * scale / 2
    g = size // patch_size
    centres = (np.arange(g) + 0.5) * patch_size - size / 2
    inside_x = np.abs(centres) < max(half_w, patch_size / 2)
    inside_y = np.abs(centres) < max(half_h, patch_size / 2)
    return (inside_y[:, None] & inside_x[None, :]).ravel()


class AMTTracker(BaseEstimator):
    """One-pass tracker over paired RGB and event frames.

    ``fit`` initialises the templates from the first frame and its box;
    each ``predict`` call consumes the next frame pair and returns the box and
    confidence. The tracker is causal: it never sees a frame before
    ``predict`` is called on it.

    Parameters
    ----------
    config : TrackerConfig, optional
        Defaults to :class:`TrackerConfig` defaults (identity mode).
    weights : ModelWeights, optional
        Overrides the weights named by ``config.mode``.
    """

    def __init__(self, config=None, weights=None):
        self.config = config
        self.weights = weights

    def _resolve(self):
        cfg = self.config if self.config is not None else TrackerConfig()
        weights = self.weights
        if weights is None and cfg.weights_path is not None:
            weights = ModelWeights.load(cfg.weights_path, cfg)
        return cfg, weights

    def _embed(self, image, modality):
        pe = self.patch_embed_[modality]
        return patch_embed(image, pe, modality).tokens

    def _crops(self, rgb, event, box, factor, size):
        """Crop both modalities around the same box."""
        crops = {}
        for m, img in zip(MODALITIES, (rgb, event)):
            crops[m], geom = crop_resize(img, box, factor, size)
        return crops, geom

    def _template(self, rgb, event, box, frame_idx, score):
        cfg = self.config_
        crops, _ = self._crops(rgb, event, box, cfg.template_factor, cfg.template_size)
        tokens = {m: self._embed(crops[m], m) for m in MODALITIES}
        emb = 0.5 * (tokens["rgb"] + tokens["event"]).mean(axis=0)
        if not np.any(emb):
            emb = np.ones_like(emb)
        return TemplateEntry(emb, float(np.clip(score, 0.0, 1.0)), frame_idx, tokens, crops)

    def fit(self, X, y):
        """Initialise on the first frame.

        Args:
            X: ``(rgb, event_frame)`` pair of ``H x W x 3`` images.
            y: initial :class:`BBox` (or ``cx, cy, w, h`` array).
        """
        cfg, weights = self._resolve()
        self.config_, self.model_weights_ = cfg, weights
        box = y if isinstance(y, BBox) else BBox.from_array(y)
        if box.absent or box.w <= 0 or box.h <= 0:
            raise InitError("the first-frame box must be present and non-degenerate")
        rgb, event = X
        self.frame_shape_ = np.asarray(rgb).shape[:2]
        self.schedule_ = LayerSchedule.from_config(cfg)
        if weights is None:
            ident = PatchEmbedWeights.identity(cfg.embed_dim, cfg.patch_size)
            self.patch_embed_ = {"rgb": ident, "event": ident}
        else:
            self.patch_embed_ = {"rgb": weights.patch_rgb, "event": weights.patch_event}
        self.static_ = replace(self._template(rgb, event, box, 0, 1.0), static=True)
        self.memory_ = TemplateMemory.from_config(self.static_, cfg)
        self._refresh_templates()
        self.box_ = box
        self.frame_idx_ = 0
        grid = cfg.search_size // cfg.patch_size
        hann = np.hanning(grid + 2)[1:-1]
        self.window_ = np.outer(hann, hann)
        return self

    def _refresh_templates(self):
        cfg, w = self.config_, self.model_weights_
        z_lt, z_st = self.memory_.resample()
        keys = None if w is None else w.lookup_keys
        values = None if w is None else w.lookup_values
        self.dynamic_ = enhance(z_lt, z_st, keys, values, cfg.beta_template)

    def _template_block(self, modality):
        if not self.config_.atu:
            return self.static_.tokens[modality]
        z_lt, z_st = self.dynamic_
        return assemble(z_lt, z_st, self.static_, modality)

    def _references(self, template_tokens, box):
        """Centred target descriptors, one per template group."""
        cfg = self.config_
        mask = target_mask(box, cfg.template_factor, cfg.template_size, cfg.patch_size)
        n_z = cfg.n_z
        refs = []
        for g in range(template_tokens.shape[0] // n_z):
            group = template_tokens[g * n_z : (g + 1) * n_z]
            refs.append(group[mask].mean(axis=0) - group.mean(axis=0))
        return refs

    def predict(self, X):
        """Track into the next frame. Returns ``(BBox, score)``."""
        check_is_fitted(self, "memory_")
        cfg, w = self.config_, self.model_weights_
        rgb, event = X
        prev = self.box_
        crops, geom = self._crops(rgb, event, prev, cfg.search_factor, cfg.search_size)
        search = {m: self._embed(crops[m], m) for m in MODALITIES}
        out = forward(
            self._template_block("rgb"), search["rgb"], self._template_block("event"), search["event"],
            self.schedule_, w, cfg.beta_cross,
        )
        if w is not None and w.head is not None:
            maps = head_forward(out.fused_search, w.head)
        else:
            fused_template = 0.5 * (out.template_rgb + out.template_event)
            maps = head_forward(
                out.fused_search, None, self._references(fused_template, prev),
                (prev.w / geom.side, prev.h / geom.side),
            )
        windowed = maps.score * ((1 - cfg.window_influence) + cfg.window_influence * self.window_)
        box, score = decode_box(maps, geom, cfg.patch_size, windowed)
        h, wd = self.frame_shape_
        box = BBox(float(np.clip(box.cx, 0, wd)), float(np.clip(box.cy, 0, h)), max(box.w, 1.0), max(box.h, 1.0))

        self.frame_idx_ += 1
        if cfg.atu:
            candidate = None
            if self.memory_.wants_candidate(score):
                candidate = self._template(rgb, event, box, self.frame_idx_, score)
            self.memory_.step(score, candidate)
            if self.memory_.n % cfg.resample_interval == 0:
                self._refresh_templates()
        self.box_ = box
        self.last_maps_ = maps
        return box, score


def track_sequence(seq, config=None, weights=None):
    """Run one-pass tracking over an opened :class:`~amttrack.sequence.Sequence`.

    Returns:
        (boxes, scores, tracker) with ``boxes`` an ``n x 4`` array.
    """
    init = seq.init_box()
    if init is None or init.absent:
        raise InitError(f"{seq.name}: first-frame ground truth is absent")
    tracker = AMTTracker(config, weights)
    boxes, scores = [], []
    for i, rgb, ev in seq.frames():
        if i == 0:
            tracker.fit((rgb, ev), init)
            box, score = init, 1.0
        else:
            box, score = tracker.predict((rgb, ev))
        boxes.append(box.as_array())
        scores.append(score)
    return np.array(boxes).reshape(-1, 4), np.array(scores), tracker
