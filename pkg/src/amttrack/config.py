"""Tracker configuration: every tunable with its default, JSON load and overrides."""

from dataclasses import asdict, dataclass, field, fields
import json
from pathlib import Path

from .exceptions import ValidationError


def _default_preceding():
    return {5: [1, 3], 8: [4, 6], 11: [7, 9]}


@dataclass
class TrackerConfig:
    # cross-modal retrieval inside the backbone
    beta_cross: float = 0.25
    hopfield_layers: list = field(default_factory=lambda: [5, 8, 11])
    preceding_layers: dict = field(default_factory=_default_preceding)
    num_layers: int = 12
    num_heads: int = 8
    mlp_ratio: int = 4
    embed_dim: int = 64
    patch_size: int = 16
    # template/search geometry
    template_size: int = 128
    search_size: int = 256
    template_factor: float = 2.0
    search_factor: float = 4.0
    # associative template update
    atu: bool = True
    beta_template: float = 4.0
    st_capacity: int = 5
    lt_capacity: int = 10
    st_interval: int = 10
    lt_interval: int = 20
    resample_interval: int = 10
    reinit_interval: int = 500
    tau: float = 0.7
    theta: float = 0.5
    # losses
    lambda_l1: float = 5.0
    lambda_iou: float = 2.0
    # inference
    window_influence: float = 0.3
    mode: str = "identity"
    seed: int = 0

    def __post_init__(self):
        self.preceding_layers = {int(k): [int(p) for p in v] for k, v in self.preceding_layers.items()}
        self.hopfield_layers = [int(v) for v in self.hopfield_layers]
        self.validate()

    @property
    def n_z(self):
        return (self.template_size // self.patch_size) ** 2

    @property
    def n_x(self):
        return (self.search_size // self.patch_size) ** 2

    @property
    def weights_path(self):
        return self.mode.split(":", 1)[1] if self.mode.startswith("weights:") else None

    def validate(self):
        if self.mode != "identity" and not (self.mode.startswith("weights:") and len(self.mode) > 8):
            raise ValidationError(f"mode must be 'identity' or 'weights:<path>', got {self.mode!r}")
        for name in ("beta_cross", "beta_template"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0")
        for name in ("num_layers", "num_heads", "mlp_ratio", "embed_dim", "patch_size", "st_capacity",
                     "lt_capacity", "st_interval", "lt_interval", "resample_interval", "reinit_interval"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ValidationError(f"{name} must be a positive integer, got {v!r}")
        if self.embed_dim % self.num_heads:
            raise ValidationError("embed_dim must be divisible by num_heads")
        for size in (self.template_size, self.search_size):
            if size % self.patch_size:
                raise ValidationError(f"crop size {size} is not a multiple of patch_size {self.patch_size}")
        if not 0.0 <= self.tau <= 1.0 or not 0.0 <= self.theta <= 1.0:
            raise ValidationError("tau and theta must lie in [0, 1]")
        if not 0.0 <= self.window_influence <= 1.0:
            raise ValidationError("window_influence must lie in [0, 1]")
        if sorted(self.preceding_layers) != sorted(self.hopfield_layers):
            raise ValidationError("preceding_layers must have exactly one entry per Hopfield layer")
        for l in self.hopfield_layers:
            if not 0 <= l < self.num_layers:
                raise ValidationError(f"Hopfield layer {l} outside [0, {self.num_layers})")
            prev = self.preceding_layers[l]
            if not prev or any(not 0 <= p < l for p in prev):
                raise ValidationError(f"preceding layers {prev} of layer {l} must be non-empty and < {l}")

    def to_dict(self):
        d = asdict(self)
        d["preceding_layers"] = {str(k): v for k, v in sorted(self.preceding_layers.items())}
        return d

    def show(self):
        """Config plus derived token counts, as printed by ``--show-config``."""
        d = self.to_dict()
        d["n_z"] = self.n_z
        d["n_x"] = self.n_x
        return d

    @classmethod
    def from_dict(cls, raw):
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**raw)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(str(exc)) from exc

    @classmethod
    def load(cls, path=None, overrides=()):
        raw = {}
        if path is not None:
            try:
                raw = json.loads(Path(path).read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
            if not isinstance(raw, dict):
                raise ValidationError("config file must hold a JSON object")
        for item in overrides:
            key, value = parse_override(item)
            raw[key] = value
        return cls.from_dict(raw)


def parse_override(item):
    """``key=value`` with a JSON value, falling back to a bare string."""
    if "=" not in item:
        raise ValidationError(f"override {item!r} is not key=value")
    key, text = item.split("=", 1)
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    return key.strip(), value
