"""One-stream dual-modality backbone with cross-modal Hopfield retrieval.

Each modality runs ``[templates | search]`` through the same stack of
transformer layers. After every scheduled Hopfield layer the search block of
each modality retrieves from a bank built out of the other modality's search
outputs at the preceding layers, with a residual connection. Template tokens
bypass retrieval. The two search streams are fused after the last layer.

With ``weights=None`` the backbone runs in *identity mode*: transformer layers
are the identity, Hopfield projections are identities and fusion is the
elementwise mean.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .config import TrackerConfig
from .embedding import PatchEmbedWeights
from .exceptions import FormatError, ShapeError
from .hopfield import ProjectionSet, hopfield_assoc
from .weights_io import read_ntw


@dataclass(frozen=True)
class LayerSchedule:
    """Which layers carry Hopfield retrieval and which earlier layers feed their banks."""

    num_layers: int = 12
    hopfield_layers: tuple = (5, 8, 11)
    preceding: dict = field(default_factory=lambda: {5: (1, 3), 8: (4, 6), 11: (7, 9)})

    def __post_init__(self):
        object.__setattr__(self, "hopfield_layers", tuple(sorted(int(l) for l in self.hopfield_layers)))
        object.__setattr__(self, "preceding", {int(k): tuple(int(p) for p in v) for k, v in self.preceding.items()})
        if set(self.preceding) != set(self.hopfield_layers):
            raise ShapeError("every Hopfield layer needs exactly one preceding-layer set")
        for l in self.hopfield_layers:
            if not 0 <= l < self.num_layers:
                raise ShapeError(f"Hopfield layer {l} outside [0, {self.num_layers})")
            if not self.preceding[l] or any(not 0 <= p < l for p in self.preceding[l]):
                raise ShapeError(f"preceding layers of {l} must be non-empty and earlier: {self.preceding[l]}")

    @classmethod
    def from_config(cls, config):
        return cls(config.num_layers, tuple(config.hopfield_layers), dict(config.preceding_layers))

    @classmethod
    def disabled(cls, num_layers=12):
        return cls(num_layers, (), {})

    @property
    def cached_layers(self):
        return sorted({p for ps in self.preceding.values() for p in ps})


@dataclass
class LayerWeights:
    """Pre-norm ViT block; matrices act on row vectors (``x @ W``)."""

    norm1_weight: np.ndarray
    norm1_bias: np.ndarray
    qkv_weight: np.ndarray  # D x 3D
    qkv_bias: np.ndarray
    proj_weight: np.ndarray  # D x D
    proj_bias: np.ndarray
    norm2_weight: np.ndarray
    norm2_bias: np.ndarray
    fc1_weight: np.ndarray  # D x hidden
    fc1_bias: np.ndarray
    fc2_weight: np.ndarray  # hidden x D
    fc2_bias: np.ndarray
    num_heads: int = 8

    NAMES = {
        "norm1_weight": "norm1.weight",
        "norm1_bias": "norm1.bias",
        "qkv_weight": "attn.qkv.weight",
        "qkv_bias": "attn.qkv.bias",
        "proj_weight": "attn.proj.weight",
        "proj_bias": "attn.proj.bias",
        "norm2_weight": "norm2.weight",
        "norm2_bias": "norm2.bias",
        "fc1_weight": "mlp.fc1.weight",
        "fc1_bias": "mlp.fc1.bias",
        "fc2_weight": "mlp.fc2.weight",
        "fc2_bias": "mlp.fc2.bias",
    }

    @staticmethod
    def shapes(dim, hidden):
        return {
            "norm1_weight": (dim,),
            "norm1_bias": (dim,),
            "qkv_weight": (dim, 3 * dim),
            "qkv_bias": (3 * dim,),
            "proj_weight": (dim, dim),
            "proj_bias": (dim,),
            "norm2_weight": (dim,),
            "norm2_bias": (dim,),
            "fc1_weight": (dim, hidden),
            "fc1_bias": (hidden,),
            "fc2_weight": (hidden, dim),
            "fc2_bias": (dim,),
        }

    def head_projections(self, h):
        """Per-head Q/K/V projections acting on ``[x | 1]`` (bias folded in as a last row)."""
        dim = self.qkv_weight.shape[0]
        dk = dim // self.num_heads
        w = np.vstack([self.qkv_weight, self.qkv_bias[None, :]])
        cols = [slice(part * dim + h * dk, part * dim + (h + 1) * dk) for part in range(3)]
        return ProjectionSet(w[:, cols[0]], w[:, cols[1]], w[:, cols[2]])


def layer_norm(x, weight, bias, eps=1e-6):
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * weight + bias


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def self_attention(h, lw):
    """Multi-head self-attention; every head is a Hopfield association at beta = 1/sqrt(d_k)."""
    dk = h.shape[1] // lw.num_heads
    aug = np.hstack([h, np.ones((h.shape[0], 1))])
    heads = [hopfield_assoc(aug, aug, lw.head_projections(i), 1.0 / np.sqrt(dk)) for i in range(lw.num_heads)]
    return np.hstack(heads) @ lw.proj_weight + lw.proj_bias


def transformer_layer(tokens, lw=None):
    """Pre-norm attention + MLP block with residuals; identity when ``lw`` is None."""
    tokens = np.asarray(tokens, dtype=np.float64)
    if lw is None:
        return tokens.copy()
    if tokens.ndim != 2 or tokens.shape[1] != lw.qkv_weight.shape[0]:
        raise ShapeError(f"tokens {tokens.shape} do not match layer width {lw.qkv_weight.shape[0]}")
    x = tokens + self_attention(layer_norm(tokens, lw.norm1_weight, lw.norm1_bias), lw)
    h = layer_norm(x, lw.norm2_weight, lw.norm2_bias)
    return x + gelu(h @ lw.fc1_weight + lw.fc1_bias) @ lw.fc2_weight + lw.fc2_bias


def build_bank(cache, layers):
    """Stack the cached search outputs of ``layers`` row-wise into one pattern bank."""
    return np.vstack([cache[p] for p in layers])


def cross_modal_retrieval(R_v, R_e, bank_e, bank_v, proj, beta):
    """Each modality's search features retrieve from the other modality's bank, plus a residual."""
    R_v = np.asarray(R_v, dtype=np.float64)
    R_e = np.asarray(R_e, dtype=np.float64)
    if R_v.shape[1] != R_e.shape[1]:
        raise ShapeError(f"modality widths differ: {R_v.shape} vs {R_e.shape}")
    Z_v = hopfield_assoc(R_v, bank_e, proj, beta) + R_v
    Z_e = hopfield_assoc(R_e, bank_v, proj, beta) + R_e
    return Z_v, Z_e


@dataclass
class ModelWeights:
    """All learned tensors of the tracker. ``None`` members fall back to identity behaviour."""

    patch_rgb: PatchEmbedWeights
    patch_event: PatchEmbedWeights
    layers: list
    hopfield: dict
    fusion: np.ndarray = None
    lookup_keys: np.ndarray = None
    lookup_values: np.ndarray = None
    head: dict = None

    def to_tensors(self):
        t = {}
        for mod, pe in (("rgb", self.patch_rgb), ("event", self.patch_event)):
            t[f"patch_embed.{mod}.proj"] = pe.projection
            if pe.bias is not None:
                t[f"patch_embed.{mod}.bias"] = pe.bias
            for (gh, gw), table in (pe.pos_tables or {}).items():
                t[f"pos_embed.{mod}.{gh}x{gw}"] = table
        for i, lw in enumerate(self.layers):
            for attr, name in LayerWeights.NAMES.items():
                t[f"blocks.{i}.{name}"] = getattr(lw, attr)
        for l, proj in self.hopfield.items():
            t[f"hopfield.{l}.W_Q"] = proj.W_Q
            t[f"hopfield.{l}.W_K"] = proj.W_K
            t[f"hopfield.{l}.W_V"] = proj.W_V
        if self.fusion is not None:
            t["fusion.weight"] = self.fusion
        if self.lookup_keys is not None:
            t["lookup.W_K"] = self.lookup_keys
            t["lookup.W_V"] = self.lookup_values
        for name, arr in (self.head or {}).items():
            t[f"head.{name}"] = arr
        return t

    @classmethod
    def from_tensors(cls, tensors, config):
        """Build from a flat tensor map, failing closed on any missing, unknown or misshapen tensor."""
        from .head import head_weight_shapes

        t = dict(tensors)
        D = config.embed_dim
        P = config.patch_size
        hidden = config.mlp_ratio * D

        def take(name, shape):
            if name not in t:
                raise FormatError(f"weights file lacks tensor {name!r}")
            arr = t.pop(name)
            if tuple(arr.shape) != tuple(shape):
                raise FormatError(f"tensor {name!r} has shape {tuple(arr.shape)}, expected {tuple(shape)}")
            return arr

        grids = {(config.template_size // P,) * 2, (config.search_size // P,) * 2}
        patches = {}
        for mod in ("rgb", "event"):
            proj = take(f"patch_embed.{mod}.proj", (P * P * 3, D))
            bias = take(f"patch_embed.{mod}.bias", (D,)) if f"patch_embed.{mod}.bias" in t else None
            tables = {}
            for gh, gw in grids:
                key = f"pos_embed.{mod}.{gh}x{gw}"
                if key in t:
                    tables[(gh, gw)] = take(key, (gh * gw, D))
            patches[mod] = PatchEmbedWeights(proj, bias, tables or None, P)

        layers = []
        for i in range(config.num_layers):
            shapes = LayerWeights.shapes(D, hidden)
            kw = {a: take(f"blocks.{i}.{n}", shapes[a]) for a, n in LayerWeights.NAMES.items()}
            layers.append(LayerWeights(num_heads=config.num_heads, **kw))

        hop = {}
        for l in config.hopfield_layers:
            W_Q = t.pop(f"hopfield.{l}.W_Q", None)
            if W_Q is None:
                raise FormatError(f"weights file lacks tensor 'hopfield.{l}.W_Q'")
            if W_Q.shape[0] != D:
                raise FormatError(f"hopfield.{l}.W_Q has shape {W_Q.shape}, expected ({D}, d_k)")
            W_K = take(f"hopfield.{l}.W_K", (D, W_Q.shape[1]))
            W_V = t.pop(f"hopfield.{l}.W_V", None)
            if W_V is None or W_V.shape != (D, D):
                raise FormatError(f"hopfield.{l}.W_V missing or not ({D}, {D})")
            hop[l] = ProjectionSet(W_Q, W_K, W_V)

        fusion = take("fusion.weight", (2 * D, D)) if "fusion.weight" in t else None
        keys = values = None
        if "lookup.W_K" in t:
            keys = t.pop("lookup.W_K")
            if keys.ndim != 2 or keys.shape[1] != D:
                raise FormatError(f"lookup.W_K has shape {keys.shape}, expected (n_proto, {D})")
            values = take("lookup.W_V", (keys.shape[0], D))

        head = None
        if any(k.startswith("head.") for k in t):
            head = {}
            for name, shape in head_weight_shapes(D).items():
                head[name] = take(f"head.{name}", shape)
        if t:
            raise FormatError(f"unexpected tensors in weights file: {sorted(t)[:5]}")
        return cls(patches["rgb"], patches["event"], layers, hop, fusion, keys, values, head)

    @classmethod
    def load(cls, path, config):
        return cls.from_tensors(read_ntw(path), config)


def random_weights(config, seed=0, scale=0.02, with_head=True, n_proto=16):
    """Small random weights of the right shapes, for tests and format checks."""
    from .head import head_weight_shapes

    rng = np.random.default_rng(seed)
    D, P = config.embed_dim, config.patch_size
    hidden = config.mlp_ratio * D

    def rnd(*shape):
        return scale * rng.standard_normal(shape)

    patches = [PatchEmbedWeights(rnd(P * P * 3, D) / scale / np.sqrt(P * P * 3), rnd(D), None, P) for _ in range(2)]
    layers = []
    for _ in range(config.num_layers):
        kw = {a: rnd(*s) for a, s in LayerWeights.shapes(D, hidden).items()}
        kw["norm1_weight"] = 1.0 + kw["norm1_weight"]
        kw["norm2_weight"] = 1.0 + kw["norm2_weight"]
        layers.append(LayerWeights(num_heads=config.num_heads, **kw))
    hop = {l: ProjectionSet(np.eye(D) + rnd(D, D), np.eye(D) + rnd(D, D), rnd(D, D)) for l in config.hopfield_layers}
    fusion = np.vstack([np.eye(D), np.eye(D)]) / 2 + rnd(2 * D, D)
    keys = rng.standard_normal((n_proto, D))
    head = {name: rnd(*shape) for name, shape in head_weight_shapes(D).items()} if with_head else None
    return ModelWeights(patches[0], patches[1], layers, hop, fusion, keys, keys.copy(), head)


@dataclass
class BackboneOutput:
    fused_search: np.ndarray
    search_rgb: np.ndarray
    search_event: np.ndarray
    template_rgb: np.ndarray
    template_event: np.ndarray
    cache_rgb: dict
    cache_event: dict


def forward(rgb_template, rgb_search, event_template, event_search, schedule=None, weights=None, beta=0.25):
    """Run both modality streams through the backbone.

    Args:
        rgb_template, event_template: template token blocks (any number of
            concatenated template groups), ``n_t x D``.
        rgb_search, event_search: search tokens, ``N_x x D``.
        schedule: :class:`LayerSchedule`; defaults to layers 5/8/11.
        weights: :class:`ModelWeights` or ``None`` for identity mode.
        beta: inverse temperature of the cross-modal retrieval.
    """
    schedule = schedule or LayerSchedule()
    zv, xv = np.asarray(rgb_template, dtype=np.float64), np.asarray(rgb_search, dtype=np.float64)
    ze, xe = np.asarray(event_template, dtype=np.float64), np.asarray(event_search, dtype=np.float64)
    if zv.shape != ze.shape or xv.shape != xe.shape:
        raise ShapeError(
            f"modalities disagree: rgb {zv.shape}/{xv.shape}, event {ze.shape}/{xe.shape}"
        )
    n_t = zv.shape[0]
    stream_v = np.vstack([zv, xv])
    stream_e = np.vstack([ze, xe])
    keep = set(schedule.cached_layers)
    cache_v, cache_e = {}, {}
    layers = weights.layers if weights is not None else [None] * schedule.num_layers
    if len(layers) != schedule.num_layers:
        raise ShapeError(f"{len(layers)} layer weights for a {schedule.num_layers}-layer schedule")

    for i, lw in enumerate(layers):
        stream_v = transformer_layer(stream_v, lw)
        stream_e = transformer_layer(stream_e, lw)
        if i in schedule.preceding:
            bank_e = build_bank(cache_e, schedule.preceding[i])
            bank_v = build_bank(cache_v, schedule.preceding[i])
            proj = weights.hopfield[i] if weights is not None else None
            zv_i, ze_i = cross_modal_retrieval(stream_v[n_t:], stream_e[n_t:], bank_e, bank_v, proj, beta)
            stream_v = np.vstack([stream_v[:n_t], zv_i])
            stream_e = np.vstack([stream_e[:n_t], ze_i])
        if i in keep:
            cache_v[i] = stream_v[n_t:].copy()
            cache_e[i] = stream_e[n_t:].copy()

    sv, se = stream_v[n_t:], stream_e[n_t:]
    if weights is not None and weights.fusion is not None:
        fused = np.hstack([sv, se]) @ weights.fusion
    else:
        fused = 0.5 * (sv + se)
    return BackboneOutput(fused, sv, se, stream_v[:n_t], stream_e[:n_t], cache_v, cache_e)
