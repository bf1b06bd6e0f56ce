"""Template/search area extraction and patch tokenization."""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import DegenerateInputError, ShapeError
from .validation import check_matrix

PATCH_SIZE = 16
TEMPLATE_SIZE = 128
SEARCH_SIZE = 256
TEMPLATE_FACTOR = 2.0
SEARCH_FACTOR = 4.0
DEFAULT_DIM = 64
IDENTITY_SEED = 20240917
IDENTITY_POS_SCALE = 0.1


@dataclass(frozen=True)
class CropGeometry:
    """Square crop of side ``side`` frame pixels centred on ``(cx, cy)``, resampled to ``out_size``."""

    cx: float
    cy: float
    side: float
    out_size: int

    @property
    def scale(self):
        """Crop pixels per frame pixel."""
        return self.out_size / self.side

    def to_frame(self, u, v):
        """Crop coordinates (continuous, origin at the crop corner) to frame coordinates."""
        return (
            self.cx + (u - self.out_size / 2) / self.scale,
            self.cy + (v - self.out_size / 2) / self.scale,
        )

    def to_crop(self, x, y):
        return (
            (x - self.cx) * self.scale + self.out_size / 2,
            (y - self.cy) * self.scale + self.out_size / 2,
        )


def crop_geometry(box, context_factor, out_size):
    if not (box.w > 0 and box.h > 0):
        raise DegenerateInputError(f"cannot crop around a degenerate box {box}")
    side = context_factor * float(np.sqrt(box.w * box.h))
    return CropGeometry(box.cx, box.cy, side, int(out_size))


def crop_resize(frame, box, context_factor, out_size, fill=None):
    """Square context crop around ``box``, bilinearly resized to ``out_size``.

    Frame pixel ``j`` covers the continuous interval ``[j, j + 1)``. Samples
    falling outside the frame take the per-channel frame mean (or ``fill``).

    Returns:
        (crop, geometry)
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3:
        raise ShapeError(f"frame must be H x W x C, got {frame.shape}")
    geom = crop_geometry(box, context_factor, out_size)
    h, w, _ = frame.shape
    u = np.arange(out_size) + 0.5
    xs, ys = geom.to_frame(u, u)
    inside = (ys[:, None] >= 0) & (ys[:, None] < h) & (xs[None, :] >= 0) & (xs[None, :] < w)

    # sample positions in pixel-centre index space
    fx = np.clip(xs - 0.5, 0, w - 1)
    fy = np.clip(ys - 0.5, 0, h - 1)
    x0 = np.floor(fx).astype(int)
    y0 = np.floor(fy).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (fx - x0)[None, :, None]
    wy = (fy - y0)[:, None, None]
    # separable lerp, rows then columns, in place: a + (b - a) * w
    rows = np.take(frame, y1, axis=0)
    top = np.take(frame, y0, axis=0)
    rows -= top
    rows *= wy
    rows += top
    crop = np.take(rows, x1, axis=1)
    left = np.take(rows, x0, axis=1)
    crop -= left
    crop *= wx
    crop += left
    if not inside.all():
        if fill is None:
            flat = frame.reshape(-1, frame.shape[2])
            fill = np.ones(flat.shape[0]) @ flat / flat.shape[0]
        crop[~inside] = fill
    return crop, geom


def sinusoidal_2d(grid_h, grid_w, dim):
    """Fixed 2-D sine/cosine position encoding, one row per grid cell (row-major).

    The first half of the channels encodes the row index, the second half the
    column index.
    """
    if dim % 4:
        raise ShapeError(f"sinusoidal encoding needs dim divisible by 4, got {dim}")
    return _sinusoidal_2d(int(grid_h), int(grid_w), int(dim)).copy()


@lru_cache(maxsize=16)
def _sinusoidal_2d(grid_h, grid_w, dim):
    quarter = dim // 4
    omega = 1.0 / 10000 ** (np.arange(quarter) / quarter)

    def encode(pos):
        ang = pos[:, None] * omega[None, :]
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)

    rows, cols = np.meshgrid(np.arange(grid_h, dtype=float), np.arange(grid_w, dtype=float), indexing="ij")
    return np.concatenate([encode(rows.ravel()), encode(cols.ravel())], axis=1)


def orthonormal_projection(in_dim, out_dim, seed=IDENTITY_SEED):
    """Deterministic ``in_dim x out_dim`` matrix with orthonormal columns."""
    return _orthonormal(int(in_dim), int(out_dim), int(seed)).copy()


@lru_cache(maxsize=8)
def _orthonormal(in_dim, out_dim, seed):
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((in_dim, out_dim)))
    return q * np.sign(np.diag(r))[None, :]


@dataclass
class PatchEmbedWeights:
    """Linear patch projection plus optional learned position tables.

    ``pos_tables`` maps a grid shape ``(grid_h, grid_w)`` to an ``N x D``
    table; grids without a table use the sinusoidal encoding.
    """

    projection: np.ndarray
    bias: np.ndarray = None
    pos_tables: dict = None
    patch_size: int = PATCH_SIZE
    pos_scale: float = 1.0

    @property
    def dim(self):
        return self.projection.shape[1]

    @classmethod
    def identity(cls, dim=DEFAULT_DIM, patch_size=PATCH_SIZE, channels=3, pos_scale=IDENTITY_POS_SCALE):
        return cls(orthonormal_projection(patch_size * patch_size * channels, dim), patch_size=patch_size,
                   pos_scale=pos_scale)

    def position_encoding(self, grid_h, grid_w):
        if self.pos_tables and (grid_h, grid_w) in self.pos_tables:
            return self.pos_tables[(grid_h, grid_w)]
        return self.pos_scale * sinusoidal_2d(grid_h, grid_w, self.dim)


@dataclass
class TokenSequence:
    tokens: np.ndarray
    grid_h: int
    grid_w: int
    modality: str = "rgb"
    kind: str = "search"

    def __post_init__(self):
        if self.tokens.shape[0] != self.grid_h * self.grid_w:
            raise ShapeError(f"{self.tokens.shape[0]} tokens for a {self.grid_h}x{self.grid_w} grid")

    def __len__(self):
        return self.tokens.shape[0]


def patchify(image, patch_size=PATCH_SIZE):
    """Split ``H x W x C`` into non-overlapping patches flattened channel-major.

    Returns:
        (patches, grid_h, grid_w) with ``patches`` of shape ``N x (C*P*P)``.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ShapeError(f"image must be H x W x C, got {image.shape}")
    h, w, c = image.shape
    p = patch_size
    if h % p or w % p:
        raise ShapeError(f"image {h}x{w} is not divisible into {p}x{p} patches")
    gh, gw = h // p, w // p
    patches = image.reshape(gh, p, gw, p, c).transpose(0, 2, 4, 1, 3).reshape(gh * gw, c * p * p)
    return patches, gh, gw


def patch_embed(image, weights, modality="rgb", kind=None, add_position=True):
    """Project patches to tokens and add the position encoding."""
    patches, gh, gw = patchify(image, weights.patch_size)
    proj = check_matrix(weights.projection, "projection")
    if proj.shape[0] != patches.shape[1]:
        raise ShapeError(f"projection {proj.shape} does not accept patches of length {patches.shape[1]}")
    tokens = patches @ proj
    if weights.bias is not None:
        tokens = tokens + weights.bias
    if add_position:
        tokens = tokens + weights.position_encoding(gh, gw)
    if kind is None:
        kind = "template" if gh * gw <= (TEMPLATE_SIZE // PATCH_SIZE) ** 2 else "search"
    return TokenSequence(tokens, gh, gw, modality, kind)
