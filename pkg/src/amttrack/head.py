"""Center-based localization head, box decoding and training losses."""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .boxes import BBox, giou, giou_grad
from .exceptions import ShapeError

LAMBDA_L1 = 5.0
LAMBDA_IOU = 2.0
FOCAL_ALPHA = 2
FOCAL_BETA = 4
BRANCH_OUT = {"score": 1, "offset": 2, "size": 2}


@dataclass
class ResponseMaps:
    """Head outputs on a G x G grid of search cells.

    ``offset`` is in cell units, ``size`` is (w, h) as fractions of the search
    crop side. Channel order of both is (x, y).
    """

    score: np.ndarray  # G x G in [0, 1]
    offset: np.ndarray  # 2 x G x G
    size: np.ndarray  # 2 x G x G

    def __post_init__(self):
        g = self.score.shape
        if self.offset.shape != (2, *g) or self.size.shape != (2, *g):
            raise ShapeError(f"map shapes disagree: {g}, {self.offset.shape}, {self.size.shape}")

    @property
    def grid(self):
        return self.score.shape[0]


def head_weight_shapes(dim):
    """Three 3-layer conv branches: 3x3 (D -> D/2), 3x3 (D/2 -> D/4), 1x1 (D/4 -> out)."""
    c1, c2 = max(dim // 2, 1), max(dim // 4, 1)
    shapes = {}
    for branch, out in BRANCH_OUT.items():
        for k, (cout, cin, ks) in enumerate([(c1, dim, 3), (c2, c1, 3), (out, c2, 1)]):
            shapes[f"{branch}.conv{k}.weight"] = (cout, cin, ks, ks)
            shapes[f"{branch}.conv{k}.bias"] = (cout,)
    return shapes


def conv2d(x, weight, bias):
    """Same-padded stride-1 convolution of ``C x H x W`` input."""
    cout, cin, kh, kw = weight.shape
    if x.shape[0] != cin:
        raise ShapeError(f"conv expects {cin} input channels, got {x.shape[0]}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # C x H x W x kh x kw
    return np.einsum("chwij,ocij->ohw", windows, weight) + bias[:, None, None]


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _branch(x, head, branch):
    for k in range(3):
        x = conv2d(x, head[f"{branch}.conv{k}.weight"], head[f"{branch}.conv{k}.bias"])
        if k < 2:
            x = np.maximum(x, 0.0)
    return x


def identity_score(fused_search, references, grid):
    """Template-similarity score map used when no head weights are loaded.

    Search tokens are centred on their grid mean; each reference vector is a
    centred target descriptor of one template group. The score is the mean
    cosine similarity to the references mapped from [-1, 1] to [0, 1].
    """
    X = fused_search - fused_search.mean(axis=0, keepdims=True)
    xn = np.linalg.norm(X, axis=1)
    sims = []
    for ref in references:
        rn = np.linalg.norm(ref)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.where((xn > 1e-12) & (rn > 1e-12), X @ ref / (xn * rn), 0.0)
        sims.append(c)
    score = (np.clip(np.max(sims, axis=0), -1.0, 1.0) + 1.0) / 2.0
    return score.reshape(grid, grid)


def peak_offsets(score):
    """Sub-cell offsets from a 3-point parabola fit along each axis.

    Offsets are in cell units from the cell corner; a cell whose neighbours
    are level (or that is not a local peak) gets the cell centre, 0.5.
    Edges are padded by replication.
    """
    p = np.pad(score, 1, mode="edge")
    c = p[1:-1, 1:-1]

    def fit(lo, hi):
        curv = lo - 2 * c + hi
        with np.errstate(invalid="ignore", divide="ignore"):
            d = np.where(curv < 0, 0.5 * (lo - hi) / curv, 0.0)
        return np.clip(d, -0.5, 0.5)

    dx = fit(p[1:-1, :-2], p[1:-1, 2:])
    dy = fit(p[:-2, 1:-1], p[2:, 1:-1])
    return np.stack([0.5 + dx, 0.5 + dy])


def head_forward(fused_search, head_weights=None, references=None, prev_size=(0.25, 0.25)):
    """Produce score/offset/size maps from fused search tokens.

    Args:
        fused_search: ``N_x x D`` tokens on a square grid.
        head_weights: conv branch tensors (see :func:`head_weight_shapes`), or
            ``None`` for the identity head.
        references: identity head only; centred template descriptors.
        prev_size: identity head only; previous box size as fractions of the
            search side.
    """
    fused_search = np.asarray(fused_search, dtype=np.float64)
    n = fused_search.shape[0]
    grid = int(round(np.sqrt(n)))
    if grid * grid != n:
        raise ShapeError(f"{n} search tokens do not form a square grid")
    if head_weights is None:
        if not references:
            raise ShapeError("identity head needs at least one template reference")
        score = identity_score(fused_search, references, grid)
        offset = peak_offsets(score)
        size = np.empty((2, grid, grid))
        size[0], size[1] = prev_size
        return ResponseMaps(score, offset, size)
    x = fused_search.T.reshape(-1, grid, grid)
    score = _sigmoid(_branch(x, head_weights, "score"))[0]
    offset = _branch(x, head_weights, "offset")
    size = _sigmoid(_branch(x, head_weights, "size"))
    return ResponseMaps(score, offset, size)


def decode_box(maps, geometry, patch_size=16, score_map=None):
    """Box at the arg-max cell, mapped back to frame coordinates.

    ``score_map`` optionally replaces ``maps.score`` for the arg-max (e.g. a
    windowed copy); the returned score is always read from ``maps.score``.
    """
    sel = maps.score if score_map is None else score_map
    r, c = np.unravel_index(int(np.argmax(sel)), sel.shape)
    u = (c + maps.offset[0, r, c]) * patch_size
    v = (r + maps.offset[1, r, c]) * patch_size
    cx, cy = geometry.to_frame(u, v)
    w = maps.size[0, r, c] * geometry.side
    h = maps.size[1, r, c] * geometry.side
    return BBox(float(cx), float(cy), float(w), float(h)), float(maps.score[r, c])


def encode_box(box, geometry, patch_size=16, grid=16):
    """Inverse of :func:`decode_box`: a delta score map at the box's cell."""
    u, v = geometry.to_crop(box.cx, box.cy)
    c = int(np.clip(np.floor(u / patch_size), 0, grid - 1))
    r = int(np.clip(np.floor(v / patch_size), 0, grid - 1))
    score = np.zeros((grid, grid))
    score[r, c] = 1.0
    offset = np.zeros((2, grid, grid))
    offset[0, r, c] = u / patch_size - c
    offset[1, r, c] = v / patch_size - r
    size = np.zeros((2, grid, grid))
    size[0, r, c] = box.w / geometry.side
    size[1, r, c] = box.h / geometry.side
    return ResponseMaps(score, offset, size)


def gaussian_radius(height, width, min_overlap=0.7):
    """CornerNet radius: largest corner shift keeping IoU >= ``min_overlap``."""
    a1 = 1
    b1 = height + width
    c1 = width * height * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 + np.sqrt(b1**2 - 4 * a1 * c1)) / 2
    a2 = 4
    b2 = 2 * (height + width)
    c2 = (1 - min_overlap) * width * height
    r2 = (b2 + np.sqrt(b2**2 - 4 * a2 * c2)) / 2
    a3 = 4 * min_overlap
    b3 = -2 * min_overlap * (height + width)
    c3 = (min_overlap - 1) * width * height
    r3 = (b3 + np.sqrt(b3**2 - 4 * a3 * c3)) / 2
    return min(r1, r2, r3)


def gaussian_heatmap(center_cell, size_cells, grid=16):
    """Ground-truth heatmap: 1 at the centre cell, Gaussian falloff with sigma = radius / 3."""
    cx, cy = center_cell
    radius = max(0, int(gaussian_radius(size_cells[1], size_cells[0])))
    ys, xs = np.mgrid[0:grid, 0:grid]
    heat = np.zeros((grid, grid))
    if radius == 0:
        heat[cy, cx] = 1.0
        return heat
    sigma = radius / 3.0
    g = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma**2))
    g[np.abs(xs - cx) > radius] = 0.0
    g[np.abs(ys - cy) > radius] = 0.0
    g[cy, cx] = 1.0
    return g


def focal_loss(pred, target, alpha=FOCAL_ALPHA, beta=FOCAL_BETA):
    """Penalty-reduced pixel-wise focal loss, normalized by the number of positives."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    tiny = np.finfo(np.float64).tiny
    pos = target == 1.0
    pos_loss = np.where(pos, (1 - pred) ** alpha * np.log(np.maximum(pred, tiny)), 0.0)
    neg_loss = np.where(~pos, (1 - target) ** beta * pred**alpha * np.log(np.maximum(1 - pred, tiny)), 0.0)
    num_pos = max(int(pos.sum()), 1)
    return float(-(pos_loss.sum() + neg_loss.sum()) / num_pos)


def l1_loss(pred, target, scale=1.0):
    """Mean absolute error over (cx, cy, w, h), each divided by ``scale``."""
    return float(np.mean(np.abs(pred.as_array() - target.as_array())) / scale)


def l1_grad(pred, target, scale=1.0):
    return np.sign(pred.as_array() - target.as_array()) / (4.0 * scale)


@dataclass
class LossTerms:
    l1: float
    iou: float
    focal: float
    total: float


def total_loss(pred_box, gt_box, score_map=None, gt_heatmap=None, lambda_l1=LAMBDA_L1, lambda_iou=LAMBDA_IOU, scale=1.0):
    """Weighted sum of L1, GIoU and focal terms; the focal term is 0 without maps."""
    l1 = l1_loss(pred_box, gt_box, scale)
    liou = 1.0 - giou(pred_box, gt_box)
    focal = focal_loss(score_map, gt_heatmap) if score_map is not None else 0.0
    return LossTerms(l1, liou, focal, lambda_l1 * l1 + lambda_iou * liou + focal)


def box_loss_grad(pred_box, gt_box, lambda_l1=LAMBDA_L1, lambda_iou=LAMBDA_IOU, scale=1.0):
    """Gradient of the L1 and GIoU terms w.r.t. the predicted ``(cx, cy, w, h)``."""
    return lambda_l1 * l1_grad(pred_box, gt_box, scale) - lambda_iou * giou_grad(pred_box, gt_box)
