"""Axis-aligned boxes in center format and overlap measures."""

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateInputError, ParameterError


@dataclass(frozen=True)
class BBox:
    """Box given by its center ``(cx, cy)`` and size ``(w, h)`` in pixels."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise ParameterError(f"box size must be non-negative, got w={self.w}, h={self.h}")

    @classmethod
    def from_array(cls, a):
        cx, cy, w, h = (float(v) for v in a)
        return cls(cx, cy, w, h)

    @classmethod
    def from_corners(cls, x0, y0, x1, y1):
        return cls((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)

    def as_array(self):
        return np.array([self.cx, self.cy, self.w, self.h])

    def corners(self):
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    @property
    def area(self):
        return self.w * self.h

    @property
    def absent(self):
        """All-zero boxes mark frames where the target is not visible."""
        return self.cx == 0 and self.cy == 0 and self.w == 0 and self.h == 0

    def translate(self, dx, dy):
        return BBox(self.cx + dx, self.cy + dy, self.w, self.h)


def _corners(b):
    """``(..., 4)`` center-format array to x0, y0, x1, y1."""
    b = np.asarray(b, dtype=np.float64)
    return (
        b[..., 0] - b[..., 2] / 2,
        b[..., 1] - b[..., 3] / 2,
        b[..., 0] + b[..., 2] / 2,
        b[..., 1] + b[..., 3] / 2,
    )


def _overlap_terms(a, b):
    ax0, ay0, ax1, ay1 = _corners(a)
    bx0, by0, bx1, by1 = _corners(b)
    iw = np.clip(np.minimum(ax1, bx1) - np.maximum(ax0, bx0), 0, None)
    ih = np.clip(np.minimum(ay1, by1) - np.maximum(ay0, by0), 0, None)
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    enclose = (np.maximum(ax1, bx1) - np.minimum(ax0, bx0)) * (np.maximum(ay1, by1) - np.minimum(ay0, by0))
    return inter, union, enclose


def iou_array(a, b):
    """Vectorized IoU over ``(n, 4)`` center-format arrays; 0 where union is 0."""
    inter, union, _ = _overlap_terms(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)


def iou(a, b):
    """Intersection over union of two boxes.

    Raises:
        DegenerateInputError: if both boxes have zero area.
    """
    inter, union, _ = _overlap_terms(a.as_array(), b.as_array())
    if union <= 0:
        raise DegenerateInputError("IoU undefined: both boxes have zero area")
    return float(inter / union)


def giou_array(a, b):
    inter, union, enclose = _overlap_terms(a, b)
    return inter / union - (enclose - union) / enclose


def giou(a, b):
    """Generalized IoU in (-1, 1].

    Raises:
        DegenerateInputError: if both boxes have zero area.
    """
    inter, union, enclose = _overlap_terms(a.as_array(), b.as_array())
    if union <= 0 or enclose <= 0:
        raise DegenerateInputError("GIoU undefined: both boxes have zero area")
    return float(inter / union - (enclose - union) / enclose)


def giou_grad(pred, target):
    """Gradient of ``giou(pred, target)`` with respect to ``(cx, cy, w, h)`` of ``pred``.

    Subgradients at min/max ties follow the branch taken in the forward pass.
    """
    p = pred.as_array()
    t = target.as_array()
    px0, py0, px1, py1 = _corners(p)
    tx0, ty0, tx1, ty1 = _corners(t)

    ix0, ix1 = max(px0, tx0), min(px1, tx1)
    iy0, iy1 = max(py0, ty0), min(py1, ty1)
    iw, ih = max(ix1 - ix0, 0.0), max(iy1 - iy0, 0.0)
    inter = iw * ih
    pa = (px1 - px0) * (py1 - py0)
    union = pa + (tx1 - tx0) * (ty1 - ty0) - inter
    ex0, ex1 = min(px0, tx0), max(px1, tx1)
    ey0, ey1 = min(py0, ty0), max(py1, ty1)
    ew, eh = ex1 - ex0, ey1 - ey0
    enclose = ew * eh

    # derivatives w.r.t. the predicted corners (x0, y0, x1, y1)
    d_iw = np.array([-float(px0 > tx0), 0.0, float(px1 < tx1), 0.0]) if iw > 0 else np.zeros(4)
    d_ih = np.array([0.0, -float(py0 > ty0), 0.0, float(py1 < ty1)]) if ih > 0 else np.zeros(4)
    d_inter = d_iw * ih + d_ih * iw
    d_pa = np.array([-(py1 - py0), -(px1 - px0), py1 - py0, px1 - px0])
    d_union = d_pa - d_inter
    d_ew = np.array([-float(px0 < tx0), 0.0, float(px1 > tx1), 0.0])
    d_eh = np.array([0.0, -float(py0 < ty0), 0.0, float(py1 > ty1)])
    d_enclose = d_ew * eh + d_eh * ew

    # giou = inter/union - 1 + union/enclose
    d_corners = (d_inter * union - inter * d_union) / union**2 + (
        d_union * enclose - union * d_enclose
    ) / enclose**2

    # corners = (cx - w/2, cy - h/2, cx + w/2, cy + h/2)
    jac = np.array(
        [
            [1.0, 0.0, -0.5, 0.0],
            [0.0, 1.0, 0.0, -0.5],
            [1.0, 0.0, 0.5, 0.0],
            [0.0, 1.0, 0.0, 0.5],
        ]
    )
    return d_corners @ jac
