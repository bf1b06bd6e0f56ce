"""One-pass evaluation: success AUC, precision at 20 px, normalized precision."""

import csv
from dataclasses import dataclass, field
import json
from pathlib import Path

import numpy as np

from .boxes import iou, iou_array
from .exceptions import AlignmentError
from .sequence import check_attributes, read_attributes, read_groundtruth, read_predictions

IOU_THRESHOLDS = np.linspace(0.0, 1.0, 101)
PIXEL_THRESHOLDS = np.arange(0, 51, dtype=np.float64)
NORM_THRESHOLDS = np.linspace(0.0, 0.5, 101)
PRECISION_PX = 20.0

__all__ = ["iou", "SequenceResult", "EvalReport", "evaluate", "attribute_breakdown"]


@dataclass
class SequenceResult:
    name: str
    pred: np.ndarray  # n x 4 (cx, cy, w, h)
    gt: np.ndarray  # n x 4, all-zero rows = absent
    scores: np.ndarray = None
    attributes: list = field(default_factory=list)

    def __post_init__(self):
        self.pred = np.asarray(self.pred, dtype=np.float64).reshape(-1, 4)
        self.gt = np.asarray(self.gt, dtype=np.float64).reshape(-1, 4)
        if self.pred.shape[0] != self.gt.shape[0]:
            raise AlignmentError(
                f"{self.name}: {self.pred.shape[0]} predictions for {self.gt.shape[0]} ground-truth frames"
            )
        self.attributes = check_attributes(self.attributes)

    @property
    def present(self):
        return ~np.all(self.gt == 0, axis=1)


@dataclass
class SequenceScores:
    frames: int
    graded_frames: int
    sr: float = None
    pr: float = None
    npr: float = None
    success: np.ndarray = None
    precision: np.ndarray = None
    norm_precision: np.ndarray = None

    @property
    def graded(self):
        return self.graded_frames > 0


def score_sequence(res):
    keep = res.present
    scores = SequenceScores(frames=len(res.gt), graded_frames=int(keep.sum()))
    if not scores.graded:
        return scores
    pred, gt = res.pred[keep], res.gt[keep]
    overlaps = iou_array(pred, gt)
    err = np.hypot(pred[:, 0] - gt[:, 0], pred[:, 1] - gt[:, 1])
    norm_err = err / np.sqrt(gt[:, 2] * gt[:, 3])

    scores.success = (overlaps[None, :] > IOU_THRESHOLDS[:, None]).mean(axis=1)
    scores.precision = (err[None, :] <= PIXEL_THRESHOLDS[:, None]).mean(axis=1)
    scores.norm_precision = (norm_err[None, :] <= NORM_THRESHOLDS[:, None]).mean(axis=1)
    scores.sr = float(scores.success.mean())
    scores.pr = float((err <= PRECISION_PX).mean())
    scores.npr = float(scores.norm_precision.mean())
    return scores


@dataclass
class EvalReport:
    sr: float
    pr: float
    npr: float
    success: np.ndarray
    precision: np.ndarray
    norm_precision: np.ndarray
    sequences: dict
    attributes: dict

    def to_dict(self):
        return {
            "SR": self.sr,
            "PR": self.pr,
            "NPR": self.npr,
            "sequences": {
                name: {
                    "SR": s.sr,
                    "PR": s.pr,
                    "NPR": s.npr,
                    "frames": s.frames,
                    "graded_frames": s.graded_frames,
                    "graded": s.graded,
                }
                for name, s in sorted(self.sequences.items())
            },
            "attributes": dict(sorted(self.attributes.items())),
            "curves": {
                "iou_thresholds": IOU_THRESHOLDS.tolist(),
                "success": _tolist(self.success),
                "pixel_thresholds": PIXEL_THRESHOLDS.tolist(),
                "precision": _tolist(self.precision),
                "norm_thresholds": NORM_THRESHOLDS.tolist(),
                "norm_precision": _tolist(self.norm_precision),
            },
        }

    def write(self, out_dir):
        """Write ``report.json`` and ``curves.csv`` into ``out_dir``.

        Row ``i`` of the CSV holds success at IoU threshold ``i/100``,
        precision at ``i`` pixels (blank past 50) and normalized precision at
        ``i/200``; the ``threshold`` column is the IoU threshold.
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        with (out / "curves.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "success", "precision", "norm_precision"])
            for i, t in enumerate(IOU_THRESHOLDS):
                prec = "" if self.precision is None or i >= len(PIXEL_THRESHOLDS) else repr(float(self.precision[i]))
                w.writerow([
                    repr(float(t)),
                    "" if self.success is None else repr(float(self.success[i])),
                    prec,
                    "" if self.norm_precision is None else repr(float(self.norm_precision[i])),
                ])


def _tolist(a):
    return None if a is None else [float(v) for v in a]


def _mean(values):
    return float(np.mean(values)) if values else None


def evaluate(results):
    """Score every sequence and average over the graded ones.

    Sequences whose target is absent in every frame are reported as ungraded
    and left out of the aggregate.
    """
    results = sorted(results, key=lambda r: r.name)
    per_seq = {r.name: score_sequence(r) for r in results}
    graded = [s for s in per_seq.values() if s.graded]
    if graded:
        success = np.mean([s.success for s in graded], axis=0)
        precision = np.mean([s.precision for s in graded], axis=0)
        norm_precision = np.mean([s.norm_precision for s in graded], axis=0)
    else:
        success = precision = norm_precision = None
    return EvalReport(
        sr=_mean([s.sr for s in graded]),
        pr=_mean([s.pr for s in graded]),
        npr=_mean([s.npr for s in graded]),
        success=success,
        precision=precision,
        norm_precision=norm_precision,
        sequences=per_seq,
        attributes=attribute_breakdown(results, per_seq),
    )


def attribute_breakdown(results, per_seq=None):
    """Mean SR over the graded sequences carrying each attribute; absent attributes are omitted."""
    if per_seq is None:
        per_seq = {r.name: score_sequence(r) for r in results}
    table = {}
    for r in results:
        s = per_seq[r.name]
        if not s.graded:
            continue
        for code in check_attributes(r.attributes):
            table.setdefault(code, []).append(s.sr)
    return {code: float(np.mean(v)) for code, v in sorted(table.items())}


def load_results(pred_dir, gt_dir):
    """Pair ``<pred_dir>/<name>.txt`` with the sequence directory ``<gt_dir>/<name>``."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    results = []
    for seq in sorted(p for p in gt_dir.iterdir() if (p / "groundtruth.txt").exists()):
        pred_file = pred_dir / f"{seq.name}.txt"
        if not pred_file.exists():
            raise AlignmentError(f"no prediction file for sequence {seq.name}")
        boxes, scores = read_predictions(pred_file)
        results.append(
            SequenceResult(seq.name, boxes, read_groundtruth(seq / "groundtruth.txt"), scores,
                           read_attributes(seq / "attributes.txt"))
        )
    return results
