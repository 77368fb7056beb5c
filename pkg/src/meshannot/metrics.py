"""Segmentation scoring and user-study aggregation.

Weighted confusion matrices (face area or texel count), per-class IoU, OA,
mAcc, mIoU, boundary IoU over morphological bands, and the scene-then-user
averaging used for interactive-annotation comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .mesh_core import TexturedMesh


class MetricsError(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    """Square weight matrix; rows = truth, columns = prediction."""

    weights: np.ndarray
    class_ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 2 or self.weights.shape[0] != self.weights.shape[1]:
            raise MetricsError("confusion matrix must be square")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise MetricsError("confusion weights must be finite and non-negative")
        if not self.class_ids:
            self.class_ids = list(range(self.weights.shape[0]))

    @classmethod
    def from_labels(cls, truth, pred, weights=None, n_classes=None,
                    ignore_truth_zero: bool = False) -> "ConfusionMatrix":
        truth = np.asarray(truth, dtype=np.int64).ravel()
        pred = np.asarray(pred, dtype=np.int64).ravel()
        if truth.shape != pred.shape:
            raise MetricsError("truth and prediction shapes differ")
        if weights is None:
            weights = np.ones(truth.shape)
        weights = np.asarray(weights, dtype=float).ravel()
        n = int(n_classes or (max(truth.max(initial=0), pred.max(initial=0)) + 1))
        keep = np.ones(truth.shape, dtype=bool)
        if ignore_truth_zero:
            keep = truth != 0
        mat = np.zeros((n, n))
        np.add.at(mat, (truth[keep], pred[keep]), weights[keep])
        return cls(mat)


@dataclass(frozen=True)
class SegmentationScores:
    per_class_iou: dict[int, float]
    overall_accuracy: float
    mean_accuracy: float
    mean_iou: float


def segmentation_scores(confusion: ConfusionMatrix) -> SegmentationScores:
    """Per-class IoU, overall accuracy, mean class recall, and mean IoU.

    Classes absent from both truth and prediction are excluded from the
    means; mAcc averages recalls over classes with truth weight only.
    """
    m = confusion.weights
    total = m.sum()
    if total <= 0:
        raise MetricsError("confusion matrix is all-zero")
    tp = np.diag(m)
    truth_w = m.sum(axis=1)
    pred_w = m.sum(axis=0)
    union = truth_w + pred_w - tp

    per_class = {}
    ious = []
    recalls = []
    for c, cid in enumerate(confusion.class_ids):
        if union[c] > 0:
            iou = float(tp[c] / union[c])
            per_class[cid] = iou
            ious.append(iou)
        if truth_w[c] > 0:
            recalls.append(float(tp[c] / truth_w[c]))
    return SegmentationScores(
        per_class_iou=per_class,
        overall_accuracy=float(tp.sum() / total),
        mean_accuracy=float(np.mean(recalls)) if recalls else 0.0,
        mean_iou=float(np.mean(ious)) if ious else 0.0,
    )


def mean_iou(per_class_ious) -> float:
    """Mean of already-computed per-class IoUs (e.g. a published table row)."""
    vals = np.asarray(list(per_class_ious), dtype=float)
    if vals.size == 0:
        raise MetricsError("no per-class IoUs given")
    return float(vals.mean())


def _boundary_band_raster(mask: np.ndarray, band: int) -> np.ndarray:
    """Texels of the mask within `band` of its complement (morphological
    inner boundary), computed by erosion."""
    if band <= 0:
        return mask.copy()
    structure = ndimage.generate_binary_structure(2, 1)
    eroded = ndimage.binary_erosion(mask, structure=structure, iterations=band,
                                    border_value=1)
    return mask & ~eroded


def boundary_iou(pred: np.ndarray, truth: np.ndarray,
                 band: int | None = None) -> float:
    """IoU restricted to the boundary bands of each raster mask, per class,
    averaged over classes present in either mask.

    The default band is 2% of the image diagonal (at least 1 texel).
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise MetricsError("mask shapes differ")
    if band is None:
        band = max(int(round(0.02 * math.hypot(*pred.shape))), 1)
    classes = sorted(set(np.unique(pred)) | set(np.unique(truth)))
    vals = []
    for c in classes:
        p = pred == c
        t = truth == c
        pb = _boundary_band_raster(p, band)
        tb = _boundary_band_raster(t, band)
        inter = float((pb & tb).sum())
        union = float((pb | tb).sum())
        if union > 0:
            vals.append(inter / union)
    return float(np.mean(vals)) if vals else 1.0


def boundary_iou_mesh(mesh: TexturedMesh, pred: np.ndarray, truth: np.ndarray,
                      rings: int = 1) -> float:
    """Mesh variant: the band is faces within `rings` of a differently
    labeled face, per labeling; per-class area-weighted IoU over the bands."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape or len(pred) != mesh.n_faces:
        raise MetricsError("label shapes differ from the mesh")

    def band_faces(labels: np.ndarray) -> np.ndarray:
        band = np.zeros(mesh.n_faces, dtype=bool)
        for f in range(mesh.n_faces):
            for nb in mesh.adjacency[f]:
                if labels[int(nb)] != labels[f]:
                    band[f] = True
                    break
        for _ in range(rings - 1):
            grown = band.copy()
            for f in np.nonzero(band)[0]:
                for nb in mesh.adjacency[int(f)]:
                    grown[int(nb)] = True
            band = grown
        return band

    pb = band_faces(pred)
    tb = band_faces(truth)
    areas = mesh.face_areas
    classes = sorted(set(np.unique(pred)) | set(np.unique(truth)))
    vals = []
    for c in classes:
        p = (pred == c) & pb
        t = (truth == c) & tb
        inter = float(areas[p & t].sum())
        union = float(areas[p | t].sum())
        if union > 0:
            vals.append(inter / union)
    return float(np.mean(vals)) if vals else 1.0


@dataclass(frozen=True)
class UserStudyRecord:
    """One user's annotation of one scene."""

    scene: str
    user: str
    iou_per_class: tuple[float, ...]        # percentages
    biou_per_class: tuple[float, ...]       # percentages
    operations: float
    time_s: float
    smart_ratio: float                      # in [0, 1] (or percent / 100)

    def __post_init__(self):
        if self.operations < 0 or self.time_s < 0:
            raise MetricsError("counts and time must be non-negative")


@dataclass(frozen=True)
class UserStudySummary:
    mean_iou: float
    mean_biou: float
    mean_operations: float
    mean_time: float
    mean_smart_ratio: float


def aggregate_user_study(records: list[UserStudyRecord]) -> UserStudySummary:
    """Scene-wise means over users and classes, then an unweighted mean over
    scenes. Rejects duplicate (scene, user) pairs; order-invariant."""
    if not records:
        raise MetricsError("no records")
    seen = set()
    scenes: dict[str, list[UserStudyRecord]] = {}
    for r in records:
        key = (r.scene, r.user)
        if key in seen:
            raise MetricsError(f"duplicate record for {key}")
        seen.add(key)
        scenes.setdefault(r.scene, []).append(r)

    per_scene = []
    for scene in sorted(scenes):
        rs = scenes[scene]
        ious = [v for r in rs for v in r.iou_per_class]
        bious = [v for r in rs for v in r.biou_per_class]
        per_scene.append((
            float(np.mean(ious)) if ious else 0.0,
            float(np.mean(bious)) if bious else 0.0,
            float(np.mean([r.operations for r in rs])),
            float(np.mean([r.time_s for r in rs])),
            float(np.mean([r.smart_ratio for r in rs])),
        ))
    arr = np.array(per_scene)
    return UserStudySummary(*(float(v) for v in arr.mean(axis=0)))
