"""Mask merging, quality filtering, and cross-view association.

Raw candidates arrive at three semantic granularities (subpart, part, whole).
They are merged into two aggregated sets, filtered into disjoint per-frame
masks, and labeled by IoU against category masks propagated from a tracker
(or, for synthetic scenes, an exact geometric oracle).
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingArtifact, ShapeError
from .feature_store.rle import rle_encode
from .feature_store.types import UNLABELED, Mask

SOURCE_SUBPART = "subpart"
SOURCE_PART = "part"
SOURCE_WHOLE = "whole"

DEFAULT_MIN_PRED_IOU = 0.88
DEFAULT_MIN_STABILITY = 0.9
DEFAULT_MAX_OVERLAP = 0.8
ASSOCIATION_IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class CandidateMask:
    bitmap: np.ndarray
    pred_iou: float
    stability: float
    source_scale: str

    def __post_init__(self):
        bm = np.asarray(self.bitmap, dtype=bool)
        if bm.ndim != 2 or not bm.any():
            raise ShapeError("candidate bitmap must be a non-empty 2-D mask")
        object.__setattr__(self, "bitmap", bm)


@dataclass(frozen=True)
class PropagatedMaskSet:
    """Exactly one bitmap per tracked category (bitmaps may be empty)."""
    frame_id: int
    bitmaps: tuple = field(default_factory=tuple)

    @property
    def n_categories(self):
        return len(self.bitmaps)


def _check_same_shape(bitmaps):
    shapes = {bm.shape for bm in bitmaps}
    if len(shapes) > 1:
        raise ShapeError(f"mixed bitmap shapes {sorted(shapes)}")


def merge_scales(subpart, part, whole):
    """Union the three granularities into the two aggregated sets.

    No filtering happens here; duplicates survive untouched.
    """
    all_masks = list(subpart) + list(part) + list(whole)
    if all_masks:
        _check_same_shape([c.bitmap for c in all_masks])
    sp_set = list(subpart) + list(part)
    wp_set = list(whole) + list(part)
    return sp_set, wp_set


def iou(a, b):
    """Intersection over union of two same-shape boolean bitmaps."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ShapeError(f"iou shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    inter = np.logical_and(a, b).sum()
    return float(inter) / float(union)


def filter_masks(
    candidates,
    min_pred_iou=DEFAULT_MIN_PRED_IOU,
    min_stability=DEFAULT_MIN_STABILITY,
    max_overlap=DEFAULT_MAX_OVERLAP,
    frame_id=0,
    scale="wp",
    first_mask_id=0,
):
    """Quality-filter candidates into pairwise-disjoint Mask records.

    Candidates below either quality threshold are dropped. Survivors are
    sorted by descending pred_iou * stability and accepted greedily: each
    later candidate loses the pixels of everything accepted before it, and is
    dropped entirely if the removed fraction of its own area exceeds
    max_overlap or nothing remains. Score ties keep input order.
    """
    masks, _ = filter_masks_traced(
        candidates, min_pred_iou, min_stability, max_overlap,
        frame_id, scale, first_mask_id,
    )
    return masks


def filter_masks_traced(
    candidates,
    min_pred_iou=DEFAULT_MIN_PRED_IOU,
    min_stability=DEFAULT_MIN_STABILITY,
    max_overlap=DEFAULT_MAX_OVERLAP,
    frame_id=0,
    scale="wp",
    first_mask_id=0,
):
    """filter_masks plus the index of the candidate behind each output mask,
    so callers can carry per-candidate payloads (embeddings) along."""
    if not candidates:
        return [], []
    _check_same_shape([c.bitmap for c in candidates])
    kept = [
        i
        for i, c in enumerate(candidates)
        if c.pred_iou >= min_pred_iou and c.stability >= min_stability
    ]
    order = sorted(
        kept,
        key=lambda i: (-candidates[i].pred_iou * candidates[i].stability, i),
    )
    occupied = np.zeros(candidates[0].bitmap.shape, dtype=bool)
    out, sources = [], []
    mask_id = first_mask_id
    for i in order:
        cand = candidates[i]
        overlap = np.logical_and(cand.bitmap, occupied).sum()
        area = cand.bitmap.sum()
        if overlap / area > max_overlap:
            continue
        remaining = np.logical_and(cand.bitmap, ~occupied)
        if not remaining.any():
            continue
        occupied |= remaining
        counts, h, w = rle_encode(remaining)
        out.append(
            Mask(
                mask_id=mask_id,
                frame_id=frame_id,
                scale=scale,
                rle_counts=counts,
                height=h,
                width=w,
                pred_iou=cand.pred_iou,
                stability=cand.stability,
            )
        )
        sources.append(i)
        mask_id += 1
    return out, sources


def associate_frame(frame_masks, propagated, threshold=ASSOCIATION_IOU_THRESHOLD):
    """Label each mask with the category of its best-overlapping propagated
    mask, or -1 when no overlap exceeds the threshold.

    Categories are 1-based. Ties on the maximum IoU go to the lowest
    category index, which makes labels independent of category order.
    """
    if propagated.bitmaps:
        _check_same_shape(list(propagated.bitmaps))
    out = []
    for mask in frame_masks:
        bm = mask.bitmap()
        best_cat = UNLABELED
        best_iou = threshold
        for k, prop in enumerate(propagated.bitmaps):
            if prop.shape != bm.shape:
                raise ShapeError(
                    f"propagated shape {prop.shape} vs mask {bm.shape}"
                )
            v = iou(bm, prop)
            if v > best_iou:
                best_iou = v
                best_cat = k + 1
        out.append(
            Mask(
                mask_id=mask.mask_id,
                frame_id=mask.frame_id,
                scale=mask.scale,
                rle_counts=mask.rle_counts,
                height=mask.height,
                width=mask.width,
                pred_iou=mask.pred_iou,
                stability=mask.stability,
                label=best_cat,
            )
        )
    return out


def erode_disk(bitmap, radius):
    """Binary erosion with a disk structuring element."""
    if radius <= 0:
        return np.asarray(bitmap, dtype=bool).copy()
    from scipy import ndimage

    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    disk = (xx * xx + yy * yy) <= radius * radius
    return ndimage.binary_erosion(np.asarray(bitmap, dtype=bool), structure=disk)


def oracle_propagate(scene, frame_id, erosion_radius=0):
    """Ground-truth category bitmaps for a synthetic scene, standing in for a
    learned video tracker; optionally degraded by disk erosion."""
    if frame_id not in scene.category_bitmaps:
        raise MissingArtifact(f"synthetic scene has no frame {frame_id}")
    bitmaps = tuple(
        erode_disk(bm, erosion_radius) for bm in scene.category_bitmaps[frame_id]
    )
    return PropagatedMaskSet(frame_id=frame_id, bitmaps=bitmaps)
