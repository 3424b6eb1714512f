"""Keypoint similarity (ks), object keypoint similarity (OKS) and the
calibration of the per-part constants.

The instance scale is ``sqrt(area)``, so ``scale**2`` is the annotated pixel
area and ``ks = exp(-d**2 / (2 * area * k**2))``.
"""

from __future__ import annotations

import warnings
from typing import Sequence

import numpy as np

from .data_model import Detection, GtInstance, KeypointSchema


def keypoint_similarity(pred, gt, scale, k):
    """Un-normalized Gaussian similarity between a predicted and a true point.

    ``pred`` and ``gt`` are ``(..., 2)`` coordinates; ``scale`` and ``k`` must
    be positive and broadcast against the leading dimensions.
    """
    scale = np.asarray(scale, dtype=float)
    k = np.asarray(k, dtype=float)
    if np.any(scale <= 0) or np.any(k <= 0):
        raise ValueError("scale and k must be positive")
    d = np.asarray(pred, dtype=float) - np.asarray(gt, dtype=float)
    sq = np.sum(d * d, axis=-1)
    out = np.exp(-sq / (2.0 * scale**2 * k**2))
    return float(out) if out.ndim == 0 else out


def ks_radius(target, scale, k):
    """Distance from a ground-truth point at which ks equals ``target``."""
    target = np.asarray(target, dtype=float)
    if np.any(target <= 0) or np.any(target >= 1):
        raise ValueError("target similarity must lie in (0, 1)")
    out = np.asarray(scale, dtype=float) * np.asarray(k, dtype=float) * np.sqrt(-2.0 * np.log(target))
    return float(out) if out.ndim == 0 else out


def oks_matrix(dets: Sequence[Detection], gts: Sequence[GtInstance],
               schema: KeypointSchema) -> np.ndarray:
    """OKS of every detection against every ground truth, shape ``(D, G)``.

    Columns for ground truths with no labeled keypoint are 0.
    """
    D, G = len(dets), len(gts)
    if D == 0 or G == 0:
        return np.zeros((D, G))
    dxy = np.stack([d.xy for d in dets])            # (D, K, 2)
    gxy = np.stack([g.xy for g in gts])             # (G, K, 2)
    labeled = np.stack([g.visibility > 0 for g in gts])  # (G, K)
    area = np.array([g.area for g in gts], dtype=float)
    k2 = np.asarray(schema.k_constants, dtype=float) ** 2

    diff = dxy[:, None, :, :] - gxy[None, :, :, :]
    sq = np.sum(diff * diff, axis=-1)               # (D, G, K)
    with np.errstate(divide="ignore", invalid="ignore"):
        ks = np.exp(-sq / (2.0 * area[None, :, None] * k2[None, None, :]))
    ks = np.where(labeled[None], ks, 0.0)
    n = labeled.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(n > 0, ks.sum(axis=-1) / np.maximum(n, 1), 0.0)
    return out


def oks(det: Detection, gt: GtInstance, schema: KeypointSchema) -> float:
    """Mean ks over the labeled keypoints of ``gt``."""
    if gt.num_visible == 0:
        raise ValueError(f"ground truth {gt.id} has no labeled keypoints; OKS is undefined")
    if not gt.area > 0:
        raise ValueError(f"ground truth {gt.id} has non-positive area")
    return float(oks_matrix([det], [gt], schema)[0, 0])


def calibrate_constants(groups: Sequence[Sequence[GtInstance]], num_keypoints=None) -> np.ndarray:
    """Estimate per-part constants from redundant annotations of the same people.

    Each group holds two or more annotations of one person. Offsets from the
    group's mean position are normalized by the group scale ``sqrt(mean area)``
    and pooled per keypoint type into a per-axis variance with ``n - 1``
    degrees of freedom per group; the constant is twice that standard
    deviation. Types without any group with two labeled clicks come back NaN.
    """
    if num_keypoints is None:
        sizes = {len(g.visibility) for grp in groups for g in grp}
        if len(sizes) != 1:
            raise ValueError("cannot infer the number of keypoints")
        num_keypoints = sizes.pop()
    K = int(num_keypoints)
    sum_sq = np.zeros(K)
    dof = np.zeros(K)
    for grp in groups:
        if len(grp) < 2:
            continue
        s2 = float(np.mean([g.area for g in grp]))
        if not s2 > 0:
            continue
        xy = np.stack([g.xy for g in grp])                 # (n, K, 2)
        lab = np.stack([g.visibility > 0 for g in grp])    # (n, K)
        for i in range(K):
            pts = xy[lab[:, i], i]
            if len(pts) < 2:
                continue
            dev = pts - pts.mean(axis=0)
            sum_sq[i] += float(np.sum(dev * dev)) / s2
            dof[i] += 2 * (len(pts) - 1)
    k = np.full(K, np.nan)
    ok = dof > 0
    k[ok] = 2.0 * np.sqrt(sum_sq[ok] / dof[ok])
    degenerate = [i for i in range(K) if ok[i] and k[i] == 0.0]
    if degenerate:
        warnings.warn(f"degenerate calibration (annotators agree exactly) for keypoints {degenerate}",
                      RuntimeWarning, stacklevel=2)
    return k


def keypoint_bbox_area(xy: np.ndarray) -> float:
    """Area of the tight axis-aligned box around a set of points."""
    if len(xy) == 0:
        return 0.0
    span = xy.max(axis=0) - xy.min(axis=0)
    return float(span[0] * span[1])


def ks_to_distance(ks_value: float, scale: float, k: float) -> float:
    """Like :func:`ks_radius` but accepts the closed endpoint ``ks == 1``."""
    if ks_value >= 1.0:
        return 0.0
    return ks_radius(ks_value, scale, k)


__all__ = [
    "keypoint_similarity", "ks_radius", "oks", "oks_matrix",
    "calibrate_constants", "keypoint_bbox_area", "ks_to_distance",
]
