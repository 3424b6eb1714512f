"""Domain types and COCO-keypoints ingestion.

Ground truth and detections are read from the standard COCO files:

* ground truth: ``{"images": [...], "annotations": [...]}`` where every
  annotation carries a flat ``keypoints`` list ``[x1, y1, v1, ...]``;
* detections: a JSON array of ``{"image_id", "keypoints", "score"}`` records.

All records are immutable once loaded. Keypoint coordinates are stored as
read-only ``(K, 2)`` float arrays so that similarity code can stay vectorized.
"""

from __future__ import annotations

import dataclasses
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import IntEnum
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np


class ValidationError(ValueError):
    """Input data violates a structural or semantic constraint."""


class EmptyEvaluationError(ValueError):
    """No ground truth is left to evaluate against."""


class Visibility(IntEnum):
    UNLABELED = 0
    OCCLUDED = 1
    VISIBLE = 2


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    visibility: Visibility


def _frozen_array(values, shape=None, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


def _arrays_equal(a, b) -> bool:
    if a is None or b is None:
        return a is b
    return a.shape == b.shape and bool(np.array_equal(a, b))


@dataclass(frozen=True, eq=False)
class GtInstance:
    """One annotated person."""

    id: int
    image_id: int
    xy: np.ndarray
    visibility: np.ndarray
    area: float
    bbox: tuple[float, float, float, float]
    segmentation: Any = None
    iscrowd: bool = False

    @property
    def num_keypoints(self) -> int:
        return len(self.visibility)

    @property
    def num_visible(self) -> int:
        return int(np.count_nonzero(self.visibility > 0))

    @property
    def excluded(self) -> bool:
        """Crowd regions and instances without labeled parts are not evaluated."""
        return bool(self.iscrowd) or self.num_visible == 0

    @property
    def scale(self) -> float:
        return math.sqrt(self.area)

    @property
    def keypoints(self) -> tuple[Keypoint, ...]:
        return tuple(
            Keypoint(float(x), float(y), Visibility(int(v)))
            for (x, y), v in zip(self.xy, self.visibility)
        )

    def __eq__(self, other):
        if not isinstance(other, GtInstance):
            return NotImplemented
        return (
            self.id == other.id
            and self.image_id == other.image_id
            and _arrays_equal(self.xy, other.xy)
            and _arrays_equal(self.visibility, other.visibility)
            and self.area == other.area
            and tuple(self.bbox) == tuple(other.bbox)
            and self.segmentation == other.segmentation
            and bool(self.iscrowd) == bool(other.iscrowd)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Detection:
    """One predicted person: keypoint locations plus an instance score."""

    id: int
    image_id: int
    xy: np.ndarray
    score: float
    keypoint_scores: Optional[np.ndarray] = None

    def replace(self, **changes) -> "Detection":
        if "xy" in changes:
            changes["xy"] = _frozen_array(changes["xy"], (-1, 2))
        return dataclasses.replace(self, **changes)

    def __eq__(self, other):
        if not isinstance(other, Detection):
            return NotImplemented
        return (
            self.id == other.id
            and self.image_id == other.image_id
            and _arrays_equal(self.xy, other.xy)
            and self.score == other.score
            and _arrays_equal(self.keypoint_scores, other.keypoint_scores)
        )

    __hash__ = None


def make_gt(id, image_id, xy, visibility=None, area=None, bbox=None,
            segmentation=None, iscrowd=False) -> GtInstance:
    """Build a ground-truth instance, deriving bbox and area when omitted."""
    xy = _frozen_array(xy, (-1, 2))
    if visibility is None:
        visibility = np.full(len(xy), 2)
    visibility = _frozen_array(visibility, dtype=np.int64)
    if bbox is None:
        labeled = xy[visibility > 0]
        if len(labeled):
            x0, y0 = labeled.min(axis=0)
            x1, y1 = labeled.max(axis=0)
            bbox = (float(x0), float(y0), float(x1 - x0), float(y1 - y0))
        else:
            bbox = (0.0, 0.0, 0.0, 0.0)
    if area is None:
        area = bbox[2] * bbox[3]
    return GtInstance(int(id), int(image_id), xy, visibility, float(area),
                      tuple(float(b) for b in bbox), segmentation, bool(iscrowd))


def make_detection(id, image_id, xy, score, keypoint_scores=None) -> Detection:
    xy = _frozen_array(xy, (-1, 2))
    if keypoint_scores is not None:
        keypoint_scores = _frozen_array(keypoint_scores)
    return Detection(int(id), int(image_id), xy, float(score), keypoint_scores)


@dataclass(frozen=True)
class ImageRecord:
    id: int
    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValidationError(f"image {self.id}: width and height must be positive")


@dataclass(frozen=True, eq=False)
class KeypointSchema:
    """Keypoint names, left/right counterpart map and per-part constants."""

    names: tuple[str, ...]
    counterpart: tuple[Optional[int], ...]
    k_constants: np.ndarray
    groups: Mapping[str, tuple[int, ...]] = field(default_factory=dict)
    name: str = "custom"

    def __post_init__(self):
        K = len(self.names)
        if len(self.counterpart) != K or len(self.k_constants) != K:
            raise ValidationError("schema arrays must all have one entry per keypoint")
        for i, j in enumerate(self.counterpart):
            if j is None:
                continue
            if not 0 <= j < K or j == i or self.counterpart[j] != i:
                raise ValidationError(f"counterpart map is not a symmetric pairing at {i}")
        if not np.all(np.asarray(self.k_constants) > 0):
            raise ValidationError("k_constants must be positive")

    @property
    def num_keypoints(self) -> int:
        return len(self.names)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "KeypointSchema":
        names = tuple(data["names"])
        counterpart: list[Optional[int]] = [None] * len(names)
        for a, b in data.get("counterpart_pairs", []):
            a = names.index(a) if isinstance(a, str) else int(a)
            b = names.index(b) if isinstance(b, str) else int(b)
            counterpart[a], counterpart[b] = b, a
        groups = {g: tuple(int(i) for i in idx) for g, idx in data.get("groups", {}).items()}
        return cls(names, tuple(counterpart), _frozen_array(data["k_constants"]),
                   groups, data.get("name", "custom"))

    def to_dict(self) -> dict:
        pairs = [[i, j] for i, j in enumerate(self.counterpart) if j is not None and i < j]
        return {
            "name": self.name,
            "names": list(self.names),
            "counterpart_pairs": pairs,
            "k_constants": [float(k) for k in self.k_constants],
            "groups": {g: list(idx) for g, idx in self.groups.items()},
        }

    @classmethod
    def coco_person(cls) -> "KeypointSchema":
        text = resources.files("kpt_diagnose").joinpath("data/coco_person.json").read_text()
        return cls.from_dict(json.loads(text))

    def with_constants(self, k_constants) -> "KeypointSchema":
        return dataclasses.replace(self, k_constants=_frozen_array(k_constants))


def load_schema(path) -> KeypointSchema:
    try:
        data = json.loads(Path(path).read_text())
    except OSError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    try:
        return KeypointSchema.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"{path}: malformed schema ({exc})") from exc


def default_thresholds() -> tuple[float, ...]:
    return tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class EvalConfig:
    oks_thresholds: tuple[float, ...] = field(default_factory=default_thresholds)
    good_threshold: float = 0.85
    jitter_threshold: float = 0.5
    proximity_threshold: float = 0.1
    max_detections_per_image: int = 20

    def __post_init__(self):
        ts = tuple(float(t) for t in self.oks_thresholds)
        object.__setattr__(self, "oks_thresholds", ts)
        if not ts or any(not 0 < t <= 1 for t in ts):
            raise ValidationError("OKS thresholds must lie in (0, 1]")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValidationError("OKS thresholds must be strictly increasing")
        if not 0 < self.jitter_threshold < self.good_threshold <= 1:
            raise ValidationError("need 0 < jitter_threshold < good_threshold <= 1")
        if self.max_detections_per_image < 1:
            raise ValidationError("max_detections_per_image must be >= 1")

    @property
    def recall_grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, 101)


# ---------------------------------------------------------------------------
# File ingestion


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc


def _split_keypoints(flat, K, where):
    if not isinstance(flat, (list, tuple)) or len(flat) != 3 * K:
        n = len(flat) if isinstance(flat, (list, tuple)) else "non-list"
        raise ValidationError(f"{where}: expected {3 * K} keypoint numbers, got {n}")
    arr = np.asarray(flat, dtype=float).reshape(K, 3)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{where}: non-finite keypoint value")
    return arr[:, :2], arr[:, 2]


def parse_ground_truth(data: Mapping[str, Any], schema: KeypointSchema):
    """Parse an in-memory COCO ground-truth dict; see :func:`load_ground_truth`."""
    K = schema.num_keypoints
    if not isinstance(data, Mapping) or "annotations" not in data:
        raise ValidationError("ground truth must be an object with an 'annotations' array")
    images = {}
    for rec in data.get("images", []):
        try:
            img = ImageRecord(int(rec["id"]), float(rec["width"]), float(rec["height"]))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed image record {rec!r}") from exc
        if img.id in images:
            raise ValidationError(f"duplicate image id {img.id}")
        images[img.id] = img

    gts, seen = [], set()
    for ann in data["annotations"]:
        try:
            ann_id, image_id = int(ann["id"]), int(ann["image_id"])
            flat = ann["keypoints"]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed annotation {ann!r:.80}") from exc
        where = f"annotation {ann_id}"
        if ann_id in seen:
            raise ValidationError(f"duplicate annotation id {ann_id}")
        seen.add(ann_id)
        if images and image_id not in images:
            raise ValidationError(f"{where}: unknown image_id {image_id}")
        xy, v = _split_keypoints(flat, K, where)
        if not np.all(np.isin(v, (0, 1, 2))):
            raise ValidationError(f"{where}: visibility flags must be 0, 1 or 2")
        bbox = ann.get("bbox")
        gt = make_gt(ann_id, image_id, xy, v.astype(np.int64),
                     area=ann.get("area"), bbox=bbox,
                     segmentation=ann.get("segmentation"),
                     iscrowd=bool(ann.get("iscrowd", 0)))
        if not gt.excluded and not gt.area > 0:
            raise ValidationError(f"{where}: area must be positive")
        gts.append(gt)
    return [images[i] for i in sorted(images)], gts


def load_ground_truth(path, schema: KeypointSchema):
    """Read a COCO-keypoints ground-truth file.

    Returns ``(images, gts)``. Crowd annotations and annotations with no
    labeled keypoints are kept but report ``excluded == True``.
    """
    return parse_ground_truth(_read_json(path), schema)


def parse_detections(records, schema: KeypointSchema) -> list[Detection]:
    K = schema.num_keypoints
    if not isinstance(records, list):
        raise ValidationError("detections must be a JSON array")
    dets, seen = [], set()
    for n, rec in enumerate(records):
        try:
            image_id = int(rec["image_id"])
            score = float(rec["score"])
            flat = rec["keypoints"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed detection record #{n}") from exc
        det_id = int(rec.get("id", n + 1))
        where = f"detection {det_id}"
        if det_id in seen:
            raise ValidationError(f"duplicate detection id {det_id}")
        seen.add(det_id)
        if not math.isfinite(score):
            raise ValidationError(f"{where}: score must be finite")
        xy, conf = _split_keypoints(flat, K, where)
        dets.append(make_detection(det_id, image_id, xy, score, conf))
    return dets


def load_detections(path, schema: KeypointSchema) -> list[Detection]:
    """Read a COCO results file.

    Records without an ``id`` are numbered by position, starting at 1. The
    third value per keypoint is kept as auxiliary confidence only.
    """
    return parse_detections(_read_json(path), schema)


def _flatten(xy, third) -> list[float]:
    out = []
    for (x, y), t in zip(xy, third):
        out.extend((float(x), float(y), float(t) if not float(t).is_integer() else int(t)))
    return out


def ground_truth_to_dict(images: Sequence[ImageRecord], gts: Sequence[GtInstance]) -> dict:
    anns = []
    for g in gts:
        ann = {
            "id": g.id,
            "image_id": g.image_id,
            "category_id": 1,
            "keypoints": _flatten(g.xy, g.visibility),
            "num_keypoints": g.num_visible,
            "area": g.area,
            "bbox": list(g.bbox),
            "iscrowd": int(g.iscrowd),
        }
        if g.segmentation is not None:
            ann["segmentation"] = g.segmentation
        anns.append(ann)
    return {
        "images": [{"id": im.id, "width": im.width, "height": im.height} for im in images],
        "annotations": anns,
        "categories": [{"id": 1, "name": "person"}],
    }


def detections_to_list(dets: Iterable[Detection]) -> list[dict]:
    out = []
    for d in dets:
        third = d.keypoint_scores if d.keypoint_scores is not None else np.ones(len(d.xy))
        out.append({
            "id": d.id,
            "image_id": d.image_id,
            "category_id": 1,
            "keypoints": _flatten(d.xy, third),
            "score": d.score,
        })
    return out


def write_json(path, payload) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def group_by_image(records) -> dict[int, list]:
    out: dict[int, list] = defaultdict(list)
    for r in records:
        out[r.image_id].append(r)
    return out
