"""Synthetic ground truth and detections with labeled, injected keypoint errors.

People are geometric scaffolds laid out on a grid far enough apart that every
injected error has exactly one explanation. Each keypoint is placed so that
its intended class holds by construction and the intent is recorded.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from functools import partial
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .data_model import (Detection, GtInstance, ImageRecord, KeypointSchema, ValidationError,
                         detections_to_list, ground_truth_to_dict, make_detection, make_gt,
                         write_json)
from .parallel import pmap
from .similarity import ks_radius, ks_to_distance
from .taxonomy import ErrorKind

GOOD_KS = 0.85
JITTER_KS = 0.5
INJECTABLE = (ErrorKind.JITTER, ErrorKind.INVERSION, ErrorKind.SWAP, ErrorKind.MISS)


class ScoreMode(str, Enum):
    OPTIMAL = "optimal"
    NOISY_OPTIMAL = "noisy_optimal"
    RANDOM = "random"


@dataclass(frozen=True)
class InjectionSpec:
    """What to inject and how to lay people out.

    ``rates`` are per-keypoint probabilities of each error kind; the rest is
    Good. Scales are instance ``sqrt(area)`` in pixels.
    """

    rates: Mapping[str, float] = field(default_factory=dict)
    score_mode: ScoreMode = ScoreMode.OPTIMAL
    score_noise: float = 0.1
    rng_seed: int = 0
    scale_range: tuple[float, float] = (60.0, 160.0)
    spacing: float = 3.0  # grid pitch in units of the largest scale
    unlabeled_rate: float = 0.0
    missed_person_rate: float = 0.0
    background_per_image: int = 0

    def __post_init__(self):
        rates = {}
        for k, p in dict(self.rates).items():
            kind = ErrorKind(k)
            if kind not in INJECTABLE:
                raise ValidationError(f"cannot inject {kind}")
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"rate for {kind} must be in [0, 1]")
            rates[kind] = float(p)
        if sum(rates.values()) > 1.0 + 1e-12:
            raise ValidationError("error rates sum to more than 1")
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "score_mode", ScoreMode(self.score_mode))
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValidationError("scale_range must satisfy 0 < lo <= hi")
        if self.spacing < 2.5:
            raise ValidationError("spacing below 2.5 scales cannot keep people apart")
        for name in ("unlabeled_rate", "missed_person_rate"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValidationError(f"{name} must be in [0, 1)")
        if self.score_noise < 0 or self.background_per_image < 0:
            raise ValidationError("score_noise and background_per_image must be non-negative")

    def to_dict(self) -> dict:
        return {
            "rates": {k.value: v for k, v in sorted(self.rates.items())},
            "score_mode": self.score_mode.value, "score_noise": self.score_noise,
            "rng_seed": self.rng_seed, "scale_range": list(self.scale_range),
            "spacing": self.spacing, "unlabeled_rate": self.unlabeled_rate,
            "missed_person_rate": self.missed_person_rate,
            "background_per_image": self.background_per_image,
        }


@dataclass(frozen=True)
class TruthLabels:
    detection_id: int
    gt_id: int
    kinds: tuple[ErrorKind, ...]


@dataclass
class Fixture:
    images: list[ImageRecord]
    gts: list[GtInstance]
    dets: list[Detection]
    truth: dict[int, TruthLabels]
    skipped: Counter = field(default_factory=Counter)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "gt.json", ground_truth_to_dict(self.images, self.gts))
        write_json(out / "dt.json", detections_to_list(self.dets))
        write_json(out / "truth.json", truth_to_dict(self))


def truth_to_dict(fx: Fixture) -> dict:
    return {
        "detections": [{"id": t.detection_id, "gt_id": t.gt_id, "labels": [k.value for k in t.kinds]}
                       for t in sorted(fx.truth.values(), key=lambda t: t.detection_id)],
        "skipped": dict(sorted(fx.skipped.items())),
    }


def template(schema: KeypointSchema) -> np.ndarray:
    """Unit-scale scaffold: unpaired parts on the midline, pairs mirrored on one row each."""
    rows, placed = [], set()
    for i, c in enumerate(schema.counterpart):
        if i in placed:
            continue
        rows.append((i, c))
        placed.update({i} if c is None else {i, c})
    half = max(0.25, 1.75 * float(np.max(schema.k_constants)))
    xy = np.zeros((schema.num_keypoints, 2))
    for r, (i, c) in enumerate(rows):
        y = -0.5 + (r + 0.5) / len(rows)
        if c is None:
            xy[i] = (0.0, y)
        else:
            xy[i], xy[c] = (-half, y), (half, y)
    return xy


def _ks(p, q, scale, k):
    d2 = (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2
    return math.exp(-d2 / (2.0 * scale * scale * k * k))


def _around(rng, center, dist):
    a = rng.uniform(0.0, 2.0 * math.pi)
    return np.array([center[0] + dist * math.cos(a), center[1] + dist * math.sin(a)])


def _oks(xy, g_xy, vis, scale, k):
    d2 = np.sum((xy - g_xy) ** 2, axis=1)
    ks = np.exp(-d2 / (2.0 * scale * scale * k * k))
    return float(ks[vis > 0].mean())


class _Person:
    __slots__ = ("xy", "vis", "scale")

    def __init__(self, xy, vis, scale):
        self.xy, self.vis, self.scale = xy, vis, scale


def _draw_kind(rng, spec):
    u = rng.uniform()
    acc = 0.0
    for kind in INJECTABLE:
        acc += spec.rates.get(kind, 0.0)
        if u < acc:
            return kind
    return ErrorKind.GOOD


def _place(rng, kind, i, me, others, schema, skipped):
    """Position and label for keypoint ``i`` of a detection of person ``me``."""
    k = schema.k_constants
    cp = schema.counterpart[i]
    own = me.xy[i]
    if kind is ErrorKind.INVERSION and (cp is None or me.vis[cp] <= 0):
        skipped["inversion"] += 1
        kind = ErrorKind.GOOD
    if kind is ErrorKind.SWAP:
        hosts = [o for o in others if o.vis[i] > 0]
        if not hosts:
            skipped["swap"] += 1
            kind = ErrorKind.GOOD
    if kind is ErrorKind.GOOD:
        p = _around(rng, own, ks_to_distance(rng.uniform(GOOD_KS, 1.0), me.scale, k[i]))
        assert _ks(p, own, me.scale, k[i]) >= GOOD_KS - 1e-9
    elif kind is ErrorKind.JITTER:
        p = _around(rng, own, ks_radius(rng.uniform(JITTER_KS, GOOD_KS), me.scale, k[i]))
        assert JITTER_KS - 1e-9 <= _ks(p, own, me.scale, k[i]) < GOOD_KS + 1e-9
    elif kind is ErrorKind.INVERSION:
        p = _around(rng, me.xy[cp], ks_to_distance(rng.uniform(GOOD_KS, 1.0), me.scale, k[cp]))
        assert _ks(p, own, me.scale, k[i]) < JITTER_KS
        assert _ks(p, me.xy[cp], me.scale, k[cp]) >= GOOD_KS - 1e-9
    elif kind is ErrorKind.SWAP:
        host = hosts[rng.integers(len(hosts))]
        p = _around(rng, host.xy[i], ks_to_distance(rng.uniform(GOOD_KS, 1.0), host.scale, k[i]))
        assert _ks(p, own, me.scale, k[i]) < JITTER_KS
    else:
        r5 = ks_radius(JITTER_KS, me.scale, k[i])
        cands = []
        if cp is not None and me.vis[cp] > 0:
            cands.append((me.xy[cp], me.scale, k[cp]))
        for o in others:
            for j in (i, cp):
                if j is not None and o.vis[j] > 0:
                    cands.append((o.xy[j], o.scale, k[j]))
        for _ in range(1000):
            p = _around(rng, own, rng.uniform(1.05 * r5, 3.0 * r5))
            if all(_ks(p, c, s, kc) < JITTER_KS for c, s, kc in cands):
                break
        else:
            raise ValidationError("could not place a miss; increase spacing")
        assert _ks(p, own, me.scale, k[i]) < JITTER_KS
    return p, kind


def _generate_image(idx, n_people, spec: InjectionSpec, schema: KeypointSchema, base):
    rng = np.random.default_rng([spec.rng_seed, idx])
    K = schema.num_keypoints
    k = np.asarray(schema.k_constants, dtype=float)
    pitch = spec.spacing * spec.scale_range[1]
    cols = max(1, math.ceil(math.sqrt(n_people)))
    rows = max(1, math.ceil(n_people / cols))

    people = []
    for j in range(n_people):
        scale = float(rng.uniform(*spec.scale_range))
        center = np.array([(j % cols + 0.5) * pitch, (j // cols + 0.5) * pitch])
        wobble = rng.uniform(-0.02, 0.02, size=(K, 2))
        xy = center + scale * (base + wobble)
        vis = np.where(rng.uniform(size=K) < spec.unlabeled_rate, 0, 2)
        if not vis.any():
            vis[rng.integers(K)] = 2
        people.append(_Person(xy, vis, scale))

    # background detections sit in a strip far enough right that every OKS underflows to 0
    far = 40.0 * spec.scale_range[1] * float(k.max()) + pitch
    width = cols * pitch + (far + pitch if spec.background_per_image else 0.0)
    height = rows * pitch

    skipped = Counter()
    dets, truth = [], []
    for j, me in enumerate(people):
        if rng.uniform() < spec.missed_person_rate:
            continue
        others = people[:j] + people[j + 1:]
        for attempt in range(100):
            pts, kinds = np.zeros((K, 2)), []
            for i in range(K):
                if me.vis[i] <= 0:
                    pts[i] = _around(rng, me.xy[i], ks_to_distance(rng.uniform(GOOD_KS, 1.0), me.scale, k[i]))
                    kinds.append(ErrorKind.UNCLASSIFIABLE)
                    continue
                pts[i], kind = _place(rng, _draw_kind(rng, spec), i, me, others, schema, skipped)
                kinds.append(kind)
            own = _oks(pts, me.xy, me.vis, me.scale, k)
            if all(_oks(pts, o.xy, o.vis, o.scale, k) < own for o in others):
                break
            skipped["regenerated"] += 1
        else:
            raise ValidationError("could not make a detection prefer its own person")
        dets.append((pts, own))
        truth.append((j, tuple(kinds)))

    bg = []
    for _ in range(spec.background_per_image):
        scale = float(rng.uniform(*spec.scale_range))
        center = np.array([cols * pitch + far + rng.uniform(0, pitch), rng.uniform(0, height)])
        bg.append(center + scale * (base + rng.uniform(-0.02, 0.02, size=(K, 2))))

    def noisy(v):
        return float(np.clip(v + rng.normal(0.0, spec.score_noise), 0.0, 1.0))

    scores = []
    for _, own in dets:
        if spec.score_mode is ScoreMode.OPTIMAL:
            scores.append(own)
        elif spec.score_mode is ScoreMode.NOISY_OPTIMAL:
            scores.append(noisy(own))
        else:
            scores.append(float(rng.uniform()))
    for _ in bg:
        if spec.score_mode is ScoreMode.OPTIMAL:
            scores.append(0.0)
        elif spec.score_mode is ScoreMode.NOISY_OPTIMAL:
            scores.append(noisy(0.0))
        else:
            scores.append(float(rng.uniform()))
    return {
        "size": (width, height),
        "people": [(p.xy, p.vis, p.scale) for p in people],
        "dets": [pts for pts, _ in dets] + bg,
        "scores": scores,
        "truth": truth,
        "skipped": skipped,
    }


def _image_job(item, spec, schema, base):
    idx, n = item
    return _generate_image(idx, n, spec, schema, base)


def _people_counts(n_images, people_per_image, seed):
    if isinstance(people_per_image, int):
        return [people_per_image] * n_images
    lo, hi = people_per_image
    rng = np.random.default_rng([seed, -1 % 2**32])
    return [int(v) for v in rng.integers(lo, hi + 1, size=n_images)]


def generate(n_images: int, people_per_image, spec: Optional[InjectionSpec] = None,
             schema: Optional[KeypointSchema] = None, workers=1) -> Fixture:
    """Build a fixture; a pure function of ``(n_images, people_per_image, spec, schema)``.

    ``people_per_image`` is an int or an inclusive ``(lo, hi)`` range.
    """
    spec = spec or InjectionSpec()
    schema = schema or KeypointSchema.coco_person()
    if n_images < 1:
        raise ValidationError("n_images must be >= 1")
    counts = _people_counts(n_images, people_per_image, spec.rng_seed)
    if min(counts) < 1:
        raise ValidationError("every image needs at least one person")
    if spec.rates.get(ErrorKind.SWAP, 0.0) > 0 and min(counts) < 2:
        raise ValidationError("swaps need at least two people per image")
    base = template(schema)
    k = np.asarray(schema.k_constants, dtype=float)
    for i, c in enumerate(schema.counterpart):
        if c is not None:
            gap = float(np.hypot(*(base[i] - base[c]))) - 0.06
            need = math.sqrt(-2 * math.log(GOOD_KS)) * k[c] + math.sqrt(-2 * math.log(JITTER_KS)) * k[i]
            if gap <= need:
                raise ValidationError(f"scaffold cannot separate {schema.names[i]} from its counterpart")

    chunks = pmap(partial(_image_job, spec=spec, schema=schema, base=base),
                  list(enumerate(counts)), workers)

    images, gts, dets, truth, skipped = [], [], [], {}, Counter()
    gid = did = 0
    for idx, ch in enumerate(chunks):
        image_id = idx + 1
        images.append(ImageRecord(image_id, *ch["size"]))
        first = gid + 1
        for xy, vis, scale in ch["people"]:
            gid += 1
            pts = xy[vis > 0]
            x0, y0 = pts.min(axis=0) - 0.05 * scale
            x1, y1 = pts.max(axis=0) + 0.05 * scale
            gts.append(make_gt(gid, image_id, xy, vis, area=scale * scale,
                               bbox=(float(x0), float(y0), float(x1 - x0), float(y1 - y0))))
        person_det = {}
        for n, (pts, score) in enumerate(zip(ch["dets"], ch["scores"])):
            did += 1
            dets.append(make_detection(did, image_id, pts, score))
            person_det[n] = did
        for n, (j, kinds) in enumerate(ch["truth"]):
            truth[person_det[n]] = TruthLabels(person_det[n], first + j, kinds)
        skipped.update(ch["skipped"])
    return Fixture(images, gts, dets, truth, skipped)


def truth_counts(fx: Fixture) -> Counter:
    return Counter(k for t in fx.truth.values() for k in t.kinds)
