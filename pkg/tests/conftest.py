import math
from pathlib import Path

import numpy as np
import pytest

from kpt_diagnose.data_model import (KeypointSchema, load_detections, load_ground_truth, load_schema,
                                     make_detection, make_gt)

DATA = Path(__file__).parent / "data"
HAND = DATA / "hand_ledger"

# hand-traced ledger for the committed 2-image fixture (see test_matching)
HAND_AP = {0.5: 1.0, 0.75: 56 / 101, 0.95: 34 / 303}
HAND_COCO_AP = 1683 / 3030


@pytest.fixture(scope="session")
def coco():
    return KeypointSchema.coco_person()


@pytest.fixture(scope="session")
def point_schema():
    return load_schema(HAND / "schema.json")


@pytest.fixture(scope="session")
def hand(point_schema):
    images, gts = load_ground_truth(HAND / "gt.json", point_schema)
    dets = load_detections(HAND / "dt.json", point_schema)
    return images, gts, dets


def offset(o, scale=1.0, k=1.0):
    """Distance at which ks equals ``o``."""
    return scale * k * math.sqrt(-2.0 * math.log(o))


def pair_schema(k=(0.1, 0.1)):
    return KeypointSchema(names=("left", "right"), counterpart=(1, 0),
                          k_constants=np.array(k, dtype=float), groups={"all": (0, 1)})


def random_scene(rng, n_dets, n_gts, image_id=1, schema=None, first_det=1, first_gt=1,
                 crowd_rate=0.1, tie_rate=0.2):
    """Small cluttered image: people close together, detections near random people.

    Scores come from a coarse grid and some detections duplicate another's
    keypoints so that score and OKS ties both occur.
    """
    schema = schema or pair_schema()
    K = schema.num_keypoints
    gts = []
    for j in range(n_gts):
        center = rng.uniform(0, 30, size=2)
        xy = center + rng.normal(0, 4, size=(K, 2))
        vis = rng.choice([0, 2], size=K, p=[0.15, 0.85])
        gts.append(make_gt(first_gt + j, image_id, xy, vis, area=float(rng.uniform(50, 400)),
                           iscrowd=bool(rng.uniform() < crowd_rate)))
    dets = []
    for i in range(n_dets):
        if dets and rng.uniform() < tie_rate:
            xy = dets[rng.integers(len(dets))].xy
        elif gts:
            xy = gts[rng.integers(len(gts))].xy + rng.normal(0, 3, size=(K, 2))
        else:
            xy = rng.uniform(0, 30, size=(K, 2))
        score = float(rng.integers(0, 5)) / 4
        dets.append(make_detection(first_det + i, image_id, xy, score))
    return dets, gts
