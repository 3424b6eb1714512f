"""Independent reference implementations used as test oracles.

Pure Python with ``math`` and ``fractions`` only; nothing here imports the
package under test.
"""

import math
from fractions import Fraction


def ks(p, g, area, k):
    d2 = (p[0] - g[0]) ** 2 + (p[1] - g[1]) ** 2
    return math.exp(-d2 / (2.0 * area * k * k))


def oks(det_xy, gt_xy, vis, area, kconst):
    vals = [ks(det_xy[i], gt_xy[i], area, kconst[i]) for i in range(len(gt_xy)) if vis[i] > 0]
    return sum(vals) / len(vals)


def greedy(dets, gts, kconst):
    """Step-by-step simulation of the greedy assignment for one image.

    ``dets``: list of (id, score, xy); ``gts``: list of (id, xy, vis, area, excluded).
    Returns a list of (det_id, gt_id, oks) in formation order.
    """
    pool = [g for g in gts if not g[4] and any(v > 0 for v in g[2])]
    taken = set()
    pairs = []
    for did, _, dxy in sorted(dets, key=lambda d: (-d[1], d[0])):
        best = None
        for gid, gxy, vis, area, _ in sorted(pool, key=lambda g: g[0]):
            if gid in taken:
                continue
            o = oks(dxy, gxy, vis, area, kconst)
            if best is None or o > best[1]:
                best = (gid, o)
        if best is not None and best[1] > 0:
            taken.add(best[0])
            pairs.append((did, best[0], best[1]))
    return pairs


def ap_101(ranked_hits, npos):
    """Interpolated AP over recall points 0, .01, ..., 1 with exact arithmetic.

    ``ranked_hits`` is the TP/FP sequence in descending score order.
    """
    tp = fp = 0
    points = []
    for h in ranked_hits:
        tp += bool(h)
        fp += not h
        points.append((Fraction(tp, npos), Fraction(tp, tp + fp)))
    total = Fraction(0)
    for i in range(101):
        r = Fraction(i, 100)
        ps = [p for rc, p in points if rc >= r]
        total += max(ps) if ps else 0
    return total / 101


def ap_from_pairs(images, t, npos):
    """AP at ``t`` from per-image (pairs, all_dets) where all_dets are (id, score)."""
    rows = []
    for pairs, all_dets in images:
        matched = {d: o for d, _, o in pairs}
        for did, score in all_dets:
            rows.append((-score, did, did in matched and matched[did] >= t))
    rows.sort()
    return ap_101([h for _, _, h in rows], npos)
