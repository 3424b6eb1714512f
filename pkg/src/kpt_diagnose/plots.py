"""SVG figures for the report. Output bytes depend only on the input data."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from .background import AreaHistogram, Heatmap
from .correction import ProgressiveResult
from .scoring import ScoreHistograms
from .taxonomy import CLASSIFIABLE, ErrorBreakdown, ErrorKind

KIND_COLORS = {
    ErrorKind.GOOD: "#4c72b0",
    ErrorKind.JITTER: "#dd8452",
    ErrorKind.INVERSION: "#55a868",
    ErrorKind.SWAP: "#c44e52",
    ErrorKind.MISS: "#8172b3",
}
STAGE_COLORS = ("#d0d0d0", "#8172b3", "#c44e52", "#55a868", "#dd8452", "#4c72b0", "#937860",
                "#da8bc3", "#8c8c8c", "#ccb974", "#64b5cd")

_RC = {"svg.hashsalt": "kpt-diagnose", "svg.fonttype": "path", "font.size": 9}


def save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context(_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def _figure(w=5.0, h=4.0) -> Figure:
    with matplotlib.rc_context(_RC):
        return Figure(figsize=(w, h))


def progressive_pr(prog: ProgressiveResult, recall_grid: Sequence[float]) -> Figure:
    """One curve per stage, the area between consecutive curves shaded."""
    fig = _figure()
    ax = fig.add_subplot()
    r = np.asarray(recall_grid)
    prev = np.zeros_like(r)
    for n, st in enumerate(prog.stages):
        p = st.result.precision if st.result is not None else np.zeros_like(r)
        p = np.maximum(p, prev)  # stages only add area; guard the fill against float noise
        color = STAGE_COLORS[n % len(STAGE_COLORS)]
        ap = "n/a" if st.ap is None else f"{st.ap:.3f}"
        ax.fill_between(r, prev, p, color=color, alpha=0.8, linewidth=0)
        ax.plot(r, p, color=color, linewidth=1.0, label=f"[{ap}] {st.name}")
        prev = p
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.01)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_title(f"OKS {prog.threshold:g}")
    ax.legend(loc="lower left", fontsize=7)
    return fig


def error_pie(breakdown: ErrorBreakdown) -> Figure:
    fig = _figure(4, 4)
    ax = fig.add_subplot()
    if breakdown.empty:
        kinds, sizes = [ErrorKind.GOOD], [1.0]
    else:
        frac = breakdown.overall_fractions
        kinds = [k for k in CLASSIFIABLE if frac[k.value] > 0]
        sizes = [frac[k.value] for k in kinds]
    ax.pie(sizes, labels=[k.value for k in kinds], colors=[KIND_COLORS[k] for k in kinds],
           autopct="%1.1f%%", startangle=90, counterclock=False)
    ax.set_aspect("equal")
    return fig


def per_part_bars(breakdown: ErrorBreakdown) -> Figure:
    """Stacked error fractions per keypoint type (Good omitted)."""
    fig = _figure(7, 3.5)
    ax = fig.add_subplot()
    names = list(breakdown.keypoint_names)
    x = np.arange(len(names))
    bottom = np.zeros(len(names))
    for kind in (ErrorKind.JITTER, ErrorKind.INVERSION, ErrorKind.SWAP, ErrorKind.MISS):
        vals = []
        for n in names:
            c = breakdown.per_keypoint[n]
            total = sum(c[k] for k in CLASSIFIABLE)
            vals.append(c[kind] / total if total else 0.0)
        ax.bar(x, vals, bottom=bottom, color=KIND_COLORS[kind], label=kind.value)
        bottom += vals
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("fraction of keypoints")
    ax.legend(fontsize=7)
    fig.tight_layout()
    return fig


def score_histograms(h: ScoreHistograms) -> Figure:
    fig = _figure(8, 3.2)
    width = np.diff(h.edges)
    left = h.edges[:-1]
    for n, (title, best, other, ov) in enumerate((
            ("original scores", h.original_best, h.original_other, h.overlap_original),
            ("optimal scores", h.optimal_best, h.optimal_other, h.overlap_optimal))):
        ax = fig.add_subplot(1, 2, n + 1)
        for vals, color, label in ((best, "#4c72b0", "best match"), (other, "#c44e52", "other")):
            total = vals.sum()
            ax.bar(left, vals / total if total else vals, width=width, align="edge",
                   color=color, alpha=0.6, label=label)
        ax.set_title(f"{title} (overlap {ov:.2f})")
        ax.set_xlabel("score")
        ax.legend(fontsize=7)
    fig.tight_layout()
    return fig


def fp_area_histogram(h: AreaHistogram) -> Figure:
    fig = _figure(5, 3.2)
    ax = fig.add_subplot()
    ax.bar(np.arange(len(h.counts)), h.counts, color="#c44e52")
    ax.set_xticks(np.arange(len(h.counts)))
    ax.set_xticklabels(h.labels)
    ax.set_xlabel("keypoint box area")
    ax.set_ylabel("high-confidence FPs")
    fig.tight_layout()
    return fig


def fn_heatmap(hm: Heatmap) -> Figure:
    fig = _figure(4, 4)
    ax = fig.add_subplot()
    im = ax.imshow(hm.normalized, cmap="viridis", vmin=0, vmax=1, extent=(0, 1, 1, 0),
                   interpolation="nearest")
    ax.set_xlabel("x / width")
    ax.set_ylabel("y / height")
    fig.colorbar(im, ax=ax, fraction=0.046)
    return fig


def benchmark_grid(matrix: np.ndarray, row_labels: Sequence[str], col_labels: Sequence[str],
                   title: str = "") -> Figure:
    """AP per visibility (rows) x overlap (columns) cell; empty cells are blank."""
    fig = _figure(4.5, 4)
    ax = fig.add_subplot()
    ax.imshow(np.ma.masked_invalid(matrix), cmap="Blues", vmin=0, vmax=1, interpolation="nearest")
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            v = matrix[i, j]
            ax.text(j, i, "-" if np.isnan(v) else f"{v:.3f}", ha="center", va="center", fontsize=8)
    ax.set_xticks(range(len(col_labels)))
    ax.set_xticklabels(col_labels)
    ax.set_yticks(range(len(row_labels)))
    ax.set_yticklabels(row_labels)
    ax.set_xlabel("overlaps")
    ax.set_ylabel("visible keypoints")
    if title:
        ax.set_title(title)
    return fig


def emit(figures: Mapping[str, Figure], out_dir) -> list[Path]:
    """Write each figure to ``out_dir/<name>.svg`` in name order."""
    return [save(figures[name], Path(out_dir) / f"{name}.svg") for name in sorted(figures)]
