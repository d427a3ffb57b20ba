"""Confidence-over-time tables and plots for one video."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

from .data import AnnotationRecord, PredictionRecord
from .metrics import match_predictions

WIDTH, HEIGHT = 800.0, 240.0
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 50.0, 20.0, 20.0, 30.0


@dataclass(frozen=True)
class TimelineRow:
    timestep: float
    probability: float
    gate_fired: int
    ground_truth_label: int


def select_video(predictions: list[PredictionRecord], video_id: str | None) -> str:
    ids = sorted({p.video_id for p in predictions})
    if video_id is not None:
        if video_id not in ids:
            raise ValueError(f"no predictions for video {video_id!r}")
        return video_id
    if len(ids) != 1:
        raise ValueError(f"predictions cover {len(ids)} videos; choose one of {ids[:5]}")
    return ids[0]


def timeline_rows(predictions, annotations, video_id: str | None = None) -> list[TimelineRow]:
    if not predictions:
        raise ValueError("no predictions")
    vid = select_video(list(predictions), video_id)
    preds = [p for p in predictions if p.video_id == vid]
    pairs = match_predictions(preds, [a for a in annotations if a.video_id == vid])
    return [
        TimelineRow(p.timestep, p.probability, int(p.label == "mistake"), int(a.label == "mistake"))
        for p, a in pairs
    ]


def write_csv(rows: list[TimelineRow], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestep", "probability", "gate_fired", "ground_truth_label"])
        for r in rows:
            writer.writerow([repr(r.timestep), repr(r.probability), r.gate_fired, r.ground_truth_label])


def time_range(rows, annotations) -> tuple[float, float]:
    times = [r.timestep for r in rows] + [a.segment_start for a in annotations] + [a.segment_end for a in annotations]
    t0, t1 = min(times), max(times)
    return (t0, t1) if t1 > t0 else (t0, t0 + 1.0)


def x_of(t: float, t0: float, t1: float) -> float:
    return MARGIN_LEFT + (t - t0) / (t1 - t0) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)


def y_of(p: float) -> float:
    return MARGIN_TOP + (1.0 - p) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)


def render_svg(rows: list[TimelineRow], annotations: list[AnnotationRecord], tau: float | None = None,
               title: str = "") -> str:
    """Probability polyline over shaded ground-truth mistake intervals."""
    t0, t1 = time_range(rows, annotations)
    top, bottom = y_of(1.0), y_of(0.0)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:g}" height="{HEIGHT:g}" '
        f'viewBox="0 0 {WIDTH:g} {HEIGHT:g}">',
        f'<rect x="0" y="0" width="{WIDTH:g}" height="{HEIGHT:g}" fill="white"/>',
    ]
    if title:
        parts.append(f'<title>{escape(title)}</title>')
    for a in annotations:
        if a.label != "mistake":
            continue
        x0, x1 = x_of(a.segment_start, t0, t1), x_of(a.segment_end, t0, t1)
        parts.append(
            f'<rect class="gt-mistake" x="{x0:.3f}" y="{top:.3f}" width="{x1 - x0:.3f}" '
            f'height="{bottom - top:.3f}" fill="#f4b6b6" fill-opacity="0.6">'
            f'<title>{escape(a.explanation)}</title></rect>'
        )
    parts.append(
        f'<line x1="{MARGIN_LEFT:.3f}" y1="{bottom:.3f}" x2="{WIDTH - MARGIN_RIGHT:.3f}" y2="{bottom:.3f}" stroke="black"/>'
    )
    parts.append(f'<line x1="{MARGIN_LEFT:.3f}" y1="{top:.3f}" x2="{MARGIN_LEFT:.3f}" y2="{bottom:.3f}" stroke="black"/>')
    if tau is not None:
        parts.append(
            f'<line class="threshold" x1="{MARGIN_LEFT:.3f}" y1="{y_of(tau):.3f}" x2="{WIDTH - MARGIN_RIGHT:.3f}" '
            f'y2="{y_of(tau):.3f}" stroke="gray" stroke-dasharray="4 3"/>'
        )
    points = " ".join(f"{x_of(r.timestep, t0, t1):.3f},{y_of(r.probability):.3f}" for r in rows)
    parts.append(f'<polyline class="probability" points="{points}" fill="none" stroke="#1f4e9c" stroke-width="2"/>')
    parts.append(f'<text x="{MARGIN_LEFT - 8:.3f}" y="{top + 4:.3f}" text-anchor="end" font-size="11">1</text>')
    parts.append(f'<text x="{MARGIN_LEFT - 8:.3f}" y="{bottom + 4:.3f}" text-anchor="end" font-size="11">0</text>')
    parts.append(f'<text x="{MARGIN_LEFT:.3f}" y="{HEIGHT - 8:.3f}" font-size="11">{t0:g} s</text>')
    parts.append(
        f'<text x="{WIDTH - MARGIN_RIGHT:.3f}" y="{HEIGHT - 8:.3f}" text-anchor="end" font-size="11">{t1:g} s</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
