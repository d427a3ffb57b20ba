import csv

import pytest

from mistakedet.data import AnnotationRecord, PredictionRecord
from mistakedet.timeline import render_svg, timeline_rows, write_csv, x_of, y_of

ANNS = [AnnotationRecord("v", 0.0, 2.0, "correct", "none", ""),
        AnnotationRecord("v", 2.0, 4.0, "mistake", "execution", "step 2 executed with wrong shape")]
PREDS = [PredictionRecord("v", float(t), p, "mistake" if p >= 0.5 else "correct",
                          "x" if p >= 0.5 else None)
         for t, p in [(0, 0.1), (1, 0.2), (2, 0.7), (3, 0.4)]]


def test_rows_and_csv(tmp_path):
    rows = timeline_rows(PREDS, ANNS)
    assert [(r.gate_fired, r.ground_truth_label) for r in rows] == [(0, 0), (0, 0), (1, 1), (0, 1)]
    write_csv(rows, tmp_path / "t.csv")
    with open(tmp_path / "t.csv", newline="") as fh:
        table = list(csv.DictReader(fh))
    assert list(table[0]) == ["timestep", "probability", "gate_fired", "ground_truth_label"]
    assert float(table[2]["probability"]) == 0.7


def test_video_selection():
    other = PredictionRecord("w", 0.0, 0.1, "correct")
    with pytest.raises(ValueError, match="2 videos"):
        timeline_rows(PREDS + [other], ANNS)
    with pytest.raises(ValueError):
        timeline_rows(PREDS, ANNS, video_id="zzz")
    assert len(timeline_rows(PREDS + [other], ANNS, video_id="v")) == 4


def test_svg_coordinates():
    svg = render_svg(timeline_rows(PREDS, ANNS), ANNS, tau=0.5)
    # time range is [0, 4]; the mistake segment [2, 4) covers the right half of the plot area
    x0, x1 = x_of(2.0, 0.0, 4.0), x_of(4.0, 0.0, 4.0)
    assert (x0, x1) == (50 + 0.5 * 730, 780.0)
    assert f'class="gt-mistake" x="{x0:.3f}"' in svg and f'width="{x1 - x0:.3f}"' in svg
    assert f"{x_of(2.0, 0.0, 4.0):.3f},{y_of(0.7):.3f}" in svg
    assert y_of(1.0) == 20.0 and y_of(0.0) == 210.0
    assert svg.count('class="gt-mistake"') == 1
