"""Plot detector confidence over one video next to the annotated mistake.

Writes timeline.csv and timeline.svg into a temporary directory and prints the
table; open the SVG in a browser to see the shaded ground-truth interval.

    python3 demos/04_confidence_timeline.py
"""

import tempfile
from pathlib import Path

import torch

from mistakedet.config import load_config
from mistakedet.data import generate_synthetic
from mistakedet.model import MistakeDetector
from mistakedet.pipeline import detect_frames
from mistakedet.stream import FrameSample
from mistakedet.timeline import render_svg, timeline_rows, write_csv
from mistakedet.training import Trainer, windows_from_videos

torch.set_num_threads(1)
config = load_config(None, ["data.num_videos=40", "explain.generator=none"], seed=5)
videos = generate_synthetic(config.synthetic_spec())
model = MistakeDetector(config.model_config(), seed=config.seed)
Trainer(model, config.train_config()).fit(windows_from_videos(videos, config.stream.t_s, d_llm=config.explain.d_llm))

video = generate_synthetic(load_config(None, ["data.num_videos=6", "data.error_rate=1.0"], seed=77).synthetic_spec())[0]
frames = [FrameSample.from_array(t, video.frames[i]) for i, t in enumerate(video.timestamps())]
predictions = detect_frames(model, frames, t_s=config.stream.t_s, gate_config=config.gate_config(),
                            video_id=video.video_id)
rows = timeline_rows(predictions, video.annotations)

out = Path(tempfile.mkdtemp(prefix="mistakedet-timeline-"))
write_csv(rows, out / "timeline.csv")
(out / "timeline.svg").write_text(render_svg(rows, video.annotations, tau=config.explain.tau, title=video.video_id))
print(f"{video.video_id}: {video.draw.kind} error at step position {video.draw.step}")
print("  t    p      fired  truth")
for r in rows:
    bar = "#" * int(round(r.probability * 20))
    print(f"{r.timestep:4g}  {r.probability:.3f}  {r.gate_fired:^5}  {r.ground_truth_label:^5}  {bar}")
print(f"\nwrote {out / 'timeline.csv'} and {out / 'timeline.svg'}")
