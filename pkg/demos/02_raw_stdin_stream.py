"""Pipe raw frames into the `detect` command, the way a camera process would.

The stream is an 18-byte header followed by packed RGB frames; predictions come
back as JSON lines on stdout while frames are still being written.

    python3 demos/02_raw_stdin_stream.py
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

from mistakedet.data import SyntheticTaskSpec, generate_synthetic
from mistakedet.stream import encode_header

work = Path(tempfile.mkdtemp(prefix="mistakedet-demo-"))
small = ["--seed", "1"]  # default budget: 40 videos, 30 epochs


def cli(*args, **kwargs):
    return subprocess.run([sys.executable, "-m", "mistakedet", *args], check=True, **kwargs)


cli("synth-data", *small, "--out", str(work / "data"))
cli("train", *small, "--data", str(work / "data"), "--checkpoint", str(work / "model.ckpt"))
print(f"checkpoint written to {work / 'model.ckpt'}")

video = generate_synthetic(SyntheticTaskSpec(seed=41, num_videos=1, frame_size=64, error_rate=1.0))[0]
print(f"streaming {len(video.frames)} frames of a held-out video ({video.draw.kind} error)")

proc = subprocess.Popen(
    [sys.executable, "-m", "mistakedet", "detect", *small, "--checkpoint", str(work / "model.ckpt"),
     "--frames", "-", "--out", "-"],
    stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=False,
)
height, width = video.frames.shape[1:3]
proc.stdin.write(encode_header(width, height, fps=video.fps))
for frame in video.frames:
    proc.stdin.write(frame.tobytes())
proc.stdin.close()

truth = {round(a.segment_start, 6): a.label for a in video.annotations}
for line in proc.stdout:
    rec = json.loads(line)
    print(f"t={rec['timestep']:5.1f}s  p={rec['probability']:.3f}  {rec['label']:<8}"
          + (f"  {rec['explanation'][:40]}" if rec["explanation"] else ""))
print("exit code", proc.wait())
print("annotated segments:", ", ".join(f"{a.segment_start:g}-{a.segment_end:g}s {a.label}" for a in video.annotations))
