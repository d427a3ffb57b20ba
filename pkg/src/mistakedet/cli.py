"""Command-line entry point.

    mistakedet synth-data    --out DIR
    mistakedet train         --data DIR --checkpoint OUT
    mistakedet detect        --checkpoint CKPT --frames PATH|- --out PATH
    mistakedet evaluate      --predictions P --annotations A --out REPORT
    mistakedet plot-timeline --predictions P --annotations A --out CSV [--svg SVG]

Every command accepts ``--config PATH``, ``--seed N`` and repeated
``--set key=value``. Exit codes: 0 success, 2 user/config error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from . import data as data_mod
from .config import ConfigError, RunConfig, load_config
from .explain import ExternalGenerator, MockGenerator
from .metrics import MatchError, evaluate_run, format_report
from .model import CheckpointError, MistakeDetector, load_checkpoint, save_checkpoint
from .pipeline import OnlineDetector
from .stream import iter_directory, read_raw_stream
from .timeline import render_svg, timeline_rows, write_csv
from .training import NaNLossError, Trainer, windows_from_videos

log = logging.getLogger("mistakedet")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


def _need(value, flag: str):
    if value is None:
        raise UsageError(f"{flag} is required")
    return value


# ---------------------------------------------------------------------------
# commands

def cmd_synth_data(config: RunConfig, out_dir) -> None:
    spec = config.synthetic_spec()
    videos = data_mod.generate_synthetic(spec)
    data_mod.save_dataset(videos, out_dir, spec)
    log.info("wrote %d videos to %s", len(videos), out_dir)


def cmd_train(config: RunConfig, data_dir, checkpoint_out, log_path=None) -> list[dict]:
    videos = data_mod.load_dataset(data_dir)
    model_cfg = config.model_config()
    height, width = model_cfg.encoder.frame_hw
    if videos[0].frames.shape[1:3] != (height, width):
        raise UsageError(f"dataset frames are {videos[0].frames.shape[1:3]}, config expects {(height, width)}")
    d_llm = model_cfg.d_llm if config.train.alignment_weight > 0 else None
    samples = windows_from_videos(videos, config.stream.t_s, per=config.train.windows, d_llm=d_llm)
    model = MistakeDetector(model_cfg, seed=config.seed)
    trainer = Trainer(model, config.train_config())
    if log_path is None:
        log_path = Path(checkpoint_out).with_suffix(".log.csv")
    history = trainer.fit(
        samples, log_path=log_path,
        checkpoint_path=checkpoint_out, checkpoint_every=config.train.checkpoint_every,
    )
    save_checkpoint(model, checkpoint_out, extra={"steps": trainer.steps})
    log.info("trained %d steps, final loss %.6f", trainer.steps, history[-1]["loss"])
    return history


def make_generator(config: RunConfig):
    e = config.explain
    if e.generator == "mock":
        return MockGenerator(width=e.d_llm, seed=config.seed)
    if e.generator == "external":
        return ExternalGenerator(e.endpoint, width=e.d_llm, timeout=e.timeout, retries=e.retries, seed=config.seed)
    return None


def frame_sources(path: str, fps: float):
    """Yield ``(video_id, frames)``: stdin, one image directory, or a dataset root."""
    if path == "-":
        yield "stream", read_raw_stream(sys.stdin.buffer)
        return
    root = Path(path)
    if not root.is_dir():
        raise UsageError(f"frame source {path} is not a directory")
    subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    if subdirs and not any(p.suffix.lower() in (".png", ".jpg", ".jpeg") for p in root.iterdir()):
        manifest = root / "manifest.json"
        fps_of = {}
        if manifest.exists():
            fps_of = {v["video_id"]: v["fps"] for v in json.loads(manifest.read_text())["videos"]}
        for sub in subdirs:
            yield sub.name, iter_directory(sub, fps_of.get(sub.name, fps))
    else:
        yield root.name, iter_directory(root, fps)


def cmd_detect(config: RunConfig, frame_source: str, out_path, checkpoint) -> int:
    model = load_checkpoint(checkpoint, config.model_config())
    model.eval()
    generator = make_generator(config)
    count = 0
    out = sys.stdout if str(out_path) == "-" else Path(out_path).open("w", encoding="utf-8", newline="\n")
    try:
        for video_id, frames in frame_sources(frame_source, config.stream.fps):
            detector = OnlineDetector(
                model, t_s=config.stream.t_s, stride=config.stream.stride,
                gate_config=config.gate_config(), generator=generator, video_id=video_id,
                async_generation=config.explain.async_generation,
            )
            for record in detector.run(frames):
                out.write(data_mod.dumps_record(record) + "\n")
                out.flush()
                count += 1
    finally:
        if out is not sys.stdout:
            out.close()
    return count


def read_annotation_source(path) -> list:
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*/annotations.jsonl")) or sorted(path.glob("annotations.jsonl"))
        if not files:
            raise UsageError(f"no annotations.jsonl under {path}")
        return [a for f in files for a in data_mod.read_annotations(f)]
    return data_mod.read_annotations(path)


def cmd_evaluate(predictions_path, annotations_path, out_path=None) -> dict:
    predictions = data_mod.read_predictions(predictions_path)
    if not predictions:
        raise UsageError(f"{predictions_path} holds no predictions")
    report = evaluate_run(predictions, read_annotation_source(annotations_path))
    result = report.to_dict()
    text = json.dumps(result, indent=2, sort_keys=True) + "\n"
    if out_path is not None:
        Path(out_path).write_text(text, encoding="utf-8")
    print(format_report(report))
    return result


def cmd_plot_timeline(config: RunConfig, predictions_path, annotations_path, out_csv, svg=None, video=None):
    predictions = data_mod.read_predictions(predictions_path)
    annotations = read_annotation_source(annotations_path)
    rows = timeline_rows(predictions, annotations, video)
    write_csv(rows, out_csv)
    if svg is not None:
        vid = video or predictions[0].video_id
        anns = [a for a in annotations if a.video_id == vid]
        Path(svg).write_text(render_svg(rows, anns, tau=config.explain.tau, title=vid), encoding="utf-8")
    return rows


# ---------------------------------------------------------------------------
# argument handling

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. --set train.epochs=5")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mistakedet", description="Online mistake detection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", parents=[common], help="generate a synthetic task-video dataset")
    p.add_argument("--out", help="output dataset directory")

    p = sub.add_parser("train", parents=[common], help="train on a dataset directory")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--checkpoint", help="checkpoint to write")
    p.add_argument("--out", help="alias for --checkpoint")
    p.add_argument("--log", help="CSV training log (default: <checkpoint>.log.csv)")

    p = sub.add_parser("detect", parents=[common], help="stream frames through a trained detector")
    p.add_argument("--checkpoint", help="trained checkpoint")
    p.add_argument("--frames", help="image directory, dataset directory, or - for the raw stdin protocol")
    p.add_argument("--out", help="prediction JSON-lines file, or - for stdout")

    p = sub.add_parser("evaluate", parents=[common], help="score predictions against annotations")
    p.add_argument("--predictions")
    p.add_argument("--annotations", help="annotations.jsonl or a dataset directory")
    p.add_argument("--out", help="JSON report path")

    p = sub.add_parser("plot-timeline", parents=[common], help="confidence-over-time CSV and SVG")
    p.add_argument("--predictions")
    p.add_argument("--annotations")
    p.add_argument("--out", help="CSV path")
    p.add_argument("--svg", help="optional SVG path")
    p.add_argument("--video", help="video id when predictions cover several videos")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        config = load_config(args.config, args.set, args.seed)
        paths = config.paths
        if args.command == "synth-data":
            cmd_synth_data(config, _need(args.out or paths.data, "--out"))
        elif args.command == "train":
            cmd_train(config, _need(args.data or paths.data, "--data"),
                      _need(args.checkpoint or args.out or paths.checkpoint, "--checkpoint"), args.log)
        elif args.command == "detect":
            cmd_detect(config, _need(args.frames or paths.frames, "--frames"),
                       _need(args.out or paths.out, "--out"),
                       _need(args.checkpoint or paths.checkpoint, "--checkpoint"))
        elif args.command == "evaluate":
            cmd_evaluate(_need(args.predictions or paths.predictions, "--predictions"),
                         _need(args.annotations or paths.annotations, "--annotations"), args.out)
        elif args.command == "plot-timeline":
            cmd_plot_timeline(config, _need(args.predictions or paths.predictions, "--predictions"),
                              _need(args.annotations or paths.annotations, "--annotations"),
                              _need(args.out, "--out"), args.svg, args.video)
    except (ConfigError, UsageError, CheckpointError, MatchError, data_mod.RecordError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NaNLossError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        log.debug("unhandled error", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
