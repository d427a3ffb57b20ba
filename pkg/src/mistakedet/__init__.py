"""Online mistake detection for streaming task videos, with gated explanations."""

from .data import (
    AnnotationRecord,
    PredictionRecord,
    SyntheticTaskSpec,
    generate_synthetic,
    read_annotations,
    read_predictions,
    write_annotations,
    write_predictions,
)
from .encoder import EncoderConfig, FrameEncoder, PrecomputedFeatures
from .explain import ExternalGenerator, GateConfig, MockGenerator, explain, gate, project
from .head import MistakeHead, sigmoid
from .metrics import bleu, cider, detection_report, evaluate_run, rouge_l
from .model import MistakeDetector, ModelConfig, load_checkpoint, save_checkpoint
from .pipeline import OnlineDetector
from .stream import FrameSample, FrameStream, SegmentWindow
from .training import TrainConfig, Trainer
from .video_qformer import VideoQFormer, VideoQFormerConfig

__version__ = "0.1.0"
