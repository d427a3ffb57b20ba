"""Detection metrics (per-class precision/recall, macro-F1) and caption metrics.

Caption metrics work on token lists. :func:`tokenize` lowercases, replaces
ASCII punctuation with spaces and splits on whitespace.

BLEU is sentence-level BLEU-4: clipped n-gram precisions for n = 1..4, each
zero precision replaced by ``1 / (2 * len(candidate))``, geometric mean, and a
brevity penalty against the closest reference length (shorter one on ties).

ROUGE-L is the LCS F-measure with beta = 1.

CIDEr-D follows the COCO caption evaluation recipe: TF-IDF vectors for
n = 1..4 with document frequencies taken from the reference corpus, clipped
cosine similarity, a Gaussian length penalty (sigma = 6, lengths in tokens),
mean over n, mean over references, times 10. Sums use :func:`math.fsum`.
"""

from __future__ import annotations

import math
import string
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

from .data import AnnotationRecord, PredictionRecord

_PUNCT = str.maketrans({c: " " for c in string.punctuation})


def tokenize(text: str) -> list[str]:
    return text.lower().translate(_PUNCT).split()


# ---------------------------------------------------------------------------
# detection

@dataclass(frozen=True)
class ConfusionCounts:
    """Counts with "mistake" as the positive class."""

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {value!r}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @classmethod
    def from_labels(cls, truth: Sequence[bool], predicted: Sequence[bool]) -> "ConfusionCounts":
        if len(truth) != len(predicted):
            raise ValueError(f"{len(truth)} labels vs {len(predicted)} predictions")
        tp = sum(1 for t, p in zip(truth, predicted) if t and p)
        fp = sum(1 for t, p in zip(truth, predicted) if not t and p)
        fn = sum(1 for t, p in zip(truth, predicted) if t and not p)
        return cls(tp, fp, len(truth) - tp - fp - fn, fn)


@dataclass(frozen=True)
class DetectionReport:
    precision_correct: float
    recall_correct: float
    precision_mistake: float
    recall_mistake: float
    f1_macro: float
    f1_correct: float = 0.0
    f1_mistake: float = 0.0
    undefined: tuple[str, ...] = ()  # ratios that were 0/0 and reported as 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["undefined"] = list(self.undefined)
        return d


def _ratio(num: float, den: float, name: str, undefined: list) -> float:
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def f1(precision: float, recall: float) -> float:
    return 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)


def report_from_rates(pc: float, rc: float, pm: float, rm: float, undefined=()) -> DetectionReport:
    f1c, f1m = f1(pc, rc), f1(pm, rm)
    return DetectionReport(pc, rc, pm, rm, (f1c + f1m) / 2, f1c, f1m, tuple(undefined))


def detection_report(counts: ConfusionCounts) -> DetectionReport:
    if counts.total == 0:
        raise ValueError("cannot report on zero evaluated segments")
    undefined: list[str] = []
    pm = _ratio(counts.tp, counts.tp + counts.fp, "precision_mistake", undefined)
    rm = _ratio(counts.tp, counts.tp + counts.fn, "recall_mistake", undefined)
    pc = _ratio(counts.tn, counts.tn + counts.fn, "precision_correct", undefined)
    rc = _ratio(counts.tn, counts.tn + counts.fp, "recall_correct", undefined)
    return report_from_rates(pc, rc, pm, rm, undefined)


# ---------------------------------------------------------------------------
# caption metrics

def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: Sequence[str], references: Sequence[Sequence[str]], max_n: int = 4) -> float:
    """Sentence BLEU with epsilon smoothing; an empty candidate scores 0."""
    if not references:
        raise ValueError("bleu needs at least one reference")
    c = len(candidate)
    if c == 0:
        return 0.0
    log_precisions = []
    for n in range(1, max_n + 1):
        cand = ngrams(candidate, n)
        max_ref: Counter = Counter()
        for ref in references:
            for gram, count in ngrams(ref, n).items():
                max_ref[gram] = max(max_ref[gram], count)
        clipped = sum(min(count, max_ref[gram]) for gram, count in cand.items())
        total = sum(cand.values())
        p = clipped / total if clipped > 0 else 1.0 / (2 * c)
        log_precisions.append(math.log(p))
    ref_lens = [len(r) for r in references]
    r = min(ref_lens, key=lambda length: (abs(length - c), length))
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(math.fsum(log_precisions) / max_n)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> float:
    if not candidate or not reference:
        return 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(candidate), lcs / len(reference)
    return 2 * p * r / (p + r)


def _tfidf(tokens, df: Mapping, log_n: float, max_n: int):
    vecs, norms = [], []
    for n in range(1, max_n + 1):
        vec = {g: tf * (log_n - math.log(max(1.0, df.get(g, 0)))) for g, tf in ngrams(tokens, n).items()}
        vecs.append(vec)
        norms.append(math.sqrt(math.fsum(w * w for w in vec.values())))
    return vecs, norms


def cider(
    candidates: Mapping,
    references: Mapping,
    variant: str = "D",
    max_n: int = 4,
    sigma: float = 6.0,
) -> tuple[float, dict]:
    """Corpus CIDEr; returns ``(mean score, {id: score})``.

    ``candidates`` maps id -> tokens, ``references`` maps id -> list of token
    lists. ``variant="plain"`` drops clipping and the length penalty.
    """
    if variant not in ("D", "plain"):
        raise ValueError(f"variant must be 'D' or 'plain', got {variant!r}")
    if set(candidates) != set(references):
        raise ValueError("candidates and references must cover the same ids")
    if len(references) < 2:
        raise ValueError("CIDEr needs at least 2 reference items: with one item every n-gram has IDF 0")
    df: Counter = Counter()
    for refs in references.values():
        if not refs:
            raise ValueError("every item needs at least one reference")
        df.update({g for ref in refs for n in range(1, max_n + 1) for g in ngrams(ref, n)})
    log_n = math.log(float(len(references)))
    scores = {}
    for key, cand in candidates.items():
        hv, hn = _tfidf(cand, df, log_n, max_n)
        per_n = [[] for _ in range(max_n)]
        for ref in references[key]:
            rv, rn = _tfidf(ref, df, log_n, max_n)
            penalty = math.exp(-((len(cand) - len(ref)) ** 2) / (2 * sigma**2)) if variant == "D" else 1.0
            for n in range(max_n):
                if variant == "D":
                    dot = math.fsum(min(w, rv[n].get(g, 0.0)) * rv[n].get(g, 0.0) for g, w in hv[n].items())
                else:
                    dot = math.fsum(w * rv[n].get(g, 0.0) for g, w in hv[n].items())
                if hn[n] != 0 and rn[n] != 0:
                    dot /= hn[n] * rn[n]
                per_n[n].append(dot * penalty)
        score = math.fsum(math.fsum(vals) for vals in per_n) / max_n / len(references[key])
        scores[key] = score * 10.0
    return math.fsum(scores.values()) / len(scores), scores


# ---------------------------------------------------------------------------
# run evaluation

@dataclass(frozen=True)
class CaptionScore:
    bleu: float
    rouge_l: float
    cider: float | None  # None when fewer than 2 items are available
    items: int


@dataclass
class EvaluationReport:
    counts: ConfusionCounts
    detection: DetectionReport
    captions: CaptionScore | None
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "counts": asdict(self.counts),
            "detection": self.detection.to_dict(),
            "captions": asdict(self.captions) if self.captions else None,
            "flags": list(self.flags),
        }


class MatchError(ValueError):
    pass


def match_predictions(
    predictions: Sequence[PredictionRecord], annotations: Sequence[AnnotationRecord]
) -> list[tuple[PredictionRecord, AnnotationRecord]]:
    """Pair each prediction with the segment [start, end) holding its timestep."""
    by_video: dict[str, list[AnnotationRecord]] = {}
    for ann in annotations:
        by_video.setdefault(ann.video_id, []).append(ann)
    for anns in by_video.values():
        anns.sort(key=lambda a: a.segment_start)
    pairs, unmatched = [], []
    for pred in predictions:
        hits = [a for a in by_video.get(pred.video_id, ()) if a.contains(pred.timestep)]
        if len(hits) != 1:
            unmatched.append(f"{pred.video_id}@{pred.timestep} ({len(hits)} segments)")
            continue
        pairs.append((pred, hits[0]))
    if unmatched:
        shown = ", ".join(unmatched[:10]) + (f" and {len(unmatched) - 10} more" if len(unmatched) > 10 else "")
        raise MatchError(f"{len(unmatched)} prediction(s) do not map to exactly one segment: {shown}")
    return pairs


def evaluate_run(
    predictions: Sequence[PredictionRecord], annotations: Sequence[AnnotationRecord]
) -> EvaluationReport:
    """Detection metrics over all predictions; caption metrics over predictions
    that explain a segment annotated as a mistake."""
    if not predictions:
        raise ValueError("no predictions to evaluate")
    pairs = match_predictions(predictions, annotations)
    counts = ConfusionCounts.from_labels(
        [a.label == "mistake" for _, a in pairs], [p.label == "mistake" for p, _ in pairs]
    )
    detection = detection_report(counts)
    flags = [f"undefined:{name}" for name in detection.undefined]
    explained = [
        (tokenize(p.explanation), tokenize(a.explanation))
        for p, a in pairs
        if p.label == "mistake" and p.explanation is not None and a.label == "mistake"
    ]
    captions = None
    if explained:
        bleus = [bleu(c, [r]) for c, r in explained]
        rouges = [rouge_l(c, r) for c, r in explained]
        if any(not c for c, _ in explained):
            flags.append("empty_candidate")
        cider_score = None
        if len(explained) >= 2:
            cider_score, _ = cider({i: c for i, (c, _) in enumerate(explained)},
                                   {i: [r] for i, (_, r) in enumerate(explained)})
        else:
            flags.append("cider_needs_two_items")
        captions = CaptionScore(
            bleu=math.fsum(bleus) / len(bleus),
            rouge_l=math.fsum(rouges) / len(rouges),
            cider=cider_score,
            items=len(explained),
        )
    else:
        flags.append("no_explained_mistakes")
    return EvaluationReport(counts, detection, captions, flags)


def format_report(report: EvaluationReport) -> str:
    d = report.detection
    lines = [
        f"{'F1-Score':>9} | {'Correct Prec':>12} {'Rec':>6} | {'Mistake Prec':>12} {'Rec':>6}",
        f"{100 * d.f1_macro:9.1f} | {100 * d.precision_correct:12.1f} {100 * d.recall_correct:6.1f} | "
        f"{100 * d.precision_mistake:12.1f} {100 * d.recall_mistake:6.1f}",
        "",
    ]
    c = report.captions
    lines.append(f"{'BLEU':>6} {'ROUGEL':>7} {'CIDEr':>7}")
    if c is None:
        lines.append(f"{'-':>6} {'-':>7} {'-':>7}")
    else:
        cider_txt = "-" if c.cider is None else f"{c.cider:.2f}"
        lines.append(f"{c.bleu:6.2f} {c.rouge_l:7.2f} {cider_txt:>7}")
    if report.flags:
        lines.append("flags: " + ", ".join(report.flags))
    return "\n".join(lines)
