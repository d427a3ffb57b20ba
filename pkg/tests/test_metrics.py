import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from mistakedet.data import AnnotationRecord, PredictionRecord
from mistakedet.metrics import (
    ConfusionCounts, MatchError, bleu, cider, detection_report, evaluate_run, format_report, lcs_length,
    match_predictions, report_from_rates, rouge_l, tokenize,
)

VOCAB = ["step", "one", "two", "wrong", "color", "shape", "order", "out", "of", "the"]


def random_sets(seed, items=6):
    rng = np.random.default_rng(seed)

    def sentence():
        return [VOCAB[i] for i in rng.integers(0, len(VOCAB), rng.integers(1, 9))]

    cands = {i: sentence() for i in range(items)}
    refs = {i: [sentence() for _ in range(rng.integers(1, 4))] for i in range(items)}
    return cands, refs


def test_reference_rates_macro_f1():
    r = report_from_rates(pc=0.96, rc=0.91, pm=0.11, rm=0.21)
    f1c = 2 * 0.96 * 0.91 / (0.96 + 0.91)
    f1m = 2 * 0.11 * 0.21 / (0.11 + 0.21)
    assert r.f1_macro == pytest.approx((f1c + f1m) / 2, abs=1e-15)
    assert abs(r.f1_macro - 0.539) <= 0.001
    assert abs(r.f1_macro - 0.550) <= 0.02


def test_detection_report_counts():
    r = detection_report(ConfusionCounts(tp=3, fp=1, tn=5, fn=2))
    assert (r.precision_mistake, r.recall_mistake) == (0.75, 0.6)
    assert (r.precision_correct, r.recall_correct) == (5 / 7, 5 / 6)
    r = detection_report(ConfusionCounts(tp=0, fp=0, tn=4, fn=0))
    assert set(r.undefined) == {"precision_mistake", "recall_mistake"}
    with pytest.raises(ValueError):
        detection_report(ConfusionCounts(0, 0, 0, 0))
    with pytest.raises(ValueError):
        ConfusionCounts(-1, 0, 0, 0)


@settings(max_examples=100)
@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=40))
def test_counts_and_report_against_brute_force(pairs):
    truth = [t for t, _ in pairs]
    pred = [p for _, p in pairs]
    counts = ConfusionCounts.from_labels(truth, pred)
    assert counts.total == len(pairs)
    preds = [{"video_id": "v", "timestep": float(i), "label": "mistake" if p else "correct"}
             for i, p in enumerate(pred)]
    anns = [{"video_id": "v", "segment_start": float(i), "segment_end": i + 1.0,
             "label": "mistake" if t else "correct"} for i, t in enumerate(truth)]
    want = oracles.brute_force_detection(preds, anns)
    got = detection_report(counts).to_dict()
    for key, value in want.items():
        assert got[key] == pytest.approx(value, abs=1e-12)
    assert 0.0 <= got["f1_macro"] <= 1.0


def test_tokenize():
    assert tokenize("Step 2, performed OUT-of-order!") == ["step", "2", "performed", "out", "of", "order"]


@pytest.mark.parametrize("seed", range(20))
def test_bleu_and_rouge_match_brute_force(seed):
    cands, refs = random_sets(seed)
    for i in cands:
        assert abs(bleu(cands[i], refs[i]) - oracles.bleu4(cands[i], refs[i])) <= 1e-12
        for ref in refs[i]:
            assert lcs_length(cands[i], ref) == oracles.lcs_brute_force(cands[i], ref)
            assert abs(rouge_l(cands[i], ref) - oracles.rouge_l_f(cands[i], ref)) <= 1e-12


@pytest.mark.parametrize("seed", range(20))
def test_cider_d_matches_brute_force_exactly(seed):
    cands, refs = random_sets(seed)
    got_mean, got_items = cider(cands, refs)
    want_mean, want_items = oracles.cider_d(cands, refs)
    assert got_mean == want_mean
    assert got_items == want_items


def test_identity_inputs():
    sents = [tokenize("step two performed out of order"), tokenize("step one executed with wrong color")]
    for s in sents:
        assert bleu(s, [s]) == 1.0
        assert rouge_l(s, s) == 1.0
    cands = {i: s for i, s in enumerate(sents)}
    refs = {i: [s] for i, s in enumerate(sents)}
    assert cider(cands, refs) == oracles.cider_d(cands, refs)


def test_bleu_edges():
    assert bleu([], [["a"]]) == 0.0
    with pytest.raises(ValueError):
        bleu(["a"], [])
    # brevity penalty picks the closest reference, shorter on ties
    c = ["a", "b", "c", "d"]
    assert bleu(c, [["a", "b", "c"], ["a", "b", "c", "d", "e"]]) == pytest.approx(
        oracles.bleu4(c, [["a", "b", "c"], ["a", "b", "c", "d", "e"]]), abs=1e-15)


def test_cider_variants_and_errors():
    cands, refs = random_sets(3)
    plain, _ = cider(cands, refs, variant="plain")
    assert math.isfinite(plain)
    with pytest.raises(ValueError):
        cider({0: ["a"]}, {0: [["a"]]})
    with pytest.raises(ValueError):
        cider(cands, refs, variant="X")
    # repeating a matched n-gram cannot raise CIDEr-D above the unrepeated candidate
    c = {0: ["step", "one"], 1: ["other"]}
    r = {0: [["step", "one", "done"]], 1: [["other", "thing"]]}
    spam = {0: ["step", "step", "step", "one"], 1: ["other"]}
    assert cider(spam, r)[1][0] <= cider(c, r)[1][0]


def ann(v, s, e, label):
    text = "step 1 executed with wrong color" if label == "mistake" else ""
    return AnnotationRecord(v, s, e, label, "execution" if label == "mistake" else "none", text)


def test_match_closed_open():
    anns = [ann("v", 0.0, 2.0, "correct"), ann("v", 2.0, 4.0, "mistake")]
    pairs = match_predictions([PredictionRecord("v", 2.0, 0.1, "correct")], anns)
    assert pairs[0][1].segment_start == 2.0
    with pytest.raises(MatchError, match="v@4.0"):
        match_predictions([PredictionRecord("v", 4.0, 0.1, "correct")], anns)
    with pytest.raises(MatchError):
        match_predictions([PredictionRecord("w", 1.0, 0.1, "correct")], anns)


def test_evaluate_run_and_format():
    anns = [ann("v", 0.0, 2.0, "correct"), ann("v", 2.0, 4.0, "mistake"), ann("w", 0.0, 2.0, "mistake")]
    preds = [
        PredictionRecord("v", 0.0, 0.1, "correct"),
        PredictionRecord("v", 1.0, 0.8, "mistake", "a wrong color"),
        PredictionRecord("v", 3.0, 0.9, "mistake", "step 1 executed with wrong color"),
        PredictionRecord("w", 1.0, 0.9, "mistake", "step one wrong"),
    ]
    report = evaluate_run(preds, anns)
    assert report.counts == ConfusionCounts(tp=2, fp=1, tn=1, fn=0)
    assert report.captions.items == 2
    assert report.captions.rouge_l == pytest.approx(
        (1.0 + oracles.rouge_l_f(tokenize("step one wrong"), tokenize(anns[2].explanation))) / 2, abs=1e-12)
    text = format_report(report)
    assert "F1-Score" in text and "CIDEr" in text
    only_correct = evaluate_run([PredictionRecord("v", 0.0, 0.1, "correct")], anns)
    assert "no_explained_mistakes" in only_correct.flags
    assert "undefined:precision_mistake" in only_correct.flags
