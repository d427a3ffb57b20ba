"""How the explanation scores behave on a few hand-made captions.

    python3 demos/03_caption_metrics.py
"""

from mistakedet.metrics import bleu, cider, rouge_l, tokenize

references = {
    "a": "step 3 performed out of order",
    "b": "step 2 executed with wrong color",
    "c": "step 4 executed with wrong shape",
}
candidates = {
    "exact": dict(references),
    "close": {"a": "step 3 was done out of order", "b": "step 2 has the wrong color",
              "c": "the shape of step 4 is wrong"},
    "generic": {k: "a mistake was made" for k in references},
}

refs = {k: [tokenize(v)] for k, v in references.items()}
print(f"{'system':<8} {'BLEU':>6} {'ROUGE-L':>8} {'CIDEr-D':>8}")
for name, cands in candidates.items():
    toks = {k: tokenize(v) for k, v in cands.items()}
    b = sum(bleu(toks[k], refs[k]) for k in toks) / len(toks)
    r = sum(rouge_l(toks[k], refs[k][0]) for k in toks) / len(toks)
    c, _ = cider(toks, refs)
    print(f"{name:<8} {b:6.3f} {r:8.3f} {c:8.3f}")

# CIDEr-D weights n-grams by rarity across the corpus: "step", shared by every
# reference, carries no weight, while the distinguishing words do.
