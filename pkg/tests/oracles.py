"""Straight-line reference computations used to check the package.

Nothing here imports mistakedet internals beyond reading parameter arrays; the
forward passes, metrics and data draws are re-derived from their definitions.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5


# ---------------------------------------------------------------------------
# network forwards

def layer_norm(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * gain + bias


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def linear(p, prefix, x):
    # torch stores (out, in) weights
    return x @ p[prefix + ".weight"].T + p[prefix + ".bias"]


def single_head_attention(p, prefix, x, context):
    q = linear(p, prefix + ".query", x)
    k = linear(p, prefix + ".key", context)
    v = linear(p, prefix + ".value", context)
    scores = q @ k.T / math.sqrt(q.shape[1])
    scores = scores - scores.max(axis=1, keepdims=True)
    weights = np.exp(scores)
    weights = weights / weights.sum(axis=1, keepdims=True)
    return linear(p, prefix + ".out", weights @ v), weights


def ffn(p, prefix, x):
    return linear(p, prefix + ".fc2", gelu(linear(p, prefix + ".fc1", x)))


def qformer_block(p, prefix, queries, context):
    h, self_w = single_head_attention(p, prefix + ".self_attn", queries, queries)
    queries = layer_norm(queries + h, p[prefix + ".norm1.weight"], p[prefix + ".norm1.bias"])
    h, cross_w = single_head_attention(p, prefix + ".cross_attn", queries, context)
    queries = layer_norm(queries + h, p[prefix + ".norm2.weight"], p[prefix + ".norm2.bias"])
    queries = layer_norm(queries + ffn(p, prefix + ".ffn", queries),
                         p[prefix + ".norm3.weight"], p[prefix + ".norm3.bias"])
    return queries, self_w, cross_w


def video_qformer_forward(p, v, use_positions=True):
    """One block, one head; the context LayerNorm is applied when its parameters exist."""
    context = linear(p, "input_proj", v)
    if use_positions:
        context = context + p["temporal_pos"][: len(v)]
    if "context_norm.weight" in p:
        context = layer_norm(context, p["context_norm.weight"], p["context_norm.bias"])
    f, _, _ = qformer_block(p, "blocks.0", p["query_bank"], context)
    return f


def vit_encoder_forward(p, image, patch):
    """One pre-norm block, one head, then the spatial Q-Former block."""
    height, width, _ = image.shape
    rows = []
    for r in range(height // patch):
        for c in range(width // patch):
            rows.append(image[r * patch:(r + 1) * patch, c * patch:(c + 1) * patch, :].reshape(-1))
    tokens = linear(p, "patch_embed", np.array(rows))
    x = np.vstack([p["cls_token"][None, :], tokens]) + p["pos_embed"]
    n1 = layer_norm(x, p["blocks.0.norm1.weight"], p["blocks.0.norm1.bias"])
    h, _ = single_head_attention(p, "blocks.0.attn", n1, n1)
    x = x + h
    n2 = layer_norm(x, p["blocks.0.norm2.weight"], p["blocks.0.norm2.bias"])
    x = x + ffn(p, "blocks.0.mlp", n2)
    x = layer_norm(x, p["norm.weight"], p["norm.bias"])
    q, _, _ = qformer_block(p, "spatial_qformer", p["spatial_queries"], x)
    return linear(p, "to_d1", q.mean(axis=0))


# ---------------------------------------------------------------------------
# finite differences

def central_difference(fn, params, step=1e-5):
    """Gradient of scalar ``fn()`` w.r.t. each array in ``params`` (modified in place)."""
    grads = []
    for arr in params:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = fn()
            flat[i] = orig - step
            down = fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def relative_error(analytic, numeric) -> float:
    analytic, numeric = np.asarray(analytic).ravel(), np.asarray(numeric).ravel()
    scale = max(np.linalg.norm(numeric), np.linalg.norm(analytic), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


# ---------------------------------------------------------------------------
# caption metrics, written independently of mistakedet.metrics

def count_ngram(tokens, gram):
    n = len(gram)
    return sum(1 for i in range(len(tokens) - n + 1) if tuple(tokens[i:i + n]) == gram)


def bleu4(candidate, references):
    c = len(candidate)
    logs = []
    for n in (1, 2, 3, 4):
        grams = [tuple(candidate[i:i + n]) for i in range(c - n + 1)]
        matched = 0
        for gram in set(grams):
            matched += min(grams.count(gram), max(count_ngram(r, gram) for r in references))
        if matched == 0:
            logs.append(math.log(1.0 / (2 * c)))
        else:
            logs.append(math.log(matched / len(grams)))
    best = None
    for r in references:
        key = (abs(len(r) - c), len(r))
        if best is None or key < best[0]:
            best = (key, len(r))
    r = best[1]
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * math.exp(math.fsum(logs) / 4)


def is_subsequence(sub, seq):
    it = iter(seq)
    return all(tok in it for tok in sub)


def lcs_brute_force(a, b):
    for size in range(min(len(a), len(b)), 0, -1):
        for idx in itertools.combinations(range(len(a)), size):
            if is_subsequence([a[i] for i in idx], b):
                return size
    return 0


def rouge_l_f(candidate, reference):
    lcs = lcs_brute_force(candidate, reference)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(candidate), lcs / len(reference)
    return 2 * p * r / (p + r)


def cider_d(candidates, references, n=4, sigma=6.0):
    """CIDEr-D in the COCO evaluation style with fsum-based sums.

    candidates: {id: tokens}; references: {id: [tokens, ...]}.
    """
    def grams_of(tokens):
        out = {}
        for k in range(1, n + 1):
            for i in range(len(tokens) - k + 1):
                g = tuple(tokens[i:i + k])
                out[g] = out.get(g, 0) + 1
        return out

    doc_freq = {}
    for key in references:
        seen = set()
        for ref in references[key]:
            seen.update(grams_of(ref))
        for g in seen:
            doc_freq[g] = doc_freq.get(g, 0) + 1
    log_docs = math.log(float(len(references)))

    def to_vec(tokens):
        vec = [dict() for _ in range(n)]
        for g, tf in grams_of(tokens).items():
            vec[len(g) - 1][g] = float(tf) * (log_docs - math.log(max(1.0, doc_freq.get(g, 0.0))))
        norm = [math.sqrt(math.fsum(w * w for w in vec[k].values())) for k in range(n)]
        return vec, norm, len(tokens)

    per_item = {}
    for key in candidates:
        hv, hn, hl = to_vec(candidates[key])
        acc = [[] for _ in range(n)]
        for ref in references[key]:
            rv, rn, rl = to_vec(ref)
            delta = float(hl - rl)
            for k in range(n):
                val = math.fsum(min(w, rv[k].get(g, 0.0)) * rv[k].get(g, 0.0) for g, w in hv[k].items())
                if hn[k] != 0 and rn[k] != 0:
                    val /= hn[k] * rn[k]
                acc[k].append(val * math.exp(-(delta ** 2) / (2 * sigma ** 2)))
        per_item[key] = math.fsum(math.fsum(a) for a in acc) / n / len(references[key]) * 10.0
    return math.fsum(per_item.values()) / len(per_item), per_item


# ---------------------------------------------------------------------------
# detection counting from raw JSON-lines files

def brute_force_detection(prediction_lines, annotation_lines):
    anns = [a for a in annotation_lines]
    tp = fp = tn = fn = 0
    for p in prediction_lines:
        match = [a for a in anns if a["video_id"] == p["video_id"]
                 and a["segment_start"] <= p["timestep"] < a["segment_end"]]
        assert len(match) == 1
        truth = match[0]["label"] == "mistake"
        pred = p["label"] == "mistake"
        tp += truth and pred
        fp += (not truth) and pred
        fn += truth and not pred
        tn += (not truth) and not pred
    pm = tp / (tp + fp) if tp + fp else 0.0
    rm = tp / (tp + fn) if tp + fn else 0.0
    pc = tn / (tn + fn) if tn + fn else 0.0
    rc = tn / (tn + fp) if tn + fp else 0.0
    f1m = 2 * pm * rm / (pm + rm) if pm + rm else 0.0
    f1c = 2 * pc * rc / (pc + rc) if pc + rc else 0.0
    return {"precision_mistake": pm, "recall_mistake": rm, "precision_correct": pc,
            "recall_correct": rc, "f1_macro": (f1m + f1c) / 2}


# ---------------------------------------------------------------------------
# synthetic generator draws

def resimulate_error_kinds(seed, num_videos, steps, error_rate, frame_size, frames_per_step):
    """Replay the generator's documented draw sequence; return the error kind per video."""
    rng = np.random.default_rng(seed)
    kinds = []
    for _ in range(num_videos):
        if rng.random() < error_rate:
            if rng.random() < 0.5:
                kinds.append("procedural")
                rng.integers(0, steps - 1)
            else:
                kinds.append("execution")
                rng.integers(0, steps)
                if rng.random() < 0.5:
                    rng.integers(1, 8)
                else:
                    rng.integers(1, 4)
        else:
            kinds.append("none")
        rng.uniform(-0.05, 0.05, size=3)
        rng.standard_normal((steps * frames_per_step, frame_size, frame_size, 3))
    return kinds
