"""Independent reference implementations the tests check the package against.

None of these import the code they verify.
"""

import math
import unicodedata

import numpy as np

# ---------------------------------------------------------------------------
# preprocessing: character scanners, no regular expressions

ASCII_PUNCT = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~"
LINK_STARTS = ("http://", "https://", "www.")


def _is_word(c):
    return c.isalnum() or c == "_"


def _scan_links(t):
    out, i = [], 0
    while i < len(t):
        if t.startswith(LINK_STARTS, i):
            while i < len(t) and not t[i].isspace():
                i += 1
            out.append(" ")
        else:
            out.append(t[i])
            i += 1
    return "".join(out)


def _scan_sigil(t, sigil):
    out, i = [], 0
    while i < len(t):
        if t[i] == sigil and i + 1 < len(t) and _is_word(t[i + 1]):
            i += 1
            while i < len(t) and _is_word(t[i]):
                i += 1
            out.append(" ")
        else:
            out.append(t[i])
            i += 1
    return "".join(out)


def _fold(t):
    return "".join(c for c in unicodedata.normalize("NFD", t)
                   if unicodedata.category(c) != "Mn")


def _drop_chars(t, digits=False, punct=False, non_ascii=False):
    out = []
    for c in t:
        if digits and "0" <= c <= "9":
            continue
        if punct and c in ASCII_PUNCT:
            continue
        if non_ascii and ord(c) > 127:
            continue
        out.append(c)
    return "".join(out)


def _collapse(t):
    words, cur = [], []
    for c in t:
        if c.isspace():
            if cur:
                words.append("".join(cur))
                cur = []
        else:
            cur.append(c)
    if cur:
        words.append("".join(cur))
    return " ".join(words)


def _one_pass(pipeline, t):
    if pipeline == "p1":
        return _scan_sigil(t, "#")
    if pipeline == "p2":
        return _drop_chars(t, punct=True)
    t = _scan_sigil(_scan_sigil(_scan_links(t), "@"), "#")
    if pipeline == "p3":
        return t
    return _drop_chars(_fold(t), digits=True, punct=True, non_ascii=True)


def reference_preprocess(pipeline, text):
    prev = _collapse(_one_pass(pipeline, text))
    while True:
        nxt = _collapse(_one_pass(pipeline, prev))
        if nxt == prev:
            return prev
        prev = nxt


# ---------------------------------------------------------------------------
# metrics by direct counting

def brute_force_metrics(truth, pred, n_classes):
    """Accuracy, per-class F1 and macro F1 from explicit TP/FP/FN counts."""
    correct = sum(1 for t, p in zip(truth, pred) if t == p)
    f1s = []
    for c in range(n_classes):
        tp = fp = fn = 0
        for t, p in zip(truth, pred):
            if p == c and t == c:
                tp += 1
            elif p == c:
                fp += 1
            elif t == c:
                fn += 1
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    acc = correct / len(truth) if truth else 0.0
    return acc, f1s, sum(f1s) / n_classes


# ---------------------------------------------------------------------------
# transformer forward, one sequence and one position at a time

def _ln(x, g, b, eps=1e-12):
    mu = sum(x) / len(x)
    var = sum((v - mu) ** 2 for v in x) / len(x)
    return np.array([(v - mu) / math.sqrt(var + eps) for v in x]) * g + b


def _gelu(x):
    return np.array([0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0))) for v in x])


def straight_line_logits(params, n_layers, n_heads, ids, mask, head):
    """Logits of one sequence (eval mode), written out position by position.

    ``head`` is ``"classifier"`` (returns class logits) or ``"mlm"`` (returns
    a [T, V] array of token logits).
    """
    T = len(ids)
    d = params["tok_emb"].shape[1]
    dh = d // n_heads
    h = [params["tok_emb"][ids[t]] + params["pos_emb"][t] for t in range(T)]
    valid = [t for t in range(T) if mask[t]]
    for li in range(n_layers):
        P = {k.split(".", 1)[1]: v for k, v in params.items() if k.startswith(f"l{li}.")}
        q = [h[t] @ P["wq"] + P["bq"] for t in range(T)]
        k = [h[t] @ P["wk"] + P["bk"] for t in range(T)]
        v = [h[t] @ P["wv"] + P["bv"] for t in range(T)]
        ctx = []
        for t in range(T):
            parts = []
            for hd in range(n_heads):
                sl = slice(hd * dh, (hd + 1) * dh)
                scores = [float(q[t][sl] @ k[s][sl]) / math.sqrt(dh) for s in valid]
                top = max(scores)
                w = [math.exp(sc - top) for sc in scores]
                z = sum(w)
                parts.append(sum((wi / z) * v[s][sl] for wi, s in zip(w, valid)))
            ctx.append(np.concatenate(parts))
        y1 = [_ln(h[t] + ctx[t] @ P["wo"] + P["bo"], P["ln1_g"], P["ln1_b"]) for t in range(T)]
        h = [_ln(y1[t] + _gelu(y1[t] @ P["w1"] + P["b1"]) @ P["w2"] + P["b2"],
                 P["ln2_g"], P["ln2_b"]) for t in range(T)]
    if head == "classifier":
        return h[0] @ params["cls_w"] + params["cls_b"]
    return np.stack([h[t] @ params["tok_emb"].T for t in range(T)])


# ---------------------------------------------------------------------------
# finite differences

def central_differences(f, params, h=1e-6):
    """Numerical gradient of scalar ``f()`` w.r.t. every entry of every array."""
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f()
            flat[i] = old - h
            down = f()
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        out[name] = g
    return out
