"""Time the compiled kernels against the pure-Python fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5] [--scale 20]

Inputs are built from the bundled synthetic corpus (repeated ``--scale``
times) so that both backends see identical work. Each row reports the best
of ``--repeat`` runs and checks that the two backends agree.
"""

import argparse
import copy
import timeit
from collections import Counter
from pathlib import Path

import numpy as np

from sexism_detect import _kernels_py as py
from sexism_detect import corpus, preprocess, tokenizer

DATA = Path(corpus.__file__).parent / "data"

try:
    from sexism_detect import _kernels as cy
except ImportError:  # pragma: no cover
    cy = None


def build_inputs(scale):
    ds, _ = preprocess.apply_dataset("p4", corpus.load_tsv(DATA / "synthetic.tsv"))
    texts = [p.text for p in ds]
    tm = tokenizer.train_vocab(texts, max_vocab=300)
    words = [w for t in texts for w in t.lower().split()] * scale
    freq = Counter(words)
    uniq = sorted(freq)
    splits = [[w[0]] + ["##" + c for c in w[1:]] for w in uniq]
    rng = np.random.default_rng(0)
    idx = rng.integers(0, 2000, 50_000 * max(1, scale // 10))
    src = rng.standard_normal((len(idx), 64))
    return {
        "vocab": tm._pieces, "max_piece": tm._max_piece, "words": words, "splits": splits,
        "freqs": [freq[w] for w in uniq], "idx": idx, "src": src,
    }


def cases(inp):
    vocab, words = inp["vocab"], inp["words"]

    def wordpiece(k):
        return [k.wordpiece(w, vocab, tokenizer.UNK_ID, inp["max_piece"]) for w in words]

    def count_pairs(k):
        return k.count_pairs(inp["splits"], inp["freqs"])

    def merge_pair(k):
        splits = copy.deepcopy(inp["splits"])
        for a, b in [("t", "##h"), ("th", "##e"), ("e", "##n"), ("a", "##r")]:
            k.merge_pair(splits, a, b, a + b[2:])
        return splits

    def scatter(k):
        out = np.zeros((2000, inp["src"].shape[1]))
        k.scatter_add_rows(out, inp["idx"], inp["src"])
        return out

    return [("wordpiece", wordpiece), ("count_pairs", count_pairs),
            ("merge_pair", merge_pair), ("scatter_add_rows", scatter)]


def same(a, b):
    if isinstance(a, np.ndarray):
        return np.allclose(a, b, rtol=0, atol=1e-9)
    return a == b


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=int, default=20)
    args = ap.parse_args(argv)
    if cy is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation`")
        return 1
    inp = build_inputs(args.scale)
    print(f"{len(inp['words'])} words, {len(inp['splits'])} word types, "
          f"{len(inp['idx'])} scatter rows")
    print(f"{'kernel':<18}{'python ms':>11}{'cython ms':>11}{'speedup':>9}  agree")
    for name, fn in cases(inp):
        t_py = min(timeit.repeat(lambda fn=fn: fn(py), number=1, repeat=args.repeat)) * 1e3
        t_cy = min(timeit.repeat(lambda fn=fn: fn(cy), number=1, repeat=args.repeat)) * 1e3
        ok = same(fn(py), fn(cy))
        print(f"{name:<18}{t_py:>11.2f}{t_cy:>11.2f}{t_py / t_cy:>8.1f}x  {'yes' if ok else 'NO'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
