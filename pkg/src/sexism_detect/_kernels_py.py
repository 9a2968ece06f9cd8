"""Pure-Python versions of the hot kernels in ``_kernels.pyx``.

Both modules expose the same functions with the same results; the compiled
one is preferred at import time (see ``_backend``).
"""

from __future__ import annotations

import numpy as np


def wordpiece(word: str, vocab: dict, unk_id: int, max_piece_len: int) -> list[int]:
    """Greedy longest-match split of one word into vocabulary ids.

    Characters no piece can cover become a single unknown id per run.
    """
    ids = []
    n = len(word)
    start = 0
    in_unk = False
    while start < n:
        end = min(n, start + max_piece_len)
        found = -1
        while end > start:
            piece = word[start:end] if start == 0 else "##" + word[start:end]
            tid = vocab.get(piece)
            if tid is not None:
                found = tid
                break
            end -= 1
        if found < 0:
            if not in_unk:
                ids.append(unk_id)
                in_unk = True
            start += 1
        else:
            ids.append(found)
            in_unk = False
            start = end
    return ids


def count_pairs(splits: list, freqs: list) -> dict:
    counts: dict = {}
    for symbols, f in zip(splits, freqs):
        for i in range(len(symbols) - 1):
            key = (symbols[i], symbols[i + 1])
            counts[key] = counts.get(key, 0) + f
    return counts


def merge_pair(splits: list, a: str, b: str, merged: str) -> None:
    """Replace every adjacent (a, b) with ``merged``, left to right, in place."""
    for symbols in splits:
        if len(symbols) < 2:
            continue
        i = 0
        out = None
        while i < len(symbols):
            if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
                if out is None:
                    out = symbols[:i]
                out.append(merged)
                i += 2
            else:
                if out is not None:
                    out.append(symbols[i])
                i += 1
        if out is not None:
            symbols[:] = out


def scatter_add_rows(out: np.ndarray, idx: np.ndarray, src: np.ndarray) -> None:
    """``out[idx[i]] += src[i]`` for every row, accumulating in row order."""
    np.add.at(out, idx, src)
