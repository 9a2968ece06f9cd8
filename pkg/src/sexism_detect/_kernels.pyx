# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled hot kernels; ``_kernels_py`` holds the reference versions."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def wordpiece(str word, dict vocab, Py_ssize_t unk_id, Py_ssize_t max_piece_len):
    cdef list ids = []
    cdef Py_ssize_t n = len(word)
    cdef Py_ssize_t start = 0, end
    cdef bint in_unk = False
    cdef object tid, found
    cdef str piece
    while start < n:
        end = start + max_piece_len
        if end > n:
            end = n
        found = None
        while end > start:
            if start == 0:
                piece = word[start:end]
            else:
                piece = "##" + word[start:end]
            tid = vocab.get(piece)
            if tid is not None:
                found = tid
                break
            end -= 1
        if found is None:
            if not in_unk:
                ids.append(unk_id)
                in_unk = True
            start += 1
        else:
            ids.append(found)
            in_unk = False
            start = end
    return ids


def count_pairs(list splits, list freqs):
    cdef dict counts = {}
    cdef list symbols
    cdef Py_ssize_t i, m, k
    cdef long long f
    cdef tuple key
    for k in range(len(splits)):
        symbols = <list>splits[k]
        f = freqs[k]
        m = len(symbols)
        for i in range(m - 1):
            key = (symbols[i], symbols[i + 1])
            counts[key] = counts.get(key, 0) + f
    return counts


def merge_pair(list splits, str a, str b, str merged):
    cdef list symbols, out
    cdef Py_ssize_t i, m
    for symbols in splits:
        m = len(symbols)
        if m < 2:
            continue
        out = None
        i = 0
        while i < m:
            if i + 1 < m and symbols[i] == a and symbols[i + 1] == b:
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


def scatter_add_rows(double[:, ::1] out, cnp.int64_t[::1] idx, double[:, ::1] src):
    cdef Py_ssize_t r, c, row
    cdef Py_ssize_t n = idx.shape[0], d = src.shape[1]
    if src.shape[0] != n or out.shape[1] != d:
        raise ValueError("shape mismatch in scatter_add_rows")
    for r in range(n):
        row = idx[r]
        if row < 0 or row >= out.shape[0]:
            raise IndexError(f"row index {row} out of range")
        for c in range(d):
            out[row, c] += src[r, c]
