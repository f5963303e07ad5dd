"""Pure-Python fallbacks for the compiled kernels.

These must stay bit-for-bit equivalent to ``pkgraph._kernels._native``: for
identical inputs, ``hash_accumulate`` returns the same signed bucket counts
and ``simple_paths_from`` the same pre-order path list. Any change here needs
the mirrored change in ``_native.pyx``.
"""

from __future__ import annotations

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF
_SIGN_BIT = 0x8000000000000000


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash, the one deterministic hash used for feature hashing."""
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


def hash_accumulate(data: bytes, dim: int) -> list[int]:
    """Signed feature counts for a canonical space-joined token string.

    Features are word unigrams, word bigrams (adjacent tokens joined by one
    space) and byte trigrams over the whole string. Each feature is hashed
    with FNV-1a; the bucket is ``hash % dim`` and the sign comes from the top
    hash bit. Returns ``dim`` integer accumulators (normalization happens in
    shared caller code so both backends yield identical floats).
    """
    counts = [0] * dim
    n = len(data)

    # Streaming token scan: one running hash for the current token, one for
    # the bigram (previous token state continued through a space separator).
    h_cur = FNV_OFFSET
    h_big = 0
    prev_h = 0
    has_prev = False
    in_tok = False
    for i in range(n):
        b = data[i]
        if b == 0x20:
            if in_tok:
                if (h_cur & _SIGN_BIT) == 0:
                    counts[h_cur % dim] += 1
                else:
                    counts[h_cur % dim] -= 1
                if has_prev:
                    if (h_big & _SIGN_BIT) == 0:
                        counts[h_big % dim] += 1
                    else:
                        counts[h_big % dim] -= 1
                prev_h = h_cur
                has_prev = True
                in_tok = False
        else:
            if not in_tok:
                in_tok = True
                h_cur = FNV_OFFSET
                h_big = ((prev_h ^ 0x20) * FNV_PRIME) & _MASK64 if has_prev else 0
            h_cur = ((h_cur ^ b) * FNV_PRIME) & _MASK64
            if has_prev:
                h_big = ((h_big ^ b) * FNV_PRIME) & _MASK64
    if in_tok:
        if (h_cur & _SIGN_BIT) == 0:
            counts[h_cur % dim] += 1
        else:
            counts[h_cur % dim] -= 1
        if has_prev:
            if (h_big & _SIGN_BIT) == 0:
                counts[h_big % dim] += 1
            else:
                counts[h_big % dim] -= 1

    # Byte trigrams over the full string, spaces included.
    for i in range(n - 2):
        h = ((FNV_OFFSET ^ data[i]) * FNV_PRIME) & _MASK64
        h = ((h ^ data[i + 1]) * FNV_PRIME) & _MASK64
        h = ((h ^ data[i + 2]) * FNV_PRIME) & _MASK64
        if (h & _SIGN_BIT) == 0:
            counts[h % dim] += 1
        else:
            counts[h % dim] -= 1

    return counts


def simple_paths_from(start: int, indptr, indices, max_edges: int) -> list[tuple[int, ...]]:
    """All simple paths with 1..max_edges edges from ``start``.

    ``indptr``/``indices`` form a CSR adjacency over node indices with each
    neighbor list sorted ascending; the DFS visits neighbors in that order, so
    paths are emitted pre-order, which is lexicographic order of the index
    sequences. Each returned tuple includes the start node.
    """
    out: list[tuple[int, ...]] = []
    if max_edges <= 0:
        return out
    n = len(indptr) - 1
    visited = bytearray(n)
    visited[start] = 1
    path = [start]

    def rec(node: int, depth: int) -> None:
        for i in range(indptr[node], indptr[node + 1]):
            nxt = int(indices[i])
            if visited[nxt]:
                continue
            visited[nxt] = 1
            path.append(nxt)
            out.append(tuple(path))
            if depth + 1 < max_edges:
                rec(nxt, depth + 1)
            path.pop()
            visited[nxt] = 0

    rec(start, 0)
    return out
