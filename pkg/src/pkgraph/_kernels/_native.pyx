# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: signed feature hashing and bounded simple-path DFS.

Bit-for-bit equivalent to ``pkgraph._kernels.pure``; see that module for the
contract. Keep the two in lockstep.
"""

from libc.stdint cimport uint64_t, int64_t
from libc.stdlib cimport calloc, malloc, free

cdef uint64_t FNV_OFFSET = 0xCBF29CE484222325ULL
cdef uint64_t FNV_PRIME = 0x100000001B3ULL
cdef uint64_t SIGN_BIT = 0x8000000000000000ULL


cdef inline uint64_t _fnv_byte(uint64_t h, unsigned char b) nogil:
    return (h ^ <uint64_t>b) * FNV_PRIME


def fnv1a64(bytes data):
    cdef const unsigned char* p = data
    cdef Py_ssize_t n = len(data)
    cdef uint64_t h = FNV_OFFSET
    cdef Py_ssize_t i
    for i in range(n):
        h = _fnv_byte(h, p[i])
    return h


def hash_accumulate(bytes data, int dim):
    cdef const unsigned char* p = data
    cdef Py_ssize_t n = len(data)
    cdef int64_t* counts = <int64_t*>calloc(dim, sizeof(int64_t))
    if counts == NULL:
        raise MemoryError()
    cdef uint64_t h_cur = FNV_OFFSET
    cdef uint64_t h_big = 0
    cdef uint64_t prev_h = 0
    cdef uint64_t h
    cdef bint has_prev = False
    cdef bint in_tok = False
    cdef Py_ssize_t i
    cdef unsigned char b
    try:
        for i in range(n):
            b = p[i]
            if b == 0x20:
                if in_tok:
                    if (h_cur & SIGN_BIT) == 0:
                        counts[h_cur % <uint64_t>dim] += 1
                    else:
                        counts[h_cur % <uint64_t>dim] -= 1
                    if has_prev:
                        if (h_big & SIGN_BIT) == 0:
                            counts[h_big % <uint64_t>dim] += 1
                        else:
                            counts[h_big % <uint64_t>dim] -= 1
                    prev_h = h_cur
                    has_prev = True
                    in_tok = False
            else:
                if not in_tok:
                    in_tok = True
                    h_cur = FNV_OFFSET
                    h_big = _fnv_byte(prev_h, 0x20) if has_prev else 0
                h_cur = _fnv_byte(h_cur, b)
                if has_prev:
                    h_big = _fnv_byte(h_big, b)
        if in_tok:
            if (h_cur & SIGN_BIT) == 0:
                counts[h_cur % <uint64_t>dim] += 1
            else:
                counts[h_cur % <uint64_t>dim] -= 1
            if has_prev:
                if (h_big & SIGN_BIT) == 0:
                    counts[h_big % <uint64_t>dim] += 1
                else:
                    counts[h_big % <uint64_t>dim] -= 1

        for i in range(n - 2):
            h = _fnv_byte(FNV_OFFSET, p[i])
            h = _fnv_byte(h, p[i + 1])
            h = _fnv_byte(h, p[i + 2])
            if (h & SIGN_BIT) == 0:
                counts[h % <uint64_t>dim] += 1
            else:
                counts[h % <uint64_t>dim] -= 1

        return [counts[i] for i in range(dim)]
    finally:
        free(counts)


def simple_paths_from(int start, int[::1] indptr, int[::1] indices, int max_edges):
    cdef list out = []
    if max_edges <= 0:
        return out
    cdef int n = indptr.shape[0] - 1
    cdef unsigned char* visited = <unsigned char*>calloc(n, 1)
    cdef int* path = <int*>malloc((max_edges + 1) * sizeof(int))
    cdef int* cursor = <int*>malloc((max_edges + 1) * sizeof(int))
    if visited == NULL or path == NULL or cursor == NULL:
        free(visited); free(path); free(cursor)
        raise MemoryError()
    cdef int depth = 0
    cdef int node, nxt, i, k
    try:
        path[0] = start
        visited[start] = 1
        cursor[0] = indptr[start]
        while depth >= 0:
            node = path[depth]
            i = cursor[depth]
            if i < indptr[node + 1]:
                cursor[depth] = i + 1
                nxt = indices[i]
                if not visited[nxt]:
                    visited[nxt] = 1
                    depth += 1
                    path[depth] = nxt
                    out.append(tuple([path[k] for k in range(depth + 1)]))
                    if depth < max_edges:
                        cursor[depth] = indptr[nxt]
                    else:
                        visited[nxt] = 0
                        depth -= 1
            else:
                visited[node] = 0
                depth -= 1
        return out
    finally:
        free(visited)
        free(path)
        free(cursor)
