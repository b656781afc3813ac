# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled Game-of-Life kernels over batches of bit-packed boards.

Row ``y`` of a board is one ``uint64``; bit ``x`` is the cell at column ``x``.
Cells outside ``[0, width) x [0, height)`` are permanently dead.
"""

import numpy as np

from libc.stdint cimport uint64_t, int64_t


cdef inline uint64_t _next_row(uint64_t a, uint64_t b, uint64_t c, uint64_t mask) noexcept nogil:
    cdef uint64_t nb[8]
    cdef uint64_t s0 = 0, s1 = 0, s2 = 0, x, carry0, carry1
    cdef int i
    nb[0] = (a << 1) & mask
    nb[1] = a
    nb[2] = a >> 1
    nb[3] = (b << 1) & mask
    nb[4] = b >> 1
    nb[5] = (c << 1) & mask
    nb[6] = c
    nb[7] = c >> 1
    # bit-sliced neighbour count, mod 8 (a count of 8 reads as 0: still dead)
    for i in range(8):
        x = nb[i]
        carry0 = s0 & x
        s0 ^= x
        carry1 = s1 & carry0
        s1 ^= carry0
        s2 ^= carry1
    return s1 & ~s2 & (s0 | b)


cdef inline uint64_t _mask(int width) noexcept nogil:
    if width >= 64:
        return <uint64_t>0xFFFFFFFFFFFFFFFF
    return ((<uint64_t>1) << width) - 1


def life_run(uint64_t[:, ::1] boards, int width, int steps):
    """Advance every board ``steps`` tics in place."""
    cdef Py_ssize_t n = boards.shape[0]
    cdef Py_ssize_t h = boards.shape[1]
    cdef Py_ssize_t i, y
    cdef int t
    cdef uint64_t mask = _mask(width)
    cdef uint64_t prev, cur, nxt
    with nogil:
        for i in range(n):
            for t in range(steps):
                prev = 0
                cur = boards[i, 0]
                for y in range(h):
                    if y + 1 < h:
                        nxt = boards[i, y + 1]
                    else:
                        nxt = 0
                    boards[i, y] = _next_row(prev, cur, nxt, mask)
                    prev = cur
                    cur = nxt


def window_codes(uint64_t[:, ::1] boards, int y0, int x0, int h, int w):
    """Joint index of each board's ``h x w`` window, row-major, first cell most significant."""
    cdef Py_ssize_t n = boards.shape[0]
    cdef Py_ssize_t i
    cdef int r, c
    cdef int64_t code
    cdef uint64_t row
    out = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] o = out
    with nogil:
        for i in range(n):
            code = 0
            for r in range(h):
                row = boards[i, y0 + r]
                for c in range(w):
                    code = (code << 1) | <int64_t>((row >> (x0 + c)) & 1)
            o[i] = code
    return out
