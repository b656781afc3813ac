"""Numpy implementation of the bit-packed Game-of-Life kernels.

Same layout and semantics as the compiled module: row ``y`` of a board is one
``uint64`` whose bit ``x`` is the cell at column ``x``; everything outside the
board is dead.
"""

import numpy as np

_ONE = np.uint64(1)


def _mask(width):
    if width >= 64:
        return np.uint64(0xFFFFFFFFFFFFFFFF)
    return np.uint64((1 << width) - 1)


def life_run(boards, width, steps):
    """Advance every board ``steps`` tics in place."""
    mask = _mask(width)
    above = np.zeros_like(boards)
    below = np.zeros_like(boards)
    for _ in range(steps):
        above[:, 1:] = boards[:, :-1]
        below[:, :-1] = boards[:, 1:]
        b = boards
        neighbours = (
            (above << _ONE) & mask, above, above >> _ONE,
            (b << _ONE) & mask, b >> _ONE,
            (below << _ONE) & mask, below, below >> _ONE,
        )
        s0 = np.zeros_like(boards)
        s1 = np.zeros_like(boards)
        s2 = np.zeros_like(boards)
        for x in neighbours:
            carry0 = s0 & x
            s0 ^= x
            carry1 = s1 & carry0
            s1 ^= carry0
            s2 ^= carry1
        boards[...] = s1 & ~s2 & (s0 | b)


def window_codes(boards, y0, x0, h, w):
    """Joint index of each board's ``h x w`` window, row-major, first cell most significant."""
    codes = np.zeros(boards.shape[0], dtype=np.int64)
    for r in range(h):
        row = boards[:, y0 + r]
        for c in range(w):
            bit = (row >> np.uint64(x0 + c)) & _ONE
            codes = (codes << 1) | bit.astype(np.int64)
    return codes
