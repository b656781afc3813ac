"""Hot loops for exhaustive Game-of-Life sweeps.

The compiled extension (``_life``) is used when it imports, otherwise the
numpy port in ``_life_py``. Set ``CAGRAIN_PURE_PYTHON=1`` before import to
force the fallback. Both backends stay importable by name so the benchmark
and the tests can compare them directly.
"""

import os

import numpy as np

from . import _life_py as python_backend

try:
    if os.environ.get("CAGRAIN_PURE_PYTHON"):
        raise ImportError("pure-python backend requested")
    from . import _life as compiled_backend
except ImportError:
    compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "numpy"

MAX_WIDTH = 64


def life_run(boards, width, steps):
    """Advance a ``(n, height)`` uint64 board batch ``steps`` tics in place."""
    if width > MAX_WIDTH:
        raise ValueError(f"bit-packed boards hold at most {MAX_WIDTH} columns")
    if steps:
        backend.life_run(boards, int(width), int(steps))
    return boards


def window_codes(boards, y0, x0, h, w):
    return backend.window_codes(boards, int(y0), int(x0), int(h), int(w))


def pack(grid):
    """Pack a 2-D 0/1 array (rows = y) into one board of uint64 rows."""
    grid = np.asarray(grid, dtype=np.uint64)
    weights = np.left_shift(np.uint64(1), np.arange(grid.shape[1], dtype=np.uint64))
    return (grid * weights).sum(axis=1, dtype=np.uint64)


def unpack(board, width):
    board = np.asarray(board, dtype=np.uint64)
    shifts = np.arange(width, dtype=np.uint64)
    return ((board[..., :, None] >> shifts) & np.uint64(1)).astype(np.uint8)


def stamp_window(boards, codes, y0, x0, h, w):
    """OR the window contents encoded by ``codes`` into ``boards`` (one code per board)."""
    codes = np.asarray(codes, dtype=np.int64)
    n_bits = h * w
    for r in range(h):
        for c in range(w):
            shift = n_bits - 1 - (r * w + c)
            bit = ((codes >> shift) & 1).astype(np.uint64)
            boards[:, y0 + r] |= bit << np.uint64(x0 + c)
    return boards
