import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cagrain import kernels
from cagrain.models import life_run

BACKENDS = [kernels.python_backend] + ([kernels.compiled_backend] if kernels.compiled_backend else [])


def test_backend_is_reported():
    assert kernels.BACKEND in ("cython", "numpy")


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda b: b.__name__.rsplit(".", 1)[-1])
@settings(max_examples=30, deadline=None)
@given(st.integers(3, 64), st.integers(3, 12), st.integers(0, 6), st.integers(0, 2**32 - 1))
def test_bitpacked_life_matches_reference(backend, width, height, steps, seed):
    rng = np.random.default_rng(seed)
    grids = (rng.random((4, height, width)) < 0.35).astype(np.uint8)
    boards = np.stack([kernels.pack(g) for g in grids])
    backend.life_run(boards, width, steps)
    for g, b in zip(grids, boards):
        assert np.array_equal(kernels.unpack(b, width), life_run(g, steps))


@pytest.mark.skipif(kernels.compiled_backend is None, reason="compiled extension not built")
def test_backends_agree_on_window_codes(rng):
    boards = (rng.integers(0, 2**16, (64, 16), dtype=np.uint64))
    a = kernels.python_backend.window_codes(boards, 3, 5, 3, 4)
    b = kernels.compiled_backend.window_codes(boards.copy(), 3, 5, 3, 4)
    assert np.array_equal(np.asarray(a), np.asarray(b))


def test_window_stamp_round_trip():
    codes = np.arange(512, dtype=np.int64)
    boards = kernels.stamp_window(np.zeros((512, 10), dtype=np.uint64), codes, 2, 4, 3, 3)
    assert np.array_equal(np.asarray(kernels.window_codes(boards, 2, 4, 3, 3)), codes)


def test_width_limit():
    with pytest.raises(ValueError):
        kernels.life_run(np.zeros((1, 4), dtype=np.uint64), 65, 1)


def test_fallback_is_selected_by_environment():
    env = dict(os.environ, CAGRAIN_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "from cagrain import kernels; print(kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numpy"
