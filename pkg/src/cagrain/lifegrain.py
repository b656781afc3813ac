"""Unit mechanisms for Game-of-Life grainings via bit-packed simulation.

Covers the grainings the sweeps use: a fixed first tic as ground, source
units on one tic, target units on a later tic, and everything else channel.
The result has the same factors as the generic pipeline (one deterministic
factor per target cell, reading the source cells in its light cone) but is
built by running every source assignment through the life kernel at once.
"""

from __future__ import annotations

import functools

import numpy as np

from . import kernels
from .coarsegrain import BATCH_CAP, GrainingSpec, UnitMechanism, unit_mechanism
from .core import Factor, Mechanism, ValidationError, decode, encode
from .models import GolSpec, gol_id, life_run, unroll_gol

CHUNK = 1 << 14


@functools.lru_cache(maxsize=8)
def grid_ids(gspec: GolSpec) -> tuple:
    """Every occasion of the unrolled grid, tic by tic in row-major order."""
    return tuple(
        gol_id(x, y, t)
        for t in range(gspec.t_start, gspec.t_end + 1)
        for y in range(gspec.height)
        for x in range(gspec.width)
    )


class Unsupported(ValidationError):
    """The graining falls outside the shapes the fast builder handles."""


def _tics(spec: GrainingSpec):
    tics = sorted({o.time for u in spec.units for o in u})
    for u in spec.units:
        if len({o.time for o in u}) != 1:
            raise Unsupported("every unit must sit on a single tic")
    if len(tics) != 2:
        raise Unsupported("units must occupy exactly two tics")
    return tics


def _background(gspec: GolSpec, spec: GrainingSpec, t_s: int):
    """Grids at the source tic as run from the ground, and with the source cells cleared."""
    t_g = gspec.t_start
    ground = set(spec.ground)
    src_cells = {o for u in spec.units for o in u if o.time == t_s}
    first = {(x, y) for y in range(gspec.height) for x in range(gspec.width)}
    g_cells = {o.site for o in ground}
    if any(o.time != t_g for o in ground):
        raise Unsupported("ground must lie on the first tic")
    if t_s == t_g:
        if g_cells | {o.site for o in src_cells} != first:
            raise Unsupported("first tic must be ground or source units")
    elif g_cells != first:
        raise Unsupported("ground must cover the whole first tic")
    grid = np.zeros((gspec.height, gspec.width), dtype=np.uint8)
    for o, v in spec.ground_output.items():
        x, y = o.site
        grid[y, x] = v
    if t_s > t_g:
        grid = life_run(grid, t_s - t_g)
    run = grid.copy()
    for o in src_cells:
        x, y = o.site
        grid[y, x] = 0
    return run, grid


def life_unit_mechanism(gspec: GolSpec, spec: GrainingSpec, initial=None) -> UnitMechanism:
    """Fast equivalent of ``unit_mechanism(unroll_gol(gspec, initial), spec)``.

    Raises ``Unsupported`` for grainings of any other shape.
    """
    if gspec.boundary != "fixed-blank":
        raise Unsupported("only the fixed-blank boundary is supported")
    if gspec.width > kernels.MAX_WIDTH:
        raise Unsupported(f"grids wider than {kernels.MAX_WIDTH} columns")
    t_s, t_1 = _tics(spec)
    if t_s < gspec.t_start or t_1 > gspec.t_end:
        raise Unsupported("units outside the unrolled interval")
    n_occ = gspec.width * gspec.height * (gspec.t_end - gspec.t_start + 1)
    if len(spec.ground) + len(spec.channel) + len(spec.unit_occasions) != n_occ:
        raise Unsupported("graining does not cover the unrolled grid")
    spec.validate(grid_ids(gspec))
    run, bg = _background(gspec, spec, t_s)
    dt = t_1 - t_s

    def gkey(o):
        x, y = o.site
        return (o.time, y, x)

    sources = sorted((o for u in spec.units for o in u if o.time == t_s), key=gkey)
    targets = [o for u in spec.units for o in u if o.time == t_1]
    nbits = len(sources)
    n = 1 << nbits
    if n > BATCH_CAP:
        raise Unsupported(f"{nbits} source cells exceed the simulation batch cap")

    # output of every target cell for every joint source assignment
    out = np.zeros((n, len(targets)), dtype=np.int64)
    base = kernels.pack(bg)
    for lo in range(0, n, CHUNK):
        codes = np.arange(lo, min(n, lo + CHUNK), dtype=np.int64)
        boards = np.repeat(base[None, :], codes.size, axis=0)
        for j, o in enumerate(sources):
            x, y = o.site
            bit = ((codes >> (nbits - 1 - j)) & 1).astype(np.uint64)
            boards[:, y] |= bit << np.uint64(x)
        kernels.life_run(boards, gspec.width, dt)
        for i, o in enumerate(targets):
            x, y = o.site
            out[lo : lo + codes.size, i] = ((boards[:, y] >> np.uint64(x)) & np.uint64(1)).astype(np.int64)

    sizes = {o: 2 for o in spec.unit_occasions}
    factors = []
    for o in spec.unit_occasions:
        if o.time == t_s:
            if t_s == gspec.t_start and initial is None:
                mech = Mechanism.prior([0.5, 0.5])
            else:
                x, y = o.site
                v = run[y, x] if t_s > gspec.t_start else int(np.asarray(initial)[y, x])
                mech = Mechanism.constant(2, int(v))
            factors.append(Factor((o,), (2,), mech))
            continue
        x, y = o.site
        own = [s for s in sources if max(abs(s.site[0] - x), abs(s.site[1] - y)) <= dt]
        pos = [sources.index(s) for s in own]
        m = 1 << len(own)
        full = np.zeros((m, nbits), dtype=np.int64)
        if own:
            full[:, pos] = decode(np.arange(m, dtype=np.int64), [2] * len(own))
        rows = encode(full, [2] * nbits) if nbits else np.zeros(1, dtype=np.int64)
        mech = Mechanism(own, [2] * len(own), 2, outputs=out[rows, targets.index(o)])
        factors.append(Factor((o,), (2,), mech))
    return UnitMechanism(spec.units, tuple(factors), sizes)


def gol_builder(gspec: GolSpec, initial=None):
    """``spec -> UnitMechanism`` using the fast path where it applies, else the generic one."""
    graph = None

    def build(spec: GrainingSpec) -> UnitMechanism:
        nonlocal graph
        try:
            return life_unit_mechanism(gspec, spec, initial)
        except Unsupported:
            if graph is None:
                graph = unroll_gol(gspec, initial)
            return unit_mechanism(graph, spec)

    return build
