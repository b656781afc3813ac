"""Builders for unrolled Game-of-Life grids and (coupled) Hopfield networks."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import (
    Mechanism,
    Occasion,
    OccasionGraph,
    OccasionId,
    ValidationError,
    all_digits,
)

# --------------------------------------------------------------------------
# Game of Life

BOUNDARIES = ("fixed-blank", "toroidal")


@dataclass(frozen=True)
class GolSpec:
    width: int
    height: int
    t_start: int = 0
    t_end: int = 1
    boundary: str = "fixed-blank"

    def __post_init__(self):
        if self.width < 3 or self.height < 3:
            raise ValidationError("grid must be at least 3x3")
        if self.t_start >= self.t_end:
            raise ValidationError("t_start must precede t_end")
        if self.boundary not in BOUNDARIES:
            raise ValidationError(f"boundary must be one of {BOUNDARIES}")


def gol_id(x, y, t) -> OccasionId:
    return OccasionId((int(x), int(y)), int(t))


def life_step(grid: np.ndarray, toroidal=False) -> np.ndarray:
    """One synchronous update of a 0/1 grid indexed ``[y, x]``."""
    g = np.asarray(grid, dtype=np.int64)
    if toroidal:
        n = sum(np.roll(g, (dy, dx), (0, 1)) for dy in (-1, 0, 1) for dx in (-1, 0, 1)) - g
    else:
        p = np.pad(g, 1)
        h, w = g.shape
        n = sum(p[1 + dy:1 + dy + h, 1 + dx:1 + dx + w] for dy in (-1, 0, 1) for dx in (-1, 0, 1)) - g
    return ((n == 3) | ((g == 1) & (n == 2))).astype(np.uint8)


def life_run(grid, steps, toroidal=False):
    for _ in range(steps):
        grid = life_step(grid, toroidal)
    return np.asarray(grid, dtype=np.uint8)


def moore(x, y, spec: GolSpec):
    """Moore neighbourhood (self included) in row-major order, clipped or wrapped."""
    out = []
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            nx, ny = x + dx, y + dy
            if spec.boundary == "toroidal":
                out.append((nx % spec.width, ny % spec.height))
            elif 0 <= nx < spec.width and 0 <= ny < spec.height:
                out.append((nx, ny))
    return out


def unroll_gol(spec: GolSpec, initial=None) -> OccasionGraph:
    """One occasion per (cell, tic); cells read their Moore neighbourhood at the previous tic.

    ``initial`` is a ``(height, width)`` 0/1 grid fixing the first tic; without
    it the first tic is uniform noise. On a fixed-blank boundary off-grid
    neighbours are simply absent (always dead).
    """
    if initial is not None:
        initial = np.asarray(initial)
        if initial.shape != (spec.height, spec.width):
            raise ValidationError(
                f"initial grid has shape {initial.shape}, expected {(spec.height, spec.width)}"
            )
    ids = {
        t: [[gol_id(x, y, t) for x in range(spec.width)] for y in range(spec.height)]
        for t in range(spec.t_start, spec.t_end + 1)
    }
    occs = []
    for y in range(spec.height):
        for x in range(spec.width):
            if initial is None:
                mech = Mechanism.prior([0.5, 0.5])
            else:
                mech = Mechanism.constant(2, int(initial[y, x]))
            occs.append(Occasion(ids[spec.t_start][y][x], 2, mech))
    hood = {}
    for y in range(spec.height):
        for x in range(spec.width):
            nb = moore(x, y, spec)
            if spec.boundary == "toroidal" and len(set(nb)) < 9:
                raise ValidationError("toroidal grids need width and height >= 3 distinct neighbours")
            hood[x, y] = (nb, nb.index((x, y)))
    for t in range(spec.t_start + 1, spec.t_end + 1):
        prev = ids[t - 1]
        for y in range(spec.height):
            for x in range(spec.width):
                nb, me = hood[x, y]
                inputs = [prev[ny][nx] for nx, ny in nb]
                mech = Mechanism.from_function(inputs, [2] * len(inputs), 2, f"life:{me}")
                occs.append(Occasion(ids[t][y][x], 2, mech))
    return OccasionGraph(occs)


# glider, phase 0 heading south-east; rows are y (downwards), columns x
_GLIDER_SE = np.array([[0, 1, 0], [0, 0, 1], [1, 1, 1]], dtype=np.uint8)
ORIENTATIONS = ("SE", "SW", "NE", "NW")


def glider(orientation="SE", phase=0) -> np.ndarray:
    """Tight bounding box of a glider in one of its four phases.

    Phase ``k`` is the phase-0 pattern advanced ``k`` tics; phase 4 would be
    phase 0 shifted one cell diagonally along ``orientation``.
    """
    if orientation not in ORIENTATIONS:
        raise ValidationError(f"orientation must be one of {ORIENTATIONS}")
    g = _GLIDER_SE
    if "W" in orientation:
        g = g[:, ::-1]
    if "N" in orientation:
        g = g[::-1, :]
    board = np.zeros((9, 9), dtype=np.uint8)
    board[3:6, 3:6] = g
    board = life_run(board, phase % 4)
    ys, xs = np.nonzero(board)
    return board[ys.min():ys.max() + 1, xs.min():xs.max() + 1].copy()


def glider_velocity(orientation="SE"):
    """Displacement ``(dx, dy)`` per four tics."""
    return (1 if "E" in orientation else -1, 1 if "S" in orientation else -1)


def place(grid_shape, pattern, x0, y0) -> np.ndarray:
    """Blank ``(height, width)`` grid with ``pattern`` stamped at column x0, row y0."""
    g = np.zeros(grid_shape, dtype=np.uint8)
    h, w = pattern.shape
    if x0 < 0 or y0 < 0 or y0 + h > grid_shape[0] or x0 + w > grid_shape[1]:
        raise ValidationError("pattern does not fit on the grid")
    g[y0:y0 + h, x0:x0 + w] = pattern
    return g


_RLE_TOKEN = re.compile(r"(\d*)([bo$!])")


def parse_rle(text: str) -> np.ndarray:
    """Parse a run-length encoded Life pattern (``#`` comments and the header line allowed)."""
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip() and not ln.startswith("#")]
    width = height = None
    if lines and lines[0].startswith("x"):
        header = dict(
            (k.strip(), v.strip()) for k, v in (p.split("=") for p in lines[0].split(",") if "=" in p)
        )
        width, height = int(header["x"]), int(header["y"])
        lines = lines[1:]
    body = "".join(lines)
    rows, row = [], []
    for count, tag in _RLE_TOKEN.findall(body):
        n = int(count) if count else 1
        if tag in "bo":
            row.extend([1 if tag == "o" else 0] * n)
        elif tag == "$":
            rows.append(row)
            rows.extend([[]] * (n - 1))
            row = []
        else:
            break
    rows.append(row)
    width = width or max(len(r) for r in rows)
    height = height or len(rows)
    out = np.zeros((height, width), dtype=np.uint8)
    for y, r in enumerate(rows[:height]):
        out[y, :len(r)] = r[:width]
    return out


def named_pattern(name: str) -> np.ndarray:
    """``glider``, ``glider-NE``, ``glider-SW:2`` (orientation and phase), ``blinker``, ``block`` or an RLE string."""
    base, _, phase = name.partition(":")
    if base.startswith("glider"):
        orient = base.partition("-")[2] or "SE"
        return glider(orient, int(phase or 0))
    if base == "blinker":
        return np.ones((1, 3), dtype=np.uint8)
    if base == "block":
        return np.ones((2, 2), dtype=np.uint8)
    if any(c in name for c in "bo$!"):
        return parse_rle(name)
    raise ValidationError(f"unknown pattern {name!r}")


# --------------------------------------------------------------------------
# Hopfield networks

VARIANTS = ("glauber", "exp-raw")


def parse_bits(p) -> np.ndarray:
    if isinstance(p, str):
        if not set(p) <= {"0", "1"}:
            raise ValidationError(f"pattern {p!r} is not a bit string")
        return np.array([int(c) for c in p], dtype=np.int64)
    return np.asarray(p, dtype=np.int64)


def hebbian_weights(patterns, zero_diagonal=False) -> np.ndarray:
    """alpha[j, k] = sum over patterns of (2p_j - 1)(2p_k - 1)."""
    if len(patterns) == 0:
        raise ValidationError("at least one pattern is needed")
    P = np.array([parse_bits(p) for p in patterns])
    if P.ndim != 2:
        raise ValidationError("patterns must have equal length")
    S = 2 * P - 1
    alpha = S.T @ S
    if zero_diagonal:
        np.fill_diagonal(alpha, 0)
    return alpha


def fire_probability(u, temperature, variant="glauber"):
    """p(1) given net input u. Both variants share the logistic form; they differ in how u is formed."""
    if variant not in VARIANTS:
        raise ValidationError(f"variant must be one of {VARIANTS}")
    z = np.clip(-2.0 * np.asarray(u, dtype=float) / temperature, -700, 700)
    return 1.0 / (1.0 + np.exp(z))


def encode_inputs(bits, variant):
    bits = np.asarray(bits)
    return 2 * bits - 1 if variant == "glauber" else bits


@dataclass(frozen=True)
class HopfieldSpec:
    n_cells: int
    patterns: tuple
    temperature: float = 0.25
    t_start: int = 0
    t_end: int = 1
    variant: str = "glauber"
    zero_diagonal: bool = False
    weight_scale: float = 1.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "patterns", tuple(tuple(parse_bits(p).tolist()) for p in self.patterns))
        if any(len(p) != self.n_cells for p in self.patterns):
            raise ValidationError("every pattern must have n_cells entries")
        if not self.temperature > 0:
            raise ValidationError("temperature must be positive")
        if self.t_start >= self.t_end:
            raise ValidationError("t_start must precede t_end")
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}")

    @property
    def weights(self) -> np.ndarray:
        return hebbian_weights(self.patterns, self.zero_diagonal) * self.weight_scale

    def site(self, k):
        return f"{self.name}{k}" if self.name else k


@dataclass(frozen=True)
class CoupledHopfieldSpec:
    """Two networks with Hebbian feed-forward coupling from ``a`` to ``b`` only."""

    network_a: HopfieldSpec
    network_b: HopfieldSpec
    coupling_scale: float = 1.0

    def __post_init__(self):
        a, b = self.network_a, self.network_b
        if not a.name or not b.name or a.name == b.name:
            raise ValidationError("coupled networks need distinct non-empty names")
        if (a.t_start, a.t_end) != (b.t_start, b.t_end):
            raise ValidationError("coupled networks must share the time interval")
        if a.n_cells != b.n_cells or a.patterns != b.patterns:
            raise ValidationError("coupling uses the shared pattern list of equal-size networks")

    @property
    def coupling(self) -> np.ndarray:
        b = self.network_b
        return hebbian_weights(b.patterns, False) * b.weight_scale * self.coupling_scale


def hopfield_id(spec: HopfieldSpec, k, t) -> OccasionId:
    return OccasionId(spec.site(k), int(t))


def _hopfield_mechanism(inputs, blocks, temperature, variant):
    """Table over the joint of ``inputs`` where ``blocks`` lists (weight vector) per input."""
    n = len(inputs)
    digits = all_digits([2] * n) if n else np.zeros((1, 0), dtype=np.int64)
    u = encode_inputs(digits, variant) @ np.asarray(blocks, dtype=float) if n else np.zeros(1)
    p1 = fire_probability(u, temperature, variant)
    return Mechanism(inputs, [2] * n, 2, table=np.stack([1 - p1, p1], axis=1))


def unroll_hopfield(spec, initial: Mapping | Sequence | None = None) -> OccasionGraph:
    """Synchronous unrolling; edges follow nonzero weights (and coupling for coupled specs).

    ``initial`` fixes every cell at ``t_start``: a bit string/vector for a
    single network, or ``{name: bits}`` for a coupled pair.
    """
    nets = [spec] if isinstance(spec, HopfieldSpec) else [spec.network_a, spec.network_b]
    if initial is None:
        raise ValidationError("initial state must bind every cell at t_start")
    if isinstance(spec, HopfieldSpec):
        initial = {spec.name: initial}
    occs = []
    for net in nets:
        if net.name not in initial:
            raise ValidationError(f"initial state for network {net.name!r} is missing")
        bits = parse_bits(initial[net.name])
        if bits.shape != (net.n_cells,):
            raise ValidationError(f"initial state of {net.name!r} needs {net.n_cells} bits")
        for k in range(net.n_cells):
            occs.append(Occasion(hopfield_id(net, k, net.t_start), 2, Mechanism.constant(2, bits[k])))
    t0, t1 = nets[0].t_start, nets[0].t_end
    for t in range(t0 + 1, t1 + 1):
        for idx, net in enumerate(nets):
            W = net.weights
            for k in range(net.n_cells):
                inputs, w = [], []
                if idx == 1:
                    C = spec.coupling
                    src = nets[0]
                    for j in range(src.n_cells):
                        if C[j, k] != 0:
                            inputs.append(hopfield_id(src, j, t - 1))
                            w.append(C[j, k])
                for j in range(net.n_cells):
                    if W[j, k] != 0:
                        inputs.append(hopfield_id(net, j, t - 1))
                        w.append(W[j, k])
                mech = _hopfield_mechanism(inputs, w, net.temperature, net.variant)
                occs.append(Occasion(hopfield_id(net, k, t), 2, mech))
    return OccasionGraph(occs)
