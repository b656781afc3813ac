"""Experiment presets: glider focal point, macro alphabets vs distance, chunking, Hopfield table.

Each ``run_*`` function returns plain rows (lists of dicts with fixed keys)
plus a summary dict, so the CLI can emit CSV or JSON without knowing
anything about the experiment.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..coarsegrain import GrainingSpec, effective_graph, macro_alphabet, unit_mechanism
from ..core import Subsystem, UnreachableOutputError, ValidationError
from ..emergence import GrainingFamily
from ..info import (
    SCORE_TOL,
    effective_information,
    excess_information_over,
    max_excess_information,
    mip,
)
from ..lifegrain import grid_ids, life_unit_mechanism
from ..models import (
    CoupledHopfieldSpec,
    GolSpec,
    HopfieldSpec,
    glider,
    glider_velocity,
    gol_id,
    hopfield_id,
    life_step,
    place,
    unroll_gol,
    unroll_hopfield,
)

HEADERS = {
    "focal-point": ["x", "y", "ei", "reachable"],
    "macro-alphabet": ["size", "n", "macro_alphabet"],
    "chunking": ["case", "xi", "mip_xi", "normalizer", "score", "ei", "partition"],
    "chunking-sweep": ["case", "dx", "dy", "xi"],
    "hopfield-table": ["t", "ei_int", "max_xi_int", "ei_ext", "max_xi_ext"],
    "hopfield-calibration": [
        "transfer",
        "zero_diagonal",
        "coupling_scale",
        "weight_scale",
        "max_deviation",
        "within_tolerance",
    ],
}


def _map(fn, items, threads):
    """Ordered map; a thread pool when ``threads`` > 1."""
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _square(x0, y0, size, t):
    return [gol_id(x0 + i, y0 + j, t) for j in range(size) for i in range(size)]


# --------------------------------------------------------------------------
# focal point


@dataclass(frozen=True)
class FocalPoint:
    """A glider inside the target square at t=0, seen from a square ``t_span - 1`` tics earlier."""

    width: int = 32
    height: int = 32
    orientation: str = "SE"
    phase: int = 1
    t_span: int = 21
    square: int = 3

    def __post_init__(self):
        if self.square < 3:
            raise ValidationError("squares must be at least 3x3 to hold a glider")
        if self.t_span < 2:
            raise ValidationError("t_span must be at least 2")

    @property
    def lag(self) -> int:
        return self.t_span - 1

    @cached_property
    def gspec(self) -> GolSpec:
        return GolSpec(self.width, self.height, -self.t_span, 0)

    @property
    def target_origin(self):
        return ((self.width - self.square) // 2, (self.height - self.square) // 2)

    @cached_property
    def target_pattern(self) -> np.ndarray:
        pad = np.zeros((self.square, self.square), dtype=np.uint8)
        pad[:3, :3] = glider(self.orientation, self.phase)
        return pad

    @cached_property
    def trajectory_center(self):
        """Center of the black square holding the glider ``lag`` tics before t=0."""
        dx, dy = glider_velocity(self.orientation)
        periods, rest = divmod(self.lag, 4)
        if rest:
            raise ValidationError("trajectory position needs a lag that is a multiple of 4")
        ox, oy = self.target_origin
        c = self.square // 2
        return (ox - periods * dx + c, oy - periods * dy + c)

    @cached_property
    def ground(self):
        return [gol_id(x, y, -self.t_span) for y in range(self.height) for x in range(self.width)]

    @cached_property
    def target(self):
        ox, oy = self.target_origin
        return _square(ox, oy, self.square, 0)

    def centers(self):
        h = self.square // 2
        return [
            (x, y)
            for y in range(h, self.height - self.square + h + 1)
            for x in range(h, self.width - self.square + h + 1)
        ]

    def graining(self, cx, cy) -> GrainingSpec:
        """Ground: blank first tic; units: black square then orange square; everything else channel."""
        h = self.square // 2
        black = _square(cx - h, cy - h, self.square, -self.lag)
        used = set(black) | set(self.target) | set(self.ground)
        channel = [o for o in grid_ids(self.gspec) if o not in used]
        return GrainingSpec(self.ground, channel, [black, self.target], {g: 0 for g in self.ground})

    @cached_property
    def x_out(self):
        return {o: int(v) for o, v in zip(self.target, self.target_pattern.ravel())}

    def ei(self, center, builder=None):
        """``(ei, reachable)`` of the orange square's mechanism at the glider output."""
        spec = self.graining(*center)
        build = builder or (lambda s: life_unit_mechanism(self.gspec, s))
        k = build(spec)
        m = k.submechanism(self.target)
        try:
            return effective_information(m, self.x_out), True
        except UnreachableOutputError:
            return 0.0, False


def run_focal_point(fp: FocalPoint | None = None, threads=1):
    fp = fp or FocalPoint()
    centers = fp.centers()
    results = _map(fp.ei, centers, threads)
    rows = [
        {"x": x, "y": y, "ei": ei, "reachable": reach}
        for (x, y), (ei, reach) in zip(centers, results)
    ]
    best = max(r["ei"] for r in rows)
    argmax = [(r["x"], r["y"]) for r in rows if r["ei"] >= best - SCORE_TOL]
    summary = {
        "trajectory_center": list(fp.trajectory_center),
        "max_ei": best,
        "argmax": [list(a) for a in argmax],
        "argmax_on_trajectory": argmax == [fp.trajectory_center],
    }
    return rows, summary


# --------------------------------------------------------------------------
# macro alphabet vs distance


def macro_alphabet_graining(size, n, grid=48):
    """Source square at t=0 and target square ``n`` cells down-right at t=4n; the rest of t=0 is blank ground."""
    gspec = GolSpec(grid, grid, 0, 4 * n)
    s = (grid - size - n) // 2
    src = _square(s, s, size, 0)
    dst = _square(s + n, s + n, size, 4 * n)
    srcset = set(src)
    ground = [gol_id(x, y, 0) for y in range(grid) for x in range(grid) if gol_id(x, y, 0) not in srcset]
    used = srcset | set(dst) | set(ground)
    channel = [o for o in grid_ids(gspec) if o not in used]
    return gspec, GrainingSpec(ground, channel, [src, dst], {g: 0 for g in ground})


def macro_alphabet_point(size, n, grid=48, builder=None):
    """Macro classes of the source unit and, for 3x3 squares, the target pattern each class produces."""
    gspec, spec = macro_alphabet_graining(size, n, grid)
    k = (builder or (lambda s: life_unit_mechanism(gspec, s)))(spec)
    edges = effective_graph(k)
    classes = macro_alphabet(k, 0, edges)
    if size != 3:
        return classes, []
    srcs, table = k.unit_table(1)
    images = []
    if list(srcs) == list(spec.units[0]):
        for c in classes:
            row = table[c[0]]
            images.append(np.unravel_index(int(np.argmax(row)), (2,) * (size * size)))
    return classes, [np.array(i, dtype=np.uint8).reshape(size, size) for i in images]


def glider_phase_of(pattern: np.ndarray, orientation="SE"):
    """Phase whose tight box equals ``pattern`` cropped to its live cells, else None."""
    ys, xs = np.nonzero(pattern)
    if ys.size == 0:
        return None
    crop = pattern[ys.min():ys.max() + 1, xs.min():xs.max() + 1]
    for p in range(4):
        g = glider(orientation, p)
        if g.shape == crop.shape and np.array_equal(g, crop):
            return p
    return None


def run_macro_alphabet(sizes=(3, 4), distances=range(1, 9), grid=48, threads=1):
    jobs = [(s, n) for s in sizes for n in distances]
    results = _map(lambda j: macro_alphabet_point(j[0], j[1], grid), jobs, threads)
    rows = [{"size": s, "n": n, "macro_alphabet": len(c)} for (s, n), (c, _) in zip(jobs, results)]
    summary = {}
    for s in sizes:
        counts = [r["macro_alphabet"] for r in rows if r["size"] == s]
        summary[f"size{s}_non_increasing"] = all(a >= b for a, b in zip(counts, counts[1:]))
        summary[f"size{s}_final"] = counts[-1] if counts else None
        last = [res for (ss, _), res in zip(jobs, results) if ss == s]
        if s == 3 and last:
            _, images = last[-1]
            phases = [glider_phase_of(im) for im in images if im.any()]
            summary["size3_final_phases"] = phases
            summary["size3_phase_bijection"] = (
                sum(1 for im in images if not im.any()) == 1 and sorted(p for p in phases if p is not None) == [0, 1, 2, 3]
                and len(phases) == 4
            )
    return rows, summary


# --------------------------------------------------------------------------
# chunking


class WindowSystem:
    """Two tics of a Game-of-Life board restricted to a few squares; every other input is noise."""

    def __init__(self, board0: np.ndarray):
        self.board0 = np.asarray(board0, dtype=np.uint8)
        h, w = self.board0.shape
        self.gspec = GolSpec(w, h, 0, 1)
        self.board1 = life_step(self.board0)
        self.graph = unroll_gol(self.gspec)

    def output(self, occs):
        return {o: int((self.board0 if o.time == 0 else self.board1)[o.site[1], o.site[0]]) for o in occs}

    def subsystem(self, occs):
        return Subsystem.of(self.graph, occs)

    def unit_mechanism(self, units):
        occs = [o for u in units for o in u]
        spec = GrainingSpec((), (), units, {})
        return unit_mechanism(self.subsystem(occs), spec)

    def measure(self, red, gray, separating=None):
        """MIP over the red sources of the gray square's mechanism; ``separating`` adds xi over that partition."""
        k = self.unit_mechanism([red, gray])
        m = k.submechanism(gray)
        x = self.output(gray)
        r = mip(m, x)
        sep = excess_information_over(m, separating, x) if separating is not None else None
        return r, sep


CHUNK_GRID = (16, 32)


def _gray_box(board1, near):
    """Origin of the glider's tight 3x3 box at t=1 in the columns near ``near``."""
    x0, x1 = near
    ys, xs = np.nonzero(board1[:, x0:x1])
    return int(xs.min()) + x0, int(ys.min())


@dataclass(frozen=True)
class ChunkCase:
    name: str
    orientation: str = "SE"
    phase: int = 0
    offset: tuple = (0, 0)


CHUNK_CASES = {
    "glider-right": ChunkCase("glider-right", "SE", 0, (1, 0)),
    "glider-down": ChunkCase("glider-down", "SE", 2, (0, 1)),
}


def glider_window(case: ChunkCase, grid=16):
    """Board with the glider, the gray square (its t=1 box) and the default red offset."""
    board = place((grid, grid), glider(case.orientation, case.phase), 6, 6)
    ws = WindowSystem(board)
    gx, gy = _gray_box(ws.board1, (0, grid))
    return ws, (gx, gy)


def placement_sweep(case: ChunkCase, radius=2, grid=16):
    ws, (gx, gy) = glider_window(case, grid)
    gray = _square(gx, gy, 3, 1)
    rows = []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            r, _ = ws.measure(_square(gx + dx, gy + dy, 3, 0), gray)
            rows.append({"case": case.name, "dx": dx, "dy": dy, "xi": r.xi})
    return rows


def sweep_verdict(rows, orientation="SE"):
    """Argmax offset, whether it is unique, and whether it is a unit step along the heading."""
    ranked = sorted(rows, key=lambda r: (-r["xi"], r["dy"], r["dx"]))
    top = ranked[0]
    unique = len(ranked) < 2 or top["xi"] > ranked[1]["xi"] + 1e-9
    vx, vy = glider_velocity(orientation)
    step = abs(top["dx"]) + abs(top["dy"]) == 1
    along = top["dx"] * vx + top["dy"] * vy > 0
    return {"argmax": [top["dx"], top["dy"]], "xi": top["xi"], "unique": unique, "matches_motion": unique and step and along}


def chunking_boards(grid=CHUNK_GRID):
    """One board holding two far-apart SE gliders and a blank patch between them."""
    h, w = grid
    g = place((h, w), glider("SE", 0), 2, 2) | place((h, w), glider("SE", 0), w - 8, 2)
    return g


def chunking_windows(grid=CHUNK_GRID):
    """Squares of every chunking case on the shared board."""
    h, w = grid
    ws = WindowSystem(chunking_boards(grid))
    ax, ay = _gray_box(ws.board1, (0, w // 2))
    bx, by = _gray_box(ws.board1, (w // 2, w))
    dx, dy = CHUNK_CASES["glider-right"].offset
    cx, cy = w // 2 - 1, h // 2 - 1
    sq = {
        "red_a": _square(ax + dx, ay + dy, 3, 0),
        "gray_a": _square(ax, ay, 3, 1),
        "red_b": _square(bx + dx, by + dy, 3, 0),
        "gray_b": _square(bx, by, 3, 1),
        "red_blank": _square(cx, cy, 3, 0),
        "gray_blank": _square(cx, cy, 3, 1),
    }
    return ws, sq


def run_chunking(grid=16):
    rows = []
    ws, sq = chunking_windows()
    # disjoint: two glider pairs merged into one red and one gray unit
    red = sq["red_a"] + sq["red_b"]
    gray = sq["gray_a"] + sq["gray_b"]
    r, sep = ws.measure(red, gray, separating=[sq["red_a"], sq["red_b"]])
    rows.append(_chunk_row("disjoint", sep, r))
    r, _ = ws.measure(sq["red_blank"], sq["gray_blank"])
    rows.append(_chunk_row("blank", r.xi, r))
    sweeps = {}
    for name, case in CHUNK_CASES.items():
        gws, (gx, gy) = glider_window(case, grid)
        r, _ = gws.measure(_square(gx + case.offset[0], gy + case.offset[1], 3, 0), _square(gx, gy, 3, 1))
        rows.append(_chunk_row(name, r.xi, r))
        sweeps[name] = placement_sweep(case, grid=grid)
    summary = {name: sweep_verdict(s, CHUNK_CASES[name].orientation) for name, s in sweeps.items()}
    for name, case in CHUNK_CASES.items():
        summary[name]["expected"] = list(case.offset)
    return rows, summary, [row for s in sweeps.values() for row in s]


def _chunk_row(name, xi, r):
    return {
        "case": name,
        "xi": xi,
        "mip_xi": r.xi,
        "normalizer": r.normalizer,
        "score": r.score,
        "ei": r.ei,
        "partition": " | ".join(" ".join(str(o) for o in b) for b in r.partition),
    }


def chunking_family(builder=None):
    """{glider, blank, disjoint} grainings of the shared chunking board, plus the split subgrain of disjoint."""
    ws, sq = chunking_windows()
    verts = [o for v in sq.values() for o in v]
    system = ws.subsystem(verts)

    def graining(units):
        inside = {o for u in units for o in u}
        return GrainingSpec((), [v for v in verts if v not in inside], units, {})

    fam = GrainingFamily(
        system,
        [
            graining([sq["red_a"], sq["gray_a"]]),
            graining([sq["red_blank"], sq["gray_blank"]]),
            graining([sq["red_a"] + sq["red_b"], sq["gray_a"] + sq["gray_b"]]),
        ],
        ["glider", "blank", "disjoint"],
        subgrains={"disjoint-split": graining([sq["red_a"], sq["red_b"], sq["gray_a"], sq["gray_b"]])},
        builder=builder,
    )
    return fam, ws.output(verts)


# --------------------------------------------------------------------------
# Hopfield table

HOPFIELD_PATTERNS = ("00001111", "00110011", "01010101")
HOPFIELD_TRAJECTORY = (
    ("00000000", "01010101"),
    ("10100011", "01010101"),
    ("10101010", "00010101"),
    ("10101010", "00101011"),
    ("10101010", "00101010"),
    ("10101010", "10101010"),
    ("10101010", "10101010"),
)
# reference values per transition into t: (ei_INT, max_xi_INT, ei_EXT, max_xi_EXT)
HOPFIELD_REFERENCE = {
    1: (2.42, 0.10, 0.31, 0.04),
    2: (1.85, 0.08, 2.44, 0.16),
    3: (1.96, 0.12, 6.89, 0.27),
    4: (1.85, 0.08, 1.60, 0.10),
    5: (2.42, 0.10, 0.90, 0.06),
    6: (2.42, 0.10, 0.31, 0.04),
}
CALIBRATION_TOL = 0.05


@dataclass(frozen=True)
class HopfieldVariant:
    transfer: str = "glauber"
    zero_diagonal: bool = False
    coupling_scale: float = 1.0
    weight_scale: float = 1 / 8

    def coupled(self, t0, temperature=0.25) -> CoupledHopfieldSpec:
        kw = dict(
            temperature=temperature,
            t_start=t0,
            t_end=t0 + 1,
            variant=self.transfer,
            zero_diagonal=self.zero_diagonal,
            weight_scale=self.weight_scale,
        )
        a = HopfieldSpec(8, HOPFIELD_PATTERNS, name="A", **kw)
        b = HopfieldSpec(8, HOPFIELD_PATTERNS, name="B", **kw)
        return CoupledHopfieldSpec(a, b, self.coupling_scale)


def calibration_grid():
    return [
        HopfieldVariant(tr, zd, cs, ws)
        for tr in ("glauber", "exp-raw")
        for zd in (False, True)
        for cs in (0.5, 1.0, 2.0)
        for ws in (1.0, 1 / 8)
    ]


class HopfieldTransition:
    """INT and EXT grainings for the transition t-1 -> t of the coupled networks."""

    def __init__(self, variant: HopfieldVariant, t: int, trajectory=HOPFIELD_TRAJECTORY):
        self.t = t
        cs = variant.coupled(t - 1)
        a0, b0 = trajectory[t - 1]
        _, b1 = trajectory[t]
        g = unroll_hopfield(cs, {"A": a0, "B": b0})
        na, nb = cs.network_a, cs.network_b
        self.a_prev = [hopfield_id(na, k, t - 1) for k in range(8)]
        self.b_prev = [hopfield_id(nb, k, t - 1) for k in range(8)]
        self.b_now = [hopfield_id(nb, k, t) for k in range(8)]
        self.x_out = {o: int(c) for o, c in zip(self.b_now, b1)}
        # INT: B at both tics as units, A extrinsic noise
        self.int_spec = GrainingSpec((), (), [[o] for o in self.b_prev + self.b_now], {})
        self.int_k = unit_mechanism(Subsystem.of(g, self.b_prev + self.b_now), self.int_spec)
        # EXT: A then B as units, B at t-1 fixed as ground
        self.ext_spec = GrainingSpec(
            self.b_prev, (), [[o] for o in self.a_prev + self.b_now], {o: int(c) for o, c in zip(self.b_prev, b0)}
        )
        self.ext_k = unit_mechanism(Subsystem.of(g, self.a_prev + self.b_prev + self.b_now), self.ext_spec)

    def ei(self):
        return (
            effective_information(self.int_k.submechanism(self.b_now), self.x_out),
            effective_information(self.ext_k.submechanism(self.b_now), self.x_out),
        )

    def max_xi(self):
        """Largest MIP excess information over subsets of the source units, all targets kept."""
        out = []
        for k, srcs in ((self.int_k, self.b_prev), (self.ext_k, self.a_prev)):
            xi, subset = max_excess_information(srcs, lambda s, k=k: k.submechanism(self.b_now, s), self.x_out)
            out.append((xi, subset))
        return out


def run_hopfield_table(variant="glauber", threads=1, calibrate=True):
    """Rows for the chosen transfer with the calibrated knobs, plus a calibration report."""
    chosen = HopfieldVariant(transfer=variant)

    def one(t):
        tr = HopfieldTransition(chosen, t)
        ei_int, ei_ext = tr.ei()
        (xi_int, s_int), (xi_ext, s_ext) = tr.max_xi()
        return {
            "t": t,
            "ei_int": ei_int,
            "max_xi_int": xi_int,
            "ei_ext": ei_ext,
            "max_xi_ext": xi_ext,
        }, {"t": t, "int_subset": [str(o) for o in s_int or []], "ext_subset": [str(o) for o in s_ext or []]}

    res = _map(one, range(1, 7), threads)
    rows = [r for r, _ in res]
    summary = {
        "variant": chosen.__dict__,
        "max_xi_subsets": [s for _, s in res],
        "int_beats_ext": {r["t"]: r["ei_int"] > r["ei_ext"] for r in rows},
    }
    calib = run_calibration(threads) if calibrate else []
    summary["best_variant"] = calib[0] if calib else None
    summary["any_within_tolerance"] = any(c["within_tolerance"] for c in calib)
    return rows, summary, calib


def run_calibration(threads=1):
    """ei deviations from the reference for every documented variant, best first."""

    def one(v: HopfieldVariant):
        dev = 0.0
        for t in range(1, 7):
            ei_int, ei_ext = HopfieldTransition(v, t).ei()
            ref = HOPFIELD_REFERENCE[t]
            dev = max(dev, abs(ei_int - ref[0]), abs(ei_ext - ref[2]))
        return {
            "transfer": v.transfer,
            "zero_diagonal": v.zero_diagonal,
            "coupling_scale": v.coupling_scale,
            "weight_scale": v.weight_scale,
            "max_deviation": dev,
            "within_tolerance": dev <= CALIBRATION_TOL,
        }

    grid = calibration_grid()
    out = _map(one, grid, threads)
    order = sorted(range(len(out)), key=lambda i: (out[i]["max_deviation"], i))
    return [out[i] for i in order]


# --------------------------------------------------------------------------
# translation families

SHIFTS = (("+x", 1, 0, 0), ("-x", -1, 0, 0), ("+y", 0, 1, 0), ("-y", 0, -1, 0), ("+t", 0, 0, 1), ("-t", 0, 0, -1))


def translation_family(base: GrainingSpec, vertices, name="base"):
    """``base`` plus every graining that moves one unit by one cell or one tic.

    Moves that leave the grid or land on the ground or another unit are
    skipped; vacated and uncovered occasions become channel.
    """
    vset = set(vertices)
    ground = set(base.ground)
    names, specs = [name], [base]
    for l, unit in enumerate(base.units):
        others = {o for i, u in enumerate(base.units) if i != l for o in u}
        for label, dx, dy, dt in SHIFTS:
            moved = [gol_id(o.site[0] + dx, o.site[1] + dy, o.time + dt) for o in unit]
            if any(o not in vset or o in ground or o in others for o in moved):
                continue
            units = [moved if i == l else list(u) for i, u in enumerate(base.units)]
            inside = ground | {o for u in units for o in u}
            channel = [v for v in vertices if v not in inside]
            names.append(f"U{l}{label}")
            specs.append(GrainingSpec(base.ground, channel, units, base.ground_output))
    return names, specs
