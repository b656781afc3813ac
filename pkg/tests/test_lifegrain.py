import numpy as np
import pytest

from cagrain.coarsegrain import GrainingSpec, coarse_from_units, effective_graph, unit_mechanism
from cagrain.lifegrain import Unsupported, gol_builder, grid_ids, life_unit_mechanism
from cagrain.models import GolSpec, glider, gol_id, place, unroll_gol


def square(x0, y0, n, t):
    return [gol_id(x, y, t) for y in range(y0, y0 + n) for x in range(x0, x0 + n)]


def graining(gspec, units, ground_grid=None):
    ground = [o for o in grid_ids(gspec) if o.time == gspec.t_start and o not in {u for us in units for u in us}]
    used = set(ground) | {o for u in units for o in u}
    channel = [o for o in grid_ids(gspec) if o not in used]
    values = {g: int(ground_grid[g.site[1], g.site[0]]) if ground_grid is not None else 0 for g in ground}
    return GrainingSpec(ground, channel, units, values)


def same_unit_mechanism(a, b):
    assert a.units == b.units
    for l, occs in enumerate(a.units):
        sa, ta = a.unit_table(l)
        sb, tb = b.unit_table(l)
        assert tuple(sa) == tuple(sb)
        assert np.array_equal(ta, tb)
    assert effective_graph(a) == effective_graph(b)


CASES = [
    # (grid, t_end, source square, target square, ground pattern)
    (8, 2, (2, 2, 2, 1), (2, 2, 3, 2), None),
    (9, 3, (3, 3, 3, 1), (3, 3, 3, 3), "glider"),
    (8, 2, (1, 1, 2, 0), (1, 1, 3, 2), None),
]


@pytest.mark.parametrize("case", CASES)
def test_fast_builder_matches_generic_pipeline(case):
    n, t_end, src, trg, pattern = case
    gspec = GolSpec(n, n, 0, t_end)
    ground_grid = place((n, n), glider("SE", 0), 1, 1) if pattern else None
    units = [square(*src), square(*trg)]
    spec = graining(gspec, units, ground_grid)
    fast = life_unit_mechanism(gspec, spec)
    slow = unit_mechanism(unroll_gol(gspec), spec)
    same_unit_mechanism(fast, slow)
    assert coarse_from_units(fast, spec).classes == coarse_from_units(slow, spec).classes


def test_unsupported_shapes_fall_back():
    gspec = GolSpec(6, 6, 0, 2)
    units = [square(1, 1, 2, 1), square(1, 1, 2, 2), [gol_id(4, 4, 2)]]
    spec = graining(gspec, [units[0], units[1] + units[2]])
    bad = graining(gspec, [units[0] + [gol_id(4, 4, 2)], units[1]])
    with pytest.raises(Unsupported):
        life_unit_mechanism(gspec, bad)
    build = gol_builder(gspec)
    same_unit_mechanism(build(bad), unit_mechanism(unroll_gol(gspec), bad))
    same_unit_mechanism(build(spec), unit_mechanism(unroll_gol(gspec), spec))
