import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cagrain.coarsegrain import (
    GrainingSpec,
    coarse_grain,
    effective_graph,
    fix_ground,
    macro_alphabet,
    marginalize_channel,
    unit_mechanism,
)
from cagrain.core import (
    Mechanism,
    Occasion,
    OccasionGraph,
    ValidationError,
    forward_distribution,
    validate_graph,
)
from cagrain.info import effective_information
from helpers import chain_graph, oid, random_table


def chain_spec(n):
    ids = [oid(f"x{k}", k) for k in range(n + 1)]
    return ids, GrainingSpec((), ids[1:-1], [[ids[0]], [ids[-1]]], {})


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=2, max_size=7), st.integers(0, 2**32 - 1))
def test_channel_equals_matrix_product(sizes, seed):
    rng = np.random.default_rng(seed)
    tables = [random_table(rng, sizes[k], sizes[k + 1]) for k in range(len(sizes) - 1)]
    g = chain_graph(tables, sizes)
    ids, spec = chain_spec(len(sizes) - 1)
    k = marginalize_channel(g, spec)
    (f,) = [f for f in k.factors if f.outputs == (ids[-1],)]
    expect = tables[0]
    for t in tables[1:]:
        expect = expect @ t
    assert f.mechanism.inputs == (ids[0],)
    assert np.allclose(f.mechanism.table, expect, atol=1e-12, rtol=0)


def gate_graph():
    a, b, n = oid("a"), oid("b"), oid("n")
    c, d = oid("c", 1), oid("d", 1)
    half = Mechanism.prior([0.5, 0.5])
    return OccasionGraph([
        Occasion(a, 2, half),
        Occasion(b, 2, half),
        Occasion(n, 2, half),
        Occasion(c, 2, Mechanism.from_function([a, b, n], [2, 2, 2], 2, "and")),
        Occasion(d, 2, Mechanism.from_function([a, b], [2, 2], 2, "xor")),
    ])


def test_graining_spec_validation_and_json():
    g = gate_graph()
    spec = GrainingSpec(["n@0"], [], [["a@0", "b@0"], ["c@1", "d@1"]], {"n@0": 1})
    assert spec.problems(g.ids) == []
    spec2 = GrainingSpec.from_json(json.loads(json.dumps(spec.to_json())))
    assert spec2 == spec and spec2.key() == spec.key()
    bad = GrainingSpec([], ["a@0"], [["a@0", "b@0"], ["c@1"]], {})
    text = "; ".join(bad.problems(g.ids))
    assert "both" in text and "not assigned" in text
    with pytest.raises(ValidationError):
        GrainingSpec(["n@0"], [], [["a@0"]], {}).validate(g.ids)
    with pytest.raises(ValidationError):
        GrainingSpec.from_json({"ground": []})


def test_ground_binding_fixes_symbols():
    g = gate_graph()
    spec = GrainingSpec(["n@0"], [], [["a@0", "b@0"], ["c@1", "d@1"]], {"n@0": 1})
    fixed = fix_ground(g, spec)
    r = forward_distribution(fixed, {"a@0": 1, "b@0": 1}, ["c@1"])
    assert r.probs.tolist() == [0.0, 1.0]
    k = unit_mechanism(g, spec)
    pm = k.submechanism([oid("c", 1), oid("d", 1)])
    assert effective_information(pm, {oid("c", 1): 1, oid("d", 1): 0}) == pytest.approx(2.0)


def test_effective_graph_skips_constant_dependence():
    a, b, c = oid("a"), oid("b"), oid("c", 1)
    half = Mechanism.prior([0.5, 0.5])
    # c reads b but ignores it
    g = OccasionGraph([
        Occasion(a, 2, half),
        Occasion(b, 2, half),
        Occasion(c, 2, Mechanism.deterministic([a, b], [2, 2], 2, [0, 0, 1, 1])),
    ])
    spec = GrainingSpec((), (), [[a], [b], [c]], {})
    assert effective_graph(unit_mechanism(g, spec)) == [(0, 2)]


def test_macro_alphabet_merges_equivalent_outputs():
    g = gate_graph()
    spec = GrainingSpec(["n@0"], [], [["a@0", "b@0"], ["c@1", "d@1"]], {"n@0": 1})
    k = unit_mechanism(g, spec)
    # (and, xor) cannot tell (0, 1) from (1, 0)
    assert macro_alphabet(k, 0) == [[0], [1, 2], [3]]
    # with c dropped into the channel only the parity of (a, b) matters
    spec2 = GrainingSpec(["n@0"], ["c@1"], [["a@0", "b@0"], ["d@1"]], {"n@0": 1})
    assert macro_alphabet(unit_mechanism(g, spec2), 0) == [[0, 3], [1, 2]]


def test_coarse_automaton_is_valid_and_serializable():
    g = gate_graph()
    spec = GrainingSpec(["n@0"], ["c@1"], [["a@0", "b@0"], ["d@1"]], {"n@0": 1})
    ca = coarse_grain(g, spec)
    assert validate_graph(ca.graph) == []
    assert [str(u) for u in ca.unit_ids] == ["U0@0", "U1@1"]
    doc = json.loads(json.dumps(ca.to_json()))
    assert doc["sidecar"]["units"][0]["classes"] == [[0, 3], [1, 2]]
    assert doc["sidecar"]["effective_edges"] == [["U0@0", "U1@1"]]
    assert ca.macro_output({oid("a"): 1, oid("b"): 0, oid("d", 1): 1}) == {ca.unit_ids[0]: 1, ca.unit_ids[1]: 1}
    macro = ca.graph[ca.unit_ids[1]].mechanism
    assert macro.table.tolist() == [[1.0, 0.0], [0.0, 1.0]]


def test_stochastic_channel_ancestors_are_shared():
    # two targets fed by one noisy channel node stay correlated in one factor
    a, n, c1, c2 = oid("a"), oid("n", 1), oid("c1", 2), oid("c2", 2)
    g = OccasionGraph([
        Occasion(a, 2, Mechanism.prior([0.5, 0.5])),
        Occasion(n, 2, Mechanism.from_table([a], [2], [[0.8, 0.2], [0.2, 0.8]])),
        Occasion(c1, 2, Mechanism.from_function([n], [2], 2, "copy")),
        Occasion(c2, 2, Mechanism.from_function([n], [2], 2, "copy")),
    ])
    spec = GrainingSpec((), [n], [[a], [c1, c2]], {})
    k = unit_mechanism(g, spec)
    (f,) = [f for f in k.factors if c1 in f.outputs]
    assert set(f.outputs) == {c1, c2}
    srcs, table = k.unit_table(1)
    assert np.allclose(table, [[0.8, 0, 0, 0.2], [0.2, 0, 0, 0.8]])
