"""Coarse-graining: ground, channel and units turn a subsystem into a smaller automaton.

Pipeline: extrinsic inputs are averaged out per occasion, ground outputs are
bound into their readers, channel occasions are summed away (simulated when
deterministic), then the effective graph between units and the macro
alphabet of each unit are read off the resulting unit-level mechanism.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .core import (
    ATOL,
    CyclicGraphError,
    Factor,
    Mechanism,
    Occasion,
    OccasionGraph,
    OccasionId,
    ProductMechanism,
    Subsystem,
    ValidationError,
    as_id,
    check_cap,
    decode,
    encode,
    graph_to_json,
    joint_size,
    marginalize_extrinsic,
    propagate,
)

CONTEXT_CAP = 1 << 22
BATCH_CAP = 1 << 20


@dataclass(frozen=True)
class GrainingSpec:
    """Ground, channel and ordered units, plus the symbols the ground is fixed to."""

    ground: tuple = ()
    channel: tuple = ()
    units: tuple = ()
    ground_output: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "ground", tuple(as_id(g) for g in self.ground))
        object.__setattr__(self, "channel", tuple(as_id(c) for c in self.channel))
        object.__setattr__(self, "units", tuple(tuple(as_id(o) for o in u) for u in self.units))
        object.__setattr__(
            self, "ground_output", {as_id(k): int(v) for k, v in dict(self.ground_output).items()}
        )

    @classmethod
    def from_json(cls, doc: Mapping) -> GrainingSpec:
        if not isinstance(doc, Mapping) or "units" not in doc:
            raise ValidationError("graining needs a 'units' list")
        try:
            return cls(
                doc.get("ground", []),
                doc.get("channel", []),
                doc["units"],
                doc.get("ground_output", {}),
            )
        except ValueError as exc:
            raise ValidationError(f"graining: {exc}") from None

    def to_json(self) -> dict:
        return {
            "ground": [str(g) for g in self.ground],
            "channel": [str(c) for c in self.channel],
            "units": [[str(o) for o in u] for u in self.units],
            "ground_output": {str(k): v for k, v in self.ground_output.items()},
        }

    @cached_property
    def unit_of(self) -> dict:
        return {o: i for i, u in enumerate(self.units) for o in u}

    @property
    def unit_occasions(self) -> tuple:
        return tuple(o for u in self.units for o in u)

    def key(self) -> str:
        """Canonical text used for deterministic tie-breaking."""
        return repr(
            (
                sorted(str(g) for g in self.ground),
                sorted(str(c) for c in self.channel),
                sorted(sorted(str(o) for o in u) for u in self.units),
            )
        )

    def problems(self, vertices: Sequence[OccasionId], sizes: Mapping | None = None) -> list[str]:
        out = []
        seen: dict[OccasionId, str] = {}
        parts = [("ground", self.ground), ("channel", self.channel)]
        parts += [(f"unit {i}", u) for i, u in enumerate(self.units)]
        for label, members in parts:
            for o in members:
                if o in seen:
                    out.append(f"{o} is in both {seen[o]} and {label}")
                seen[o] = label
        if any(len(u) == 0 for u in self.units):
            out.append("units must be nonempty")
        vset = set(vertices)
        extra = [str(o) for o in seen if o not in vset]
        missing = [str(v) for v in vertices if v not in seen]
        if extra:
            out.append(f"occasions not in the subsystem: {extra[:5]}")
        if missing:
            out.append(f"occasions not assigned to ground, channel or a unit: {missing[:5]}")
        bound = set(self.ground_output)
        if bound != set(self.ground):
            lacking = [str(g) for g in self.ground if g not in bound]
            stray = [str(g) for g in bound if g not in set(self.ground)]
            if lacking:
                out.append(f"ground_output is missing {lacking[:5]}")
            if stray:
                out.append(f"ground_output binds non-ground occasions {stray[:5]}")
        if sizes is not None:
            for g, v in self.ground_output.items():
                if g in sizes and not 0 <= v < sizes[g]:
                    out.append(f"ground symbol {v} outside the alphabet of {g}")
        return out

    def validate(self, vertices, sizes=None):
        problems = self.problems(vertices, sizes)
        if problems:
            raise ValidationError("; ".join(problems))


def _graph_of(s) -> OccasionGraph:
    return marginalize_extrinsic(s) if isinstance(s, Subsystem) else s


def fix_ground(s, spec: GrainingSpec) -> OccasionGraph:
    """Bind ground outputs into every reader and drop the ground occasions."""
    g = _graph_of(s)
    spec.validate(g.ids, {o.id: o.size for o in g})
    ground = spec.ground_output
    return OccasionGraph(
        Occasion(o.id, o.size, o.mechanism.bind(ground)) for o in g if o.id not in ground
    )


def _factor_sum_outputs(f: Factor, keep) -> Factor:
    """Marginal of a factor over a subset of its outputs (in factor order)."""
    idx = [i for i, o in enumerate(f.outputs) if o in keep]
    if len(idx) == len(f.outputs):
        return f
    outs = tuple(f.outputs[i] for i in idx)
    osz = tuple(f.output_sizes[i] for i in idx)
    m = f.mechanism
    if m.is_deterministic:
        digits = decode(m.outputs, f.output_sizes)[:, idx]
        mech = Mechanism(m.inputs, m.input_sizes, joint_size(osz), outputs=encode(digits, osz))
    else:
        t = m.table.reshape((m.n_in,) + f.output_sizes)
        drop = tuple(1 + i for i in range(len(f.outputs)) if i not in idx)
        t = t.sum(axis=drop).reshape(m.n_in, joint_size(osz))
        mech = Mechanism(m.inputs, m.input_sizes, joint_size(osz), table=t)
    return Factor(outs, osz, mech)


@dataclass
class UnitMechanism:
    """The unit-level mechanism p_K: factors from unit occasions to unit occasions.

    Outputs of different factors are conditionally independent given the
    intervened unit inputs; occasions within one factor may be correlated
    through shared stochastic channel ancestry.
    """

    units: tuple
    factors: tuple
    sizes: dict

    @cached_property
    def unit_of(self):
        return {o: i for i, u in enumerate(self.units) for o in u}

    @cached_property
    def order(self):
        return {o: i for i, o in enumerate(o for u in self.units for o in u)}

    def unit_sources(self, l) -> list[int]:
        """Units owning an occasion that some factor of unit ``l`` reads (structural)."""
        occs = set(self.units[l])
        srcs = {self.unit_of[i] for f in self.factors if occs & set(f.outputs) for i in f.inputs}
        return sorted(srcs)

    def submechanism(self, targets: Sequence[OccasionId], sources: Sequence[OccasionId] | None = None) -> ProductMechanism:
        """Mechanism onto ``targets``; inputs outside ``sources`` become uniform noise."""
        tset = set(targets)
        fs = [_factor_sum_outputs(f, tset) for f in self.factors if tset & set(f.outputs)]
        pm = ProductMechanism(fs, self.sizes)
        ordered = sorted(pm.sources, key=self.order.__getitem__)
        pm = ProductMechanism(fs, self.sizes, ordered)
        if sources is not None:
            pm = pm.restrict(set(sources))
        return pm

    def unit_table(self, l):
        """``(sources, table)``: joint micro outputs of unit ``l`` in unit order, per micro input."""
        occs = self.units[l]
        pm = self.submechanism(occs)
        joint = pm.joint()
        perm = [pm.targets.index(o) for o in occs]
        tsz = pm.target_sizes
        table = joint.table.reshape((joint.n_in,) + tsz)
        table = table.transpose([0] + [1 + p for p in perm]).reshape(joint.n_in, -1)
        return pm.sources, table


def _ancestry(g: OccasionGraph, corder, units: set, channel: set):
    """Per unit occasion: unit occasions feeding it through the channel, its
    stochastic channel ancestors, and whether that whole cone is deterministic.

    Channel summaries are built once in topological order and shared.
    """
    empty = frozenset()
    bnd, sto = {}, {}

    def merge(v):
        b, st = [], []
        for a in g[v].inputs:
            if a in units:
                b.append(frozenset((a,)))
            elif a in channel:
                b.append(bnd[a])
                st.append(sto[a])
        return b, st

    def union(parts):
        parts = [p for p in parts if p]
        if not parts:
            return empty
        if len(parts) == 1:
            return parts[0]
        return frozenset().union(*parts)

    for c in corder:
        b, st = merge(c)
        if not g[c].mechanism.is_deterministic:
            st.append(frozenset((c,)))
        bnd[c], sto[c] = union(b), union(st)
    out = {}
    for v in units:
        b, st = merge(v)
        stoch = union(st)
        out[v] = (union(b), stoch, not stoch and g[v].mechanism.is_deterministic)
    return out


def marginalize_channel(g: OccasionGraph, spec: GrainingSpec) -> UnitMechanism:
    """Sum channel occasions out of the ground-fixed automaton ``g``.

    Each unit occasion ends up in a factor whose inputs are the unit
    occasions it depends on through the channel. Deterministic factors are
    evaluated by simulating every input assignment, batched across factors
    whose inputs nest.
    """
    units = set(spec.unit_occasions)
    channel = set(spec.channel)
    try:
        corder = g.topological_order(channel)
    except CyclicGraphError:
        raise CyclicGraphError("cyclic channel; cannot marginalize exactly") from None
    order = {o: i for i, o in enumerate(g.ids)}
    uorder = {o: i for i, o in enumerate(spec.unit_occasions)}
    info = _ancestry(g, corder, units, channel)

    # occasions sharing stochastic channel ancestry are correlated: same factor
    parent = {v: v for v in spec.unit_occasions}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    owner = {}
    for v in spec.unit_occasions:
        for a in info[v][1]:
            if a in owner:
                ra, rb = find(owner[a]), find(v)
                if ra != rb:
                    parent[rb] = ra
            else:
                owner[a] = v
    groups: dict = {}
    for v in spec.unit_occasions:
        groups.setdefault(find(v), []).append(v)

    sizes = {o: g.size(o) for o in spec.unit_occasions}
    factors: dict = {}
    det_jobs = []
    for members in groups.values():
        ins = sorted(set().union(*(info[v][0] for v in members)), key=order.__getitem__)
        deterministic = len(members) == 1 and info[members[0]][2]
        if deterministic:
            det_jobs.append((members[0], ins))
        else:
            factors[members[0]] = _stochastic_factor(g, members, ins, sizes)
    for v, fac in _deterministic_factors(g, det_jobs, sizes, order):
        factors[v] = fac
    out = [factors[k] for k in sorted(factors, key=uorder.__getitem__)]
    return UnitMechanism(spec.units, tuple(out), sizes)


def _assignments(ins, sizes):
    n = joint_size([sizes[i] for i in ins])
    check_cap(n, BATCH_CAP, "unit input assignments")
    digits = decode(np.arange(n, dtype=np.int64), [sizes[i] for i in ins])
    return n, {a: digits[:, j] for j, a in enumerate(ins)}


def _stochastic_factor(g, members, ins, sizes):
    n, clamped = _assignments(ins, sizes)
    res = propagate(g, clamped, members, n)
    osz = tuple(sizes[v] for v in members)
    if res.ndim == 1:
        mech = Mechanism(ins, [sizes[i] for i in ins], joint_size(osz), outputs=res)
    else:
        mech = Mechanism(ins, [sizes[i] for i in ins], joint_size(osz), table=res)
    return Factor(tuple(members), osz, mech)


def _deterministic_factors(g, jobs, sizes, order):
    """Simulate single-occasion deterministic factors, sharing runs across nested input sets."""
    jobs = sorted(jobs, key=lambda j: (-len(j[1]), order[j[0]]))
    batches: list = []
    for v, ins in jobs:
        for b in batches:
            if set(ins) <= b[0]:
                b[1].append((v, ins))
                break
        else:
            batches.append((set(ins), [(v, ins)]))
    for inset, members in batches:
        ins = sorted(inset, key=order.__getitem__)
        n, clamped = _assignments(ins, sizes)
        query = [v for v, _ in members]
        codes = propagate(g, clamped, query, n)
        digits = decode(codes, [sizes[q] for q in query])
        bsizes = [sizes[i] for i in ins]
        for j, (v, own) in enumerate(members):
            own_sizes = [sizes[i] for i in own]
            m = joint_size(own_sizes)
            full = np.zeros((m, len(ins)), dtype=np.int64)
            if own:
                full[:, [ins.index(i) for i in own]] = decode(np.arange(m, dtype=np.int64), own_sizes)
            rows = encode(full, bsizes) if ins else np.zeros(1, dtype=np.int64)
            mech = Mechanism(own, own_sizes, sizes[v], outputs=digits[rows, j])
            yield v, Factor((v,), (sizes[v],), mech)


# --------------------------------------------------------------------------
# effective graph and macro alphabets


def _depends_on(sources, table, sizes, occs, tol=ATOL) -> bool:
    axes = [i for i, s in enumerate(sources) if s in occs]
    if not axes:
        return False
    t = table.reshape(tuple(sizes[s] for s in sources) + (table.shape[1],))
    spread = t.max(axis=tuple(axes)) - t.min(axis=tuple(axes))
    return bool(np.any(spread > tol))


def effective_graph(k: UnitMechanism, tol=ATOL) -> list[tuple[int, int]]:
    """Unit pairs (k, l) such that unit k's output changes unit l's behaviour.

    Factors are independent given their inputs, so unit l's joint output
    depends on unit k iff one of its factors does; each factor is tested on
    its own (summed down to l's occasions when it spans several units).
    """
    edges = set()
    for l in range(len(k.units)):
        occs = set(k.units[l])
        for f in k.factors:
            if not occs & set(f.outputs):
                continue
            m = _factor_sum_outputs(f, occs).mechanism
            for u in {k.unit_of[i] for i in m.inputs} - {b for b, l2 in edges if l2 == l}:
                if _depends_on(m.inputs, m.table, k.sizes, set(k.units[u]), tol):
                    edges.add((u, l))
    return sorted(edges)


def _refine(labels, sig_rows, exact, tol):
    """Split classes of ``labels`` by per-element signature rows."""
    if exact:
        _, sig = np.unique(sig_rows, axis=0, return_inverse=True)
    else:
        # greedy first match: each new representative claims every open row within tol
        rows = np.asarray(sig_rows, dtype=float).reshape(len(sig_rows), -1)
        sig = np.full(len(rows), -1, dtype=np.int64)
        c = 0
        while True:
            open_ = np.flatnonzero(sig < 0)
            if open_.size == 0:
                break
            near = np.max(np.abs(rows[open_] - rows[open_[0]]), axis=1, initial=0.0) <= tol
            sig[open_[near]] = c
            c += 1
    pairs = np.stack([labels, np.ravel(sig)], axis=1)
    _, new = np.unique(pairs, axis=0, return_inverse=True)
    return np.ravel(new)


def _canonical(labels) -> list[list[int]]:
    classes: dict = {}
    for i, c in enumerate(labels):
        classes.setdefault(int(c), []).append(i)
    return sorted(classes.values(), key=lambda c: c[0])


def macro_alphabet(k: UnitMechanism, l: int, edges=None, tol=ATOL) -> list[list[int]]:
    """Classes of unit ``l``'s micro outputs, each listed with its lowest index first.

    Two outputs share a class iff they have the same effect on every factor
    that reads them, in every context of the factor's other inputs, and the
    same probability of being produced under every intervention. The second
    test is skipped for units without effective incoming edges, whose
    behaviour is not shaped by any other unit.
    """
    edges = effective_graph(k, tol) if edges is None else edges
    occs = k.units[l]
    usz = [k.sizes[o] for o in occs]
    n_micro = joint_size(usz)
    check_cap(n_micro, CONTEXT_CAP, "micro alphabet")
    micro = decode(np.arange(n_micro, dtype=np.int64), usz)
    labels = np.zeros(n_micro, dtype=np.int64)
    occset = set(occs)
    contexts = 0
    for f in k.factors:
        read = [i for i, s in enumerate(f.inputs) if s in occset]
        if not read:
            continue
        m = f.mechanism
        other = [i for i in range(len(f.inputs)) if i not in read]
        n_read = joint_size([m.input_sizes[i] for i in read])
        n_other = joint_size([m.input_sizes[i] for i in other])
        contexts += n_other * n_micro
        check_cap(contexts, CONTEXT_CAP, "effect-equivalence contexts")
        tensor_axes = read + other
        if m.is_deterministic:
            sig = m.outputs.reshape(m.input_sizes).transpose(tensor_axes).reshape(n_read, n_other)
        else:
            sig = m.table.reshape(m.input_sizes + (m.n_out,)).transpose(tensor_axes + [len(f.inputs)])
            sig = sig.reshape(n_read, n_other * m.n_out)
        proj = micro[:, [occs.index(f.inputs[i]) for i in read]]
        r = encode(proj, [m.input_sizes[i] for i in read])
        labels = _refine(labels, sig[r], m.is_deterministic, tol)
    if any(b == l and a != l for a, b in edges) or (l, l) in edges:
        srcs, table = k.unit_table(l)
        check_cap(table.size, CONTEXT_CAP, "reaction-equivalence contexts")
        exact = bool(np.all((table == 0.0) | (table == 1.0)))
        labels = _refine(labels, table.T, exact, tol)
    return _canonical(labels)


# --------------------------------------------------------------------------
# the coarse automaton


def unit_id(l, spec: GrainingSpec) -> OccasionId:
    return OccasionId(f"U{l}", min(o.time for o in spec.units[l]))


@dataclass
class CoarseAutomaton:
    graph: OccasionGraph
    spec: GrainingSpec
    k: UnitMechanism
    edges: list
    classes: list

    @property
    def unit_ids(self):
        return self.graph.ids

    def macro_symbol(self, l, micro_index) -> int:
        for c, members in enumerate(self.classes[l]):
            if micro_index in members:
                return c
        raise ValidationError(f"{micro_index} is not a micro symbol of unit {l}")

    def macro_output(self, x_out: Mapping) -> dict:
        """Macro symbols of a micro assignment covering every unit occasion."""
        out = {}
        for l, occs in enumerate(self.spec.units):
            code = encode([int(x_out[o]) for o in occs], [self.k.sizes[o] for o in occs])
            out[self.unit_ids[l]] = self.macro_symbol(l, int(code))
        return out

    def sidecar(self) -> dict:
        return {
            "units": [
                {
                    "id": str(self.unit_ids[l]),
                    "occasions": [str(o) for o in occs],
                    "micro_alphabet": joint_size([self.k.sizes[o] for o in occs]),
                    "classes": self.classes[l],
                    "representatives": [c[0] for c in self.classes[l]],
                }
                for l, occs in enumerate(self.spec.units)
            ],
            "effective_edges": [[str(self.unit_ids[a]), str(self.unit_ids[b])] for a, b in self.edges],
        }

    def to_json(self) -> dict:
        return {"graph": graph_to_json(self.graph), "sidecar": self.sidecar()}


def unit_mechanism(s, spec: GrainingSpec) -> UnitMechanism:
    """Extrinsic marginalization, ground fixing and channel marginalization."""
    return marginalize_channel(fix_ground(s, spec), spec)


def coarse_grain(s, spec: GrainingSpec, tol=ATOL) -> CoarseAutomaton:
    """Run all five steps: unit mechanism, effective graph, macro alphabets, macro mechanisms."""
    return coarse_from_units(unit_mechanism(s, spec), spec, tol)


def coarse_from_units(k: UnitMechanism, spec: GrainingSpec, tol=ATOL) -> CoarseAutomaton:
    """Effective graph, macro alphabets and macro mechanisms of a ready unit mechanism."""
    edges = effective_graph(k, tol)
    classes = [macro_alphabet(k, l, edges, tol) for l in range(len(spec.units))]
    ids = [unit_id(l, spec) for l in range(len(spec.units))]
    if len(set(ids)) != len(ids):
        raise ValidationError("units must be distinguishable by label")
    occs = []
    for l, occs_l in enumerate(spec.units):
        srcs_u = sorted({a for a, b in edges if b == l})
        srcs, table = k.unit_table(l)
        sizes_in = [len(classes[u]) for u in srcs_u]
        n_in = joint_size(sizes_in)
        check_cap(n_in * len(classes[l]), CONTEXT_CAP, "macro mechanism")
        macro_in = decode(np.arange(n_in, dtype=np.int64), sizes_in)
        micro_in = np.zeros((n_in, len(srcs)), dtype=np.int64)
        for j, u in enumerate(srcs_u):
            reps = np.array([c[0] for c in classes[u]], dtype=np.int64)
            udig = decode(reps[macro_in[:, j]], [k.sizes[o] for o in spec.units[u]])
            for pos, o in enumerate(spec.units[u]):
                if o in srcs:
                    micro_in[:, srcs.index(o)] = udig[:, pos]
        rows = table[encode(micro_in, [k.sizes[s] for s in srcs])] if srcs else np.repeat(table, n_in, 0)
        macro = np.stack([rows[:, c].sum(axis=1) for c in classes[l]], axis=1)
        mech = Mechanism([ids[u] for u in srcs_u], sizes_in, len(classes[l]), table=macro)
        occs.append(Occasion(ids[l], len(classes[l]), mech))
    return CoarseAutomaton(OccasionGraph(occs), spec, k, edges, classes)
