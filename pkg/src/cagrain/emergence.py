"""Emergence tests for grainings: relative excess information, E1, E2, neighbours, ranking.

A unit's *src* set is the unit plus the units with effective edges into it;
its *trg* set is the unit plus the units it has effective edges into. The
mechanism of such a set keeps the effective edges among its units; inputs
from outside the set become uniform noise.

Relative excess information of a mechanism with respect to a subgrain J is
the excess information over its weakest bipartition whose cut runs along the
boundaries of J's units (sources outside every J unit count as their own
pieces). With the atomic subgrain this is the ordinary MIP excess
information.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .coarsegrain import (
    GrainingSpec,
    UnitMechanism,
    coarse_from_units,
    effective_graph,
    unit_mechanism,
)
from .core import TractabilityError, UnreachableOutputError, ValidationError, product_mechanism
from .info import (
    MIP_SOURCE_LIMIT,
    SCORE_TOL,
    ProductMechanism,
    effective_information,
    mip,
)

MAX_UNITS_FOR_PAIRING = 8


def is_subgrain(j: GrainingSpec, k: GrainingSpec) -> bool:
    """Every unit of ``j`` lies strictly inside some unit of ``k``."""
    if not j.units:
        return False
    kunits = [set(u) for u in k.units]
    return all(any(set(uj) < uk for uk in kunits) for uj in j.units)


def atomic_subgrain(k: GrainingSpec) -> GrainingSpec | None:
    """Singleton units over K's unit occasions; a strict subgrain only if every unit has 2+ occasions."""
    if any(len(u) < 2 for u in k.units):
        return None
    return GrainingSpec(k.ground, k.channel, [[o] for u in k.units for o in u], k.ground_output)


@dataclass
class GrainingFamily:
    """Candidate grainings of one system, plus optional extra subgrains.

    Extra subgrains take part in E1/E2 checks but are never ranked.
    """

    system: object
    candidates: list
    names: list | None = None
    subgrains: dict = field(default_factory=dict)
    builder: Callable | None = None

    def __post_init__(self):
        self.candidates = list(self.candidates)
        if self.names is None:
            self.names = [f"K{i}" for i in range(len(self.candidates))]
        if len(self.names) != len(self.candidates):
            raise ValidationError("one name per candidate")
        self._mech: dict = {}
        self._edges: dict = {}
        self._xi: dict = {}
        self._xref: dict = {}

    @property
    def members(self) -> dict:
        out = dict(zip(self.names, self.candidates))
        out.update(self.subgrains)
        return out

    @property
    def subgrain_edges(self) -> list:
        m = self.members
        return [(a, b) for a in m for b in m if a != b and is_subgrain(m[a], m[b])]

    def mechanism(self, spec: GrainingSpec) -> UnitMechanism:
        key = spec.key()
        if key not in self._mech:
            build = self.builder or (lambda s: unit_mechanism(self.system, s))
            self._mech[key] = build(spec)
        return self._mech[key]

    def edges(self, spec: GrainingSpec) -> list:
        key = spec.key()
        if key not in self._edges:
            self._edges[key] = effective_graph(self.mechanism(spec))
        return self._edges[key]


# --------------------------------------------------------------------------
# src / trg sets and their mechanisms


def src_units(edges, l) -> list[int]:
    return sorted({l} | {a for a, b in edges if b == l})


def trg_units(edges, l) -> list[int]:
    return sorted({l} | {b for a, b in edges if a == l})


def set_mechanism(k: UnitMechanism, edges, units: Sequence[int]) -> ProductMechanism | None:
    """Mechanism of the effective edges among ``units``; ``None`` if there are none."""
    uset = set(units)
    targets = sorted({b for a, b in edges if a in uset and b in uset})
    if not targets:
        return None
    sources = sorted({a for a, b in edges if a in uset and b in targets})
    t_occ = [o for t in targets for o in k.units[t]]
    s_occ = {o for s in sources for o in k.units[s]}
    pm = k.submechanism(t_occ, s_occ)
    return pm if pm.sources else None


def occasions_of(spec: GrainingSpec, units) -> set:
    return {o for u in units for o in spec.units[u]}


def _groups(pm: ProductMechanism, j: GrainingSpec | None):
    if j is None:
        return [[s] for s in pm.sources]
    owner = {o: i for i, u in enumerate(j.units) for o in u}
    groups: dict = {}
    for s in pm.sources:
        groups.setdefault(owner.get(s, ("solo", s)), []).append(s)
    return list(groups.values())


@dataclass(frozen=True)
class RelativeXi:
    xi: float | None
    full: float | None
    partition: tuple | None
    reason: str = ""


def xi_relative(
    m: ProductMechanism, j: GrainingSpec | None, x_out, k: GrainingSpec | None = None, limit=MIP_SOURCE_LIMIT
) -> RelativeXi:
    """Excess information of ``m`` relative to subgrain ``j``.

    ``xi`` is taken over the weakest bipartition cutting only between J
    units; ``full`` is whole-minus-sum over every J piece at once, reported
    for reference. Passing ``k`` checks that ``j`` is a strict subgrain of it.
    """
    if k is not None and (j is None or not is_subgrain(j, k)):
        raise ValidationError("J is not a strict subgrain of K")
    groups = _groups(m, j)
    if len(groups) < 2:
        return RelativeXi(None, None, None, "sources fall inside a single subgrain unit")
    try:
        r = mip(m, x_out, limit, groups=groups)
        whole = effective_information(m, x_out)
        parts = [effective_information(m.restrict(set(g)), x_out) for g in groups]
    except UnreachableOutputError:
        return RelativeXi(None, None, None, "output unreachable")
    full = math.fsum([whole] + [-p for p in parts])
    return RelativeXi(r.xi, full, r.partition)


def xi_relative_sets(family: GrainingFamily, k: GrainingSpec, j: GrainingSpec, units, x_out):
    """Relative excess information of K's mechanism over a set of its units (memoized)."""
    family._xref[id(x_out)] = x_out  # keeps the id stable for the memo's lifetime
    key = (k.key(), None if j is None else j.key(), tuple(units), id(x_out))
    if key not in family._xi:
        m = set_mechanism(family.mechanism(k), family.edges(k), units)
        family._xi[key] = None if m is None else xi_relative(m, j, x_out)
    return family._xi[key]


# --------------------------------------------------------------------------
# E1


@dataclass
class UnitCheck:
    unit: int
    src: float | None = None
    trg: float | None = None
    passed: bool = False
    reason: str = ""


def subgrains_of(family: GrainingFamily, k: GrainingSpec) -> list[tuple[str, GrainingSpec]]:
    out = [(n, s) for n, s in family.members.items() if is_subgrain(s, k)]
    atom = atomic_subgrain(k)
    if atom is not None and all(s.key() != atom.key() for _, s in out):
        out.append(("atomic", atom))
    return out


def check_E1(family: GrainingFamily, k: GrainingSpec, x_out, j: GrainingSpec | None = None):
    """Per-unit E1 outcome and the overall conjunction.

    Each side (src, trg) that exists must have relative excess information
    strictly above zero for every subgrain (just ``j`` when given, else all
    subgrains of K in the family plus the atomic one); a unit with neither
    side is vacuous and fails.
    """
    if j is not None:
        if not is_subgrain(j, k):
            raise ValidationError("J is not a strict subgrain of K")
        subgrains = [("J", j)]
    else:
        subgrains = subgrains_of(family, k)
    edges = family.edges(k)
    checks = []
    for l in range(len(k.units)):
        c = UnitCheck(l)
        if not subgrains:
            c.reason = "no subgrain"
            checks.append(c)
            continue
        sides = {"src": src_units(edges, l), "trg": trg_units(edges, l)}
        present = False
        ok = True
        for side, units in sides.items():
            worst = None
            for _, j in subgrains:
                r = xi_relative_sets(family, k, j, units, x_out)
                if r is None:
                    break
                if r.xi is None:
                    ok = False
                    c.reason = c.reason or f"{side}: {r.reason}"
                    continue
                worst = r.xi if worst is None else min(worst, r.xi)
            else:
                present = True
                setattr(c, side, worst)
                if worst is not None and not worst > 0:
                    ok = False
                    c.reason = c.reason or "ξ not > 0"
        if not present:
            c.reason = "vacuous: no effective sources or targets"
            ok = False
        c.passed = ok
        checks.append(c)
    return checks, bool(checks) and all(c.passed for c in checks)


# --------------------------------------------------------------------------
# neighbours and E2


@dataclass(frozen=True)
class NeighborWitness:
    name: str
    pairing: dict
    shared: dict


def _alphabet_bits(k: UnitMechanism, occs) -> float:
    return sum(math.log2(k.sizes[o]) for o in occs)


def _sets(family, spec):
    """Per unit: occasions of the unit, of its src set and of its trg set."""
    edges = family.edges(spec)
    return [
        (
            set(spec.units[l]),
            occasions_of(spec, src_units(edges, l)),
            occasions_of(spec, trg_units(edges, l)),
        )
        for l in range(len(spec.units))
    ]


def enumerate_neighbors(family: GrainingFamily, k: GrainingSpec, j: GrainingSpec, exclude=()):
    """Family members that are neighbours of ``k`` with respect to ``j``, with witnesses."""
    if len(k.units) > MAX_UNITS_FOR_PAIRING:
        raise ValidationError(f"neighbour search supports at most {MAX_UNITS_FOR_PAIRING} units")
    ks = _sets(family, k)
    js = _sets(family, j)
    km = family.mechanism(k)
    out = []
    for name, kp in family.members.items():
        if kp.key() == k.key() or name in exclude:
            continue
        kps = _sets(family, kp)
        kpm = family.mechanism(kp)
        pairing, shared = {}, {}
        for l, (u, su, tu) in enumerate(ks):
            matches = []
            for lp, (up, sup, tup) in enumerate(kps):
                if _alphabet_bits(kpm, up) > _alphabet_bits(km, u) + 1e-12:
                    continue
                if _alphabet_bits(kpm, sup) > _alphabet_bits(km, su) + 1e-12:
                    continue
                if _alphabet_bits(kpm, tup) > _alphabet_bits(km, tu) + 1e-12:
                    continue
                for ti, (t, st, tt) in enumerate(js):
                    if t <= u and t <= up and st <= su & sup and tt <= tu & tup:
                        matches.append((lp, ti))
                        break
            if len({lp for lp, _ in matches}) != 1:
                break
            pairing[l], shared[l] = matches[0]
        else:
            out.append(NeighborWitness(name, pairing, shared))
    return out


def _side_values(family, spec, j, x_out):
    edges = family.edges(spec)
    vals = []
    for l in range(len(spec.units)):
        row = {}
        for side, units in (("src", src_units(edges, l)), ("trg", trg_units(edges, l))):
            r = xi_relative_sets(family, spec, j, units, x_out)
            row[side] = None if r is None else r.xi
        vals.append(row)
    return vals


def _dominates(family, k, j, x_out, neighbors) -> tuple[bool, str]:
    mine = _side_values(family, k, j, x_out)
    for nb in neighbors:
        theirs = _side_values(family, family.members[nb.name], j, x_out)
        for l, lp in nb.pairing.items():
            for side in ("src", "trg"):
                a, b = theirs[lp][side], mine[l][side]
                if a is not None and b is not None and a > b + SCORE_TOL:
                    return False, f"neighbour {nb.name} beats unit {l} on {side}"
                if a is not None and b is None:
                    return False, f"neighbour {nb.name} has a defined {side} xi where unit {l} has none"
    return True, ""


def emergent_subgrains(family: GrainingFamily, k: GrainingSpec, x_out, _memo=None):
    _memo = {} if _memo is None else _memo
    out = []
    for name, j in family.members.items():
        if not is_subgrain(j, k):
            continue
        if not all(any(set(uj) <= set(u) for uj in j.units) for u in k.units):
            continue
        if is_emergent(family, j, x_out, _memo):
            out.append((name, j))
    return out


def is_emergent(family, spec, x_out, _memo=None) -> bool:
    _memo = {} if _memo is None else _memo
    key = spec.key()
    if key not in _memo:
        _memo[key] = False  # guards against cycles in malformed families
        _, e1 = check_E1(family, spec, x_out)
        _memo[key] = e1 and check_E2(family, spec, x_out, _memo=_memo)[0]
    return _memo[key]


def check_E2(family: GrainingFamily, k: GrainingSpec, x_out, j: GrainingSpec | None = None, _memo=None):
    """E2 with an explicit subgrain ``j`` or, by default, any emergent subgrain in the family.

    Passes vacuously when no emergent subgrain exists. Returns ``(passed, reason)``.
    """
    if j is not None:
        if not is_subgrain(j, k):
            raise ValidationError("J is not a strict subgrain of K")
        candidates = [("J", j)]
    else:
        candidates = emergent_subgrains(family, k, x_out, _memo)
        if not candidates:
            return True, "vacuous: no emergent subgrain"
    reasons = []
    for _, jj in candidates:
        nbrs = enumerate_neighbors(family, k, jj)
        ok, why = _dominates(family, k, jj, x_out, nbrs)
        if ok:
            return True, ""
        reasons.append(why)
    return False, "; ".join(reasons)


# --------------------------------------------------------------------------
# ranking


def full_mechanism(family: GrainingFamily, k: GrainingSpec):
    return set_mechanism(family.mechanism(k), family.edges(k), range(len(k.units)))


@dataclass
class CandidateReport:
    name: str
    spec: GrainingSpec
    e1_units: list
    e1: bool
    e2: bool
    e2_reason: str
    xi: float | None = None
    normalizer: float | None = None
    score: float | None = None
    macro_score: float | None = None
    failures: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "E1": [
                {"unit": c.unit, "src": c.src, "trg": c.trg, "passed": c.passed, "reason": c.reason}
                for c in self.e1_units
            ],
            "E1_passed": self.e1,
            "E2": self.e2,
            "xi": self.xi,
            "N": self.normalizer,
            "score": self.score,
            "macro_score": self.macro_score,
            "failure_reasons": self.failures,
        }


def _macro_score(family, k, x_out):
    """Normalized xi of the macro-level full mechanism (None if it has < 2 macro sources)."""
    ca = coarse_from_units(family.mechanism(k), k)
    targets = [o.id for o in ca.graph if o.inputs]
    sources = {s for t in targets for s in ca.graph[t].inputs}
    if len(sources) < 2:
        return None
    try:
        macro_x = ca.macro_output(x_out)
    except KeyError:
        return None
    pm = product_mechanism(ca.graph, targets)
    return mip(pm, {t: macro_x[t] for t in targets}).score


def evaluate_candidate(family, name, k, x_out, memo=None, macro=False) -> CandidateReport:
    checks, e1 = check_E1(family, k, x_out)
    e2, why = check_E2(family, k, x_out, _memo=memo)
    rep = CandidateReport(name, k, checks, e1, e2, why)
    for c in checks:
        if not c.passed:
            rep.failures.append(f"E1 unit {c.unit}: {c.reason}")
    if not e2:
        rep.failures.append(f"E2: {why}")
    m = full_mechanism(family, k)
    if m is None or len(m.sources) < 2:
        rep.failures.append("no partitionable mechanism")
        return rep
    try:
        r = mip(m, x_out)
        rep.xi, rep.normalizer, rep.score = r.xi, r.normalizer, r.score
    except ValidationError as exc:
        rep.failures.append(f"xi: {exc}")
    if macro:
        try:
            rep.macro_score = _macro_score(family, k, x_out)
        except (ValidationError, TractabilityError):
            rep.macro_score = None
    return rep


@dataclass
class BestGraining:
    name: str | None
    spec: GrainingSpec | None
    score: float | None
    reports: list

    def to_json(self) -> dict:
        return {
            "best": self.name,
            "score": self.score,
            "candidates": [r.to_json() for r in self.reports],
        }


def best_graining(family: GrainingFamily, x_out, macro=False) -> BestGraining:
    """Emergent candidate with the largest normalized excess information.

    Ties are broken by the canonical text of the graining, so the result
    does not depend on candidate order.
    """
    memo: dict = {}
    reports = [
        evaluate_candidate(family, n, k, x_out, memo, macro)
        for n, k in zip(family.names, family.candidates)
    ]
    best = None
    for r in reports:
        if not (r.e1 and r.e2) or r.score is None:
            continue
        if best is None or r.score > best.score + SCORE_TOL or (
            abs(r.score - best.score) <= SCORE_TOL and r.spec.key() < best.spec.key()
        ):
            best = r
    if best is None:
        return BestGraining(None, None, None, reports)
    return BestGraining(best.name, best.spec, best.score, reports)
