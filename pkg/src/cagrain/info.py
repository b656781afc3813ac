"""Actual repertoires, effective information, excess information and the MIP.

Every quantity here is exact: repertoires are enumerated over the joint
source alphabet of each connected component of a product mechanism, and
sums of per-component terms use ``math.fsum`` so that identical components
cancel to exactly zero.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import (
    Factor,
    Mechanism,
    ProductMechanism,
    Repertoire,
    TractabilityError,
    UnreachableOutputError,
    ValidationError,
    as_id,
    encode,
    joint_size,
)

MIP_SOURCE_LIMIT = 20
SUBSET_LIMIT = 12
SCORE_TOL = 1e-12


def _as_product(m) -> ProductMechanism:
    if isinstance(m, ProductMechanism):
        return m
    if isinstance(m, Mechanism):
        return ProductMechanism.single(m)
    raise TypeError(f"expected a mechanism, got {type(m).__name__}")


def _out_assignment(pm: ProductMechanism, x_out) -> dict:
    if isinstance(x_out, Mapping):
        x = {as_id(k): int(v) for k, v in x_out.items()}
    elif len(pm.targets) == 1 and np.ndim(x_out) == 0:
        x = {pm.targets[0]: int(x_out)}
    else:
        x = dict(zip(pm.targets, (int(v) for v in x_out)))
    missing = [str(t) for t in pm.targets if t not in x]
    if missing:
        raise ValidationError(f"x_out does not bind targets {missing[:5]}")
    for t in pm.targets:
        if not 0 <= x[t] < pm.sizes[t]:
            raise ValidationError(f"symbol {x[t]} outside the alphabet of {t}")
    return x


def output_marginal(m) -> Repertoire:
    """p(x_out) under uniformly random interventions on every source."""
    pm = _as_product(m)
    joint = pm.joint()
    probs = joint.table.mean(axis=0)
    return Repertoire(pm.targets, pm.target_sizes, probs)


def actual_repertoire(m, x_out) -> Repertoire:
    """Bayes-inverted distribution over joint source states given the output."""
    pm = _as_product(m)
    x = _out_assignment(pm, x_out)
    srcs, lik = pm.likelihood(x)
    total = lik.sum()
    if total <= 0:
        raise UnreachableOutputError()
    # sources read by no factor keep their uniform prior
    probs = lik / total
    rest = [s for s in pm.sources if s not in srcs]
    if rest:
        n_rest = joint_size([pm.sizes[s] for s in rest])
        probs = np.outer(probs, np.full(n_rest, 1.0 / n_rest)).ravel()
        order = list(srcs) + rest
        t = probs.reshape([pm.sizes[s] for s in order])
        t = t.transpose([order.index(s) for s in pm.sources])
        probs = t.ravel()
    return Repertoire(pm.sources, pm.source_sizes, probs)


def _component_ei(pm: ProductMechanism, x, comp) -> float:
    srcs, lik = pm.likelihood(x, comp)
    n = lik.size
    if all(pm.factors[i].mechanism.is_deterministic for i in comp):
        count = int(np.count_nonzero(lik))
        if count == 0:
            raise UnreachableOutputError()
        return math.log2(n) - math.log2(count)
    total = lik.sum()
    if total <= 0:
        raise UnreachableOutputError()
    p = lik[lik > 0] / total
    return max(0.0, math.log2(n) + float(np.dot(p, np.log2(p))))


def ei_terms(m, x_out) -> list[float]:
    """Per-component effective information; the total is their ``fsum``."""
    pm = _as_product(m)
    x = _out_assignment(pm, x_out)
    return [_component_ei(pm, x, comp) for comp in pm.components()]


def effective_information(m, x_out) -> float:
    """KL divergence (bits) of the actual repertoire from the uniform one."""
    return math.fsum(ei_terms(m, x_out))


def ei_deterministic(m, x_out) -> float:
    """Closed form log2(|X_in| / |preimage|) for deterministic mechanisms."""
    pm = _as_product(m)
    if not pm.is_deterministic:
        raise ValidationError("closed form needs a deterministic mechanism")
    joint = pm.joint()
    x = _out_assignment(pm, x_out)
    code = encode([x[t] for t in pm.targets], pm.target_sizes)
    count = int(np.count_nonzero(joint.outputs == code))
    if count == 0:
        raise UnreachableOutputError()
    return math.log2(joint.n_in) - math.log2(count)


# --------------------------------------------------------------------------
# partitions


def _normalize_partition(pm: ProductMechanism, partition) -> tuple:
    blocks = tuple(tuple(as_id(o) for o in b) for b in partition)
    flat = [o for b in blocks for o in b]
    if any(len(b) == 0 for b in blocks):
        raise ValidationError("partition blocks must be nonempty")
    if len(set(flat)) != len(flat) or set(flat) != set(pm.sources):
        raise ValidationError("partition must exactly cover the mechanism's sources")
    return blocks


class _Restrictions:
    """Memoized ei terms of restrictions, keyed by component and kept sources.

    ``shared`` optionally carries component ei values across instances,
    keyed by the (cached, hence identical) marginal mechanisms involved.
    """

    def __init__(self, pm: ProductMechanism, x, shared=None):
        self.pm, self.x = pm, x
        self.shared = {} if shared is None else shared
        self.comps = pm.components()
        self.comp_sources = [
            frozenset(i for f in comp for i in pm.factors[f].inputs) for comp in self.comps
        ]
        self.memo: dict = {}

    def whole(self) -> list[float]:
        out = []
        for c in range(len(self.comps)):
            out.extend(self.term(c, self.comp_sources[c]))
        return out

    def term(self, c, keep) -> list[float]:
        key = (c, keep)
        if key not in self.memo:
            factors = []
            for i in self.comps[c]:
                f = self.pm.factors[i]
                factors.append(Factor(f.outputs, f.output_sizes, f.mechanism.marginalize(keep)))
            # restriction never merges components, it can only split them
            sub = ProductMechanism(factors, self.pm.sizes)
            terms = []
            for sc in sub.components():
                skey = tuple((sub.factors[i].outputs, sub.factors[i].mechanism) for i in sc)
                skey += tuple(self.x[o] for i in sc for o in sub.factors[i].outputs)
                if skey not in self.shared:
                    self.shared[skey] = _component_ei(sub, self.x, sc)
                terms.append(self.shared[skey])
            self.memo[key] = terms
        return self.memo[key]

    def restricted(self, block) -> list[float]:
        block = frozenset(block)
        out = []
        for c in range(len(self.comps)):
            out.extend(self.term(c, self.comp_sources[c] & block))
        return out


def _xi(r: _Restrictions, blocks) -> float:
    terms = list(r.whole())
    for b in blocks:
        terms.extend(-t for t in r.restricted(b))
    return math.fsum(terms)


def excess_information_over(m, partition, x_out) -> float:
    """ei of the whole minus the summed ei of its restrictions to each block."""
    pm = _as_product(m)
    x = _out_assignment(pm, x_out)
    blocks = _normalize_partition(pm, partition)
    return _xi(_Restrictions(pm, x), blocks)


def normalizer(pm: ProductMechanism, blocks) -> float:
    return (len(blocks) - 1) * min(
        math.log2(joint_size([pm.sizes[o] for o in b])) for b in blocks
    )


@dataclass(frozen=True)
class MipResult:
    partition: tuple
    xi: float
    normalizer: float
    score: float
    ei: float

    def to_json(self) -> dict:
        return {
            "partition": [[str(o) for o in b] for b in self.partition],
            "xi": self.xi,
            "normalizer": self.normalizer,
            "normalized_score": self.score,
        }


def bipartitions(n: int):
    """Index sets of the block holding element 0, for every bipartition of range(n)."""
    for mask in range(0, 1 << (n - 1)):
        first = [0] + [i + 1 for i in range(n - 1) if (mask >> i) & 1]
        if len(first) < n:
            yield first


def mip(m, x_out, limit=MIP_SOURCE_LIMIT, groups=None, _shared=None) -> MipResult:
    """Bipartition of the sources minimizing xi / N_P.

    ``groups`` optionally coarsens the search: blocks are then unions of
    whole groups (each a list of sources; together an exact cover). Scores
    within 1e-12 count as ties, broken by the lexicographically smallest
    sorted pair of block index lists.
    """
    pm = _as_product(m)
    srcs = pm.sources
    if groups is None:
        groups = [[s] for s in srcs]
    else:
        groups = [list(_normalize_partition(pm, groups)[i]) for i in range(len(groups))]
        pos = {s: i for i, s in enumerate(srcs)}
        groups = sorted((sorted(g, key=pos.__getitem__) for g in groups), key=lambda g: pos[g[0]])
    n = len(groups)
    if n < 2:
        raise ValidationError("MIP needs at least two source occasions")
    if n > limit:
        raise TractabilityError(
            f"{n} sources give {2 ** (n - 1) - 1} bipartitions; pass an explicit partition instead"
        )
    x = _out_assignment(pm, x_out)
    r = _Restrictions(pm, x, _shared)
    whole = r.whole()
    ei_whole = math.fsum(whole)
    index = {s: i for i, s in enumerate(srcs)}
    best = None
    for first in bipartitions(n):
        fset = set(first)
        blocks = (
            [s for i in first for s in groups[i]],
            [s for i in range(n) if i not in fset for s in groups[i]],
        )
        terms = list(whole)
        for b in blocks:
            terms.extend(-t for t in r.restricted(b))
        xi = math.fsum(terms)
        norm = normalizer(pm, blocks)
        score = xi / norm
        key = tuple(sorted(tuple(sorted(index[s] for s in b)) for b in blocks))
        if best is None or score < best[0] - SCORE_TOL or (abs(score - best[0]) <= SCORE_TOL and key < best[1]):
            best = (score, key, xi, norm)
    score, key, xi, norm = best
    ordered = tuple(tuple(srcs[i] for i in k) for k in key)
    return MipResult(ordered, xi, norm, score, ei_whole)


def excess_information(m, x_out, limit=MIP_SOURCE_LIMIT) -> float:
    """xi over the minimum information partition."""
    return mip(m, x_out, limit).xi


def max_excess_information(groups: Sequence, build, x_out, limit=SUBSET_LIMIT):
    """Largest xi over nonempty subsets of ``groups``.

    ``build(subset)`` returns the mechanism for one subset (or ``None`` to
    skip it). Subsets with fewer than two sources have no partition and are
    skipped. Returns ``(xi, subset)``, or ``(None, None)`` when nothing
    qualifies.
    """
    n = len(groups)
    if n > limit:
        raise TractabilityError(f"{2 ** n - 1} unit subsets exceed the cap of {2 ** limit - 1}")
    best = (None, None)
    shared: dict = {}
    for size in range(1, n + 1):
        for combo in itertools.combinations(range(n), size):
            subset = [groups[i] for i in combo]
            m = build(subset)
            if m is None:
                continue
            pm = _as_product(m)
            if len(pm.sources) < 2:
                continue
            try:
                xi = mip(pm, x_out, _shared=shared).xi
            except ValueError:
                continue
            if best[0] is None or xi > best[0] + SCORE_TOL:
                best = (xi, subset)
    return best
