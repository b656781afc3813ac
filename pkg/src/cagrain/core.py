"""Occasion graphs, mechanisms and exact interventional inference.

An automaton is a finite directed graph of *occasions* (spacetime points).
Each occasion has a finite alphabet and a mechanism: a Markov matrix from
the joint alphabet of its inputs to its own alphabet. Joint alphabets use a
mixed-radix, row-major encoding in which the first listed occasion is the
most significant digit; every module relies on that convention.
"""

from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

TABLE_CAP = 1 << 26
ROW_TOL = 1e-12
ATOL = 1e-9


class CagrainError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(CagrainError, ValueError):
    """Malformed input: bad graph, graining, assignment or scenario."""


class CyclicGraphError(ValidationError):
    pass


class UnreachableOutputError(ValidationError):
    """The requested output has zero probability under every input."""

    def __init__(self, msg="output has zero marginal"):
        super().__init__(msg)


class TractabilityError(CagrainError):
    """Exact enumeration would exceed a documented size cap."""


def check_cap(n, cap=TABLE_CAP, what="table"):
    if n > cap:
        raise TractabilityError(f"{what} of {n} entries exceeds the cap of {cap}")


# --------------------------------------------------------------------------
# occasion ids

_NUMERIC_SITE = re.compile(r"^-?\d+(,-?\d+)*$")


class OccasionId(tuple):
    """A spacetime point ``site@time``.

    ``site`` is a tuple of ints (grid coordinates), an int (cell index) or a
    string label that does not look numeric. Ids are tuples underneath so
    hashing and comparison stay cheap on graphs with many thousand occasions.
    """

    __slots__ = ()

    def __new__(cls, site, time):
        if type(site) is tuple:
            return tuple.__new__(cls, (tuple(map(int, site)), int(time)))
        if isinstance(site, list):
            site = tuple(site)
        if isinstance(site, str) and ("@" in site or _NUMERIC_SITE.match(site)):
            raise ValueError(f"string site {site!r} is ambiguous")
        if isinstance(site, (np.integer,)):
            site = int(site)
        if isinstance(site, tuple):
            site = tuple(int(v) for v in site)
        return tuple.__new__(cls, (site, int(time)))

    def __getnewargs__(self):
        return tuple(self)

    @property
    def site(self):
        return self[0]

    @property
    def time(self) -> int:
        return self[1]

    def __str__(self):
        return format_occasion(self)

    def __repr__(self):
        return f"OccasionId({format_occasion(self)!r})"

    def sort_key(self):
        return (self.time, format_occasion(self))


def format_occasion(oid: OccasionId) -> str:
    site = oid.site
    if isinstance(site, tuple):
        text = ",".join(str(int(s)) for s in site)
    else:
        text = str(site)
    return f"{text}@{int(oid.time)}"


def parse_occasion(text: str) -> OccasionId:
    site, sep, time = str(text).rpartition("@")
    if not sep or not site:
        raise ValidationError(f"occasion id {text!r} is not of the form site@time")
    try:
        t = int(time)
    except ValueError:
        raise ValidationError(f"occasion id {text!r} has a non-integer time") from None
    if _NUMERIC_SITE.match(site):
        parts = tuple(int(p) for p in site.split(","))
        return OccasionId(parts if len(parts) > 1 else parts[0], t)
    return OccasionId(site, t)


def as_id(x) -> OccasionId:
    return x if isinstance(x, OccasionId) else parse_occasion(x)


# --------------------------------------------------------------------------
# mixed-radix joint alphabets


def joint_size(sizes: Sequence[int]) -> int:
    return math.prod(int(s) for s in sizes)


def radix_weights(sizes: Sequence[int]) -> np.ndarray:
    w = np.ones(len(sizes), dtype=np.int64)
    for i in range(len(sizes) - 2, -1, -1):
        w[i] = w[i + 1] * int(sizes[i + 1])
    return w


def encode(digits, sizes: Sequence[int]):
    """Joint index of per-occasion symbols; ``digits`` may be ``(..., k)``."""
    digits = np.asarray(digits, dtype=np.int64)
    if len(sizes) == 0:
        return np.zeros(digits.shape[:-1], dtype=np.int64) if digits.ndim > 1 else 0
    out = digits @ radix_weights(sizes)
    return int(out) if np.ndim(out) == 0 else out


def decode(index, sizes: Sequence[int]):
    """Inverse of :func:`encode`; returns ``(..., k)`` digits."""
    index = np.asarray(index, dtype=np.int64)
    w = radix_weights(sizes)
    sz = np.asarray(sizes, dtype=np.int64)
    return (index[..., None] // w) % sz


def all_digits(sizes: Sequence[int]) -> np.ndarray:
    """Every joint assignment in index order, one row each (read-only, cached)."""
    return _all_digits(tuple(int(s) for s in sizes))


@functools.lru_cache(maxsize=64)
def _all_digits(sizes: tuple) -> np.ndarray:
    n = joint_size(sizes)
    check_cap(n * max(len(sizes), 1), what="joint alphabet enumeration")
    out = decode(np.arange(n, dtype=np.int64), sizes)
    out.flags.writeable = False
    return out


# --------------------------------------------------------------------------
# mechanisms

FunctionFactory = Callable[[tuple, int, str], Callable[[np.ndarray], np.ndarray]]
_FUNCTIONS: dict[str, FunctionFactory] = {}


def register_function(name: str):
    """Register a deterministic-mechanism family for JSON round trips.

    The factory receives ``(input_sizes, n_out, arg)`` where ``arg`` is the
    text after the first ``:`` of the serialized name (or ``""``) and returns
    a vectorized map from an ``(n, k)`` digit array to ``n`` output symbols.
    """

    def deco(factory):
        _FUNCTIONS[name] = factory
        return factory

    return deco


def resolve_function(name: str, input_sizes, n_out):
    family, _, arg = name.partition(":")
    if family not in _FUNCTIONS:
        raise ValidationError(f"unknown mechanism function {name!r}")
    return _FUNCTIONS[family](tuple(input_sizes), n_out, arg)


@register_function("life")
def _life_fn(input_sizes, n_out, arg):
    me = int(arg)

    def fn(d):
        total = d.sum(axis=1) - d[:, me]
        return ((total == 3) | ((d[:, me] == 1) & (total == 2))).astype(np.int64)

    return fn


@register_function("and")
def _and_fn(input_sizes, n_out, arg):
    return lambda d: np.all(d == 1, axis=1).astype(np.int64)


@register_function("or")
def _or_fn(input_sizes, n_out, arg):
    return lambda d: np.any(d == 1, axis=1).astype(np.int64)


@register_function("xor")
def _xor_fn(input_sizes, n_out, arg):
    return lambda d: (d.sum(axis=1) % 2).astype(np.int64)


@register_function("copy")
def _copy_fn(input_sizes, n_out, arg):
    i = int(arg or 0)
    return lambda d: d[:, i].astype(np.int64)


@register_function("const")
def _const_fn(input_sizes, n_out, arg):
    v = int(arg or 0)
    return lambda d: np.full(d.shape[0], v, dtype=np.int64)


@register_function("threshold")
def _threshold_fn(input_sizes, n_out, arg):
    k = int(arg)
    return lambda d: (d.sum(axis=1) >= k).astype(np.int64)


class Mechanism:
    """Markov matrix ``p(out | do(inputs))``.

    Either *table-backed* (dense row-stochastic ``(n_in, n_out)`` array) or
    *deterministic* (an output symbol per joint input index, given as an
    array or produced lazily by a vectorized function of input digits).
    """

    __slots__ = ("inputs", "input_sizes", "n_out", "name", "_table", "_outputs", "_fn", "__dict__")

    def __init__(self, inputs, input_sizes, n_out, *, table=None, outputs=None, fn=None, name=None):
        self.inputs = tuple(i if type(i) is OccasionId else as_id(i) for i in inputs)
        self.input_sizes = tuple(int(s) for s in input_sizes)
        self.n_out = int(n_out)
        if len(self.inputs) != len(self.input_sizes):
            raise ValidationError("one alphabet size per mechanism input is required")
        if sum(x is not None for x in (table, outputs, fn)) != 1:
            raise ValueError("exactly one of table, outputs, fn must be given")
        self.name = name
        self._table = None if table is None else np.asarray(table, dtype=float)
        self._outputs = None if outputs is None else np.asarray(outputs, dtype=np.int64)
        self._fn = fn

    # constructors ---------------------------------------------------------
    @classmethod
    def from_table(cls, inputs, input_sizes, table):
        table = np.asarray(table, dtype=float)
        if table.ndim != 2:
            raise ValidationError("mechanism table must be 2-D")
        return cls(inputs, input_sizes, table.shape[1], table=table)

    @classmethod
    def from_function(cls, inputs, input_sizes, n_out, name):
        fn = resolve_function(name, input_sizes, n_out)
        return cls(inputs, input_sizes, n_out, fn=fn, name=name)

    @classmethod
    def deterministic(cls, inputs, input_sizes, n_out, outputs):
        return cls(inputs, input_sizes, n_out, outputs=outputs)

    @classmethod
    def constant(cls, n_out, value):
        return cls((), (), n_out, outputs=[int(value)])

    @classmethod
    def prior(cls, probs):
        probs = np.asarray(probs, dtype=float)
        return cls((), (), probs.size, table=probs[None, :])

    # basic properties -------------------------------------------------------
    @property
    def n_in(self) -> int:
        return joint_size(self.input_sizes)

    @property
    def is_deterministic(self) -> bool:
        return self._table is None

    @property
    def outputs(self) -> np.ndarray:
        """Output symbol per joint input index (deterministic mechanisms only)."""
        if self._table is not None:
            raise TypeError("table-backed mechanism has no output map")
        if self._outputs is None:
            check_cap(self.n_in, what="deterministic mechanism")
            digits = decode(np.arange(self.n_in, dtype=np.int64), self.input_sizes)
            self._outputs = np.asarray(self._fn(digits), dtype=np.int64)
        return self._outputs

    @property
    def table(self) -> np.ndarray:
        """Dense ``(n_in, n_out)`` matrix; the 0/1 table for deterministic ones."""
        if self._table is None:
            check_cap(self.n_in * self.n_out, what="mechanism table")
            t = np.zeros((self.n_in, self.n_out))
            t[np.arange(self.n_in), self.outputs] = 1.0
            return t
        return self._table

    def evaluate(self, digits: np.ndarray) -> np.ndarray:
        """Outputs for an ``(n, k)`` array of input digits (deterministic only)."""
        if self._outputs is None and self._fn is not None:
            return np.asarray(self._fn(np.asarray(digits, dtype=np.int64)), dtype=np.int64)
        return self.outputs[encode(digits, self.input_sizes)]

    def prob(self, out, index) -> np.ndarray:
        """``p(out | index)`` elementwise over broadcast arrays of symbols and joint inputs."""
        index = np.asarray(index, dtype=np.int64)
        out = np.asarray(out, dtype=np.int64)
        if self._table is None:
            return (self.outputs[index] == out).astype(float)
        return self._table[index, out]

    def rows(self, index) -> np.ndarray:
        index = np.asarray(index, dtype=np.int64)
        if self._table is None:
            r = np.zeros(index.shape + (self.n_out,))
            np.put_along_axis(r, self.outputs[index][..., None], 1.0, axis=-1)
            return r
        return self._table[index]

    # transformations --------------------------------------------------------
    def _tensor(self) -> np.ndarray:
        return self.table.reshape(self.input_sizes + (self.n_out,))

    def _from_tensor(self, inputs, sizes, tensor) -> Mechanism:
        table = tensor.reshape(joint_size(sizes), self.n_out)
        hits = table.max(axis=1)
        if np.all(hits == 1.0) and np.all((table == 0.0) | (table == 1.0)):
            return Mechanism(inputs, sizes, self.n_out, outputs=table.argmax(axis=1))
        return Mechanism(inputs, sizes, self.n_out, table=table)

    def marginalize(self, keep: Iterable[OccasionId]) -> Mechanism:
        """Average dropped inputs out under the uniform distribution.

        Kept inputs retain their original relative order. Returns ``self``
        when nothing is dropped. Results are cached on the mechanism they
        were first derived from, since uniform averaging composes.
        """
        keep = {k if type(k) is OccasionId else as_id(k) for k in keep}
        keep = frozenset(k for k in self.inputs if k in keep)
        if len(keep) == len(self.inputs):
            return self
        origin = self.__dict__.get("_origin", self)
        cache = origin.__dict__.setdefault("_marginals", {})
        if keep not in cache:
            axes = tuple(i for i, k in enumerate(origin.inputs) if k not in keep)
            kept = [i for i, k in enumerate(origin.inputs) if k in keep]
            tensor = origin._tensor().mean(axis=axes)
            m = origin._from_tensor(
                [origin.inputs[i] for i in kept], [origin.input_sizes[i] for i in kept], tensor
            )
            m.__dict__["_origin"] = origin
            cache[keep] = m
        return cache[keep]

    def bind(self, values: Mapping[OccasionId, int]) -> Mechanism:
        """Fix some inputs to given symbols (the remaining inputs keep their order)."""
        pos = {i: int(values[k]) for i, k in enumerate(self.inputs) if k in values}
        if not pos:
            return self
        kept = [i for i in range(len(self.inputs)) if i not in pos]
        inputs = [self.inputs[i] for i in kept]
        sizes = [self.input_sizes[i] for i in kept]
        if self._table is None:
            n = joint_size(sizes)
            digits = np.zeros((n, len(self.inputs)), dtype=np.int64)
            if kept:
                digits[:, kept] = decode(np.arange(n, dtype=np.int64), sizes)
            for i, v in pos.items():
                digits[:, i] = v
            return Mechanism(inputs, sizes, self.n_out, outputs=self.evaluate(digits))
        index = tuple(pos[i] if i in pos else slice(None) for i in range(len(self.inputs)))
        return Mechanism(
            inputs, sizes, self.n_out,
            table=self._tensor()[index].reshape(joint_size(sizes), self.n_out),
        )

    def relabel(self, mapping: Mapping[OccasionId, OccasionId]) -> Mechanism:
        m = Mechanism.__new__(Mechanism)
        m.inputs = tuple(mapping.get(i, i) for i in self.inputs)
        m.input_sizes, m.n_out, m.name = self.input_sizes, self.n_out, self.name
        m._table, m._outputs, m._fn = self._table, self._outputs, self._fn
        return m

    def row_sum_violations(self, tol=ROW_TOL) -> list[int]:
        if self._table is None:
            bad = (self.outputs < 0) | (self.outputs >= self.n_out)
            return [int(i) for i in np.flatnonzero(bad)]
        t = self._table
        bad = (np.abs(t.sum(axis=1) - 1.0) > tol) | np.any((t < 0) | (t > 1), axis=1)
        return [int(i) for i in np.flatnonzero(bad)]

    def __repr__(self):
        kind = "table" if self._table is not None else "fn"
        return f"Mechanism({kind}, inputs={[str(i) for i in self.inputs]}, n_out={self.n_out})"


# --------------------------------------------------------------------------
# product mechanisms


@dataclass(frozen=True)
class Factor:
    """A mechanism whose output is the joint symbol of ``outputs``."""

    outputs: tuple
    output_sizes: tuple
    mechanism: Mechanism

    @property
    def inputs(self):
        return self.mechanism.inputs


class ProductMechanism:
    """Product of conditionally independent factors over disjoint outputs.

    Sources are the union of factor inputs (first-appearance order unless
    given), targets the union of factor outputs. This is the mechanism of a
    submechanism: each factor was already marginalized over extrinsic inputs.
    """

    def __init__(self, factors: Sequence[Factor], sizes: Mapping[OccasionId, int], sources=None):
        self.factors = tuple(factors)
        self.sizes = dict(sizes)
        seen = []
        for f in self.factors:
            for i in f.inputs:
                if i not in seen:
                    seen.append(i)
        self.sources = tuple(sources) if sources is not None else tuple(seen)
        missing = set(seen) - set(self.sources)
        if missing:
            raise ValidationError(f"factor inputs {sorted(map(str, missing))} are not sources")
        self.targets = tuple(o for f in self.factors for o in f.outputs)
        if len(set(self.targets)) != len(self.targets):
            raise ValidationError("factor outputs overlap")

    @classmethod
    def single(cls, mechanism: Mechanism, output: OccasionId | str = "out@0"):
        output = as_id(output)
        sizes = dict(zip(mechanism.inputs, mechanism.input_sizes))
        sizes[output] = mechanism.n_out
        return cls([Factor((output,), (mechanism.n_out,), mechanism)], sizes)

    @property
    def source_sizes(self):
        return tuple(self.sizes[s] for s in self.sources)

    @property
    def target_sizes(self):
        return tuple(self.sizes[t] for t in self.targets)

    @property
    def is_deterministic(self):
        return all(f.mechanism.is_deterministic for f in self.factors)

    def restrict(self, keep: Iterable[OccasionId]) -> ProductMechanism:
        """Keep only edges from sources in ``keep``; others become uniform noise."""
        keep = set(keep)
        factors = [
            Factor(f.outputs, f.output_sizes, f.mechanism.marginalize(keep)) for f in self.factors
        ]
        return ProductMechanism(factors, self.sizes, [s for s in self.sources if s in keep])

    def components(self):
        """Groups of factor indices connected through shared sources.

        Factors without sources form singleton groups.
        """
        parent = list(range(len(self.factors)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        owner = {}
        for i, f in enumerate(self.factors):
            for s in f.inputs:
                if s in owner:
                    a, b = find(owner[s]), find(i)
                    if a != b:
                        parent[max(a, b)] = min(a, b)
                else:
                    owner[s] = i
        groups: dict[int, list[int]] = {}
        for i in range(len(self.factors)):
            groups.setdefault(find(i), []).append(i)
        return list(groups.values())

    def likelihood(self, x_out: Mapping[OccasionId, int], factor_ids=None):
        """``p(x_out | do(x_in))`` over the joint of the involved sources.

        Returns ``(sources, vector)`` where ``vector`` is indexed by the
        mixed-radix joint of ``sources`` (in this mechanism's source order).
        """
        factor_ids = range(len(self.factors)) if factor_ids is None else factor_ids
        fs = [self.factors[i] for i in factor_ids]
        involved = {i for f in fs for i in f.inputs}
        srcs = [s for s in self.sources if s in involved]
        sizes = [self.sizes[s] for s in srcs]
        n = joint_size(sizes)
        check_cap(n, what="input repertoire")
        digits = decode(np.arange(n, dtype=np.int64), sizes) if srcs else np.zeros((1, 0), np.int64)
        col = {s: j for j, s in enumerate(srcs)}
        lik = np.ones(n)
        for f in fs:
            out = encode([int(x_out[o]) for o in f.outputs], f.output_sizes)
            m = f.mechanism
            idx = encode(digits[:, [col[i] for i in m.inputs]], m.input_sizes) if m.inputs else np.zeros(n, np.int64)
            lik *= m.prob(out, idx)
        return tuple(srcs), lik

    def joint(self) -> Mechanism:
        """Dense mechanism from the joint sources to the joint targets."""
        ssz, tsz = self.source_sizes, self.target_sizes
        n_in, n_out = joint_size(ssz), joint_size(tsz)
        check_cap(n_in * n_out, what="product mechanism")
        digits = decode(np.arange(n_in, dtype=np.int64), ssz) if self.sources else np.zeros((1, 0), np.int64)
        col = {s: j for j, s in enumerate(self.sources)}
        if self.is_deterministic:
            outs = []
            for f in self.factors:
                m = f.mechanism
                outs.append(m.evaluate(digits[:, [col[i] for i in m.inputs]]))
            # each factor's output is already a joint index over its own outputs
            code = np.zeros(n_in, dtype=np.int64)
            for f, o in zip(self.factors, outs):
                code = code * joint_size(f.output_sizes) + o
            return Mechanism(self.sources, ssz, n_out, outputs=code)
        table = np.ones((n_in, 1))
        for f in self.factors:
            m = f.mechanism
            idx = encode(digits[:, [col[i] for i in m.inputs]], m.input_sizes) if m.inputs else np.zeros(n_in, np.int64)
            rows = m.rows(idx)
            table = (table[:, :, None] * rows[:, None, :]).reshape(n_in, -1)
        return Mechanism(self.sources, ssz, n_out, table=table)


# --------------------------------------------------------------------------
# occasion graphs


@dataclass(frozen=True)
class Occasion:
    id: OccasionId
    size: int
    mechanism: Mechanism

    @property
    def inputs(self):
        return self.mechanism.inputs


class OccasionGraph:
    """Immutable automaton: occasions in declaration order, edges from mechanism inputs."""

    def __init__(self, occasions: Iterable[Occasion]):
        self._nodes: dict[OccasionId, Occasion] = {}
        self.duplicates: list[OccasionId] = []
        for occ in occasions:
            if occ.id in self._nodes:
                self.duplicates.append(occ.id)
            self._nodes[occ.id] = occ

    def __contains__(self, oid):
        return oid in self._nodes

    def __getitem__(self, oid) -> Occasion:
        return self._nodes[oid]

    def __iter__(self):
        return iter(self._nodes.values())

    def __len__(self):
        return len(self._nodes)

    @cached_property
    def ids(self) -> tuple:
        return tuple(self._nodes)

    @cached_property
    def index(self) -> dict:
        return {oid: i for i, oid in enumerate(self._nodes)}

    def size(self, oid) -> int:
        return self._nodes[oid].size

    @property
    def edges(self) -> list[tuple[OccasionId, OccasionId]]:
        return [(s, o.id) for o in self for s in o.inputs]

    @cached_property
    def children(self) -> dict:
        ch: dict[OccasionId, list] = {oid: [] for oid in self._nodes}
        for o in self:
            for s in o.inputs:
                if s in ch:
                    ch[s].append(o.id)
        return ch

    def topological_order(self, subset=None) -> list[OccasionId]:
        """Topological order of ``subset`` (edges outside it are ignored)."""
        subset = set(self._nodes) if subset is None else set(subset)
        indeg = {v: 0 for v in subset}
        for v in subset:
            for s in self._nodes[v].inputs:
                if s in subset:
                    indeg[v] += 1
        ready = [v for v in self.ids if v in subset and indeg[v] == 0]
        order = []
        while ready:
            v = ready.pop()
            order.append(v)
            for c in self.children.get(v, ()):
                if c in indeg:
                    indeg[c] -= 1
                    if indeg[c] == 0:
                        ready.append(c)
        if len(order) != len(subset):
            raise CyclicGraphError("cyclic micro-graph")
        return order

    def subsystem(self, vertices=None, edges=None) -> Subsystem:
        return Subsystem.of(self, vertices, edges)

    def replace(self, occasions: Iterable[Occasion]) -> OccasionGraph:
        return OccasionGraph(occasions)


def validate_graph(g: OccasionGraph) -> list[str]:
    """Violations of the automaton invariants; empty iff well formed."""
    problems = []
    for d in dict.fromkeys(g.duplicates):
        problems.append(f"duplicate occasion id {d}")
    for occ in g:
        m = occ.mechanism
        if occ.size < 1:
            problems.append(f"{occ.id}: alphabet size must be positive")
        if m.n_out != occ.size:
            problems.append(f"{occ.id}: mechanism output size {m.n_out} != alphabet {occ.size}")
        for s, sz in zip(m.inputs, m.input_sizes):
            if s not in g:
                problems.append(f"{occ.id}: edge/mechanism mismatch: input {s} is not an occasion")
            elif g.size(s) != sz:
                problems.append(f"{occ.id}: edge/mechanism mismatch: input {s} has alphabet {g.size(s)}, mechanism expects {sz}")
        if m._table is not None and m._table.shape[0] != m.n_in:
            problems.append(f"{occ.id}: edge/mechanism mismatch: table has {m._table.shape[0]} rows, inputs need {m.n_in}")
            continue
        try:
            bad = m.row_sum_violations()
        except TractabilityError:
            bad = []
        if bad:
            problems.append(f"{occ.id}: non-stochastic row(s) {bad[:5]}")
    return problems


@dataclass(frozen=True)
class Subsystem:
    """A subset of a parent's occasions with a subset of the edges between them.

    Inputs of kept occasions whose edges are dropped are *extrinsic*.
    """

    parent: OccasionGraph
    vertices: tuple
    kept_edges: frozenset

    @classmethod
    def of(cls, parent, vertices=None, edges=None):
        if vertices is None:
            vset = set(parent.ids)
        else:
            vset = {as_id(v) for v in vertices}
        unknown = [v for v in vset if v not in parent]
        if unknown:
            raise ValidationError(f"unknown occasions {sorted(map(str, unknown))[:5]}")
        verts = tuple(v for v in parent.ids if v in vset)
        if edges is None:
            kept = frozenset((s, v) for v in verts for s in parent[v].inputs if s in vset)
        else:
            kept = frozenset((as_id(s), as_id(t)) for s, t in edges)
            all_edges = set(parent.edges)
            for s, t in kept:
                if (s, t) not in all_edges or s not in vset or t not in vset:
                    raise ValidationError(f"edge {s}->{t} is not a parent edge between kept occasions")
        return cls(parent, verts, kept)

    def extrinsic_inputs(self, v) -> tuple:
        return tuple(s for s in self.parent[v].inputs if (s, v) not in self.kept_edges)


def marginalize_extrinsic(s: Subsystem) -> OccasionGraph:
    """Self-contained automaton: extrinsic inputs averaged out uniformly, per occasion."""
    occs = []
    for v in s.vertices:
        occ = s.parent[v]
        keep = [i for i in occ.inputs if (i, v) in s.kept_edges]
        occs.append(Occasion(v, occ.size, occ.mechanism.marginalize(keep)))
    return OccasionGraph(occs)


def _self_contained(g) -> OccasionGraph:
    return marginalize_extrinsic(g) if isinstance(g, Subsystem) else g


def product_mechanism(g, targets: Sequence) -> ProductMechanism:
    """Product of the targets' (extrinsically marginalized) mechanisms."""
    g = _self_contained(g)
    targets = [as_id(t) for t in targets]
    sizes = {}
    factors = []
    for t in targets:
        if t not in g:
            raise ValidationError(f"target {t} is not in the subsystem")
        occ = g[t]
        for i in occ.inputs:
            if i not in g:
                raise ValidationError(f"{t} reads {i} from outside the subsystem; marginalize first")
            sizes[i] = g.size(i)
        sizes[t] = occ.size
        factors.append(Factor((t,), (occ.size,), occ.mechanism))
    return ProductMechanism(factors, sizes)


# --------------------------------------------------------------------------
# exact forward inference


def _ancestral(g: OccasionGraph, query, clamped) -> list:
    """Occasions whose mechanisms must run: the query plus unclamped ancestors."""
    need, stack = set(), list(query)
    while stack:
        v = stack.pop()
        if v in need:
            continue
        need.add(v)
        for s in g[v].inputs:
            if s not in clamped and s not in need:
                stack.append(s)
    return need


def propagate(g: OccasionGraph, clamped: Mapping[OccasionId, np.ndarray], query: Sequence, batch: int):
    """Exact distribution of the query outputs for a batch of interventions.

    ``clamped`` maps occasions to ``(batch,)`` symbol arrays; every reader of
    a clamped occasion sees that value (do-semantics). Query occasions always
    run their own mechanism, so a clamped occasion may also be queried (its
    intervened *input* copy feeds others, its *output* copy is computed).
    Returns ``(batch,)`` joint output codes when every mechanism involved is
    deterministic, otherwise a ``(batch, joint query size)`` array.
    """
    query = [as_id(q) for q in query]
    need = _ancestral(g, query, clamped)
    order = g.topological_order(need)
    qsizes = [g.size(q) for q in query]
    if all(g[v].mechanism.is_deterministic for v in need):
        values = {}
        for v in order:
            m = g[v].mechanism
            if m.inputs:
                digits = np.stack([clamped[s] if s in clamped else values[s] for s in m.inputs], axis=1)
            else:
                digits = np.zeros((batch, 0), dtype=np.int64)
            out = m.evaluate(digits)
            values[v] = np.broadcast_to(out, (batch,)) if out.shape != (batch,) else out
        return encode(np.stack([values[q] for q in query], axis=1), qsizes) if query else np.zeros(batch, np.int64)
    return _eliminate(g, clamped, query, order, need, batch)


def _eliminate(g, clamped, query, order, need, batch):
    pending = {v: sum(1 for c in g.children[v] if c in need and v not in clamped) for v in need}
    qset = set(query)
    frontier: list = []
    state = np.ones((batch,))
    for v in order:
        m = g[v].mechanism
        # joint input index broadcast over (batch, *frontier)
        idx = np.zeros((batch,) + (1,) * len(frontier), dtype=np.int64)
        for s, w in zip(m.inputs, radix_weights(m.input_sizes)):
            if s in clamped:
                d = np.asarray(clamped[s], dtype=np.int64).reshape((batch,) + (1,) * len(frontier))
            else:
                ax = frontier.index(s)
                shape = [1] * (len(frontier) + 1)
                shape[ax + 1] = g.size(s)
                d = np.arange(g.size(s), dtype=np.int64).reshape(shape)
            idx = idx + d * w
        cond = m.rows(idx)
        check_cap(state.size * m.n_out, what="channel marginalization state")
        state = state[..., None] * cond
        frontier.append(v)
        for s in m.inputs:
            if s in pending and s not in clamped:
                pending[s] -= 1
        for u in list(frontier):
            if u not in qset and pending.get(u, 0) <= 0:
                ax = frontier.index(u)
                state = state.sum(axis=ax + 1)
                frontier.pop(ax)
    perm = [0] + [frontier.index(q) + 1 for q in query]
    state = state.transpose(perm)
    return state.reshape(batch, -1)


@dataclass(frozen=True)
class Repertoire:
    """Probability distribution over the joint alphabet of ``occasions``."""

    occasions: tuple
    sizes: tuple
    probs: np.ndarray

    def __getitem__(self, symbols):
        if isinstance(symbols, Mapping):
            symbols = [symbols[o] for o in self.occasions]
        return float(self.probs[encode(list(symbols), self.sizes)])


def check_assignment(g: OccasionGraph, a: Mapping) -> dict:
    out = {}
    for k, v in a.items():
        oid = as_id(k)
        if oid not in g:
            raise ValidationError(f"assignment binds unknown occasion {oid}")
        if not 0 <= int(v) < g.size(oid):
            raise ValidationError(f"symbol {v} outside the alphabet of {oid}")
        out[oid] = int(v)
    return out


def forward_distribution(g, intervention: Mapping, query: Sequence) -> Repertoire:
    """Exact ``p(query | do(intervention))``, summing all other ancestors."""
    g = _self_contained(g)
    intervention = check_assignment(g, intervention)
    query = [as_id(q) for q in query]
    sizes = tuple(g.size(q) for q in query)
    check_cap(joint_size(sizes), what="query distribution")
    free = [q for q in query if q not in intervention]
    clamped = {k: np.array([v]) for k, v in intervention.items()}
    res = propagate(g, clamped, free, 1)
    fsizes = [g.size(q) for q in free]
    if res.ndim == 1:
        sub = np.zeros(joint_size(fsizes))
        sub[int(res[0])] = 1.0
    else:
        sub = res[0]
    probs = np.zeros(joint_size(sizes))
    free_digits = decode(np.arange(sub.size, dtype=np.int64), fsizes)
    digits = np.zeros((sub.size, len(query)), dtype=np.int64)
    for j, q in enumerate(query):
        digits[:, j] = intervention[q] if q in intervention else free_digits[:, free.index(q)]
    np.add.at(probs, encode(digits, sizes), sub)
    return Repertoire(tuple(query), sizes, probs)


# --------------------------------------------------------------------------
# JSON documents


def mechanism_to_json(m: Mechanism) -> dict:
    if m.name is not None:
        return {"kind": f"fn:{m.name}"}
    return {"kind": "table", "rows": m.table.tolist()}


def graph_to_json(g: OccasionGraph) -> dict:
    return {
        "occasions": [
            {
                "id": str(o.id),
                "alphabet": o.size,
                "inputs": [str(i) for i in o.inputs],
                "mechanism": mechanism_to_json(o.mechanism),
            }
            for o in g
        ]
    }


def graph_from_json(doc: Mapping) -> OccasionGraph:
    """Parse an occasion-graph document; input alphabets are looked up by id."""
    try:
        entries = doc["occasions"]
    except (KeyError, TypeError):
        raise ValidationError("graph document needs an 'occasions' list") from None
    sizes = {}
    for n, e in enumerate(entries):
        try:
            sizes[parse_occasion(e["id"])] = int(e["alphabet"])
        except KeyError as exc:
            raise ValidationError(f"occasions[{n}] is missing field {exc.args[0]!r}") from None
    occs = []
    for n, e in enumerate(entries):
        oid = parse_occasion(e["id"])
        inputs = [parse_occasion(i) for i in e.get("inputs", [])]
        missing = [str(i) for i in inputs if i not in sizes]
        if missing:
            raise ValidationError(f"occasions[{n}] ({oid}): unknown inputs {missing}")
        in_sizes = [sizes[i] for i in inputs]
        spec = e.get("mechanism") or {}
        kind = spec.get("kind", "")
        if kind == "table":
            rows = np.asarray(spec.get("rows"), dtype=float)
            if rows.ndim != 2 or rows.shape != (joint_size(in_sizes), sizes[oid]):
                raise ValidationError(
                    f"occasions[{n}] ({oid}): table must be {joint_size(in_sizes)}x{sizes[oid]}"
                )
            mech = Mechanism(inputs, in_sizes, sizes[oid], table=rows)
        elif kind.startswith("fn:"):
            mech = Mechanism.from_function(inputs, in_sizes, sizes[oid], kind[3:])
        else:
            raise ValidationError(f"occasions[{n}] ({oid}): mechanism kind must be 'table' or 'fn:<name>'")
        occs.append(Occasion(oid, sizes[oid], mech))
    return OccasionGraph(occs)
