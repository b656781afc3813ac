"""Scenario files (``"schema": "1"``): model, initial state, graining, mechanism, x_out.

Every problem is reported as a ``ScenarioError`` naming the offending field
(``scenario.model.width``) so the CLI can exit 2 with a useful message.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Mapping

import numpy as np

from ..coarsegrain import GrainingSpec, UnitMechanism, effective_graph, unit_mechanism
from ..core import (
    OccasionGraph,
    Subsystem,
    ValidationError,
    graph_from_json,
    marginalize_extrinsic,
    parse_occasion,
    product_mechanism,
)
from ..emergence import GrainingFamily
from ..lifegrain import gol_builder
from ..models import (
    CoupledHopfieldSpec,
    GolSpec,
    HopfieldSpec,
    gol_id,
    life_run,
    named_pattern,
    parse_bits,
    unroll_gol,
    unroll_hopfield,
)

SCHEMA = "1"


class ScenarioError(ValidationError):
    pass


def _need(doc: Mapping, key: str, path: str):
    if key not in doc:
        raise ScenarioError(f"{path}.{key}: required field is missing")
    return doc[key]


def _int(doc, key, path, default=None):
    v = doc.get(key, default)
    if v is None:
        raise ScenarioError(f"{path}.{key}: required field is missing")
    if isinstance(v, bool) or not isinstance(v, int):
        raise ScenarioError(f"{path}.{key}: expected an integer, got {v!r}")
    return v


def _wrap(path, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ScenarioError:
        raise
    except (ValidationError, TypeError, ValueError) as exc:
        raise ScenarioError(f"{path}: {exc}") from None


def _hopfield(doc, path, variant=None) -> HopfieldSpec:
    if not isinstance(doc, Mapping):
        raise ScenarioError(f"{path}: expected an object")
    kw = {k: doc[k] for k in ("temperature", "t_start", "t_end", "zero_diagonal", "weight_scale", "name") if k in doc}
    kw["variant"] = variant or doc.get("variant", "glauber")
    return _wrap(path, HopfieldSpec, _int(doc, "n_cells", path), tuple(_need(doc, "patterns", path)), **kw)


def parse_model(doc, variant=None):
    path = "scenario.model"
    if not isinstance(doc, Mapping):
        raise ScenarioError(f"{path}: expected an object")
    kind = _need(doc, "type", path)
    if kind == "gol":
        return _wrap(
            path,
            GolSpec,
            _int(doc, "width", path),
            _int(doc, "height", path),
            _int(doc, "t_start", path, 0),
            _int(doc, "t_end", path, 1),
            doc.get("boundary", "fixed-blank"),
        )
    if kind == "hopfield":
        return _hopfield(doc, path, variant)
    if kind == "coupled-hopfield":
        a = _hopfield(_need(doc, "network_a", path), f"{path}.network_a", variant)
        b = _hopfield(_need(doc, "network_b", path), f"{path}.network_b", variant)
        return _wrap(path, CoupledHopfieldSpec, a, b, doc.get("coupling_scale", 1.0))
    if kind == "graph":
        return _wrap(f"{path}.graph", graph_from_json, _need(doc, "graph", path))
    raise ScenarioError(f"{path}.type: unknown model type {kind!r} (gol, hopfield, coupled-hopfield, graph)")


def parse_gol_initial(spec: GolSpec, doc, path="scenario.initial"):
    """A 0/1 grid, or ``{"patterns": [{"name", "x", "y"}, ...]}``, or null for noise."""
    if doc is None:
        return None
    grid = np.zeros((spec.height, spec.width), dtype=np.uint8)
    if isinstance(doc, Mapping):
        for i, p in enumerate(_need(doc, "patterns", path)):
            pp = f"{path}.patterns[{i}]"
            pat = _wrap(pp, named_pattern, _need(p, "name", pp))
            x, y = _int(p, "x", pp), _int(p, "y", pp)
            h, w = pat.shape
            if x < 0 or y < 0 or x + w > spec.width or y + h > spec.height:
                raise ScenarioError(f"{pp}: pattern does not fit on the grid")
            grid[y:y + h, x:x + w] |= pat
        return grid
    arr = np.asarray(doc)
    if arr.shape != (spec.height, spec.width) or not np.isin(arr, (0, 1)).all():
        raise ScenarioError(f"{path}: expected a {spec.height}x{spec.width} grid of 0/1")
    return arr.astype(np.uint8)


def _occ(text, path):
    if not isinstance(text, str):
        raise ScenarioError(f"{path}: occasion ids are strings like '3,4@0' or 'A2@1'")
    return _wrap(path, parse_occasion, text)


def _occ_list(doc, path):
    if not isinstance(doc, list):
        raise ScenarioError(f"{path}: expected a list of occasion ids")
    return [_occ(t, f"{path}[{i}]") for i, t in enumerate(doc)]


def _graining(doc, path, vertices=None) -> GrainingSpec:
    """GrainingSpec JSON, plus two shorthands for grids.

    ``"ground_tic": t`` (with ``"ground_value"``, default 0) grounds every
    occasion of tic ``t`` that is not in a unit; ``"channel": "rest"`` puts
    every remaining occasion in the channel.
    """
    if not isinstance(doc, Mapping):
        raise ScenarioError(f"{path}: expected an object")
    doc = dict(doc)
    if vertices is not None and ("ground_tic" in doc or doc.get("channel") == "rest"):
        units = _wrap(f"{path}.units", lambda: {parse_occasion(o) for u in doc.get("units", []) for o in u})
        if "ground_tic" in doc:
            t = _int(doc, "ground_tic", path)
            v = _int(doc, "ground_value", path, 0)
            ground = [o for o in vertices if o.time == t and o not in units]
            doc["ground"] = [str(o) for o in ground]
            doc["ground_output"] = {str(o): v for o in ground}
        if doc.get("channel") == "rest":
            taken = units | {parse_occasion(g) for g in doc.get("ground", [])}
            doc["channel"] = [str(o) for o in vertices if o not in taken]
    elif "ground_tic" in doc or doc.get("channel") == "rest":
        raise ScenarioError(f"{path}: shorthands need the model's occasions")
    return _wrap(path, GrainingSpec.from_json, doc)


@dataclass
class Scenario:
    doc: Mapping
    model: Any
    initial: Any = None
    variant: str | None = None
    _x_out: Mapping | None = field(default=None, repr=False)

    # ------------------------------------------------------------ structure
    @cached_property
    def graph(self) -> OccasionGraph:
        if isinstance(self.model, OccasionGraph):
            return self.model
        if isinstance(self.model, GolSpec):
            return unroll_gol(self.model, self.initial)
        return _wrap("scenario.initial", unroll_hopfield, self.model, self.initial)

    @cached_property
    def system(self):
        verts = self.doc.get("subsystem")
        if verts is None:
            return self.graph
        vs = _occ_list(verts, "scenario.subsystem")
        missing = [str(v) for v in vs if v not in self.graph]
        if missing:
            raise ScenarioError(f"scenario.subsystem: occasions not in the model: {missing[:5]}")
        return Subsystem.of(self.graph, vs)

    @property
    def vertices(self):
        s = self.system
        return list(s.vertices) if isinstance(s, Subsystem) else list(s.ids)

    def builder(self):
        if isinstance(self.model, GolSpec) and "subsystem" not in self.doc:
            return gol_builder(self.model, self.initial)
        return None

    # ------------------------------------------------------------ graining
    @cached_property
    def graining(self) -> GrainingSpec | None:
        doc = self.doc.get("graining")
        if doc is None or "units" not in doc:
            return None
        g = _graining(doc, "scenario.graining", self.vertices)
        problems = g.problems(self.vertices, {o: self.graph.size(o) for o in self.vertices})
        if problems:
            raise ScenarioError("scenario.graining: " + "; ".join(problems))
        return g

    def unit_mechanism(self) -> UnitMechanism:
        if self.graining is None:
            raise ScenarioError("scenario.graining: this command needs a graining with units")
        b = self.builder()
        return b(self.graining) if b else unit_mechanism(self.system, self.graining)

    def family(self):
        """``(GrainingFamily, x_out)`` from ``graining.family`` or ``graining.candidates``."""
        from . import experiments

        doc = self.doc.get("graining")
        path = "scenario.graining"
        if not isinstance(doc, Mapping):
            raise ScenarioError(f"{path}: emergence needs a family or a candidate list")
        if doc.get("family") == "chunking":
            return experiments.chunking_family()
        if doc.get("family") == "translations":
            if not isinstance(self.model, GolSpec):
                raise ScenarioError(f"{path}.family: translations need a Game-of-Life model")
            base = self._checked(_need(doc, "base", path), f"{path}.base")
            names, specs = experiments.translation_family(base, self.vertices)
            fam = GrainingFamily(self.system, specs, names, builder=self.builder())
            return fam, self.x_out
        if "family" in doc:
            raise ScenarioError(f"{path}.family: unknown family {doc['family']!r} (chunking, translations)")
        cands = _need(doc, "candidates", path)
        if not isinstance(cands, list) or not cands:
            raise ScenarioError(f"{path}.candidates: expected a nonempty list")
        names, specs = [], []
        for i, c in enumerate(cands):
            cp = f"{path}.candidates[{i}]"
            names.append(str(c.get("name", f"K{i}")))
            specs.append(self._checked(c.get("graining", c), cp))
        subs = {
            str(n): self._checked(g, f"{path}.subgrains.{n}") for n, g in (doc.get("subgrains") or {}).items()
        }
        fam = GrainingFamily(self.system, specs, names, subgrains=subs, builder=self.builder())
        return fam, self.x_out

    def _checked(self, doc, path):
        g = _graining(doc, path, self.vertices)
        problems = g.problems(self.vertices)
        if problems:
            raise ScenarioError(f"{path}: " + "; ".join(problems))
        return g

    # ------------------------------------------------------------ measures
    def mechanism(self):
        """Mechanism named by ``scenario.mechanism`` (defaults: every target, every source)."""
        doc = self.doc.get("mechanism") or {}
        path = "scenario.mechanism"
        targets = _occ_list(doc["targets"], f"{path}.targets") if "targets" in doc else None
        sources = _occ_list(doc["sources"], f"{path}.sources") if "sources" in doc else None
        if self.graining is not None:
            k = self.unit_mechanism()
            if targets is None:
                edges = effective_graph(k)
                recv = sorted({b for _, b in edges})
                targets = [o for l in recv for o in k.units[l]]
            units = set(k.unit_of)
            bad = [str(t) for t in targets + (sources or []) if t not in units]
            if bad:
                raise ScenarioError(f"{path}: not unit occasions of the graining: {bad[:5]}")
            if not targets:
                raise ScenarioError(f"{path}.targets: the graining has no unit with effective inputs")
            return k.submechanism(targets, sources)
        g = marginalize_extrinsic(self.system) if isinstance(self.system, Subsystem) else self.system
        if targets is None:
            targets = [o.id for o in g if o.inputs]
        if not targets:
            raise ScenarioError(f"{path}.targets: nothing reads an input")
        pm = _wrap(path, product_mechanism, g, targets)
        return pm.restrict(set(sources)) if sources is not None else pm

    @property
    def partition(self):
        doc = self.doc.get("partition")
        if doc is None:
            return None
        if not isinstance(doc, list):
            raise ScenarioError("scenario.partition: expected a list of blocks")
        return [_occ_list(b, f"scenario.partition[{i}]") for i, b in enumerate(doc)]

    @property
    def x_out(self) -> dict:
        if self._x_out is not None:
            return self._x_out
        doc = self.doc.get("x_out")
        if doc is not None:
            if not isinstance(doc, Mapping):
                raise ScenarioError("scenario.x_out: expected an object mapping occasion ids to symbols")
            out = {}
            for k, v in doc.items():
                o = _occ(k, f"scenario.x_out.{k}")
                if isinstance(v, bool) or not isinstance(v, int):
                    raise ScenarioError(f"scenario.x_out.{k}: expected an integer symbol")
                out[o] = v
            self._x_out = out
        elif isinstance(self.model, GolSpec) and "trajectory" in self.doc:
            path = "scenario.trajectory"
            traj = self.doc["trajectory"]
            if not isinstance(traj, Mapping):
                raise ScenarioError(f"{path}: expected an object with a tic and a grid or patterns")
            t = _int(traj, "tic", path)
            if not self.model.t_start <= t <= self.model.t_end:
                raise ScenarioError(f"{path}.tic: {t} is outside the unrolled interval")
            grid = parse_gol_initial(self.model, traj.get("grid", traj), path)
            self._x_out = simulate_gol(self.model, grid, t)
        elif isinstance(self.model, GolSpec) and self.initial is not None:
            self._x_out = simulate_gol(self.model, self.initial)
        else:
            raise ScenarioError("scenario.x_out: required unless a Game-of-Life run determines it")
        return self._x_out


def simulate_gol(spec: GolSpec, initial, t0=None) -> dict:
    """The realized output of every occasion of a deterministic run from tic ``t0`` on."""
    out = {}
    grid = np.asarray(initial, dtype=np.uint8)
    for t in range(spec.t_start if t0 is None else t0, spec.t_end + 1):
        for y in range(spec.height):
            for x in range(spec.width):
                out[gol_id(x, y, t)] = int(grid[y, x])
        if t < spec.t_end:
            grid = life_run(grid, 1, spec.boundary == "toroidal")
    return out


def load_scenario(text: str, variant=None) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return scenario_from_doc(doc, variant)


def scenario_from_doc(doc, variant=None) -> Scenario:
    if not isinstance(doc, Mapping):
        raise ScenarioError("scenario: top level must be an object")
    schema = doc.get("schema")
    if schema != SCHEMA:
        raise ScenarioError(f"scenario.schema: expected \"{SCHEMA}\", got {schema!r}")
    model = parse_model(_need(doc, "model", "scenario"), variant)
    initial = doc.get("initial")
    if isinstance(model, GolSpec):
        initial = parse_gol_initial(model, initial)
    elif isinstance(model, HopfieldSpec):
        if initial is None:
            raise ScenarioError("scenario.initial: Hopfield models need an initial bit string")
        initial = _wrap("scenario.initial", parse_bits, initial)
    elif isinstance(model, CoupledHopfieldSpec):
        if not isinstance(initial, Mapping):
            raise ScenarioError("scenario.initial: coupled networks need {name: bits}")
    return Scenario(doc, model, initial, variant)
