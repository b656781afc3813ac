"""``cagrain`` command line.

Exit codes: 0 success, 2 validation error (bad scenario, unreachable output,
malformed graining), 3 tractability cap exceeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

from ..coarsegrain import coarse_grain, coarse_from_units
from ..core import TractabilityError, ValidationError, graph_to_json
from ..emergence import best_graining
from ..info import effective_information, excess_information_over, mip
from ..models import VARIANTS
from . import experiments
from .scenario import ScenarioError, load_scenario

EXPERIMENTS = ("focal-point", "macro-alphabet", "chunking", "hopfield-table")
EXIT_OK, EXIT_INVALID, EXIT_CAP = 0, 2, 3


def _cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return " ".join(_cell(x) for x in v)
    return str(v)


def to_csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(r.get(h)) for h in header])
    return buf.getvalue()


def to_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=False, ensure_ascii=False) + "\n"


class Output:
    """Writes the main artifact to stdout (or ``--out``), extra artifacts only under ``--out``."""

    def __init__(self, out_dir, fmt):
        self.dir, self.fmt = out_dir, fmt
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)

    def main(self, name, text):
        if self.dir:
            with open(os.path.join(self.dir, name), "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)

    def extra(self, name, text):
        if self.dir:
            with open(os.path.join(self.dir, name), "w", encoding="utf-8", newline="") as fh:
                fh.write(text)


def _scenario(args):
    if not args.scenario:
        raise ScenarioError("--scenario is required for this command")
    try:
        with open(args.scenario, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}") from None
    return load_scenario(text, args.variant)


def _xo(x):
    return {str(k): int(v) for k, v in x.items()}


def cmd_unroll(args, out: Output):
    sc = _scenario(args)
    out.main("graph.json", to_json(graph_to_json(sc.graph)))


def cmd_grain(args, out: Output):
    sc = _scenario(args)
    if sc.graining is None:
        raise ScenarioError("scenario.graining: grain needs a graining with units")
    b = sc.builder()
    ca = coarse_from_units(b(sc.graining), sc.graining) if b else coarse_grain(sc.system, sc.graining)
    out.main("coarse.json", to_json(ca.to_json()))


def _measure(args, out: Output, what):
    sc = _scenario(args)
    m = sc.mechanism()
    x = {t: sc.x_out[t] for t in m.targets if t in sc.x_out}
    result = {"ei": effective_information(m, x), "xi": None, "mip": None, "x_out": _xo(x)}
    if what in ("xi", "mip"):
        part = sc.partition
        r = None
        if part is None or what == "mip":
            r = mip(m, x)
            result["mip"] = r.to_json()
        result["xi"] = excess_information_over(m, part, x) if part is not None else r.xi
    if args.format == "csv":
        row = {
            "ei": result["ei"],
            "xi": result["xi"],
            "normalized_score": (result["mip"] or {}).get("normalized_score"),
            "partition": " | ".join(" ".join(b) for b in (result["mip"] or {}).get("partition", [])),
        }
        out.main("result.csv", to_csv([row], ["ei", "xi", "normalized_score", "partition"]))
    else:
        out.main("result.json", to_json(result))


def cmd_emergence(args, out: Output):
    sc = _scenario(args)
    fam, x = sc.family()
    res = best_graining(fam, x, macro=True)
    doc = res.to_json()
    if args.format == "csv":
        rows = [
            {
                "name": r.name,
                "E1": r.e1,
                "E2": r.e2,
                "xi": r.xi,
                "N": r.normalizer,
                "score": r.score,
                "macro_score": r.macro_score,
                "best": r.name == res.name,
                "failure_reasons": "; ".join(r.failures),
            }
            for r in res.reports
        ]
        out.main(
            "emergence.csv",
            to_csv(rows, ["name", "E1", "E2", "xi", "N", "score", "macro_score", "best", "failure_reasons"]),
        )
        out.extra("emergence.json", to_json(doc))
    else:
        out.main("emergence.json", to_json(doc))


def _params(args):
    if not args.scenario:
        return {}
    with open(args.scenario, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"scenario: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict) or doc.get("schema") != "1":
        raise ScenarioError('scenario.schema: expected "1"')
    params = doc.get("experiment", {})
    if not isinstance(params, dict):
        raise ScenarioError("scenario.experiment: expected an object of preset parameters")
    return params


def _emit(out: Output, name, rows, summary, args, extras=()):
    header = experiments.HEADERS[name]
    if args.format == "csv":
        out.main(f"{name}.csv", to_csv(rows, header))
        out.extra(f"{name}.summary.json", to_json(summary))
    else:
        doc = {"rows": [{h: r[h] for h in header} for r in rows], "summary": summary}
        for key, (_, xrows) in extras:
            doc[key] = xrows
        out.main(f"{name}.json", to_json(doc))
    for key, (xname, xrows) in extras:
        if args.format == "csv":
            out.extra(f"{xname}.csv", to_csv(xrows, experiments.HEADERS[xname]))


def cmd_experiment(args, out: Output):
    p = _params(args)
    name = args.name
    try:
        if name == "focal-point":
            fp = experiments.FocalPoint(**p)
            rows, summary = experiments.run_focal_point(fp, args.threads)
            _emit(out, name, rows, summary, args)
        elif name == "macro-alphabet":
            rows, summary = experiments.run_macro_alphabet(
                tuple(p.get("sizes", (3, 4))), range(1, int(p.get("max_n", 8)) + 1), int(p.get("grid", 48)), args.threads
            )
            _emit(out, name, rows, summary, args)
        elif name == "chunking":
            rows, summary, sweep = experiments.run_chunking()
            _emit(out, name, rows, summary, args, [("sweep", ("chunking-sweep", sweep))])
        else:
            rows, summary, calib = experiments.run_hopfield_table(args.variant or "glauber", args.threads)
            _emit(out, name, rows, summary, args, [("calibration", ("hopfield-calibration", calib))])
    except TypeError as exc:
        raise ScenarioError(f"scenario.experiment: {exc}") from None


COMMANDS = {
    "unroll": cmd_unroll,
    "grain": cmd_grain,
    "ei": lambda a, o: _measure(a, o, "ei"),
    "xi": lambda a, o: _measure(a, o, "xi"),
    "mip": lambda a, o: _measure(a, o, "mip"),
    "emergence": cmd_emergence,
    "experiment": cmd_experiment,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario JSON file (schema \"1\")")
    common.add_argument("--out", help="directory for output files (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="json")
    common.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    common.add_argument("--variant", choices=VARIANTS, help="Hopfield transfer function")
    parser = argparse.ArgumentParser(prog="cagrain", description="Coarse-graining and emergence for cellular automata")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("unroll", "grain", "ei", "xi", "mip", "emergence"):
        sub.add_parser(name, parents=[common])
    exp = sub.add_parser("experiment", parents=[common])
    exp.add_argument("name", choices=EXPERIMENTS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        out = Output(args.out, args.format)
        COMMANDS[args.command](args, out)
    except TractabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
