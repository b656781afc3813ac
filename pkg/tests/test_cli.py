import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from cagrain.core import graph_from_json, validate_graph
from cagrain.harness.cli import main
from cagrain.harness.scenario import ScenarioError, load_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write(tmp_path, doc, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return p


def gate_doc(**extra):
    doc = json.loads((SCENARIOS / "and_gate.json").read_text())
    doc.update(extra)
    return doc


def test_unroll_writes_a_valid_graph(capsys):
    code, out, _ = run(capsys, "unroll", "--scenario", SCENARIOS / "and_gate.json")
    assert code == 0
    g = graph_from_json(json.loads(out))
    assert validate_graph(g) == [] and len(g) == 4


def test_measures_json(capsys):
    code, out, _ = run(capsys, "mip", "--scenario", SCENARIOS / "and_gate.json")
    assert code == 0
    doc = json.loads(out)
    assert set(doc) == {"ei", "xi", "mip", "x_out"}
    assert doc["ei"] == 2.0
    assert set(doc["mip"]) == {"partition", "xi", "normalizer", "normalized_score"}
    code, out, _ = run(capsys, "ei", "--scenario", SCENARIOS / "and_gate.json")
    assert json.loads(out)["xi"] is None


def test_xi_over_explicit_partition(capsys, tmp_path):
    p = write(tmp_path, gate_doc(partition=[["A@0"], ["B@0"]]))
    code, out, _ = run(capsys, "xi", "--scenario", p)
    assert code == 0 and json.loads(out)["xi"] == 0.0


def test_csv_is_byte_stable(capsys, tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert run(capsys, "mip", "--scenario", SCENARIOS / "glider.json", "--format", "csv", "--out", d)[0] == 0
        outs.append((d / "result.csv").read_bytes())
    assert outs[0] == outs[1]
    assert outs[0].startswith(b"ei,xi,normalized_score,partition\n")
    assert b"\r" not in outs[0]


def test_grain_writes_graph_and_sidecar(capsys, tmp_path):
    code, _, _ = run(capsys, "grain", "--scenario", SCENARIOS / "glider.json", "--out", tmp_path)
    assert code == 0
    doc = json.loads((tmp_path / "coarse.json").read_text())
    assert validate_graph(graph_from_json(doc["graph"])) == []
    units = doc["sidecar"]["units"]
    assert [u["micro_alphabet"] for u in units] == [512, 512]
    assert all(u["representatives"] == [c[0] for c in u["classes"]] for u in units)


def test_unreachable_output_exits_2(capsys, tmp_path):
    p = write(tmp_path, gate_doc(x_out={"C@1": 1, "D@1": 1}))
    code, _, err = run(capsys, "ei", "--scenario", p)
    assert code == 2 and "zero marginal" in err


@pytest.mark.parametrize(
    "doc, field",
    [
        ('{"schema": "1", "model":', "line 1"),
        ({"schema": "2", "model": {}}, "scenario.schema"),
        ({"schema": "1", "model": {"type": "gol", "width": "wide", "height": 5}}, "scenario.model.width"),
        ({"schema": "1", "model": {"type": "torus"}}, "scenario.model.type"),
        (gate_doc(x_out={"C@1": "one", "D@1": 0}), "scenario.x_out.C@1"),
        (gate_doc(graining={"units": [["A@0"], ["Z@1"]], "channel": "rest"}), "scenario.graining"),
    ],
)
def test_validation_errors_name_the_field(capsys, tmp_path, doc, field):
    code, _, err = run(capsys, "ei", "--scenario", write(tmp_path, doc))
    assert code == 2 and field in err


def test_missing_scenario_and_bad_flags(capsys, tmp_path):
    assert run(capsys, "ei")[0] == 2
    assert run(capsys, "ei", "--scenario", tmp_path / "absent.json")[0] == 2
    assert run(capsys, "ei", "--format", "xml")[0] == 2
    assert run(capsys, "experiment", "life")[0] == 2
    assert run(capsys, "ei", "--threads", "0", "--scenario", SCENARIOS / "and_gate.json")[0] == 2


def test_tractability_cap_exits_3(capsys, tmp_path):
    doc = json.loads((SCENARIOS / "glider.json").read_text())
    doc["graining"]["units"][0] = [f"{x},{y}@0" for y in range(2, 7) for x in range(2, 7)]
    code, _, err = run(capsys, "ei", "--scenario", write(tmp_path, doc))
    assert code == 3 and "cap" in err


def test_scenario_shorthands_expand():
    sc = load_scenario((SCENARIOS / "glider.json").read_text())
    g = sc.graining
    assert len(g.ground) == 144 - 9 and set(g.ground_output.values()) == {0}
    assert len(g.ground) + len(g.channel) + 18 == 144 * 5
    with pytest.raises(ScenarioError):
        load_scenario(json.dumps(gate_doc(graining={"units": [["A@0"]], "ground_tic": "zero"}))).graining


def test_trajectory_determines_x_out():
    sc = load_scenario((SCENARIOS / "translations.json").read_text())
    x = sc.x_out
    assert sum(v for o, v in x.items() if o.time == 0) == 5
    assert min(o.time for o in x) == -20


def test_emergence_on_candidate_list(capsys, tmp_path):
    doc = gate_doc(graining={
        "candidates": [
            {"name": "both", "graining": {"units": [["A@0", "B@0"], ["C@1", "D@1"]]}},
            {"name": "and", "graining": {"units": [["A@0", "B@0"], ["C@1"]], "channel": ["D@1"]}},
        ],
        "subgrains": {"split": {"units": [["A@0"], ["B@0"]], "channel": ["C@1", "D@1"]}},
    })
    code, out, _ = run(capsys, "emergence", "--scenario", write(tmp_path, doc))
    assert code == 0
    res = json.loads(out)
    assert {c["name"] for c in res["candidates"]} == {"both", "and"}
    assert set(res) == {"best", "score", "candidates"}


def test_console_script_entry_point():
    out = subprocess.run(
        [sys.executable, "-m", "cagrain.harness.cli", "--help"], capture_output=True, text=True,
        env=dict(os.environ),
    )
    assert out.returncode == 0
    for cmd in ("unroll", "grain", "ei", "xi", "mip", "emergence", "experiment"):
        assert cmd in out.stdout


def test_xor_scenario_is_irreducible(capsys):
    code, out, _ = run(capsys, "mip", "--scenario", SCENARIOS / "xor.json")
    doc = json.loads(out)
    assert code == 0 and doc["ei"] == 1.0 and doc["mip"]["xi"] == 1.0
