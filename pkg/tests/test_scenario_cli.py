"""Scenario schema, runner artifacts, sweeps, and the command line."""

import copy
import json
import math
from pathlib import Path

import pytest

from oneq.cli import main
from oneq.errors import OneQError, SchemaError
from oneq.runner import (
    derive_seed,
    raise_if_unfinished,
    run_scenario,
    run_sweep,
    set_by_path,
    sweep_csv,
    write_artifacts,
)
from oneq.scenario import load_scenario, load_scenario_file

REPO = Path(__file__).resolve().parent.parent
SCENARIOS = sorted((REPO / "scenarios").glob("*.json"))
MALFORMED = sorted((REPO / "tests" / "data" / "malformed").glob("*.json"))
BASELINE = REPO / "scenarios" / "qkd_baseline.json"


def _baseline_doc():
    return json.loads(BASELINE.read_text(encoding="utf-8"))


class TestLoadScenario:
    @pytest.mark.parametrize("path", SCENARIOS, ids=lambda p: p.stem)
    def test_shipped_scenarios_are_strictly_clean(self, path):
        scenario, warnings = load_scenario_file(str(path), strict=True)
        assert warnings == []
        assert scenario.duration_s > 0
        assert scenario.topology.nodes

    @pytest.mark.parametrize("path", MALFORMED, ids=lambda p: p.stem)
    def test_malformed_files_are_rejected_with_a_path(self, path):
        with pytest.raises(SchemaError) as err:
            load_scenario_file(str(path))
        assert len(err.value.violations) == 1
        assert err.value.violations[0].startswith("$")

    def test_unknown_key_warns_then_fails_strict(self):
        doc = _baseline_doc()
        doc["frobnicate"] = True
        _, warnings = load_scenario(doc)
        assert any("frobnicate" in w for w in warnings)
        with pytest.raises(SchemaError):
            load_scenario(doc, strict=True)

    def test_non_object_document_rejected(self):
        with pytest.raises(SchemaError):
            load_scenario([1, 2, 3])

    def test_missing_file_and_bad_json(self, tmp_path):
        with pytest.raises(SchemaError) as err:
            load_scenario_file(str(tmp_path / "nope.json"))
        assert "cannot read" in err.value.violations[0]
        bad = tmp_path / "bad.json"
        bad.write_text("{not json", encoding="utf-8")
        with pytest.raises(SchemaError) as err:
            load_scenario_file(str(bad))
        assert "invalid JSON" in err.value.violations[0]

    def test_multiple_problems_all_reported(self):
        doc = _baseline_doc()
        doc["duration_s"] = -1.0
        doc["seed"] = -4
        with pytest.raises(SchemaError) as err:
            load_scenario(doc)
        joined = "\n".join(err.value.violations)
        assert "$.duration_s" in joined and "$.seed" in joined


class TestRunner:
    def test_baseline_run_produces_key_and_artifacts(self):
        scenario, _ = load_scenario_file(str(BASELINE))
        art = run_scenario(scenario)
        assert art.run_id == f"{scenario.name}-s{scenario.seed}"
        assert art.summary["t_end"] == pytest.approx(scenario.duration_s)
        qkd = art.summary["apps"]["qkd0"]
        assert qkd["outcome"] == "key"
        assert qkd["result"] > 0
        assert art.trace_jsonl.endswith("\n")
        assert len(art.metrics_rows) > 0
        names = [row[2] for row in art.metrics_rows]
        assert names == sorted(names)
        raise_if_unfinished(art)  # must not raise

    def test_same_seed_reproduces_artifacts(self):
        scenario, _ = load_scenario_file(str(BASELINE))
        a = run_scenario(scenario)
        b = run_scenario(scenario)
        assert a.trace_jsonl == b.trace_jsonl
        assert a.metrics_rows == b.metrics_rows
        assert a.app_rows == b.app_rows

    def test_seed_override_changes_the_run(self):
        scenario, _ = load_scenario_file(str(BASELINE))
        a = run_scenario(scenario)
        c = run_scenario(scenario, seed=scenario.seed + 1)
        assert c.run_id != a.run_id
        assert c.trace_jsonl != a.trace_jsonl

    def test_short_horizon_leaves_apps_unfinished(self):
        scenario, _ = load_scenario_file(str(BASELINE))
        art = run_scenario(scenario, until=1e-4)
        assert art.summary["apps"]["qkd0"]["outcome"] == "unfinished"
        with pytest.raises(OneQError):
            raise_if_unfinished(art)

    def test_write_artifacts_layout(self, tmp_path):
        scenario, _ = load_scenario_file(str(BASELINE))
        art = run_scenario(scenario)
        paths = write_artifacts(art, str(tmp_path / "out"))
        metrics = Path(paths["metrics"]).read_text(encoding="utf-8")
        assert metrics.splitlines()[0] == "run_id,seed,metric,value,unit"
        apps = Path(paths["apps"]).read_text(encoding="utf-8")
        assert "qkd0" in apps
        assert Path(paths["trace"]).read_text(encoding="utf-8") == art.trace_jsonl
        summary = json.loads(Path(paths["summary"]).read_text(encoding="utf-8"))
        assert summary["run_id"] == art.run_id


class TestSweepPlumbing:
    def test_set_by_path_nested_list_field(self):
        doc = _baseline_doc()
        before = copy.deepcopy(doc)
        out = set_by_path(doc, "apps[0].n_pairs", 12)
        assert out["apps"][0]["n_pairs"] == 12
        assert doc == before  # original untouched

    def test_set_by_path_top_level(self):
        out = set_by_path({"seed": 1}, "seed", 9)
        assert out["seed"] == 9

    @pytest.mark.parametrize("path", [
        "apps[9].n_pairs", "apps[0].nonexistent", "no_such", "apps[0].",
        "..", "", "apps[x]",
    ])
    def test_bad_paths_raise(self, path):
        with pytest.raises(ValueError):
            set_by_path(_baseline_doc(), path, 1)

    def test_derive_seed_is_stable_and_spread(self):
        s1 = derive_seed(7, "apps[0].n_pairs", 10, 0)
        assert s1 == derive_seed(7, "apps[0].n_pairs", 10, 0)
        others = {
            derive_seed(7, "apps[0].n_pairs", 10, 1),
            derive_seed(7, "apps[0].n_pairs", 20, 0),
            derive_seed(8, "apps[0].n_pairs", 10, 0),
            derive_seed(7, "apps[0].rounds", 10, 0),
        }
        assert s1 not in others and len(others) == 4
        assert 0 <= s1 < (1 << 62)

    def test_run_sweep_rows(self):
        doc = _baseline_doc()
        rows = run_sweep(doc, "apps[0].n_pairs", [8, 16], replications=2)
        assert len(rows) == 4
        assert {r["value"] for r in rows} == {8, 16}
        assert {r["replicate"] for r in rows} == {0, 1}
        assert all(r["app_id"] == "qkd0" for r in rows)
        seeds = {r["seed"] for r in rows}
        assert len(seeds) == 4
        csv_text = sweep_csv(rows)
        assert csv_text.splitlines()[0].startswith("param,value,replicate,seed")
        assert len(csv_text.splitlines()) == 5

    def test_replications_must_be_positive(self):
        with pytest.raises(ValueError):
            run_sweep(_baseline_doc(), "seed", [1], replications=0)


class TestCli:
    @pytest.mark.parametrize("path", SCENARIOS, ids=lambda p: p.stem)
    def test_validate_ok(self, path, capsys):
        assert main(["validate", str(path), "--strict"]) == 0
        assert capsys.readouterr().out.startswith("ok:")

    @pytest.mark.parametrize("path", MALFORMED, ids=lambda p: p.stem)
    def test_validate_rejects_malformed(self, path, capsys):
        assert main(["validate", str(path)]) == 2
        out = capsys.readouterr().out
        assert "1 problem(s)" in out
        assert out.startswith("error: $")

    def test_validate_warns_loose_fails_strict(self, tmp_path, capsys):
        doc = _baseline_doc()
        doc["mystery"] = 1
        path = tmp_path / "loose.json"
        path.write_text(json.dumps(doc), encoding="utf-8")
        assert main(["validate", str(path)]) == 0
        assert "warning:" in capsys.readouterr().out
        assert main(["validate", str(path), "--strict"]) == 2

    def test_run_writes_artifacts(self, tmp_path, capsys):
        out_dir = tmp_path / "artifacts"
        code = main(["run", str(BASELINE), "--out", str(out_dir)])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "app qkd0 [qkd]: key" in stdout
        for name in ("metrics.csv", "trace.jsonl", "app_results.csv",
                     "summary.json"):
            assert (out_dir / name).exists(), name

    def test_run_missing_scenario(self, capsys):
        assert main(["run", "/nonexistent/scenario.json"]) == 2

    def test_plan_sequence_table(self, capsys):
        assert main(["plan", "--sequence", "0.2,0.1,3"]) == 0
        out = capsys.readouterr().out
        assert "0.720000" in out  # per-block success
        assert "0.978048" in out  # three-block success

    def test_plan_match_table(self, capsys):
        assert main(["plan", "--match", "10,5,1.0"]) == 0
        assert "0.623046875" in capsys.readouterr().out

    def test_plan_without_arguments_fails(self, capsys):
        assert main(["plan"]) == 2

    def test_sweep_command(self, tmp_path, capsys):
        out_dir = tmp_path / "sweep"
        code = main(["sweep", str(BASELINE), "--param", "apps[0].n_pairs",
                     "--values", "8,16", "--out", str(out_dir)])
        assert code == 0
        lines = (out_dir / "sweep.csv").read_text(encoding="utf-8").splitlines()
        assert len(lines) == 3

    def test_sweep_rejects_bad_param(self, capsys):
        assert main(["sweep", str(BASELINE), "--param", "apps[0].bogus",
                     "--values", "1"]) == 2
