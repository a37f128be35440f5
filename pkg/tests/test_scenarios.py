"""Config validation, preset merging, digests, and the scenario runner."""

import json

import pytest

from curllab import presets, scenarios
from curllab.scenarios import ScenarioError


MINIMAL = {"task": {"kind": "energy-identity"}}


class TestValidate:
    def test_top_level_must_be_object(self):
        with pytest.raises(ScenarioError, match="JSON object"):
            scenarios.validate_config([1, 2, 3])

    def test_unknown_block_rejected(self):
        with pytest.raises(ScenarioError, match="unknown top-level"):
            scenarios.validate_config({**MINIMAL, "extra": {}})

    def test_task_kind_required(self):
        with pytest.raises(ScenarioError, match="task"):
            scenarios.validate_config({"seed": 1})
        with pytest.raises(ScenarioError, match="unknown task kind"):
            scenarios.validate_config({"task": {"kind": "warp-drive"}})

    def test_seed_must_be_64bit_integer(self):
        with pytest.raises(ScenarioError, match="seed"):
            scenarios.validate_config({**MINIMAL, "seed": -1})
        with pytest.raises(ScenarioError, match="seed"):
            scenarios.validate_config({**MINIMAL, "seed": 1.5})
        ok = scenarios.validate_config({**MINIMAL, "seed": 2 ** 63})
        assert ok["seed"] == 2 ** 63

    def test_unknown_preset_rejected(self):
        with pytest.raises(ScenarioError, match="does not exist"):
            scenarios.validate_config({"preset": "no-such-thing"})

    def test_preset_merge_keeps_overrides(self):
        merged = scenarios.validate_config(
            {"preset": "energy-identity", "seed": 7,
             "domain": {"kind": "box", "n": 4}})
        assert merged["seed"] == 7
        assert merged["domain"]["n"] == 4
        assert merged["task"]["kind"] == "energy-identity"

    def test_domain_and_coefficient_validation(self):
        with pytest.raises(ScenarioError, match="unknown keys"):
            scenarios.run_scenario(
                {**MINIMAL, "domain": {"kind": "box", "m": 3}})
        with pytest.raises(ScenarioError, match="n must be"):
            scenarios.run_scenario({**MINIMAL, "domain": {"n": 1}})
        with pytest.raises(ScenarioError, match="unknown kind"):
            scenarios.run_scenario({**MINIMAL, "domain": {"kind": "torus"}})
        with pytest.raises(ScenarioError, match="not both"):
            scenarios.run_scenario(
                {**MINIMAL,
                 "coefficients": {"kind": "checkerboard", "period": 2,
                                  "blocks": 2}})
        with pytest.raises(ScenarioError, match="solver"):
            scenarios.run_scenario({**MINIMAL, "solver": {"tol": -1.0}})


class TestDigest:
    def test_output_block_excluded(self):
        a = scenarios.inputs_digest({**MINIMAL, "output": {"dir": "x"}})
        b = scenarios.inputs_digest({**MINIMAL, "output": {"dir": "y"}})
        c = scenarios.inputs_digest({**MINIMAL, "seed": 1})
        assert a == b
        assert a != c

    def test_digest_is_hex_sha256(self):
        d = scenarios.inputs_digest(MINIMAL)
        assert len(d) == 64
        int(d, 16)


class TestParseDiagnostics:
    def test_malformed_json_reports_line_and_column(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{\n  "task": {"kind" "greens"}\n}\n')
        with pytest.raises(ScenarioError, match="line 2"):
            scenarios.load_config(path)

    def test_valid_file_loads(self, tmp_path):
        path = tmp_path / "ok.json"
        path.write_text(json.dumps(MINIMAL))
        assert scenarios.load_config(path)["task"]["kind"] == \
            "energy-identity"


class TestRunner:
    def test_summary_written_with_contract_keys(self, tmp_path):
        result = scenarios.run_scenario(
            {**MINIMAL, "domain": {"kind": "box", "n": 6}},
            out_dir=str(tmp_path))
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert set(summary) == {"task", "inputs_digest", "metrics", "pass"}
        assert summary["pass"] is True
        assert summary["task"] == "energy-identity"
        assert summary["inputs_digest"] == result.inputs_digest

    def test_runs_are_bit_reproducible(self, tmp_path):
        cfg = {"preset": "energy-identity", "domain": {"kind": "box", "n": 6}}
        scenarios.run_scenario(dict(cfg), out_dir=str(tmp_path / "a"))
        scenarios.run_scenario(dict(cfg), out_dir=str(tmp_path / "b"))
        assert (tmp_path / "a" / "summary.json").read_bytes() == \
            (tmp_path / "b" / "summary.json").read_bytes()

    def test_every_preset_validates(self):
        assert len(presets.PRESETS) >= 8
        for name in presets.PRESETS:
            cfg = scenarios.validate_config({"preset": name})
            assert cfg["task"]["kind"] in scenarios._TASKS

    def test_failed_bound_is_a_result_not_an_exception(self, tmp_path):
        # an impossible verification window must flip pass to false
        cfg = {"domain": {"kind": "box", "n": 6},
               "task": {"kind": "energy-identity", "tol": 1e-30}}
        result = scenarios.run_scenario(cfg, out_dir=str(tmp_path))
        assert result.passed is False
