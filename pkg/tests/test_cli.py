import json
import textwrap

import pytest

from nlselab.cli import SCHEMA, ConfigError, main, parse_config, verify_manifest

L2_PASS = """\
[model]
p = 3.0
sigma = 3.4
alpha = 2.0
V = "quadratic"
v2 = 1.0
h_list = [0.4, 0.3]

[evolve]
T = 0.1

[experiment]
K = 1.0
eps = 0.05
w_fraction = 0.5
phase_fraction = 0.1
"""


def write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return str(path)


def run(tmp_path, sub, text, *extra):
    out = tmp_path / "out"
    code = main([sub, "--config", write(tmp_path, text), "--out", str(out), *extra])
    return code, out


class TestParse:
    def test_empty_document_gives_defaults(self):
        cfg = parse_config("")
        for section, keys in SCHEMA.items():
            for key in keys:
                assert f"{section}.{key}" in cfg.defaulted
        assert cfg["model.p"] == 3.0
        assert cfg["domain.center"] == [0.0]

    def test_duplicate_key_reports_both_lines(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("[model]\np = 3\np = 4\n")
        assert exc.value.errors[0][0] == 3
        assert "line 2" in exc.value.errors[0][1]

    def test_unknown_key_line(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("[model]\np = 3\n\n[domain]\nfoo = 1\n")
        assert exc.value.lines()[0].startswith("line 5:")

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config("[nope]\nx = 1\n")

    def test_type_error_anchored(self):
        with pytest.raises(ConfigError) as exc:
            parse_config('[model]\np = "x"\n')
        assert exc.value.lines()[0].startswith("line 2:")

    def test_exponent_restricted_for_sweeps(self):
        parse_config("[model]\np = 7\n", "ground-state")
        with pytest.raises(ConfigError, match="p = 7"):
            parse_config("[model]\np = 7\n", "sweep-l2")

    def test_overrides_validated(self):
        with pytest.raises(ConfigError):
            parse_config("", overrides={"grid.nodes": 3})
        cfg = parse_config("", overrides={"grid.nodes": 51})
        assert cfg["grid.nodes"] == 51 and "grid.nodes" not in cfg.defaulted

    def test_positive_keys(self):
        with pytest.raises(ConfigError, match="evolve.dt"):
            parse_config("[evolve]\ndt = -1.0\n")

    def test_h_list_must_decrease(self):
        with pytest.raises(ConfigError, match="h_list"):
            parse_config("[model]\nh_list = [0.2, 0.3]\n", "sweep-l2")


class TestMain:
    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 2

    def test_config_error_exit_and_verdict(self, tmp_path, capsys):
        code, out = run(tmp_path, "ground-state", "[model]\np = 3\np = 4\n")
        assert code == 2
        err = capsys.readouterr().err
        assert "line 3" in err
        verdict = json.loads((out / "verdict.json").read_text())
        assert verdict["first_failed"] == "usage"

    def test_validate_passes(self, tmp_path):
        code, out = run(tmp_path, "validate", "[model]\np = 3\n")
        assert code == 0
        assert json.loads((out / "verdict.json").read_text())["passed"]
        assert verify_manifest(out) == []

    def test_ground_state_manifest(self, tmp_path):
        code, out = run(tmp_path, "ground-state", "[grid]\nnodes = 101\n", "--seed", "7")
        assert code == 0
        man = json.loads((out / "manifest.json").read_text())
        assert man["seeds"] == {"solver": 7, "experiment": 7}
        assert man["overrides"]["solver.seed"] == 7
        assert man["config"]["grid"]["nodes"] == 101
        assert "model.p" in man["defaulted"]
        assert set(man["files"]) == {"ground_state.csv", "ground_state.json", "verdict.json"}
        assert verify_manifest(out) == []

    def test_tampering_detected(self, tmp_path):
        code, out = run(tmp_path, "ground-state", "[grid]\nnodes = 51\n")
        (out / "ground_state.csv").write_text("x,value\n")
        (out / "extra.txt").write_text("x")
        problems = verify_manifest(out)
        assert "ground_state.csv: digest mismatch" in problems
        assert "extra.txt: not listed" in problems

    def test_evolve_snapshots(self, tmp_path):
        code, out = run(tmp_path, "evolve", """\
            [grid]
            nodes = 101
            [evolve]
            T = 0.02
            dt = 1e-3
            kick = [1.0]
            snapshot_times = [0.01]
            """)
        assert code == 0
        assert (out / "snapshots" / "t_0.01.bin").is_file()
        assert (out / "trajectory.csv").read_text().startswith("t,charge,energy")

    def test_failing_gate_nonzero(self, tmp_path, capsys):
        text = L2_PASS.replace("phase_fraction = 0.1", "phase_fraction = 0.9\nfit_fraction = 0.999")
        code, out = run(tmp_path, "sweep-l2", text)
        assert code == 1
        verdict = json.loads((out / "verdict.json").read_text())
        assert verdict["passed"] is False
        assert verdict["first_failed"] in verdict["gates"]
        assert verdict["first_failed"] in capsys.readouterr().err

    def test_conditions_gate(self, tmp_path):
        code, out = run(tmp_path, "sweep-l2", '[model]\nW = "zero"\nh_list = [0.4, 0.3]\n')
        assert code == 1
        verdict = json.loads((out / "verdict.json").read_text())
        assert verdict["first_failed"] == "conditions"

    def test_sweep_passes_and_lists_traces(self, tmp_path):
        code, out = run(tmp_path, "sweep-l2", L2_PASS)
        assert code == 0
        man = json.loads((out / "manifest.json").read_text())
        assert {"result.json", "traces/h0.csv", "traces/h1.csv", "verdict.json"} <= set(man["files"])
        assert verify_manifest(out) == []
