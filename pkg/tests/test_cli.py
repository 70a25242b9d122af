import csv
import json

import pytest

from mcflab.cli import main, parse_config
from mcflab.errors import OptimizerDiverged, ParseError, ValidationError

SPHERE = "mesh: {kind: icosphere, subdivisions: 3}\n"


def run(tmp_path, command, text, *extra):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(text)
    return main([command, "--config", str(cfg), "--out", str(tmp_path / "out"), *extra])


def outdir(tmp_path):
    return tmp_path / "out"


class TestParse:
    def test_defaults(self):
        cfg = parse_config(SPHERE, command="flow")
        assert cfg.flow.scheme == "semi_implicit"
        assert cfg.ambient == {"kind": "euclidean"}
        assert cfg.entropy.seed == 0

    def test_seed_override_reaches_entropy(self):
        cfg = parse_config(SPHERE + "seed: 3\n", command="entropy", seed=11)
        assert cfg.seed == 11 and cfg.entropy.seed == 11

    def test_unknown_top_key(self):
        with pytest.raises(ParseError, match="remesh"):
            parse_config(SPHERE + "remesh: true\n", command="flow")

    def test_unknown_nested_key(self):
        with pytest.raises(ParseError):
            parse_config(SPHERE + "flow: {dt: 0.1}\n", command="flow")

    def test_yaml_error_position(self):
        with pytest.raises(ParseError, match="line 2"):
            parse_config("mesh: {kind: icosphere\nflow: [\n", command="flow")

    def test_bad_value_names_field(self):
        with pytest.raises(ValidationError) as info:
            parse_config(SPHERE + "flow: {c_stab: fast}\n", command="flow")
        assert info.value.field == "flow.c_stab"

    def test_nonpositive_t0(self):
        text = SPHERE + "functional_grid: {centers: [[0, 0, 0]], t0: [0.5, 0.0]}\n"
        with pytest.raises(ValidationError) as info:
            parse_config(text, command="entropy")
        assert info.value.field == "functional_grid.t0"

    def test_command_conflict(self):
        with pytest.raises(ValidationError) as info:
            parse_config("command: flow\n" + SPHERE, command="entropy")
        assert info.value.field == "command"

    def test_command_from_config(self):
        assert parse_config("command: entropy\n" + SPHERE).command == "entropy"

    def test_bad_mesh_kind(self):
        with pytest.raises(ValidationError) as info:
            parse_config("mesh: {kind: cube}\n", command="flow")
        assert info.value.field == "mesh.kind"

    def test_missing_mesh_file(self, tmp_path):
        with pytest.raises(ValidationError):
            parse_config("mesh: {path: nowhere.off}\n", base_dir=tmp_path, command="flow")

    def test_verify_section(self):
        text = SPHERE + "verify: {almost_mono_u: {C: 3, pairs: adjacent, points: [{x0: [0, 0, 0], t0: 0.2}]}}\n"
        cfg = parse_config(text, command="verify")
        assert cfg.verify["almost_mono_u"]["points"] == [{"x0": [0.0, 0.0, 0.0], "t0": 0.2}]
        with pytest.raises(ParseError):
            parse_config(SPHERE + "verify: {lyapunov: {}}\n", command="verify")

    def test_ambient_validation(self):
        with pytest.raises(ValidationError):
            parse_config(SPHERE + "ambient: {kind: round_sphere, radius: -2}\n", command="flow")
        with pytest.raises(ParseError):
            parse_config(SPHERE + "ambient: {kind: round_sphere, curvature: 1}\n", command="flow")


class TestExitCodes:
    def test_flow_ok(self, tmp_path):
        assert run(tmp_path, "flow", SPHERE) == 0
        out = outdir(tmp_path)
        summary = json.loads((out / "flow_summary.json").read_text())
        assert summary["termination"]["cause"] == "Extinct"
        assert (out / "trajectory" / "trajectory.json").exists()
        header = (out / "series.csv").read_text().split("\n")[0]
        assert header == "t,area,diameter,max_A,diameter_ratio"
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["complete"] and manifest["exit_code"] == 0
        assert "started" in manifest["metadata"]

    def test_unknown_key_exit_2(self, tmp_path, capsys):
        assert run(tmp_path, "flow", SPHERE + "remesh: true\n") == 2
        assert "remesh" in capsys.readouterr().err
        assert not outdir(tmp_path).exists()

    def test_invalid_t0_exit_2(self, tmp_path, capsys):
        assert run(tmp_path, "entropy", SPHERE + "functional_grid: {centers: [[0, 0, 0]], t0: [-1]}\n") == 2
        assert "functional_grid.t0" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert main(["flow", "--config", str(tmp_path / "none.yaml")]) == 2

    def test_mesh_required(self, tmp_path):
        assert run(tmp_path, "entropy", "seed: 1\n") == 2
        manifest = json.loads((outdir(tmp_path) / "manifest.json").read_text())
        assert manifest["exit_code"] == 2 and not manifest["complete"]

    def test_dimension_mismatch(self, tmp_path):
        assert run(tmp_path, "flow", SPHERE + "ambient: {kind: round_sphere, dim: 4}\n") == 2

    def test_numerical_failure_exit_3(self, tmp_path, monkeypatch):
        import mcflab.cli

        def diverge(*args, **kwargs):
            raise OptimizerDiverged("forced")

        monkeypatch.setattr(mcflab.cli, "entropy", diverge)
        assert run(tmp_path, "entropy", SPHERE) == 3
        manifest = json.loads((outdir(tmp_path) / "manifest.json").read_text())
        assert manifest["exit_code"] == 3 and "OptimizerDiverged" in manifest["error"]

    def test_failed_verification_exit_4(self, tmp_path):
        text = SPHERE + "verify: {almost_mono_u: {C: 2, tol: 1e-3, points: [{x0: [0, 0, 0], t0: 0.2}]}}\n"
        assert run(tmp_path, "verify", text) == 0
        # classify with an impossible fit threshold fails the verdict
        text = SPHERE + "verify: {classify: {fit: 1e-12, window: 10}}\n"
        assert run(tmp_path, "verify", text) == 4


class TestCommands:
    def test_entropy_outputs(self, tmp_path):
        text = SPHERE + "functional_grid: {centers: [[0, 0, 0], [0.5, 0, 0]], t0: [0.25, 1.0]}\n"
        assert run(tmp_path, "entropy", text) == 0
        res = json.loads((outdir(tmp_path) / "entropy.json").read_text())
        assert res["lambda"] == pytest.approx(4 / 2.718281828, abs=0.02)
        rows = list(csv.reader(open(outdir(tmp_path) / "F_grid.csv")))
        assert rows[0] == ["x0_0", "x0_1", "x0_2", "t0", "F"] and len(rows) == 5

    def test_verify_default_selection(self, tmp_path):
        assert run(tmp_path, "verify", SPHERE) == 0
        out = outdir(tmp_path)
        names = sorted(p.name for p in (out / "reports").iterdir())
        assert any("huisken" in n for n in names) and any("volume_ratio" in n for n in names)
        assert json.loads((out / "classification.json").read_text())["verdict"] == "RoundPoint"

    def test_verify_from_saved_trajectory(self, tmp_path):
        assert run(tmp_path, "flow", SPHERE) == 0
        text = "trajectory: out/trajectory\nverify: {J_monotone: {}}\n"
        cfg = tmp_path / "v.yaml"
        cfg.write_text(text)
        assert main(["verify", "--config", str(cfg), "--out", str(tmp_path / "v")]) == 0
        assert (tmp_path / "v" / "summary.csv").exists()

    def test_rescale(self, tmp_path):
        assert run(tmp_path, "rescale", SPHERE + "rescale: {c: 5.0}\n") == 0
        meta = json.loads((outdir(tmp_path) / "rescaled" / "trajectory.json").read_text())
        assert meta["times"][-1] <= 0.0

    def test_piecewise(self, tmp_path):
        text = SPHERE + "piecewise: {provider: {kind: zero}, window: 10}\n"
        assert run(tmp_path, "piecewise", text) == 0
        log = json.loads((outdir(tmp_path) / "piecewise.json").read_text())
        assert log["final_classification"] == "RoundPoint" and log["replacements"] == []
        assert (outdir(tmp_path) / "segment_00.csv").exists()


def test_determinism(tmp_path):
    text = SPHERE + "functional_grid: {centers: [[0, 0, 0], [0.3, 0, 0]], t0: [0.2, 0.5]}\n"
    for d in ("a", "b"):
        (tmp_path / d).mkdir()
        (tmp_path / d / "c.yaml").write_text(text)
        assert main(["flow", "--config", str(tmp_path / d / "c.yaml"), "--out", str(tmp_path / d / "o"), "--seed", "5"]) == 0
        assert main(["entropy", "--config", str(tmp_path / d / "c.yaml"), "--out", str(tmp_path / d / "e"), "--seed", "5"]) == 0
    for rel in ("o/series.csv", "e/F_grid.csv", "e/entropy.json", "o/trajectory/snap_00010.off"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
