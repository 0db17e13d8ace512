"""End-to-end command line tests driven through main()."""

import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from clip_ae.cli import GRADCHECK_TOLERANCE, main


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv("CLIP_AE_SEED", raising=False)


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def tree_bytes(root):
    return {path.relative_to(root): path.read_bytes()
            for path in sorted(Path(root).rglob("*")) if path.is_file()}


def synth_args(out, extra=()):
    return ("synth", "--videos", "8", "--classes", "2", "--frames", "12",
            "--dim", "6", "--out", str(out), *extra)


class TestSynthCommand:
    def test_same_seed_same_bytes(self, capsys, tmp_path):
        code_a, out_a, _ = run_cli(capsys, *synth_args(tmp_path / "a",
                                                       ("--seed", "5")))
        code_b, _, _ = run_cli(capsys, *synth_args(tmp_path / "b",
                                                   ("--seed", "5")))
        assert code_a == code_b == 0
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
        summary = json.loads(out_a)
        assert summary["seed"] == 5
        assert summary["videos"] == 8

    def test_env_seed_and_flag_priority(self, capsys, tmp_path, monkeypatch):
        run_cli(capsys, *synth_args(tmp_path / "flag", ("--seed", "5")))
        monkeypatch.setenv("CLIP_AE_SEED", "5")
        run_cli(capsys, *synth_args(tmp_path / "env"))
        run_cli(capsys, *synth_args(tmp_path / "override", ("--seed", "6")))
        assert tree_bytes(tmp_path / "flag") == tree_bytes(tmp_path / "env")
        assert tree_bytes(tmp_path / "flag") != tree_bytes(tmp_path / "override")

    def test_threads_flag_does_not_change_output(self, capsys, tmp_path):
        run_cli(capsys, *synth_args(tmp_path / "serial", ("--seed", "2")))
        run_cli(capsys, *synth_args(tmp_path / "threaded",
                                    ("--seed", "2", "--threads", "4")))
        assert tree_bytes(tmp_path / "serial") == tree_bytes(tmp_path / "threaded")


class TestFullChain:
    @pytest.fixture()
    def workspace(self, capsys, tmp_path):
        data = tmp_path / "data"
        run_cli(capsys, *synth_args(data, ("--seed", "3")))
        config = tmp_path / "config.json"
        config.write_text(json.dumps(
            {"epochs": 2, "batch_size": 4, "d_x": 6, "seed": 3}))
        checkpoint = tmp_path / "checkpoint.json"
        code, out, err = run_cli(capsys, "train",
                                 "--manifest", str(data / "manifest.json"),
                                 "--config", str(config),
                                 "--out", str(checkpoint))
        assert code == 0, err
        return data, config, checkpoint, tmp_path

    def test_train_localize_eval(self, capsys, workspace):
        data, _, checkpoint, tmp_path = workspace
        manifest = str(data / "manifest.json")
        assert json.loads(checkpoint.read_text())["format_version"] == 1

        proposals_path = tmp_path / "proposals.json"
        tcam_path = tmp_path / "tcams.json"
        code, out, _ = run_cli(capsys, "localize",
                               "--checkpoint", str(checkpoint),
                               "--manifest", manifest,
                               "--out", str(proposals_path),
                               "--tcam-out", str(tcam_path))
        assert code == 0
        assert json.loads(out)["proposals"] > 0

        proposals = json.loads(proposals_path.read_text())
        assert isinstance(proposals, list) and proposals
        for record in proposals:
            assert set(record) == {"video_id", "class_index", "start_s",
                                   "end_s", "score"}

        tcams = json.loads(tcam_path.read_text())
        assert len(tcams) == 8
        for entry in tcams.values():
            scores = np.array(entry["scores"])
            assert scores.shape == (12, 2)
            np.testing.assert_allclose(scores.sum(axis=1), 1.0, atol=1e-9)

        report_path = tmp_path / "report.json"
        code, out, _ = run_cli(capsys, "eval",
                               "--proposals", str(proposals_path),
                               "--manifest", manifest,
                               "--thresholds", "0.3", "0.5",
                               "--out", str(report_path))
        assert code == 0
        report = json.loads(report_path.read_text())
        assert set(report["map_at"]) == {"0.3", "0.5"}
        assert json.loads(out)["map_at"]["0.5"] == report["map_at"]["0.5"]

        code, _, _ = run_cli(capsys, "eval",
                             "--proposals", str(proposals_path),
                             "--manifest", manifest,
                             "--no-align",
                             "--out", str(tmp_path / "raw_report.json"))
        assert code == 0

    def test_train_seed_flag_overrides_config(self, capsys, workspace):
        data, config, checkpoint, tmp_path = workspace
        other = tmp_path / "check_other_seed.json"
        code, _, _ = run_cli(capsys, "train",
                             "--manifest", str(data / "manifest.json"),
                             "--config", str(config),
                             "--seed", "9",
                             "--out", str(other))
        assert code == 0
        assert json.loads(other.read_text())["config"]["seed"] == 9
        assert json.loads(checkpoint.read_text())["config"]["seed"] == 3


class TestAblateCommand:
    def test_table_written_and_printed(self, capsys, tmp_path):
        data = tmp_path / "data"
        run_cli(capsys, *synth_args(data, ("--seed", "4")))
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"epochs": 1, "batch_size": 4, "d_x": 6}))
        table_path = tmp_path / "table.json"
        code, out, _ = run_cli(capsys, "ablate",
                               "--manifest", str(data / "manifest.json"),
                               "--config", str(config),
                               "--out", str(table_path))
        assert code == 0
        table = json.loads(table_path.read_text())
        assert table["columns"] == ["0.5", "0.75", "0.95", "AVG"]
        assert [row["name"] for row in table["rows"]] == \
            ["none", "caf", "ccp", "caf+ccp"]
        lines = out.strip().splitlines()
        assert lines[0].split()[0] == "config"
        assert any(line.startswith("caf+ccp") for line in lines)


class TestGradcheckCommand:
    @pytest.mark.parametrize("seed", ["3", "7"])
    def test_passes_and_reports(self, capsys, seed):
        code, out, _ = run_cli(capsys, "gradcheck", "--seed", seed)
        assert code == 0
        payload = json.loads(out)
        assert payload["pass"] is True
        assert payload["max_rel_err"] < GRADCHECK_TOLERANCE
        assert payload["tolerance"] == GRADCHECK_TOLERANCE
        assert payload["checked"] > 0
        assert payload["seed"] == int(seed)

    def test_exits_nonzero_when_tolerance_exceeded(self, capsys, monkeypatch):
        import clip_ae.cli as cli_module
        from clip_ae.pipeline import GradCheckReport

        def failing_check(*args, **kwargs):
            return GradCheckReport(max_rel_err=0.5, entries=[], checked=10,
                                   skipped_small=0)

        monkeypatch.setattr(cli_module, "finite_difference_check", failing_check)
        code, out, _ = run_cli(capsys, "gradcheck", "--seed", "7")
        assert code == 1
        payload = json.loads(out)
        assert payload["pass"] is False
        assert payload["max_rel_err"] == 0.5

    def test_runs_as_console_script(self, tmp_path):
        executable = shutil.which("clip-ae")
        assert executable is not None, "package install should expose clip-ae"
        done = subprocess.run([executable, "gradcheck", "--seed", "3"],
                              capture_output=True, text=True, timeout=60)
        assert done.returncode == 0
        assert json.loads(done.stdout)["pass"] is True

    def test_runs_as_module(self):
        done = subprocess.run([sys.executable, "-m", "clip_ae.cli",
                               "gradcheck", "--seed", "1"],
                              capture_output=True, text=True, timeout=60)
        assert done.returncode == 0
        assert json.loads(done.stdout)["pass"] is True


class TestExitCodes:
    def test_usage_errors_exit_two(self, capsys):
        assert run_cli(capsys)[0] == 2
        assert run_cli(capsys, "synth")[0] == 2              # missing --out
        assert run_cli(capsys, "synth", "--out", "x", "--videos", "0")[0] == 2
        assert run_cli(capsys, "frobnicate")[0] == 2

    def test_help_exits_zero(self, capsys):
        assert run_cli(capsys, "--help")[0] == 0
        assert run_cli(capsys, "train", "--help")[0] == 0

    def assert_runtime_error(self, result, expected_error):
        code, _, err = result
        assert code == 1
        lines = err.strip().splitlines()
        assert len(lines) == 1, f"stderr must be a single JSON line: {err!r}"
        payload = json.loads(lines[0])
        assert payload["error"] == expected_error
        assert payload["message"]

    def test_missing_manifest(self, capsys, tmp_path):
        self.assert_runtime_error(
            run_cli(capsys, "train",
                    "--manifest", str(tmp_path / "absent.json"),
                    "--out", str(tmp_path / "ck.json")),
            "MissingFile")

    def test_corrupt_checkpoint(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{broken")
        self.assert_runtime_error(
            run_cli(capsys, "localize", "--checkpoint", str(bad),
                    "--manifest", str(tmp_path / "m.json"),
                    "--out", str(tmp_path / "p.json")),
            "SchemaError")

    def test_proposals_wrong_shape(self, capsys, tmp_path):
        data = tmp_path / "data"
        run_cli(capsys, *synth_args(data, ("--seed", "1")))
        capsys.readouterr()
        proposals = tmp_path / "proposals.json"
        proposals.write_text(json.dumps({"not": "a list"}))
        self.assert_runtime_error(
            run_cli(capsys, "eval", "--proposals", str(proposals),
                    "--manifest", str(data / "manifest.json"),
                    "--out", str(tmp_path / "r.json")),
            "SchemaError")
        proposals.write_text(json.dumps(
            [{"video_id": "v", "class_index": 0, "start_s": 0.0,
              "end_s": 1.0, "score": 0.5, "surprise": 1}]))
        self.assert_runtime_error(
            run_cli(capsys, "eval", "--proposals", str(proposals),
                    "--manifest", str(data / "manifest.json"),
                    "--out", str(tmp_path / "r.json")),
            "SchemaError")

    def test_unknown_config_key(self, capsys, tmp_path):
        data = tmp_path / "data"
        run_cli(capsys, *synth_args(data, ("--seed", "1")))
        capsys.readouterr()
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"epochs": 1, "warp_speed": 9}))
        self.assert_runtime_error(
            run_cli(capsys, "train", "--manifest", str(data / "manifest.json"),
                    "--config", str(config), "--out", str(tmp_path / "ck.json")),
            "SchemaError")

    def test_bad_env_seed(self, capsys, monkeypatch):
        monkeypatch.setenv("CLIP_AE_SEED", "not-a-number")
        self.assert_runtime_error(run_cli(capsys, "gradcheck"), "SchemaError")
