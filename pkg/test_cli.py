"""End-to-end tests of the command line: run, report, compare and config errors."""

import json

import pytest

from main import main
from storage import config_hash, load_json, load_manifest, load_run_log
from workflow.models import build_config, read_config_file

TINY_CONJUGATE = """
experiment = "conjugate-check"
strategy = "pcn"
seed = 4

[prior]
modes_per_axis = 8
grid_size = 16

[smc]
n_particles = 200
chain_len = 3

[linear]
noise_std = 0.5
data = [1.0, -0.5]

[diagnostics]
tv_modes = 4
kde_grid_points = 64
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_CONJUGATE, encoding="utf-8")
    return path


@pytest.fixture
def finished_run(tmp_path, tiny_config):
    out = tmp_path / "runs"
    main(["run", "--config", str(tiny_config), "--out", str(out)])
    return out / "conjugate-check-pcn-seed4"


class TestRun:
    def test_artifacts(self, finished_run):
        for name in ("manifest.json", "summary.json", "run_log.jsonl", "ensemble.csv",
                     "schedule.json", "marginals.csv", "conjugate.csv"):
            assert (finished_run / name).exists(), name

        manifest = load_manifest(finished_run)
        assert manifest.status == "completed"
        assert "summary.json" in manifest.artifacts

        log = load_run_log(finished_run)
        assert log["h_cum"].iloc[-1] == 1.0
        assert list(log["layer"]) == list(range(len(log)))
        assert manifest.progress["layer"] == len(log) - 1
        assert manifest.progress["h_cum"] == 1.0
        assert manifest.progress["completed_at"] is not None
        assert manifest.progress["error"] is None

        summary = load_json(finished_run, "summary.json")
        assert summary["num_layers"] == len(log)
        assert summary["total_solves"] == int(log["solves_cum"].iloc[-1])

    def test_manifest_replay_reproduces_hash(self, finished_run, tmp_path):
        manifest = load_manifest(finished_run)
        replay_out = tmp_path / "replay"
        main(["run", "--config", str(finished_run / "manifest.json"), "--out", str(replay_out)])
        replayed = load_manifest(replay_out / "conjugate-check-pcn-seed4")
        assert replayed.config_hash == manifest.config_hash

    def test_threads_do_not_change_the_hash(self, tiny_config):
        raw = read_config_file(tiny_config)
        one = build_config(raw, overrides={"threads": 1}).model_dump(mode="json", exclude={"threads", "output_dir"})
        four = build_config(raw, overrides={"threads": 4}).model_dump(mode="json", exclude={"threads", "output_dir"})
        assert config_hash(one) == config_hash(four)


class TestReportAndCompare:
    def test_report(self, finished_run, capsys):
        main(["report", str(finished_run)])
        output = capsys.readouterr().out
        assert "conjugate-check" in output
        assert "Layer" in output
        assert "Started:" in output

    def test_compare_run_with_itself(self, finished_run, tmp_path, capsys):
        out = tmp_path / "comparison"
        main(["compare", str(finished_run), str(finished_run), "--out", str(out), "--modes", "4"])
        comparison = json.loads((out / "comparison.json").read_text(encoding="utf-8"))
        assert comparison["avg_tv"] == pytest.approx(0.0, abs=1e-12)
        assert comparison["solve_count_ratio"] == 1.0
        assert comparison["mean_relative_l2_difference"] == 0.0
        assert (out / "tv_table.csv").exists()


class TestErrors:
    def test_unknown_strategy_exits_with_config_status(self, tiny_config, tmp_path):
        with pytest.raises(SystemExit) as info:
            main(["run", "--config", str(tiny_config), "--strategy", "hmc", "--out", str(tmp_path)])
        assert info.value.code == 2

    def test_unknown_config_key(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text('experiment = "multimodal1d"\n[smc]\nparticles = 10\n', encoding="utf-8")
        with pytest.raises(SystemExit) as info:
            main(["run", "--config", str(path), "--out", str(tmp_path)])
        assert info.value.code == 2

    def test_missing_run_directory(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            main(["report", str(tmp_path / "nowhere")])
        assert info.value.code == 2

    def test_no_command(self):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 1
