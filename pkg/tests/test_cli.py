from __future__ import annotations

import csv
import json

import pytest

from pagefl import cli
from pagefl.config import config_from_dict

TINY = {
    "num_clients": 3, "rounds": 4, "runs": 1,
    "data": {"dims": 4, "classes": 3, "mean_train": 30, "mean_test": 15, "server_test_size": 100},
    "server_agent": {"hidden": [8], "batch_size": 2},
    "client_agent": {"hidden": [8], "batch_size": 2},
    "stop": {"enabled": False},
}


def _config(tmp_path, **over):
    raw = json.loads(json.dumps(TINY))
    raw.update(over)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(raw))
    return p


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestRun:
    def test_fedavg_rounds_csv(self, tmp_path):
        out = tmp_path / "out"
        assert cli.main(["run", "--config", str(_config(tmp_path)), "--algo", "fedavg", "--out", str(out)]) == 0
        rows = _rows(out / "seed_0" / "rounds.csv")
        assert tuple(rows[0]) == cli.ROUND_COLUMNS and len(rows[0]) == 12
        assert len(rows) == 1 + 4 and all(len(r) == 12 for r in rows)
        assert [int(r[0]) for r in rows[1:]] == [1, 2, 3, 4]
        assert not (out / "seed_0" / "weights.csv").exists()
        parsed = cli.read_rounds_csv(out / "seed_0" / "rounds.csv")
        assert parsed[0]["t"] == 1 and 0.0 <= parsed[-1]["global_acc"] <= 1.0

    def test_page_extra_outputs(self, tmp_path):
        out = tmp_path / "out"
        assert cli.main(["run", "--config", str(_config(tmp_path)), "--out", str(out)]) == 0
        weights = _rows(out / "seed_0" / "weights.csv")
        assert weights[0] == ["t", "p_0", "p_1", "p_2"] and len(weights) == 5
        for row in weights[1:]:
            assert abs(sum(float(x) for x in row[1:]) - 1.0) <= 1e-9
        actions = _rows(out / "seed_0" / "actions.csv")
        assert actions[0] == ["t", "client", "alpha", "eta"] and len(actions) == 1 + 4 * 3

    def test_byte_identical_reruns(self, tmp_path):
        cfg = _config(tmp_path)
        for name in ("a", "b"):
            assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
        for f in ("rounds.csv", "weights.csv", "actions.csv"):
            assert (tmp_path / "a" / "seed_0" / f).read_bytes() == (tmp_path / "b" / "seed_0" / f).read_bytes()

    def test_runs_and_seeds(self, tmp_path):
        out = tmp_path / "out"
        assert cli.main(["run", "--config", str(_config(tmp_path)), "--algo", "fedavg", "--runs", "2",
                         "--seed", "7", "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["seeds"] == [7, 8] and len(summary["per_run"]) == 2
        assert (out / "seed_8" / "rounds.csv").is_file()

    def test_manifest_config_roundtrip(self, tmp_path):
        out = tmp_path / "out"
        cli.main(["run", "--config", str(_config(tmp_path)), "--algo", "fedprox", "--out", str(out)])
        manifest = json.loads((out / "manifest.json").read_text())
        cfg = config_from_dict(manifest["config"])
        assert cfg.algorithm == "fedprox" and cfg.num_clients == 3
        summary = json.loads((out / "summary.json").read_text())
        assert summary["config_hash"] == cfg.digest()
        for key in ("version", "seeds", "outputs", "started", "finished"):
            assert key in manifest


class TestExitCodes:
    def test_invalid_config_is_usage_error(self, tmp_path, capsys):
        p = _config(tmp_path, bounds={"alpha": [9, 2]})
        assert cli.main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
        assert "bounds.alpha" in capsys.readouterr().err

    def test_bad_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{")
        assert cli.main(["run", "--config", str(p)]) == 2

    def test_unwritable_output_is_io_error(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert cli.main(["run", "--config", str(_config(tmp_path)), "--algo", "fedavg",
                         "--out", str(blocker / "sub")]) == 3

    def test_missing_config_is_io_error(self, tmp_path):
        assert cli.main(["run", "--config", str(tmp_path / "none.json")]) == 3

    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["train"])
        assert exc.value.code == 2


def _summary(tmp_path, name, algorithm, g, l):
    d = tmp_path / name
    d.mkdir()
    s = {"algorithm": algorithm, "config_hash": "x", "seeds": [0],
         "final_global_acc": {"mean": g}, "final_local_acc": {"mean": l},
         "equilibrium_round": {"mean": None}}
    (d / "summary.json").write_text(json.dumps(s))
    return str(d / "summary.json")


class TestCompare:
    def test_identical_summaries_zero_gain(self, tmp_path):
        a = _summary(tmp_path, "page", "page", 0.8, 0.85)
        b = _summary(tmp_path, "fedavg", "fedavg", 0.8, 0.85)
        assert cli.main(["compare", a, b, "--out", str(tmp_path)]) == 0
        rows = {r["label"]: r for r in csv.DictReader(open(tmp_path / "comparison.csv"))}
        assert float(rows["page"]["global_improvement_pct"]) == 0.0
        assert float(rows["page"]["local_improvement_pct"]) == 0.0
        assert rows["fedavg"]["global_improvement_pct"] == ""
        assert (tmp_path / "comparison.txt").read_text().startswith("label")

    def test_gain_against_best_baseline(self, tmp_path):
        rows = cli.compare_rows([
            ("p", {"algorithm": "page", "final_global_acc": {"mean": 0.66}, "final_local_acc": {"mean": 0.9},
                   "equilibrium_round": {"mean": 40.0}}),
            ("a", {"algorithm": "fedavg", "final_global_acc": {"mean": 0.6}, "final_local_acc": {"mean": 0.75},
                   "equilibrium_round": {"mean": None}}),
            ("b", {"algorithm": "fedprox", "final_global_acc": {"mean": 0.55}, "final_local_acc": {"mean": 0.8},
                   "equilibrium_round": {"mean": None}}),
        ])
        assert rows[0]["global_improvement_pct"] == pytest.approx((0.66 - 0.6) / 0.6 * 100, abs=1e-12)
        assert rows[0]["local_improvement_pct"] == pytest.approx((0.9 - 0.8) / 0.8 * 100, abs=1e-12)

    def test_needs_two(self, tmp_path):
        assert cli.main(["compare", _summary(tmp_path, "a", "page", 0.5, 0.5)]) == 2

    def test_not_a_summary(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text("{}")
        assert cli.main(["compare", str(p), str(p)]) == 2


class TestFseCheck:
    @pytest.fixture
    def ckpt(self, tmp_path):
        out = tmp_path / "out"
        cli.main(["run", "--config", str(_config(tmp_path, checkpoint=True)), "--out", str(out)])
        return out / "seed_0" / "checkpoint"

    def test_zero_probes(self, ckpt):
        assert cli.main(["fse-check", "--checkpoint", str(ckpt), "--probes", "0", "--horizon", "1"]) == 0
        rep = json.loads((ckpt / "fse_report.json").read_text())
        assert rep["positive_fraction"] is None and rep["probes"] == []
        assert rep["identity_delta"] == 0.0

    def test_probes_written(self, ckpt, tmp_path):
        target = tmp_path / "rep.json"
        assert cli.main(["fse-check", "--checkpoint", str(ckpt), "--probes", "2", "--horizon", "1",
                         "--out", str(target)]) == 0
        assert len(json.loads(target.read_text())["probes"]) == 2

    def test_missing_checkpoint(self, tmp_path):
        assert cli.main(["fse-check", "--checkpoint", str(tmp_path / "nope")]) == 2

    def test_baseline_checkpoint_rejected(self, tmp_path):
        out = tmp_path / "out"
        cli.main(["run", "--config", str(_config(tmp_path, checkpoint=True, algorithm="fedavg")), "--out", str(out)])
        assert cli.main(["fse-check", "--checkpoint", str(out / "seed_0" / "checkpoint")]) == 2
