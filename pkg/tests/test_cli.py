import json

import pytest

from mfcpoisson.cli import main
from mfcpoisson.config import ConfigError, config_hash, default_config, load_config, parse_config


def small_config(**sim_overrides):
    cfg = default_config(seed=1234)
    cfg["sim"].update({"particles": 120, "scenarios": 4, "dt": 4e-3})
    cfg["sim"].update(sim_overrides)
    cfg["verify"] = {
        "riccati_steps": 1024,
        "smp_samples": 30,
        "hjb_samples": 25,
        "chattering": {"levels": [2, 8]},
    }
    return cfg


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg, indent=1))
    return str(path)


class TestConfigParsing:
    def test_valid_round_trip(self, tmp_path):
        path = write_config(tmp_path, small_config())
        cfg = load_config(path)
        assert cfg.params.b3 == 1.0
        assert cfg.mc.particles == 120
        assert len(cfg.config_hash) == 16

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_config("/nonexistent/path.json")

    def test_malformed_json_reports_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "model": {\n}')
        with pytest.raises(ConfigError) as err:
            load_config(path)
        assert ":3:" in str(err.value) or ":2:" in str(err.value)

    def test_missing_seed_rejected(self):
        cfg = small_config()
        del cfg["sim"]["seed"]
        with pytest.raises(ConfigError) as err:
            parse_config(cfg)
        assert "seed" in str(err.value)

    def test_nonpositive_tolerance_rejected(self):
        cfg = small_config()
        cfg["verify"]["tolerances"] = {"smp": 0.0}
        with pytest.raises(ConfigError):
            parse_config(cfg)

    def test_bad_mode_rejected(self):
        with pytest.raises(ConfigError):
            parse_config(small_config(mode="mixed"))

    def test_hash_depends_on_content(self):
        a = config_hash(small_config())
        b = config_hash(small_config(seed=999))
        assert a != b


class TestCliBasics:
    def test_missing_config_exits_2(self, capsys):
        assert main(["riccati", "--config", "/no/such/file.json"]) == 2
        assert "config error" in capsys.readouterr().err

    def test_unknown_flag_exits_2(self, tmp_path):
        path = write_config(tmp_path, small_config())
        with pytest.raises(SystemExit) as exc:
            main(["riccati", "--config", path, "--bogus"])
        assert exc.value.code == 2

    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_schema_violation_exits_2(self, tmp_path, capsys):
        cfg = small_config()
        del cfg["model"]["b3"]
        path = write_config(tmp_path, cfg)
        assert main(["riccati", "--config", path]) == 2
        assert "b3" in capsys.readouterr().err


class TestRiccatiCommand:
    def test_csv_has_terminal_conditions_and_provenance(self, tmp_path):
        path = write_config(tmp_path, small_config())
        out = tmp_path / "r.csv"
        assert main(["riccati", "--config", path, "--out", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0].startswith("# mfcpoisson")
        assert "config_hash=" in lines[0]
        last = lines[-1].split(",")
        assert float(last[0]) == 1.0
        assert float(last[1]) == pytest.approx(1.0)  # beta_T = c
        assert float(last[2]) == pytest.approx(-1.0)  # eta_T = -c

    def test_rerun_is_byte_identical(self, tmp_path):
        path = write_config(tmp_path, small_config())
        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["riccati", "--config", path, "--out", str(out1)])
        main(["riccati", "--config", path, "--out", str(out2)])
        assert out1.read_bytes() == out2.read_bytes()


class TestCostCommand:
    def test_cost_json_and_thread_invariance(self, tmp_path):
        path = write_config(tmp_path, small_config())
        out1, out2 = tmp_path / "c1.json", tmp_path / "c2.json"
        assert main(["cost", "--config", path, "--out", str(out1)]) == 0
        assert main(
            ["cost", "--config", path, "--out", str(out2), "--threads", "2"]
        ) == 0
        assert out1.read_bytes() == out2.read_bytes()
        payload = json.loads(out1.read_text())
        assert payload["scenarios"] == 4
        assert "config_hash" in payload

    def test_seed_override_changes_costs(self, tmp_path):
        path = write_config(tmp_path, small_config())
        out1, out2 = tmp_path / "c1.json", tmp_path / "c2.json"
        main(["cost", "--config", path, "--out", str(out1)])
        main(["cost", "--config", path, "--out", str(out2), "--seed", "777"])
        a = json.loads(out1.read_text())
        b = json.loads(out2.read_text())
        assert a["mean"] != b["mean"]
        assert a["config_hash"] != b["config_hash"]


class TestSimulateCommand:
    def test_trajectory_dump_shape(self, tmp_path):
        cfg = small_config()
        cfg["sim"].update({"particles": 5, "scenarios": 2, "dt": 0.25})
        cfg["jumps"] = {"marks": []}
        path = write_config(tmp_path, cfg)
        out = tmp_path / "traj.csv"
        assert main(["simulate", "--config", path, "--out", str(out)]) == 0
        lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        header, rows = lines[0], lines[1:]
        assert header == "scenario,particle,time,state,control"
        assert len(rows) == 2 * 5 * 5  # scenarios x particles x nodes


class TestVerifyCommands:
    def test_bsde_passes_and_is_deterministic(self, tmp_path):
        path = write_config(tmp_path, small_config())
        out1, out2 = tmp_path / "b1.json", tmp_path / "b2.json"
        assert main(["verify", "bsde", "--config", path, "--out", str(out1)]) == 0
        assert main(["verify", "bsde", "--config", path, "--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()
        report = json.loads(out1.read_text())["report"]
        assert report["passed"] is True
        assert report["stats"]["terminal_residual"] <= 1e-12

    def test_smp_passes(self, tmp_path):
        path = write_config(tmp_path, small_config())
        out = tmp_path / "smp.json"
        assert main(["verify", "smp", "--config", path, "--out", str(out)]) == 0

    def test_hjb_passes(self, tmp_path):
        path = write_config(tmp_path, small_config())
        assert main(["verify", "hjb", "--config", path]) == 0

    def test_compare_noise_alias(self, tmp_path):
        path = write_config(tmp_path, small_config())
        out = tmp_path / "noise.json"
        assert main(["compare-noise", "--config", path, "--out", str(out)]) == 0
        assert json.loads(out.read_text())["report"]["name"] == "noise-modes"

    def test_failing_check_exits_1(self, tmp_path):
        cfg = small_config()
        cfg["verify"]["chattering"] = {
            "support": [0.2, 0.8],
            "weights": [0.5, 0.5],
            "levels": [2, 4],
            "sigma_factor": 1e-9,
        }
        path = write_config(tmp_path, cfg)
        out = tmp_path / "chat.json"
        assert main(["chattering", "--config", path, "--out", str(out)]) == 1
        assert json.loads(out.read_text())["report"]["passed"] is False


class TestFpPairingDump:
    def test_fp_writes_pairing_table_when_configured(self, tmp_path):
        cfg = small_config()
        cfg["sim"].update({"particles": 60, "scenarios": 2, "dt": 0.05})
        table = tmp_path / "pairings.csv"
        cfg["output"] = {"fp_pairings": str(table)}
        path = write_config(tmp_path, cfg)
        code = main(["verify", "fp", "--config", path, "--out", str(tmp_path / "fp.json")])
        assert code in (0, 1)  # tiny budget: the ratio verdict is not the point here
        lines = [l for l in table.read_text().splitlines() if not l.startswith("#")]
        assert lines[0] == "step,phi,predicted,observed,residual"
        assert len(lines) > 1


class TestChatteringCommand:
    def test_runs_and_reports_gap_sequence(self, tmp_path):
        path = write_config(tmp_path, small_config())
        out = tmp_path / "chat.json"
        code = main(["chattering", "--config", path, "--out", str(out)])
        report = json.loads(out.read_text())["report"]
        assert report["stats"]["levels"] == [2, 8]
        assert len(report["stats"]["gaps"]) == 2
        assert code in (0, 1)

    def test_thread_invariance(self, tmp_path):
        path = write_config(tmp_path, small_config())
        out1, out2 = tmp_path / "c1.json", tmp_path / "c2.json"
        main(["chattering", "--config", path, "--out", str(out1)])
        main(["chattering", "--config", path, "--out", str(out2), "--threads", "3"])
        assert out1.read_bytes() == out2.read_bytes()
