import json

import pytest

from netfi.cli import EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, main
from netfi.services.param_db import FaultParameterDatabase
from netfi.services.presets import condition_scenario
from netfi.services.reporting import TRACE_HEADER, read_trace, simulate_stream
from netfi.services.scenario import resolve


def error_line(capsys) -> str:
    err = capsys.readouterr().err.strip().splitlines()
    return err[-1]


class TestSimulate:
    def test_normal(self, scenarios_dir, capsys):
        assert main(["simulate", "--scenario", str(scenarios_dir / "normal.json")]) == EXIT_OK
        assert "dropped=0" in capsys.readouterr().out

    def test_trace_is_deterministic(self, scenarios_dir, tmp_path):
        paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
        for path in paths:
            main(["simulate", "--scenario", str(scenarios_dir / "outage-30.json"),
                  "--packets", "20000", "--seed", "7", "--trace", str(path)])
        assert paths[0].read_bytes() == paths[1].read_bytes()
        assert paths[0].read_text().startswith(TRACE_HEADER)
        trace = read_trace(paths[0])
        assert list(trace.columns) == ["sequence", "arrival_us", "verdict", "release_us"]
        assert trace["release_us"][trace["verdict"] == "dropped"].isna().all()

    def test_different_seed_different_trace(self, scenarios_dir, tmp_path):
        for seed, name in (("1", "a.csv"), ("2", "b.csv")):
            main(["simulate", "--scenario", str(scenarios_dir / "delay-100.json"),
                  "--packets", "2000", "--seed", seed, "--trace", str(tmp_path / name)])
        assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "b.csv").read_bytes()

    def test_delay_condition_report(self, scenarios_dir, tmp_path, capsys):
        out = tmp_path / "report.csv"
        code = main(["simulate", "--scenario", str(scenarios_dir / "delay-500.json"),
                     "--packets", "100000", "--out", str(out)])
        assert code == EXIT_OK
        assert "all pass" in capsys.readouterr().out
        assert out.read_text().splitlines()[0].endswith("result")
        assert [p.name for p in tmp_path.iterdir()] == ["report.csv"]

    def test_target_scenario_with_database(self, scenarios_dir, reference_db_file, capsys):
        code = main(["simulate", "--scenario", str(scenarios_dir / "delay-300+loss-30.json"),
                     "--db", str(reference_db_file), "--packets", "50000"])
        assert code in (EXIT_OK, EXIT_VALIDATION)
        out = capsys.readouterr().out
        assert "stage 0" in out and "stage 1" in out

    @pytest.mark.slow
    def test_outage_rate(self):
        pipeline = resolve(condition_scenario("outage-10"))
        run = simulate_stream(pipeline, 2_000_000, 1000.0)
        assert run.stats.drop_rate == pytest.approx(0.10, abs=0.02)


class TestErrors:
    def test_missing_scenario_file(self, tmp_path, capsys):
        assert main(["simulate", "--scenario", str(tmp_path / "nope.json")]) == EXIT_USAGE
        assert error_line(capsys).startswith("netfi: error: scenario:")

    def test_target_without_database(self, scenarios_dir, capsys):
        assert main(["simulate", "--scenario", str(scenarios_dir / "loss-30.json")]) == EXIT_USAGE
        assert error_line(capsys).startswith("netfi: error: resolve:")

    def test_unknown_command(self, capsys):
        assert main(["fly"]) == EXIT_USAGE
        assert error_line(capsys).startswith("netfi: error: usage:")

    def test_bad_packet_count(self, scenarios_dir, capsys):
        code = main(["simulate", "--scenario", str(scenarios_dir / "normal.json"), "--packets", "-1"])
        assert code == EXIT_USAGE
        assert error_line(capsys).startswith("netfi: error: value:")

    def test_run_with_equal_endpoints(self, scenarios_dir, capsys):
        code = main(["run", "--scenario", str(scenarios_dir / "normal.json"),
                     "--listen", "127.0.0.1:9000", "--forward", "127.0.0.1:9000"])
        assert code == EXIT_USAGE
        assert error_line(capsys).startswith("netfi: error: config:")

    def test_empty_jobs(self, tmp_path, capsys):
        jobs = tmp_path / "jobs.json"
        jobs.write_text('{"version": 1, "jobs": []}')
        assert main(["optimize", str(jobs), "--out", str(tmp_path / "db.json")]) == EXIT_USAGE
        assert "no jobs" in error_line(capsys)

    def test_unwritable_trace_path(self, scenarios_dir, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("")
        code = main(["simulate", "--scenario", str(scenarios_dir / "normal.json"),
                     "--trace", str(blocker / "trace.csv")])
        assert code == EXIT_USAGE
        assert error_line(capsys).startswith("netfi: error: io:")

    def test_unwritable_database_path(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert main(["reference", "--out", str(blocker / "db.json")]) == EXIT_USAGE
        assert error_line(capsys).startswith("netfi: error: io:")

    def test_bad_seed_env(self, scenarios_dir, monkeypatch, capsys):
        monkeypatch.setenv("NETFI_SEED", "abc")
        assert main(["simulate", "--scenario", str(scenarios_dir / "normal.json")]) == EXIT_USAGE
        assert error_line(capsys).startswith("netfi: error: usage:")


class TestDatabaseCommands:
    def test_reference_then_list(self, tmp_path, capsys):
        db = tmp_path / "ref.json"
        assert main(["reference", "--out", str(db)]) == EXIT_OK
        assert len(FaultParameterDatabase.load(db)) == 9
        capsys.readouterr()
        assert main(["db-list", "--db", str(db)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "packet_loss" in out and "comm_loss" in out

    def test_validate_empty(self, tmp_path, capsys):
        db = tmp_path / "empty.json"
        FaultParameterDatabase().save(db)
        assert main(["validate", "--db", str(db)]) == EXIT_OK
        assert "no entries" in capsys.readouterr().out

    def test_validate_flags_edited_entry(self, tmp_path, reference_db):
        doc = json.loads(reference_db.to_json())
        doc["entries"] = [e for e in doc["entries"] if e["type"] == "delay"]
        doc["entries"][0]["theta"]["lambda_1"] *= 2
        db = tmp_path / "edited.json"
        db.write_text(json.dumps(doc))
        assert main(["validate", "--db", str(db), "--sample-factor", "1"]) == EXIT_VALIDATION

    def test_validate_delay_entries_pass(self, tmp_path, reference_db):
        doc = json.loads(reference_db.to_json())
        doc["entries"] = [e for e in doc["entries"] if e["type"] == "delay"]
        db = tmp_path / "delay.json"
        db.write_text(json.dumps(doc))
        assert main(["validate", "--db", str(db)]) == EXIT_OK

    @pytest.mark.slow
    def test_validate_reference(self, reference_db_file):
        assert main(["validate", "--db", str(reference_db_file)]) == EXIT_OK

    def test_optimize_quick_jobs(self, scenarios_dir, tmp_path, capsys):
        db = tmp_path / "quick.json"
        code = main(["optimize", str(scenarios_dir / "jobs" / "quick.json"), "--out", str(db), "--seed", "3"])
        assert code in (EXIT_OK, EXIT_VALIDATION)
        assert len(FaultParameterDatabase.load(db)) == 2
        assert "wrote 2 entries" in capsys.readouterr().out

    def test_optimize_infeasible_exit_code(self, tmp_path):
        jobs = tmp_path / "jobs.json"
        jobs.write_text(json.dumps({"jobs": [{
            "type": "comm_loss", "target": 0.9, "num_samples": 100000,
            "frozen": {"l_min": 0, "l_max": 2000, "cooldown": 1000},
            "de": {"max_generations": 3},
        }]}))
        db = tmp_path / "db.json"
        assert main(["optimize", str(jobs), "--out", str(db)]) == EXIT_VALIDATION
        assert not next(iter(FaultParameterDatabase.load(db))).ok
