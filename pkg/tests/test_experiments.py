import csv
import json
from fractions import Fraction

import pytest

from app.experiments import (
    EXIT_PASS,
    EXIT_USAGE,
    SWEEP_COLUMNS,
    TIMING_COLUMNS,
    ExperimentSpec,
    InputSpec,
    handle_optimize,
    handle_run,
    handle_sweep,
    handle_verify,
    load_spec,
    realize,
)
from app.protocol import Config
from app.simulator import SchedulerKind, SchedulerPolicy, SimTrace
from scripts.cclab import main, parse_seeds

F = Fraction


@pytest.fixture
def spec(tmp_path) -> ExperimentSpec:
    return ExperimentSpec(config=Config(n=4, f=1, epsilon="1/10"), seeds=[1], output_dir=tmp_path / "out")


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


class TestRun:
    def test_writes_trace_and_verdict(self, spec):
        result = handle_run(spec)
        assert result["exit_code"] == EXIT_PASS
        assert result["success"]
        verdict = json.loads((spec.output_dir / "verdict.json").read_text())
        assert verdict["passed"] is True
        assert SimTrace.from_jsonl(result["trace_path"]).t_end == result["summary"]["t_end"]

    def test_gzip_trace(self, spec):
        result = handle_run(spec.model_copy(update={"compress": True}))
        assert result["trace_path"].endswith("trace.jsonl.gz")

    def test_missing_inputs_are_a_usage_error(self, spec):
        bad = spec.model_copy(update={"inputs": InputSpec(kind="explicit", values={0: ["0"], 1: ["1"]})})
        assert handle_run(bad)["exit_code"] == EXIT_USAGE

    def test_realize_is_seeded(self, spec):
        random_spec = spec.model_copy(update={"random_faults": True})
        assert realize(random_spec, 5) == realize(random_spec, 5)

    def test_slow_set_defaults_to_the_last_f(self, spec):
        slow = spec.model_copy(update={"policy": SchedulerPolicy(kind=SchedulerKind.SLOW_SET)})
        _, _, policy = realize(slow, 2)
        assert policy.slow_set == [3]
        assert policy.seed == 2

    def test_spec_file_round_trip(self, spec, tmp_path):
        path = tmp_path / "spec.json"
        path.write_text(spec.model_dump_json())
        assert load_spec(path) == spec


class TestSweep:
    def test_rows_are_ordered_by_seed(self, spec):
        result = handle_sweep(spec, seeds=[2, 0, 1], workers=1)
        assert result["exit_code"] == EXIT_PASS
        rows = read_rows(result["sweep_path"])
        assert [row["seed"] for row in rows] == ["0", "1", "2"]
        assert all(row["passed"] == "True" for row in rows)

    def test_repeated_seed_gives_identical_rows(self, spec):
        rows = read_rows(handle_sweep(spec, seeds=[3, 3], workers=1)["sweep_path"])
        assert rows[0] == rows[1]

    def test_workers_do_not_change_the_output(self, spec, tmp_path):
        serial = handle_sweep(spec, seeds=[0, 1, 2], output=tmp_path / "serial.csv", workers=1)
        parallel = handle_sweep(spec, seeds=[0, 1, 2], output=tmp_path / "parallel.csv", workers=2)
        assert (tmp_path / "serial.csv").read_text() == (tmp_path / "parallel.csv").read_text()
        assert serial["exit_code"] == parallel["exit_code"] == EXIT_PASS

    def test_empty_seed_list_writes_the_header(self, spec):
        result = handle_sweep(spec, seeds=[], workers=1)
        assert result["exit_code"] == EXIT_PASS
        with open(result["sweep_path"], encoding="utf-8") as fh:
            assert fh.read() == ",".join(SWEEP_COLUMNS) + "\n"

    def test_timing_columns(self, spec):
        rows = read_rows(handle_sweep(spec, seeds=[0], workers=1, timing=True)["sweep_path"])
        assert list(rows[0]) == SWEEP_COLUMNS + TIMING_COLUMNS
        assert float(rows[0]["runtime_s"]) >= 0

    def test_random_faults(self, spec):
        faulty = spec.model_copy(update={"random_faults": True})
        result = handle_sweep(faulty, seeds=list(range(5)), workers=1)
        assert result["exit_code"] == EXIT_PASS, result["failed_seeds"]


class TestVerifyAndOptimize:
    def test_verify_recorded_run(self, spec, tmp_path):
        trace_path = handle_run(spec)["trace_path"]
        result = handle_verify(trace_path, tmp_path / "again.json")
        assert result["exit_code"] == EXIT_PASS
        assert (tmp_path / "again.json").read_text() == (spec.output_dir / "verdict.json").read_text()

    def test_verify_garbage(self, tmp_path):
        path = tmp_path / "garbage.jsonl"
        path.write_text("this is not a trace\n")
        assert handle_verify(path)["exit_code"] == EXIT_USAGE

    def test_verify_empty_msg_set(self, spec, tmp_path):
        trace = SimTrace.from_jsonl(handle_run(spec)["trace_path"])
        events = [dict(e) for e in trace.events]
        target = next(e for e in events if e["type"] == "state" and e.get("senders"))
        target["senders"] = []
        path = tmp_path / "empty_senders.jsonl"
        SimTrace(events).to_jsonl(path)
        result = handle_verify(path)
        assert result["exit_code"] == EXIT_USAGE
        assert "empty MSG set" in result["message"]

    def test_verify_without_stable_vector_deliveries(self, spec, tmp_path):
        trace = SimTrace.from_jsonl(handle_run(spec)["trace_path"])
        path = tmp_path / "no_deliveries.jsonl"
        SimTrace([e for e in trace.events if e["type"] != "sv_deliver"]).to_jsonl(path)
        assert handle_verify(path)["exit_code"] == EXIT_USAGE

    def test_verify_missing_file(self, tmp_path):
        assert handle_verify(tmp_path / "absent.jsonl")["exit_code"] == EXIT_USAGE

    def test_optimize_linear_cost(self, spec, tmp_path):
        trace_path = handle_run(spec)["trace_path"]
        result = handle_optimize(trace_path, {"kind": "linear", "coeffs": ["1"]}, tmp_path / "opt.json")
        assert result["exit_code"] == EXIT_PASS
        saved = json.loads((tmp_path / "opt.json").read_text())
        assert sorted(saved["processes"]) == ["0", "1", "2", "3"]

    def test_optimize_bad_cost(self, spec):
        trace_path = handle_run(spec)["trace_path"]
        assert handle_optimize(trace_path, {"kind": "linear"})["exit_code"] == EXIT_USAGE


class TestCli:
    def test_parse_seeds(self):
        assert parse_seeds("0:3") == [0, 1, 2]
        assert parse_seeds("4,1") == [4, 1]
        assert parse_seeds("7") == [7]
        assert parse_seeds("") == []

    def test_run(self, tmp_path):
        assert main(["run", "--n", "4", "--f", "1", "--seed", "3", "--output-dir", str(tmp_path)]) == 0
        assert (tmp_path / "verdict.json").exists()

    def test_incorrect_inputs_mode_rejects_small_n(self, tmp_path):
        assert main(["run", "--n", "3", "--f", "1", "--output-dir", str(tmp_path)]) == EXIT_USAGE

    def test_correct_inputs_mode_accepts_small_n(self, tmp_path):
        argv = ["run", "--n", "3", "--f", "1", "--mode", "correct-inputs", "--output-dir", str(tmp_path)]
        assert main(argv) == 0

    def test_flags_override_the_spec_file(self, spec, tmp_path):
        path = tmp_path / "spec.json"
        path.write_text(spec.model_dump_json())
        out = tmp_path / "cli"
        assert main(["run", str(path), "--epsilon", "1/4", "--preset", "corners", "--output-dir", str(out)]) == 0
        verdict = json.loads((out / "verdict.json").read_text())
        assert verdict["summary"]["epsilon"] == "1/4"

    def test_explicit_inputs(self, tmp_path):
        inputs = json.dumps({"0": ["0"], "1": ["1/3"], "2": ["2/3"], "3": ["1"]})
        argv = ["run", "--n", "4", "--f", "1", "--inputs", inputs, "--output-dir", str(tmp_path)]
        assert main(argv) == 0

    def test_sweep(self, tmp_path):
        out = tmp_path / "sweep.csv"
        argv = ["sweep", "--n", "4", "--f", "1", "--seeds", "0:3", "--workers", "1", "--output", str(out)]
        assert main(argv) == 0
        assert len(read_rows(out)) == 3

    def test_verify_and_optimize(self, tmp_path):
        main(["run", "--n", "4", "--f", "1", "--output-dir", str(tmp_path)])
        cost = tmp_path / "cost.json"
        cost.write_text(json.dumps({"kind": "quadratic", "center": ["1/2"]}))
        assert main(["verify", str(tmp_path / "trace.jsonl")]) == 0
        assert main(["optimize", str(tmp_path / "trace.jsonl"), str(cost)]) == 0

    def test_missing_spec_file(self, tmp_path):
        assert main(["run", str(tmp_path / "absent.json")]) == EXIT_USAGE
