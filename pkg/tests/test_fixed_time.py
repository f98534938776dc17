import time

import pytest

from tftps.fixed_time import (
    CALIBRATION_ENV,
    CalibrationError,
    OpClass,
    budget_from_samples,
    calibrate,
    consume_overrun_events,
    load_budgets,
    observe,
    registered_op_classes,
    run_fixed,
    save_budgets,
)
from tftps.groups import ParameterError

MS = 1_000_000  # ns


class TestBudgetArithmetic:
    def test_max_times_factor(self):
        op = OpClass("demo.op", 64)
        budget = budget_from_samples(op, [12 * MS, 15 * MS, 13 * MS], 1.2)
        assert budget.budget_ns == 18 * MS
        assert budget.samples == 3

    def test_factor_one_keeps_observed_max(self):
        op = OpClass("demo.op", 64)
        budget = budget_from_samples(op, [5 * MS, 7 * MS], 1.0)
        assert budget.budget_ns == 7 * MS

    def test_factor_below_one_rejected(self):
        with pytest.raises(ParameterError):
            budget_from_samples(OpClass("demo.op", 0), [MS], 0.9)

    def test_empty_samples(self):
        with pytest.raises(CalibrationError):
            budget_from_samples(OpClass("demo.op", 0), [], 1.5)

    def test_registers_op_class(self):
        budget_from_samples(OpClass("demo.registered", 1), [MS], 1.0)
        assert "demo.registered" in registered_op_classes()


class TestCalibrate:
    def test_minimum_sample_count_enforced(self):
        with pytest.raises(ParameterError):
            calibrate(OpClass("demo.op", 0), lambda: None, n_samples=29)

    def test_budget_covers_observed_workload(self):
        budget = calibrate(OpClass("demo.sleepy", 0), lambda: time.sleep(0.002), n_samples=30, safety_factor=1.5)
        assert budget.budget_ns >= 2 * MS
        assert budget.samples == 30

    def test_workload_failure_wrapped(self):
        def broken():
            raise RuntimeError("boom")

        with pytest.raises(CalibrationError):
            calibrate(OpClass("demo.broken", 0), broken, n_samples=30)


class TestRunFixed:
    def test_pads_to_budget(self):
        budget = budget_from_samples(OpClass("demo.pad", 0), [18 * MS], 1.0)
        consume_overrun_events()
        result, observed = run_fixed(budget, lambda: time.sleep(0.005) or "out")
        assert result == "out"
        assert budget.budget_ns <= observed <= budget.budget_ns + 5 * MS
        assert consume_overrun_events() == []

    def test_overrun_returns_result_and_records_event(self):
        budget = budget_from_samples(OpClass("demo.tight", 0), [1 * MS], 1.0)
        consume_overrun_events()
        result, observed = run_fixed(budget, lambda: time.sleep(0.01) or 41 + 1)
        assert result == 42
        assert observed >= 10 * MS
        events = consume_overrun_events()
        assert len(events) == 1
        assert events[0].budget_ns == budget.budget_ns
        assert events[0].actual_ns == observed

    def test_completion_time_is_input_independent(self):
        budget = budget_from_samples(OpClass("demo.two", 0), [10 * MS], 1.2)
        fast = [run_fixed(budget, lambda: time.sleep(0.001))[1] for _ in range(30)]
        slow = [run_fixed(budget, lambda: time.sleep(0.008))[1] for _ in range(30)]
        mean_fast = sum(fast) / len(fast)
        mean_slow = sum(slow) / len(slow)
        assert abs(mean_fast - mean_slow) < 0.05 * budget.budget_ns


class TestObserve:
    def test_returns_output_and_elapsed(self):
        out, sample = observe(lambda: "value")
        assert out == "value"
        assert sample.elapsed_ns >= 0

    def test_observing_padded_operation_sees_the_budget(self):
        budget = budget_from_samples(OpClass("demo.nested", 0), [5 * MS], 1.0)
        _, sample = observe(lambda: run_fixed(budget, lambda: None))
        assert sample.elapsed_ns >= budget.budget_ns

    def test_leaky_workload_is_monotone(self):
        def leak(n):
            _, sample = observe(lambda: time.sleep(0.0005 * n))
            return sample.elapsed_ns

        times = [leak(n) for n in (1, 4, 8)]
        assert times[0] < times[1] < times[2]


class TestPersistence:
    def test_save_and_load(self, tmp_path):
        path = tmp_path / "calibration.txt"
        budgets = [
            budget_from_samples(OpClass("cs.decrypt", 1032), [40 * MS], 1.5),
            budget_from_samples(OpClass("cs.encrypt", 1032), [30 * MS], 1.5),
        ]
        save_budgets(budgets, path)
        loaded = load_budgets(path)
        assert loaded[("cs.decrypt", 1032)].budget_ns == 60 * MS
        assert loaded[("cs.encrypt", 1032)].budget_ns == 45 * MS
        text = path.read_text()
        assert "cs.decrypt:1032=60000000" in text

    def test_save_merges_existing(self, tmp_path):
        path = tmp_path / "calibration.txt"
        save_budgets([budget_from_samples(OpClass("a.op", 1), [MS], 1.0)], path)
        save_budgets([budget_from_samples(OpClass("b.op", 2), [2 * MS], 1.0)], path)
        loaded = load_budgets(path)
        assert set(loaded) == {("a.op", 1), ("b.op", 2)}

    def test_env_var_selects_path(self, tmp_path, monkeypatch):
        target = tmp_path / "from-env.txt"
        monkeypatch.setenv(CALIBRATION_ENV, str(target))
        save_budgets([budget_from_samples(OpClass("env.op", 3), [MS], 1.0)])
        assert target.exists()
        assert ("env.op", 3) in load_budgets()

    def test_missing_file_is_empty(self, tmp_path):
        assert load_budgets(tmp_path / "absent.txt") == {}

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("nonsense\n")
        with pytest.raises(CalibrationError):
            load_budgets(path)
