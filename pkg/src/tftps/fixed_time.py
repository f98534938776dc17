"""Worst-case fixed-time execution: calibrate a budget, pad every run to it.

An operation class is calibrated by running a representative workload and
taking max(observed) * safety_factor as the budget.  run_fixed then pads
each invocation's observable completion to that budget on a monotonic
clock (sleep to within a margin, spin the rest), so equal-length inputs
complete in indistinguishable time.  observe() is the unpadded measurement
instrument the game adversaries use.

Budgets persist to a text calibration file (`op:len=budget_ns` lines) so
repeated runs are stable per machine; TFTPS_CALIBRATION overrides the path.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .groups import ParameterError

CALIBRATION_ENV = "TFTPS_CALIBRATION"
DEFAULT_CALIBRATION_FILE = "tftps-calibration.txt"

# Sleep until this much budget remains, then spin; bounds padding jitter
# without burning a full core for the whole budget.
_SPIN_MARGIN_NS = 2_000_000


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class OpClass:
    """An operation class: a registered name plus its input length in octets."""

    name: str
    input_length: int


@dataclass(frozen=True)
class TimeBudget:
    op_class: OpClass
    budget_ns: int
    samples: int
    safety_factor: float


@dataclass(frozen=True)
class TimingSample:
    op_class: OpClass | None
    elapsed_ns: int
    timestamp_ns: int


@dataclass(frozen=True)
class OverrunEvent:
    op_class: OpClass
    actual_ns: int
    budget_ns: int


_registry: set[str] = set()
_overruns: list[OverrunEvent] = []
_lock = threading.Lock()


def register_op_class(name: str) -> None:
    with _lock:
        _registry.add(name)


def registered_op_classes() -> frozenset[str]:
    return frozenset(_registry)


def consume_overrun_events() -> list[OverrunEvent]:
    """Return and clear the BUDGET_OVERRUN events recorded so far."""
    with _lock:
        events, _overruns[:] = list(_overruns), []
    return events


def budget_from_samples(op_class: OpClass, samples_ns: list[int], safety_factor: float) -> TimeBudget:
    """budget = max(samples) * safety_factor."""
    if not samples_ns:
        raise CalibrationError("no calibration samples")
    if safety_factor < 1.0:
        raise ParameterError("safety_factor must be >= 1.0")
    budget = int(max(samples_ns) * safety_factor)
    if budget <= 0:
        raise CalibrationError("calibration produced a non-positive budget")
    register_op_class(op_class.name)
    return TimeBudget(op_class=op_class, budget_ns=budget, samples=len(samples_ns), safety_factor=safety_factor)


def calibrate(
    op_class: OpClass,
    workload: Callable[[], object],
    n_samples: int = 50,
    safety_factor: float = 1.5,
) -> TimeBudget:
    """Run the workload n_samples times and derive a worst-case budget.

    Calibration should run on an otherwise idle machine; the safety factor
    absorbs scheduler noise beyond the observed worst case.
    """
    if n_samples < 30:
        raise ParameterError(f"n_samples must be >= 30, got {n_samples}")
    samples = []
    for _ in range(n_samples):
        start = time.perf_counter_ns()
        try:
            workload()
        except Exception as exc:
            raise CalibrationError(f"workload failed during calibration: {exc}") from exc
        samples.append(time.perf_counter_ns() - start)
    return budget_from_samples(op_class, samples, safety_factor)


def run_fixed(budget: TimeBudget, operation: Callable[[], object]) -> tuple[object, int]:
    """Execute, then pad the observable completion to the budget.

    Returns (output, observed_completion_ns).  If the operation alone
    exceeds the budget a BUDGET_OVERRUN event is recorded and the result is
    still returned (availability over strictness); the overrun is visible
    to callers through consume_overrun_events().
    """
    start = time.perf_counter_ns()
    result = operation()
    deadline = start + budget.budget_ns
    now = time.perf_counter_ns()
    if now >= deadline:
        with _lock:
            _overruns.append(OverrunEvent(op_class=budget.op_class, actual_ns=now - start, budget_ns=budget.budget_ns))
        return result, now - start
    remaining = deadline - now
    if remaining > _SPIN_MARGIN_NS:
        time.sleep((remaining - _SPIN_MARGIN_NS) / 1e9)
    while time.perf_counter_ns() < deadline:
        pass
    return result, time.perf_counter_ns() - start


def observe(operation: Callable[[], object], op_class: OpClass | None = None) -> tuple[object, TimingSample]:
    """Run unpadded and report the raw elapsed time (the adversary's view)."""
    start = time.perf_counter_ns()
    result = operation()
    elapsed = time.perf_counter_ns() - start
    return result, TimingSample(op_class=op_class, elapsed_ns=elapsed, timestamp_ns=start)


# ---------------------------------------------------------------------------
# Calibration file: one `<op_class>:<input_length>=<budget_ns>` line per budget.
# ---------------------------------------------------------------------------

def calibration_path(explicit: str | Path | None = None) -> Path:
    if explicit is not None:
        return Path(explicit)
    return Path(os.environ.get(CALIBRATION_ENV, DEFAULT_CALIBRATION_FILE))


def save_budgets(budgets: list[TimeBudget], path: str | Path | None = None) -> Path:
    target = calibration_path(path)
    existing = {}
    if target.exists():
        existing = {(b.op_class.name, b.op_class.input_length): b for b in load_budgets(target).values()}
    for b in budgets:
        existing[(b.op_class.name, b.op_class.input_length)] = b
    lines = [
        f"{name}:{length}={budget.budget_ns}"
        for (name, length), budget in sorted(existing.items())
    ]
    target.write_text("\n".join(lines) + "\n")
    return target


def load_budgets(path: str | Path | None = None) -> dict[tuple[str, int], TimeBudget]:
    """Load persisted budgets keyed by (op class name, input length)."""
    target = calibration_path(path)
    budgets: dict[tuple[str, int], TimeBudget] = {}
    if not target.exists():
        return budgets
    for raw in target.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            head, _, budget_str = line.partition("=")
            name, _, length_str = head.rpartition(":")
            op = OpClass(name=name, input_length=int(length_str))
            budgets[(op.name, op.input_length)] = TimeBudget(
                op_class=op, budget_ns=int(budget_str), samples=0, safety_factor=1.0
            )
            register_op_class(op.name)
        except ValueError as exc:
            raise CalibrationError(f"malformed calibration line: {raw!r}") from exc
    return budgets
