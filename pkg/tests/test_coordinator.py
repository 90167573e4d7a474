from __future__ import annotations

import os
import time

from rm_lab.config import RunSpec
from rm_lab.coordinator import SweepCoordinator, failed_report
from rm_lab.core.const import RunStatus
from rm_lab.core.error import NumericError, RunFailedError
from rm_lab.data import RunReport

# workers live at module level so every multiprocessing start method can pickle them


def _spec(key: str, seed: int = 0) -> RunSpec:
    return RunSpec(key, {"preset": "poisson1d_sin"}, {"kind": "mlp"}, {}, {}, {}, seed)


def _ok(run: RunSpec) -> RunReport:
    return RunReport(run.run_key, {}, {}, "mlp", {"model": run.seed})


def _flaky(run: RunSpec) -> RunReport:
    if run.seed == 1:
        raise NumericError("loss became nan")
    if run.seed == 2:
        raise KeyError("widths")
    return _ok(run)


def _hangs_on_seed_zero(run: RunSpec) -> RunReport:
    if run.seed == 0:
        time.sleep(60.0)
    return _ok(run)


def _dies(run: RunSpec) -> RunReport:
    os._exit(3)


class TestCoordinator:
    def test_reports_keep_input_order(self):
        runs = [_spec(f"seed={s}", s) for s in range(5)]
        reports = SweepCoordinator(_ok, jobs=2).run(runs)
        assert [r.run_key for r in reports] == [r.run_key for r in runs]
        assert all(RunStatus(r.status) is RunStatus.OK for r in reports)
        assert [r.seeds["model"] for r in reports] == list(range(5))

    def test_failures_are_captured(self):
        reports = SweepCoordinator(_flaky).run([_spec(f"seed={s}", s) for s in range(3)])
        assert reports[0].error_code is None
        assert reports[1].status is RunStatus.FAILED
        assert reports[1].error_code == "NON_FINITE"
        assert reports[1].message == "loss became nan"
        assert reports[2].error_code == RunFailedError().error_code
        assert "KeyError" in reports[2].message

    def test_timeout_stops_the_run(self):
        started = time.perf_counter()
        reports = SweepCoordinator(_hangs_on_seed_zero, run_timeout=0.5).run([_spec("seed=0")])
        elapsed = time.perf_counter() - started
        assert reports[0].error_code == "TIMEOUT"
        assert reports[0].status is RunStatus.FAILED
        # the hung worker is killed, so the sweep does not wait out its 60 s sleep
        assert elapsed < 15.0

    def test_hung_run_does_not_hold_a_worker(self):
        runs = [_spec(f"seed={s}", s) for s in range(4)]
        started = time.perf_counter()
        reports = SweepCoordinator(_hangs_on_seed_zero, jobs=2, run_timeout=1.0).run(runs)
        elapsed = time.perf_counter() - started
        assert [r.error_code for r in reports] == ["TIMEOUT", None, None, None]
        assert elapsed < 20.0

    def test_dead_worker_is_a_failed_run(self):
        reports = SweepCoordinator(_dies).run([_spec("seed=0")])
        assert reports[0].status is RunStatus.FAILED
        assert reports[0].error_code == "RUN_FAILED"
        assert "exited with code 3" in reports[0].message

    def test_failed_report_fields(self):
        report = failed_report(_spec("n=4,seed=3", 3), "INVALID_CONFIG", "bad")
        assert report.problem == {"preset": "poisson1d_sin"}
        assert report.as_dict()["status"] == "failed"
