"""Bounded worker pool for sweep grids."""

from __future__ import annotations

import asyncio
import logging
import multiprocessing
import pickle
from typing import TYPE_CHECKING, Any

import async_timeout

from .const import DEFAULT_RUN_TIMEOUT
from .core.const import RunStatus
from .core.error import RmLabError, RunFailedError
from .data import RunReport

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence
    from multiprocessing.connection import Connection

    from .config import RunSpec

_LOGGER = logging.getLogger(__name__)

POLL_INTERVAL = 0.02
KILL_GRACE = 1.0


def failed_report(run: RunSpec, error_code: str, message: str) -> RunReport:
    return RunReport(
        run_key=run.run_key,
        problem={"preset": run.problem.get("preset")},
        loss_spec=dict(run.loss),
        model=str(run.model.get("kind")),
        seeds={"model": run.seed, "sample": run.seed, "optim": run.seed},
        status=RunStatus.FAILED,
        error_code=error_code,
        message=message,
    )


def _child(worker: Callable[[RunSpec], RunReport], run: RunSpec, conn: Connection) -> None:
    """Process entry: run one cell and send back ``(kind, payload...)``."""
    try:
        report = worker(run)
        try:
            conn.send(("ok", report))
        except (pickle.PicklingError, TypeError, AttributeError):
            # closed-form models hold plain callables; the report stays useful without them
            report.final_model = None
            conn.send(("ok", report))
    except RmLabError as exc:
        conn.send(("error", exc.error_code or RunFailedError().error_code, str(exc)))
    except Exception as exc:  # noqa: BLE001  reported to the parent as a crash
        conn.send(("crash", f"{type(exc).__name__}: {exc}"))
    finally:
        conn.close()


class SweepCoordinator:
    """Runs every cell of a sweep; each worker owns its run end to end.

    Every run gets its own process, at most ``jobs`` at a time, so a run that
    exceeds ``run_timeout`` is killed and the sweep moves on. Reports come back
    in the order of the input runs whatever order they finish in.
    """

    def __init__(
        self,
        worker: Callable[[RunSpec], RunReport],
        jobs: int = 1,
        run_timeout: float = DEFAULT_RUN_TIMEOUT,
    ) -> None:
        self.worker = worker
        self.jobs = max(1, int(jobs))
        self.run_timeout = run_timeout
        self._context = multiprocessing.get_context()

    def run(self, runs: Sequence[RunSpec]) -> list[RunReport]:
        return asyncio.run(self.async_run(runs))

    async def async_run(self, runs: Sequence[RunSpec]) -> list[RunReport]:
        semaphore = asyncio.Semaphore(self.jobs)
        _LOGGER.info("Starting %d runs with %d worker(s)", len(runs), self.jobs)
        reports = await asyncio.gather(*(self._async_one(run, semaphore) for run in runs))
        failed = sum(1 for r in reports if RunStatus(r.status) is RunStatus.FAILED)
        _LOGGER.info("Sweep finished: %d runs, %d failed", len(reports), failed)
        return list(reports)

    async def _async_one(self, run: RunSpec, semaphore: asyncio.Semaphore) -> RunReport:
        async with semaphore:
            _LOGGER.debug("Dispatching %s", run.run_key)
            try:
                return await self._async_in_process(run)
            except TimeoutError:
                _LOGGER.error("Run %s timed out after %.1f s", run.run_key, self.run_timeout)
                return failed_report(run, "TIMEOUT", f"run exceeded {self.run_timeout} s")
            except RmLabError as exc:
                _LOGGER.error("Run %s failed: %s", run.run_key, exc)
                return failed_report(run, exc.error_code or RunFailedError().error_code, str(exc))

    async def _async_in_process(self, run: RunSpec) -> RunReport:
        receiver, sender = self._context.Pipe(duplex=False)
        process = self._context.Process(
            target=_child, args=(self.worker, run, sender), name=f"rm-lab[{run.run_key}]", daemon=True
        )
        process.start()
        sender.close()
        received = False
        try:
            async with async_timeout.timeout(self.run_timeout):
                message = await self._async_receive(receiver, process)
            received = True
        finally:
            receiver.close()
            _stop(process, KILL_GRACE if received else 0.0)
        return _unpack(message)

    @staticmethod
    async def _async_receive(receiver: Connection, process: Any) -> tuple[Any, ...]:
        while True:
            if receiver.poll():
                try:
                    return receiver.recv()
                except EOFError:
                    break
            if not process.is_alive() and not receiver.poll():
                break
            await asyncio.sleep(POLL_INTERVAL)
        # the pipe can close before the exit status is reaped
        process.join(timeout=KILL_GRACE)
        raise RunFailedError(f"worker process exited with code {process.exitcode} before reporting")


def _stop(process: Any, grace: float) -> None:
    """Give a worker ``grace`` seconds to exit, then kill it."""
    process.join(timeout=grace)
    if process.is_alive():
        process.kill()
        process.join(timeout=KILL_GRACE)
    if not process.is_alive():
        process.close()


def _unpack(message: tuple[Any, ...]) -> RunReport:
    kind = message[0]
    if kind == "ok":
        return message[1]
    if kind == "error":
        raise RmLabError(message[2], message[1])
    raise RunFailedError(message[1])
