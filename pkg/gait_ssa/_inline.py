"""A worker that augments in a thread of the calling process.

Used for ``workers=0`` and deterministic training, and wherever spawning
processes is not worth it (tests, tiny batches)."""

from time import perf_counter
from typing import Optional

import trio
from outcome import Outcome, capture

from . import _abc
from _gait_ssa_workers import run_plan


class InlineWorker(_abc.AbstractWorker):
    def __init__(self, idle_timeout, plan):
        self.idle_timeout = idle_timeout
        self.plan = plan
        self._started = False
        self._closed = False
        self._last_used = perf_counter()

    async def start(self):
        await trio.lowlevel.checkpoint_if_cancelled()
        self._started = True

    async def run_job(self, batch, seeds) -> Optional[Outcome]:
        if self._closed:
            await trio.lowlevel.checkpoint()
            return None
        try:
            return await trio.to_thread.run_sync(capture, run_plan, self.plan, batch, seeds)
        finally:
            self._last_used = perf_counter()

    def is_alive(self):
        if perf_counter() - self._last_used > self.idle_timeout:
            self._closed = True
        return not self._closed

    def shutdown(self):
        self._closed = True

    async def wait(self):
        await trio.lowlevel.cancel_shielded_checkpoint()
        # same as a process that was never started
        return 0 if self._started else None


class InlineWorkerCache(_abc.WorkerCache):
    def prune(self):
        while self and not self[0].is_alive():
            self.popleft()

    def shutdown(self, timeout):
        for worker in self:
            worker.shutdown()
