"""Augmentation workers in child processes, one pair of pipes each."""

import logging
import multiprocessing
import sys
import time
from itertools import count
from pickle import HIGHEST_PROTOCOL, dumps, loads
from typing import List, Optional

import trio
from outcome import Outcome, Error

from . import _abc
import _gait_ssa_workers as workers

multiprocessing.get_logger()  # to register multiprocessing atexit handler

logger = logging.getLogger(__name__)

if sys.platform == "win32":
    from trio.lowlevel import WaitForSingleObject as wait_for_sentinel
else:
    from trio.lowlevel import wait_readable as wait_for_sentinel


class BrokenWorkerProcessError(_abc.BrokenWorkerError):
    __doc__ = f"""{_abc.BrokenWorkerError.__doc__}
    The last argument of the exception is the underlying
    :class:`multiprocessing.Process` which may be inspected for e.g. exit codes.
    """


def _join_by(proc, deadline: float) -> Optional[int]:
    """Join ``proc`` until ``deadline`` and return its exit code, if any."""
    while True:
        remaining = deadline - time.perf_counter()
        if remaining <= workers.MAX_TIMEOUT:
            # a zero timeout races on macOS
            proc.join(remaining if remaining > 0 else -0.1)
            return proc.exitcode
        proc.join(workers.MAX_TIMEOUT)
        if proc.exitcode is not None:
            return proc.exitcode


class WorkerProcCache(_abc.WorkerCache):
    def prune(self):
        # the oldest idle workers time out first
        while self and not self[0].is_alive():
            self.popleft()

    def shutdown(self, timeout):
        for worker in self:
            worker.shutdown()
        deadline = time.perf_counter() + timeout
        unclean: List[multiprocessing.Process] = []
        killed: List[multiprocessing.Process] = []
        for worker in self:
            exitcode = _join_by(worker.proc, deadline)
            if exitcode is None:
                worker.kill()
                killed.append(worker.proc)
            elif exitcode:
                unclean.append(worker.proc)
        if not (unclean or killed):
            return
        for proc in killed:
            proc.join()
        logger.warning(
            "augment worker shutdown: %d unclean exits (%s), %d killed",
            len(unclean),
            ", ".join(str(proc.exitcode) for proc in unclean) or "-",
            len(killed),
        )
        raise BrokenWorkerProcessError(
            f"Graceful shutdown failed: {len(unclean)} nonzero exit codes "
            f"and {len(killed)} forceful terminations.",
            *unclean,
            *killed,
        )


class AugmentProcWorker(_abc.AbstractWorker):
    """An augmentation worker in a child process, fed through a pair of pipes.

    The plan is pickled once at construction and unpickled in the child.
    Blocking pipe reads and writes happen in abandonable threads; a cancelled
    job kills the process, which unblocks any thread left behind."""

    _proc_counter = count()
    mp_context = multiprocessing.get_context("spawn")
    # forked children get copies of every open pipe end
    inherits_parent_pipes = False

    def __init__(self, idle_timeout, plan):
        self._child_recv_pipe, self._send_pipe = self.mp_context.Pipe(duplex=False)
        self._recv_pipe, self._child_send_pipe = self.mp_context.Pipe(duplex=False)
        inherited = (self._send_pipe, self._recv_pipe) if self.inherits_parent_pipes else ()
        self.proc = self.mp_context.Process(
            target=workers.worker_behavior,
            args=(
                self._child_recv_pipe,
                self._child_send_pipe,
                idle_timeout,
                dumps(plan, protocol=HIGHEST_PROTOCOL),
                inherited,
            ),
            name=f"gait-ssa augment worker {next(self._proc_counter)}",
            daemon=True,
        )

    async def _start_process(self):
        await trio.to_thread.run_sync(self.proc.start)

    async def start(self):
        await self._start_process()
        # the child holds its own copies now; ours must go to see it hang up
        self._child_send_pipe.close()
        self._child_recv_pipe.close()
        try:
            code = await _abc.run_abandoning_thread(self._recv_pipe.recv_bytes)
        except EOFError:
            # mainly accidental recursive spawn
            with trio.CancelScope(shield=True):
                await self.wait()
            raise BrokenWorkerProcessError("Worker failed to start", self.proc) from None
        except BaseException:
            await self._kill_and_reap()
            raise
        assert code == workers.ACK
        logger.debug("started %s (pid %s)", self.proc.name, self.proc.pid)

    async def _kill_and_reap(self):
        self.kill()
        with trio.CancelScope(shield=True):
            await self.wait()  # noqa: TRIO102

    async def _send(self, job: bytes) -> bool:
        """False if the worker already stopped taking jobs."""
        try:
            await _abc.run_abandoning_thread(self._send_pipe.send_bytes, job)
        except OSError:
            # BrokenPipeError, or our own end closed by shutdown()
            with trio.CancelScope(shield=True):
                await self.wait()
            return False
        return True

    async def _receive(self) -> Optional[Outcome]:
        try:
            payload = await _abc.run_abandoning_thread(self._recv_pipe.recv_bytes)
        except EOFError:
            # a child spinning on recv_bytes would never notice otherwise
            self._send_pipe.close()
            with trio.CancelScope(shield=True):
                await self.wait()
            raise BrokenWorkerProcessError("Worker died unexpectedly:", self.proc) from None
        return loads(payload)

    async def run_job(self, batch, seeds) -> Optional[Outcome]:
        try:
            job = dumps((batch, seeds), protocol=HIGHEST_PROTOCOL)
        except BaseException as exc:  # noqa: TRIO103
            return Error(exc)  # noqa: TRIO104, TRIO910
        try:
            if not await self._send(job):
                return None
            return await self._receive()
        except BaseException:
            # a cancelled or failed exchange leaves the pipes in an unknown state
            await self._kill_and_reap()
            raise

    def is_alive(self):
        # also reaps a zombie child on Unix
        return self.proc.is_alive()

    def shutdown(self):
        self._send_pipe.close()

    def kill(self):
        self.proc.kill()

    async def wait(self):
        if self.proc.exitcode is not None or self.proc.pid is None:
            # finished, or never started
            await trio.lowlevel.cancel_shielded_checkpoint()
            return self.proc.exitcode
        await wait_for_sentinel(self.proc.sentinel)
        # join reaps the process; Trio GH#1296 on macOS
        self.proc.join()
        return self.proc.exitcode


class ForkAugmentWorker(AugmentProcWorker):
    inherits_parent_pipes = True

    async def _start_process(self):
        # forking from a thread is racy, and fork is fast
        await trio.lowlevel.checkpoint_if_cancelled()
        self.proc.start()


class ForkserverAugmentWorker(AugmentProcWorker):
    pass


_WORKER_CLASSES = {
    "spawn": AugmentProcWorker,
    "forkserver": ForkserverAugmentWorker,
    "fork": ForkAugmentWorker,
}

WORKER_PROC_MAP = {}
for _method in multiprocessing.get_all_start_methods():
    if _method in _WORKER_CLASSES:  # pragma: no branch
        _WORKER_CLASSES[_method].mp_context = multiprocessing.get_context(_method)
        WORKER_PROC_MAP[_method] = (_WORKER_CLASSES[_method], WorkerProcCache)

del _method
