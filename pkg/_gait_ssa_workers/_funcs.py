"""Augmentation plans used by the worker tests.

They live here so workers running them never import trio or gait_ssa, which
keeps subprocess startup fast."""

import os
import signal
import sys


class EchoPlan:
    """Returns the batch unchanged, tagged with the seeds."""

    def augment_batch(self, batch, seeds):
        return batch, list(seeds)


class PidPlan:
    def augment_batch(self, batch, seeds):
        return os.getpid()


class NeverHaltsPlan:
    def __init__(self, ev):
        self.ev = ev

    def augment_batch(self, batch, seeds):  # pragma: no cover, worker will be killed
        # important difference from blocking call is cpu usage
        self.ev.set()
        while True:
            pass


class SegfaultPlan:
    def augment_batch(self, batch, seeds):  # pragma: no cover, worker will be killed
        # https://wiki.python.org/moin/CrashingPython
        import ctypes

        i = ctypes.c_char(b"a")
        j = ctypes.pointer(i)
        c = 1
        while True:
            j[c] = i
            c *= 2  # grow fast to crash sooner


class RaiseKIPlan:
    def augment_batch(self, batch, seeds):
        signal.raise_signal(signal.SIGINT)
        return True


_lambda = lambda: None  # pragma: no cover, never run


class ReturnLambdaPlan:
    def augment_batch(self, batch, seeds):
        return _lambda


class AsyncPlan:
    async def augment_batch(self, batch, seeds):  # pragma: no cover, never awaited
        pass


class MonkeypatchMaxTimeoutPlan:
    def augment_batch(self, batch, seeds):
        import _gait_ssa_workers

        _gait_ssa_workers.MAX_TIMEOUT = 0.1
        return True


class NoTrioPlan:
    def augment_batch(self, batch, seeds):
        return "trio" not in sys.modules


class UnloadablePlan:
    """Pickles fine but fails to unpickle inside the worker."""

    def __reduce__(self):
        return _refuse_to_load, ()


def _refuse_to_load():
    raise RuntimeError("plan cannot be loaded in this process")


class SpecialError(Exception):
    pass


class ChainedErrorPlan:
    def augment_batch(self, batch, seeds):
        try:
            raise ValueError("test1")
        except ValueError as e:
            raise SpecialError("test2") from e
