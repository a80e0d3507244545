"""Abstract base classes for the augmentation worker pool.

The pool only talks to workers through this interface, so process workers,
the in-process worker and test fakes are interchangeable."""

import inspect
from abc import ABC, abstractmethod, ABCMeta
from typing import Optional, TypeVar, Type, Any, Deque, Sequence

import numpy as np
import trio
from outcome import Outcome


class BrokenWorkerError(RuntimeError):
    """An augmentation worker died, or did not exit cleanly within the
    ``grace_period`` of :func:`open_augment_context`.

    Errors raised by the plan itself are re-raised as they are; this one means
    the worker process, not the augmentation, failed."""


class AbstractWorker(ABC):
    """One augmentation worker holding one plan for its whole life."""

    @abstractmethod
    def __init__(self, idle_timeout: float, plan: Any):
        pass

    @abstractmethod
    async def start(self):
        """Bring the worker up; returns once it can take a job."""

    @abstractmethod
    async def run_job(self, batch: np.ndarray, seeds: Sequence[int]) -> Optional[Outcome]:
        """Return the outcome of ``plan.augment_batch(batch, seeds)``.

        ``batch`` is ``(B, T, J, C)`` with one seed per sample. ``None`` means the
        worker retired before taking the job; resubmit it to another worker.

        Raises:
          BrokenWorkerError: the worker died while holding the job."""

    @abstractmethod
    def shutdown(self):
        """Ask the worker to exit once its current job, if any, is done."""

    @abstractmethod
    async def wait(self):
        """Block until the worker has exited."""


class WorkerCache(Deque[AbstractWorker], ABC):
    """Idle workers, oldest on the left; the pool pops from the right."""

    @abstractmethod
    def prune(self):
        """Drop workers whose idle timeout has run out."""

    @abstractmethod
    def shutdown(self, timeout):
        """Shut every cached worker down, waiting at most ``timeout`` seconds.

        Raises:
          BrokenWorkerError: a worker exited uncleanly or had to be killed."""


if "abandon_on_cancel" in inspect.signature(trio.to_thread.run_sync).parameters:
    _ABANDON = {"abandon_on_cancel": True}
else:  # pragma: no cover, trio < 0.23
    _ABANDON = {"cancellable": True}


async def run_abandoning_thread(fn, *args):
    """:func:`trio.to_thread.run_sync` that leaves the thread behind on cancel."""
    return await trio.to_thread.run_sync(fn, *args, **_ABANDON)


# Vendored from trio._util in v0.19.0 under identical MIT/Apache2 license.
# Copyright Contributors to the Trio project.
# Modified so it's not Final so that we can create a test fake subclass.
T = TypeVar("T")


class NoPublicConstructor(ABCMeta):
    """Metaclass that ensures a private constructor.

    If you try to instantiate your class (SomeClass()), a TypeError will be thrown.
    Instances are made with ``SomeClass._create(...)``."""

    def __call__(cls, *args, **kwargs):
        raise TypeError(
            f"{cls.__module__}.{cls.__qualname__} has no public constructor"
        )

    def _create(cls: Type[T], *args: Any, **kwargs: Any) -> T:
        return super().__call__(*args, **kwargs)  # type: ignore
