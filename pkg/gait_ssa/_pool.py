"""A pool of augmentation workers that share one plan.

Training submits ``(batch, seeds)`` jobs; any idle worker may take a job,
and the views it returns depend only on the job, so the pool's size and
worker type never change the result."""

import logging
import os
from contextlib import asynccontextmanager
from enum import Enum
from typing import Any, Iterable, Sequence, Tuple, Type

import attr
import numpy as np
import trio

from ._abc import WorkerCache, AbstractWorker, NoPublicConstructor
from ._augment import AugmentationPlan
from ._inline import InlineWorker, InlineWorkerCache
from ._proc import WORKER_PROC_MAP

logger = logging.getLogger(__name__)

# augmentation is cpu-bound
DEFAULT_LIMIT = os.cpu_count() or 1

WORKER_MAP = {**WORKER_PROC_MAP, "inline": (InlineWorker, InlineWorkerCache)}

WorkerType = Enum(
    "WorkerType", ((x.upper(), x) for x in WORKER_MAP), type=str, module=__name__
)
WorkerType.__doc__ = """The kinds of augmentation worker.

``WorkerType.SPAWN`` is the default and works everywhere. ``WorkerType.FORKSERVER``
and ``WorkerType.FORK`` exist on POSIX; forkserver starts replacement workers
faster, fork is for experiments only. ``WorkerType.INLINE`` augments in a
thread of the calling process, as deterministic training and ``workers=0`` do."""


@attr.s(slots=True, eq=False)
class _JobTracker:
    """Counts jobs in flight; :meth:`drain` refuses new ones and waits out the rest."""

    running: int = attr.ib(default=0)
    closed: bool = attr.ib(default=False)
    _idle: trio.Event = attr.ib(factory=trio.Event)

    def __enter__(self):
        if self.closed:
            raise trio.ClosedResourceError("augment context is closed")
        self.running += 1

    def __exit__(self, *exc_info):
        self.running -= 1
        if self.closed and not self.running:
            self._idle.set()

    async def drain(self):
        self.closed = True
        if self.running:
            await self._idle.wait()


@attr.s(auto_attribs=True, slots=True, frozen=True)
class AugmentContextStatistics:
    idle_workers: int
    running_workers: int


def check_non_negative(instance, attribute, value):
    if value < 0.0:
        raise ValueError(f"{attribute.name} must be non-negative, was {value}")


def check_positive_int(instance, attribute, value):
    if not isinstance(value, int) or value < 1:
        raise ValueError(f"{attribute.name} must be a positive integer, was {value!r}")


@attr.s(frozen=True, eq=False)
class AugmentContext(metaclass=NoPublicConstructor):
    """Workers holding the same :class:`AugmentationPlan`, reused LIFO.

    Only :func:`open_augment_context` creates instances; its arguments are
    kept as read-only attributes. ``statistics()`` reports ``idle_workers``
    (cached, alive) and ``running_workers`` (busy with a job)."""

    plan: Any = attr.ib(factory=AugmentationPlan, repr=False)
    idle_timeout: float = attr.ib(default=600.0, validator=check_non_negative)
    grace_period: float = attr.ib(default=30.0, validator=check_non_negative)
    worker_type: WorkerType = attr.ib(
        default=WorkerType.SPAWN,
        validator=attr.validators.in_(WorkerType),
    )
    max_workers: int = attr.ib(default=DEFAULT_LIMIT, validator=check_positive_int)
    _worker_class: Type[AbstractWorker] = attr.ib(repr=False, init=False)
    _worker_cache: WorkerCache = attr.ib(repr=False, init=False)
    _limiter: trio.CapacityLimiter = attr.ib(repr=False, init=False)
    _jobs: _JobTracker = attr.ib(factory=_JobTracker, repr=False, init=False)

    def __attrs_post_init__(self):
        worker_class, cache_class = WORKER_MAP[self.worker_type]
        self.__dict__["_worker_class"] = worker_class
        self.__dict__["_worker_cache"] = cache_class()
        self.__dict__["_limiter"] = trio.CapacityLimiter(self.max_workers)

    async def _worker(self) -> AbstractWorker:
        try:
            return self._worker_cache.pop()
        except IndexError:
            worker = self._worker_class(self.idle_timeout, self.plan)
            await worker.start()
            return worker

    @trio.lowlevel.enable_ki_protection
    async def augment(
        self, batch: np.ndarray, seeds: Sequence[int], cancellable: bool = True
    ) -> np.ndarray:
        """``plan.augment_batch(batch, seeds)``, computed by a worker.

        Cancelling kills the worker that holds the job; with
        ``cancellable=False`` the job finishes first.

        Raises:
            trio.ClosedResourceError: the context is closed
            BrokenWorkerError: the worker died while augmenting"""
        async with self._limiter:
            with self._jobs:
                self._worker_cache.prune()
                while True:
                    with trio.CancelScope(shield=not cancellable):
                        worker = await self._worker()
                        result = await worker.run_job(batch, seeds)
                    if result is not None:
                        self._worker_cache.append(worker)
                        return result.unwrap()
                    # the worker retired; a shielded retry loop must still see cancellation
                    await trio.lowlevel.checkpoint_if_cancelled()

    async def _aclose(self):
        with trio.CancelScope(shield=True):
            await self._jobs.drain()
            await trio.to_thread.run_sync(self._worker_cache.shutdown, self.grace_period)

    @trio.lowlevel.enable_ki_protection
    def statistics(self):
        self._worker_cache.prune()
        return AugmentContextStatistics(
            idle_workers=len(self._worker_cache),
            running_workers=self._jobs.running,
        )


@asynccontextmanager
@trio.lowlevel.enable_ki_protection
async def open_augment_context(
    plan=None,
    worker_type=WorkerType.SPAWN,
    max_workers=DEFAULT_LIMIT,
    idle_timeout=600.0,
    grace_period=30.0,
):
    """Open a pool of augmentation workers sharing ``plan``.

    Leaving the block waits, uncancellably, for running jobs to finish and then
    shuts the cached workers down; hand the context only to tasks that end
    inside the block, such as those of a :class:`~trio.Nursery`.

    Args:
      plan (AugmentationPlan): Pickled once per worker at startup. Anything
          picklable with an ``augment_batch(batch, seeds)`` method works.
          Defaults to ``AugmentationPlan()``.
      worker_type (WorkerType): See :class:`WorkerType`.
      max_workers (int): Most workers running at once.
      idle_timeout (float): Seconds an idle worker waits for a job before it
          exits. `math.inf` waits forever. Non-negative.
      grace_period (float): Seconds to wait for workers to exit on close before
          killing them and raising `BrokenWorkerError`. `math.inf` waits forever.
          Non-negative.

    Raises:
      ValueError | TypeError: an argument is invalid, e.g. a negative timeout.
      BrokenWorkerError: a worker did not shut down cleanly on close.
    """
    if plan is None:
        plan = AugmentationPlan()
    ctx = AugmentContext._create(plan, idle_timeout, grace_period, worker_type, max_workers)
    logger.debug("opened %r", ctx)
    try:
        yield ctx
    finally:
        await ctx._aclose()  # noqa: TRIO102


Job = Tuple[np.ndarray, Sequence[int]]


async def _augment_slot(ctx, index, job, previous, done, send_channel, limiter):
    views = await ctx.augment(*job)
    if previous is not None:
        await previous.wait()
    await send_channel.send(views)
    done.set()
    limiter.release_on_behalf_of(index)


async def feed_augmented(
    ctx: AugmentContext,
    jobs: Iterable[Job],
    send_channel: trio.MemorySendChannel,
    prefetch: int = 2,
) -> None:
    """Augment ``jobs`` with up to ``prefetch`` batches in flight and send the
    views down ``send_channel`` strictly in submission order.

    A batch counts as in flight until the receiver has taken its views. The
    channel is closed when every job has been delivered."""
    if prefetch < 1:
        raise ValueError(f"prefetch must be at least 1, got {prefetch}")
    limiter = trio.CapacityLimiter(prefetch)
    async with send_channel, trio.open_nursery() as nursery:
        previous = None
        for index, job in enumerate(jobs):
            await limiter.acquire_on_behalf_of(index)
            done = trio.Event()
            nursery.start_soon(
                _augment_slot, ctx, index, job, previous, done, send_channel, limiter
            )
            previous = done
