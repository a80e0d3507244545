""" Tests of the augmentation pool with mocked-out workers ("collaboration" tests)"""
import math
from typing import Optional

import numpy as np
import pytest
import trio
from outcome import Outcome, Value

from .. import _pool
from .._abc import AbstractWorker, WorkerCache
from .._augment import AugmentationPlan
from .._pool import AugmentContext, WorkerType, feed_augmented, open_augment_context

BATCH = np.zeros((2, 4, 16, 3), dtype=np.float32)


class FakeWorker(AbstractWorker):
    """Echoes each job with the deadline it ran under; ``None`` once retired."""

    def __init__(self, idle_timeout, plan):
        self.idle_timeout = idle_timeout
        self.plan = plan
        self.retired = False

    async def start(self):
        await trio.lowlevel.checkpoint()

    async def run_job(self, batch, seeds) -> Optional[Outcome]:
        await trio.lowlevel.checkpoint()
        if self.retired:
            return None
        return Value((batch, list(seeds), trio.current_effective_deadline()))

    def shutdown(self):
        self.retired = True

    async def wait(self):  # pragma: no cover
        pass


class CountingCache(WorkerCache):
    prunes = 0
    shutdowns = 0

    def prune(self):
        assert trio.lowlevel.currently_ki_protected()
        self.prunes += 1
        live = [worker for worker in self if not worker.retired]
        self.clear()
        self.extend(live)

    def shutdown(self, grace_period):
        self.shutdowns += 1
        for worker in self:
            worker.shutdown()


class FakeContext(AugmentContext):
    def __attrs_post_init__(self):
        super().__attrs_post_init__()
        self.__dict__["_worker_class"] = FakeWorker
        self.__dict__["_worker_cache"] = CountingCache()

    async def _aclose(self):
        assert trio.lowlevel.currently_ki_protected()
        await super()._aclose()


@pytest.fixture
def fake_context(monkeypatch):
    monkeypatch.setattr(_pool, "AugmentContext", FakeContext)


async def test_workers_are_cached_and_pruned(fake_context):
    async with open_augment_context() as ctx:
        stats = ctx.statistics()
        assert (stats.idle_workers, stats.running_workers) == (0, 0)
        await ctx.augment(BATCH, [1, 2])
        stats = ctx.statistics()
        assert (stats.idle_workers, stats.running_workers) == (1, 0)
        # one prune per job plus one per statistics() call
        assert ctx._worker_cache.prunes == 3
        await ctx.augment(BATCH, [1, 2])
        with trio.CancelScope() as cs:
            cs.cancel()
            await ctx.augment(BATCH, [1, 2])
        assert cs.cancelled_caught
        assert ctx._worker_cache.prunes == 4
    assert ctx._worker_cache.shutdowns == 1
    assert ctx.statistics().idle_workers == 0


async def test_closed_context_refuses_jobs(fake_context):
    async with open_augment_context() as ctx:
        pass
    with pytest.raises(trio.ClosedResourceError):
        await ctx.augment(BATCH, [1, 2])


async def test_uncancellable_jobs_ignore_deadlines(fake_context):
    deadline = trio.current_time() + 3
    async with open_augment_context() as ctx:
        with trio.CancelScope(deadline=deadline):
            *_, seen = await ctx.augment(BATCH, [0, 0], cancellable=False)
            assert seen == math.inf
            *_, seen = await ctx.augment(BATCH, [0, 0])
            assert seen == deadline


async def test_workers_get_context_arguments(fake_context):
    plan = AugmentationPlan()
    async with open_augment_context(plan, idle_timeout=33, max_workers=2) as ctx:
        await ctx.augment(BATCH, [0, 0])
        (worker,) = ctx._worker_cache
        assert worker.plan is plan
        assert worker.idle_timeout == 33
        assert ctx.max_workers == 2


@pytest.mark.parametrize(
    "kwargs, exc",
    [
        (dict(idle_timeout=[-1]), TypeError),
        (dict(grace_period=object()), TypeError),
        (dict(worker_type="wrong"), ValueError),
        (dict(grace_period=-1), ValueError),
        (dict(idle_timeout=-1), ValueError),
        (dict(max_workers=0), ValueError),
        (dict(max_workers=1.5), ValueError),
    ],
)
# non-member containment checks warn before 3.12
@pytest.mark.filterwarnings("ignore::DeprecationWarning")
async def test_invalid_context_arguments(kwargs, exc):
    with pytest.raises(exc):
        async with open_augment_context(**kwargs):
            pytest.fail("context opened")  # pragma: no cover


class RetiredWorker(FakeWorker):
    def __init__(self, idle_timeout, plan):
        super().__init__(idle_timeout, plan)
        self.retired = True


async def test_retired_workers_do_not_block_cancellation():
    ctx = FakeContext._create(AugmentationPlan())
    # every fresh worker retires before it can take the job
    ctx.__dict__["_worker_class"] = RetiredWorker
    with trio.move_on_after(0.1) as cs:
        await ctx.augment(BATCH, [0, 0])
    assert cs.cancelled_caught


def test_no_public_constructor():
    with pytest.raises(TypeError):
        AugmentContext()


class _SlowFirstPlan:
    """Later jobs finish first; delivery order must not change."""

    def augment_batch(self, batch, seeds):
        import time

        time.sleep(0.05 * (3 - int(seeds[0])))
        return batch + float(seeds[0])


async def _collect(ctx, jobs, prefetch):
    out = []
    send_channel, receive_channel = trio.open_memory_channel(0)
    async with trio.open_nursery() as nursery:
        nursery.start_soon(feed_augmented, ctx, jobs, send_channel, prefetch)
        async with receive_channel:
            async for views in receive_channel:
                out.append(views)
    return out


async def test_feed_augmented_keeps_submission_order():
    jobs = [(np.zeros((1, 2)), [i]) for i in range(4)]
    async with open_augment_context(_SlowFirstPlan(), WorkerType.INLINE, max_workers=4) as ctx:
        out = await _collect(ctx, iter(jobs), prefetch=3)
    assert [float(v[0, 0]) for v in out] == [0.0, 1.0, 2.0, 3.0]


async def test_feed_augmented_matches_serial_augmentation(small_dataset):
    plan = AugmentationPlan()
    batches = [small_dataset.data[i : i + 4] for i in range(0, 12, 4)]
    jobs = [(b, [10 + i, 20 + i, 30 + i, 40 + i]) for i, b in enumerate(batches)]
    async with open_augment_context(plan, WorkerType.INLINE, max_workers=2) as ctx:
        out = await _collect(ctx, jobs, prefetch=2)
    for views, (batch, seeds) in zip(out, jobs):
        np.testing.assert_array_equal(views, plan.augment_batch(batch, seeds))


async def test_feed_augmented_rejects_bad_prefetch():
    send_channel, _ = trio.open_memory_channel(0)
    async with open_augment_context(worker_type=WorkerType.INLINE) as ctx:
        with pytest.raises(ValueError, match="prefetch"):
            await feed_augmented(ctx, [], send_channel, prefetch=0)


async def test_spawned_workers_match_inline(small_dataset):
    plan = AugmentationPlan()
    batch = small_dataset.data[:3]
    async with open_augment_context(plan, WorkerType.SPAWN, max_workers=1) as ctx:
        views = await ctx.augment(batch, [7, 8, 9])
    np.testing.assert_array_equal(views, plan.augment_batch(batch, [7, 8, 9]))
