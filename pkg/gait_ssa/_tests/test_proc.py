""" Contract tests that only hold for workers in child processes:
kills, segfaults, pickling across the pipe and a trio-free child."""
import math

import numpy as np
import outcome
import pytest
import trio

from _gait_ssa_workers._funcs import (
    EchoPlan,
    NeverHaltsPlan,
    NoTrioPlan,
    PidPlan,
    RaiseKIPlan,
    ReturnLambdaPlan,
    SegfaultPlan,
)
from .._abc import BrokenWorkerError, run_abandoning_thread
from .._proc import WORKER_PROC_MAP

BATCH = np.zeros((1, 4, 16, 3), dtype=np.float32)


@pytest.fixture(params=list(WORKER_PROC_MAP.values()), ids=list(WORKER_PROC_MAP.keys()))
async def make_worker(request):
    created = []

    async def make(plan):
        worker = request.param[0](math.inf, plan)
        created.append(worker)
        await worker.start()
        return worker

    yield make
    stuck = []
    for worker in created:
        worker.shutdown()
        with trio.move_on_after(10):
            await worker.wait()
        if worker.proc.pid is not None and worker.proc.exitcode is None:  # pragma: no cover
            worker.kill()
            await worker.wait()
            stuck.append(worker.proc.name)
    assert not stuck, f"a test left workers that ignore shutdown: {stuck}"


async def test_cancelled_job_kills_worker(make_worker, manager):
    ev = manager.Event()
    worker = await make_worker(NeverHaltsPlan(ev))

    async with trio.open_nursery() as nursery:
        nursery.start_soon(worker.run_job, BATCH, [0])
        await run_abandoning_thread(ev.wait)
        nursery.cancel_scope.cancel()
    with trio.fail_after(1):
        assert await worker.wait() in (-15, -9)


async def test_run_job_raises_on_kill(make_worker, manager):
    ev = manager.Event()
    worker = await make_worker(NeverHaltsPlan(ev))
    result = None

    async def job():
        nonlocal result
        result = await outcome.acapture(worker.run_job, BATCH, [0])

    with trio.fail_after(5):
        async with trio.open_nursery() as nursery:
            nursery.start_soon(job)
            await run_abandoning_thread(ev.wait)
            # run_job kills it again on the way out
            worker.kill()
    with pytest.raises(BrokenWorkerError) as exc_info:
        result.unwrap()
    exitcode = await worker.wait()
    assert exitcode in (-15, -9)
    assert exc_info.value.args[-1].exitcode == exitcode


async def test_run_job_raises_on_segfault(make_worker, capfd):
    worker = await make_worker(SegfaultPlan())
    with pytest.raises(BrokenWorkerError) as excinfo:
        with trio.fail_after(20):
            assert (await worker.run_job(BATCH, [0])).unwrap()
    exitcode = await worker.wait()
    assert exitcode not in (0, None)
    assert excinfo.value.args[-1].exitcode == exitcode


async def test_cancel_before_send_kills_worker(make_worker, manager):
    # the second job is cancelled before it reaches the reused worker
    worker = await make_worker(PidPlan())
    assert (await worker.run_job(BATCH, [0])).unwrap() == worker.proc.pid
    with trio.fail_after(1):
        with trio.move_on_after(0):
            await worker.run_job(BATCH, [0])
        assert await worker.wait() in (-15, -9)


async def test_workers_ignore_sigint(make_worker):
    worker = await make_worker(RaiseKIPlan())
    assert (await worker.run_job(BATCH, [0])).unwrap() is True


async def test_unpickleable_result(make_worker):
    from pickle import PicklingError

    worker = await make_worker(ReturnLambdaPlan())
    with pytest.raises((PicklingError, AttributeError)):
        (await worker.run_job(BATCH, [0])).unwrap()


async def test_unpickleable_job(make_worker):
    from pickle import PicklingError

    worker = await make_worker(EchoPlan())
    with pytest.raises((PicklingError, AttributeError)):
        (await worker.run_job(BATCH, [lambda: None])).unwrap()
    # the worker survives a job it never received
    echoed, _ = (await worker.run_job(BATCH, [1])).unwrap()
    np.testing.assert_array_equal(echoed, BATCH)


async def test_no_trio_in_subproc(make_worker):
    worker = await make_worker(NoTrioPlan())
    if worker.mp_context._name == "fork":
        pytest.skip("forked children inherit the parent's modules")
    assert (await worker.run_job(BATCH, [0])).unwrap()
