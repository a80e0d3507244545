"""Isolated package for gait-ssa's augmentation worker loop

Workers start without importing trio or attrs. The augmentation plan they
are given decides what else gets imported."""

import signal
from inspect import iscoroutine
from pickle import HIGHEST_PROTOCOL, dumps, loads
from time import perf_counter

from outcome import capture, Error
from tblib.pickling_support import install as install_pickling_support

# longest single poll; some platforms overflow on larger timeouts
MAX_TIMEOUT = 24.0 * 60.0 * 60.0
ACK = b"\x06"
# sent instead of a result when the worker retires while a job may be queued;
# well under the 512 byte atomic pipe write limit
RETIRED = dumps(None, protocol=HIGHEST_PROTOCOL)


def run_plan(plan, batch, seeds):
    """``plan.augment_batch(batch, seeds)``; shared by every worker type."""
    ret = plan.augment_batch(batch, seeds)
    if iscoroutine(ret):
        ret.close()
        raise TypeError(
            "gait-ssa worker expected a synchronous augment_batch, but {!r} "
            "appears to be asynchronous".format(type(plan).__qualname__)
        )
    return ret


def _run_job_bytes(plan, job):
    try:
        return run_plan(plan, *loads(job))
    except BaseException as e:
        install_pickling_support(e)
        raise e


def _encode_result(result):
    try:
        return dumps(result, protocol=HIGHEST_PROTOCOL)
    except BaseException as exc:  # noqa: TRIO103
        return dumps(Error(exc), protocol=HIGHEST_PROTOCOL)  # noqa: TRIO104


def wait_for_job(recv_pipe, timeout):
    """Poll in chunks of at most MAX_TIMEOUT; False once ``timeout`` passes idle."""
    deadline = perf_counter() + timeout
    while timeout > MAX_TIMEOUT:
        if recv_pipe.poll(MAX_TIMEOUT):
            return True
        timeout = deadline - perf_counter()
    return recv_pipe.poll(timeout)


def _serve(plan, recv_pipe, send_pipe, idle_timeout):
    while wait_for_job(recv_pipe, idle_timeout):
        job = recv_pipe.recv_bytes()
        send_pipe.send_bytes(_encode_result(capture(_run_job_bytes, plan, job)))


def _drain(recv_pipe):
    # the parent may still be writing; keep the pipe clear until it closes it
    try:
        while True:
            recv_pipe.recv_bytes()
    except EOFError:
        pass


def worker_behavior(recv_pipe, send_pipe, idle_timeout, plan_bytes, inherited=()):
    """Main loop of an augmentation worker process.

    ``inherited`` holds the parent's pipe ends that a forked child got a copy
    of; they are closed first so the child sees the parent hang up."""
    for conn in inherited:
        conn.close()
    # the parent handles KeyboardInterrupt through cancellation
    signal.signal(signal.SIGINT, signal.SIG_IGN)
    try:
        send_pipe.send_bytes(ACK)
        _serve(loads(plan_bytes), recv_pipe, send_pipe, idle_timeout)
    except (BrokenPipeError, EOFError):
        # the parent closed the pipes: graceful shutdown
        send_pipe.close()
        recv_pipe.close()
        return
    except BaseException:
        # closing send_pipe turns this into BrokenWorkerError in the parent
        send_pipe.close()
        _drain(recv_pipe)
        raise
    # idle timeout; a job written between the last poll and this close gets
    # RETIRED back and is resubmitted elsewhere
    recv_pipe.close()
    send_pipe.send_bytes(RETIRED)
    send_pipe.close()
