import multiprocessing

import numpy as np
import trio

import gait_ssa


async def amain():
    ds = gait_ssa.generate_synthetic(gait_ssa.SynthConfig(n_samples=64, n_actors=4))
    jobs = [(ds.data[i : i + 16], list(range(i, i + 16))) for i in range(0, 64, 16)]
    send_channel, receive_channel = trio.open_memory_channel(0)
    async with gait_ssa.open_augment_context(max_workers=2) as ctx:
        async with trio.open_nursery() as nursery:
            nursery.start_soon(gait_ssa.feed_augmented, ctx, jobs, send_channel, 2)
            async with receive_channel:
                async for views in receive_channel:
                    # arrives in submission order whichever worker finished first
                    print("views", views.shape, "mean", float(np.abs(views).mean()))
        print(ctx.statistics())


if __name__ == "__main__":
    multiprocessing.freeze_support()
    trio.run(amain)
