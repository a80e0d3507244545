import multiprocessing

import gait_ssa

TINY = gait_ssa.EncoderConfig(
    graph=gait_ssa.GraphBranchConfig(channels=(4, 4, 4, 6, 6, 6, 8, 8, 8)),
    image=gait_ssa.ImageBranchConfig(dim=8, blocks=1, filter_hidden=4),
    projector_hidden=16,
    projection_dim=8,
)


def main():
    ds = gait_ssa.generate_synthetic(gait_ssa.SynthConfig(n_samples=48, n_actors=4, seed=0))
    train, test = gait_ssa.split_dataset(ds, 0.75, seed=0)
    cfg = gait_ssa.TrainConfig(epochs=2, batch_size=12, bank_size=24)
    result = gait_ssa.pretrain_run(train, cfg, TINY)
    for report in result.reports:
        print(f"epoch {report.epoch} step {report.step}: loss {report.total:.4f}")
    protocol = gait_ssa.ProtocolConfig.for_protocol("linear", epochs=20)
    print(gait_ssa.linear_eval(result.encoder, train, test, protocol).to_text())


if __name__ == "__main__":
    multiprocessing.freeze_support()
    main()
