"""Momentum-contrast pretraining with a FIFO memory bank."""

import copy
import json
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import attr
import numpy as np
import torch
import trio
from torch import nn

from ._augment import AugmentationPlan, sample_seeds
from ._checkpoint import save_encoder
from ._dataset import GaitDataset
from ._encoder import EncoderConfig, GaitEncoder, build_encoder, simam_drop
from ._errors import EmptyBankError, NonFiniteLossError
from ._losses import ddm_loss, infonce_loss
from ._pool import WorkerType, feed_augmented, open_augment_context
from ._topology import CANONICAL_TOPOLOGY, JointTopology

logger = logging.getLogger(__name__)

# seed path of the bank warm-up pass, kept apart from (epoch, step) paths
WARM_START_STREAM = 2**32


class MemoryBank:
    """Fixed-capacity FIFO queue of unit-norm key embeddings.

    Enqueuing ``k`` keys into a full bank evicts the ``k`` oldest."""

    def __init__(self, capacity: int, dim: int, dtype=torch.float32, norm_tolerance=1e-5):
        if capacity < 1:
            raise ValueError(f"bank capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.dim = dim
        self.norm_tolerance = norm_tolerance
        self._storage = torch.zeros(capacity, dim, dtype=dtype)
        self._cursor = 0
        self._size = 0

    def __len__(self):
        return self._size

    @property
    def is_full(self) -> bool:
        return self._size == self.capacity

    @torch.no_grad()
    def enqueue(self, keys: torch.Tensor) -> None:
        keys = torch.as_tensor(keys).detach()
        if keys.dim() != 2 or keys.shape[1] != self.dim:
            raise ValueError(f"expected k x {self.dim} keys, got {tuple(keys.shape)}")
        norms = keys.double().norm(dim=1)
        if not torch.all((norms - 1).abs() <= self.norm_tolerance):
            raise ValueError("memory bank keys must have unit norm")
        keys = keys[-self.capacity :].to(self._storage.dtype)
        k = keys.shape[0]
        first = min(k, self.capacity - self._cursor)
        self._storage[self._cursor : self._cursor + first] = keys[:first]
        self._storage[: k - first] = keys[first:]
        self._cursor = (self._cursor + k) % self.capacity
        self._size = min(self._size + k, self.capacity)

    def snapshot(self) -> torch.Tensor:
        """Stored keys, oldest first."""
        if not self.is_full:
            return self._storage[: self._size].clone()
        return torch.cat([self._storage[self._cursor :], self._storage[: self._cursor]])


def _check_momentum(instance, attribute, value):
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{attribute.name} must be in [0, 1], got {value}")


@attr.s(eq=False)
class MomentumPair:
    """Query encoder trained by gradients, key encoder following it by
    exponential moving average."""

    query: nn.Module = attr.ib()
    key: nn.Module = attr.ib()
    momentum: float = attr.ib(default=0.999, validator=_check_momentum)

    @classmethod
    def from_query(cls, query: nn.Module, momentum: float = 0.999) -> "MomentumPair":
        key = copy.deepcopy(query)
        for param in key.parameters():
            param.requires_grad_(False)
        return cls(query, key, momentum)


@torch.no_grad()
def momentum_update(pair: MomentumPair) -> None:
    """``key <- m * key + (1 - m) * query`` for every parameter."""
    query_params = dict(pair.query.named_parameters())
    key_params = dict(pair.key.named_parameters())
    if query_params.keys() != key_params.keys():
        raise ValueError("query and key encoders have different parameters")
    m = pair.momentum
    for name, pk in key_params.items():
        pq = query_params[name]
        if pk.shape != pq.shape:
            raise ValueError(f"shape mismatch for {name}: {tuple(pk.shape)} vs {tuple(pq.shape)}")
        pk.mul_(m).add_(pq.detach(), alpha=1.0 - m)


def _check_positive(instance, attribute, value):
    if value <= 0:
        raise ValueError(f"{attribute.name} must be positive, got {value}")


def _check_non_negative(instance, attribute, value):
    if value < 0:
        raise ValueError(f"{attribute.name} must be non-negative, got {value}")


def _check_train_momentum(instance, attribute, value):
    if not 0.0 <= value < 1.0:
        raise ValueError(f"{attribute.name} must be in [0, 1), got {value}")


def _check_drop_ratio(instance, attribute, value):
    if not 0.0 <= value < 1.0:
        raise ValueError(f"{attribute.name} must be in [0, 1), got {value}")


@attr.s(frozen=True)
class TrainConfig:
    """Pretraining hyperparameters; the defaults are the published schedule."""

    tau: float = attr.ib(default=0.07, validator=_check_positive)
    momentum: float = attr.ib(default=0.999, validator=_check_train_momentum)
    alpha: float = attr.ib(default=1.0, validator=_check_non_negative)
    beta: float = attr.ib(default=1.0, validator=_check_non_negative)
    lr: float = attr.ib(default=0.001, validator=_check_positive)
    lr_milestones: Tuple[int, ...] = attr.ib(
        default=(400,), converter=lambda v: tuple(int(x) for x in v)
    )
    lr_gamma: float = attr.ib(default=0.1, validator=_check_positive)
    sgd_momentum: float = attr.ib(default=0.9, validator=_check_non_negative)
    weight_decay: float = attr.ib(default=1e-4, validator=_check_non_negative)
    epochs: int = attr.ib(default=500, validator=_check_non_negative)
    batch_size: int = attr.ib(default=32, validator=_check_positive)
    bank_size: int = attr.ib(default=2560, validator=_check_positive)
    drop_ratio: float = attr.ib(default=0.25, validator=_check_drop_ratio)
    seed: int = attr.ib(default=0, validator=_check_non_negative)
    workers: int = attr.ib(default=0, validator=_check_non_negative)
    prefetch: int = attr.ib(default=2, validator=_check_positive)
    deterministic: bool = attr.ib(default=True)


def learning_rate_at(epoch: int, lr: float, milestones: Sequence[int], gamma: float) -> float:
    """Step schedule: ``lr`` times ``gamma`` for every milestone reached."""
    rate = lr
    for milestone in sorted(milestones):
        if epoch >= milestone:
            rate *= gamma
    return rate


def _check_total(instance, attribute, value):
    expected = instance.alpha * instance.l_info + instance.beta * instance.l_d
    if abs(value - expected) > 1e-9 * max(1.0, abs(expected)):
        raise ValueError(f"total {value} != alpha * L_Info + beta * L_d = {expected}")


@attr.s(auto_attribs=True, frozen=True)
class StepReport:
    epoch: int
    step: int
    l_info: float
    l_d1: float
    l_d2: float
    l_d: float
    alpha: float
    beta: float
    total: float = attr.ib(validator=_check_total)
    bank_size: int
    lr: float

    def as_dict(self) -> dict:
        return attr.asdict(self)


@attr.s(eq=False)
class TrainerState:
    """Everything one pretraining run mutates. Owned by a single trainer."""

    config: TrainConfig = attr.ib()
    pair: MomentumPair = attr.ib()
    bank: MemoryBank = attr.ib()
    optimizer: torch.optim.Optimizer = attr.ib()
    scheduler: torch.optim.lr_scheduler.MultiStepLR = attr.ib()
    plan: AugmentationPlan = attr.ib(factory=AugmentationPlan)
    epoch: int = attr.ib(default=0)
    step: int = attr.ib(default=0)

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    @property
    def dtype(self) -> torch.dtype:
        return next(self.pair.query.parameters()).dtype


def init_state(
    config: TrainConfig = TrainConfig(),
    encoder_config: EncoderConfig = EncoderConfig(),
    plan: Optional[AugmentationPlan] = None,
    topology: JointTopology = CANONICAL_TOPOLOGY,
    encoder: Optional[GaitEncoder] = None,
    dtype: torch.dtype = torch.float32,
) -> TrainerState:
    """Fresh query/key pair, empty bank and SGD optimizer, seeded by ``config.seed``."""
    if encoder is None:
        encoder = build_encoder(encoder_config, topology, seed=config.seed)
    encoder = encoder.to(dtype)
    pair = MomentumPair.from_query(encoder, config.momentum)
    optimizer = torch.optim.SGD(
        encoder.parameters(),
        lr=config.lr,
        momentum=config.sgd_momentum,
        weight_decay=config.weight_decay,
    )
    scheduler = torch.optim.lr_scheduler.MultiStepLR(
        optimizer, milestones=list(config.lr_milestones), gamma=config.lr_gamma
    )
    bank = MemoryBank(config.bank_size, encoder.config.projection_dim, dtype=dtype)
    if plan is None:
        plan = AugmentationPlan(topology=topology)
    return TrainerState(config, pair, bank, optimizer, scheduler, plan)


def _as_views(views, dtype):
    return [torch.as_tensor(np.asarray(v), dtype=dtype) for v in views]


@torch.no_grad()
def _enqueue_keys(state: TrainerState, views) -> None:
    s1 = _as_views(views[:1], state.dtype)[0]
    state.pair.key.train()
    state.bank.enqueue(state.pair.key(s1))


def _warm_start_jobs(
    dataset: GaitDataset, state: TrainerState
) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    size = state.config.batch_size
    needed = state.bank.capacity - len(state.bank)
    order = np.random.default_rng([state.config.seed, WARM_START_STREAM]).permutation(len(dataset))
    order = order[: max(needed, 0)]
    for i, start in enumerate(range(0, len(order), size)):
        idx = np.sort(order[start : start + size])
        seeds = sample_seeds(state.config.seed, WARM_START_STREAM, i, size=len(idx))
        yield dataset.data[idx], seeds


def warm_start_bank(state: TrainerState, dataset: GaitDataset) -> None:
    """Fill the bank with key embeddings of augmented samples, at most one
    pass over ``dataset``."""
    for batch, seeds in _warm_start_jobs(dataset, state):
        _enqueue_keys(state, state.plan.augment_batch(batch, seeds))
    logger.info("memory bank warm-started with %d keys", len(state.bank))


def _buffer_snapshot(*modules: nn.Module) -> List[Tuple[torch.Tensor, torch.Tensor]]:
    return [(buf, buf.detach().clone()) for module in modules for buf in module.buffers()]


def _restore(snapshot: List[Tuple[torch.Tensor, torch.Tensor]]) -> None:
    with torch.no_grad():
        for buf, saved in snapshot:
            buf.copy_(saved)


def pretrain_step(batch, state: TrainerState, views=None) -> StepReport:
    """One optimisation step on ``batch``.

    ``views`` are the precomputed ``(s1, s2, s3)`` augmentations of the
    batch; when omitted they are drawn from ``state.plan`` with seeds derived
    from ``(config.seed, epoch, step)``.

    Raises:
      EmptyBankError: the bank holds no negatives yet (see :func:`warm_start_bank`).
      NonFiniteLossError: a loss came out NaN or infinite; parameters, batch-norm
          statistics, the bank and the step counter are left as they were."""
    config = state.config
    if len(state.bank) == 0:
        raise EmptyBankError("memory bank is empty; warm_start_bank before training")
    if views is None:
        batch = np.asarray(batch, dtype=np.float32)
        seeds = sample_seeds(config.seed, state.epoch, state.step, size=batch.shape[0])
        views = state.plan.augment_batch(batch, seeds)
    s1, s2, s3 = _as_views(views, state.dtype)
    query, key = state.pair.query, state.pair.key
    query.train()
    key.train()
    # train-mode forwards move the batch-norm running statistics
    buffers = _buffer_snapshot(query, key)

    with torch.no_grad():
        z1 = key(s1)
    z2 = query(s2)
    l_info = infonce_loss(z2, z1, state.bank, config.tau)
    if config.beta > 0:
        f3 = query.features(s3)
        z3 = query.projector(f3)
        z3_dropped = query.projector(simam_drop(f3, config.drop_ratio))
        l_d1, l_d2, l_d = ddm_loss(z1, z2, z3, z3_dropped, state.bank, config.tau)
    else:
        l_d1 = l_d2 = l_d = torch.zeros((), dtype=torch.float64)
    total = config.alpha * l_info + config.beta * l_d

    components = {
        "l_info": l_info.item(),
        "l_d1": l_d1.item(),
        "l_d2": l_d2.item(),
        "l_d": l_d.item(),
        "total": total.item(),
    }
    if not all(np.isfinite(v) for v in components.values()):
        _restore(buffers)
        raise NonFiniteLossError(
            f"non-finite loss at epoch {state.epoch} step {state.step}: {components}",
            components,
        )

    state.optimizer.zero_grad(set_to_none=True)
    total.backward()
    state.optimizer.step()
    momentum_update(state.pair)
    state.bank.enqueue(z1)

    report = StepReport(
        epoch=state.epoch,
        step=state.step,
        alpha=config.alpha,
        beta=config.beta,
        bank_size=len(state.bank),
        lr=state.lr,
        **components,
    )
    state.step += 1
    return report


@attr.s(auto_attribs=True, frozen=True)
class PretrainResult:
    reports: List[StepReport]
    encoder: GaitEncoder
    checkpoint: Optional[Path] = None
    log: Optional[Path] = None


@contextmanager
def _deterministic_algorithms(enabled: bool):
    previous = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(enabled or previous)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(previous)


def _epoch_jobs(dataset: GaitDataset, state: TrainerState, epoch: int):
    size = state.config.batch_size
    order = np.random.default_rng([state.config.seed, epoch]).permutation(len(dataset))
    for step, start in enumerate(range(0, len(order), size)):
        idx = order[start : start + size]
        yield dataset.data[idx], sample_seeds(state.config.seed, epoch, step, size=len(idx))


async def pretrain_async(
    dataset: GaitDataset,
    state: TrainerState,
    log_file=None,
    on_report: Optional[Callable[[StepReport], None]] = None,
) -> List[StepReport]:
    """Run the remaining epochs of ``state`` over ``dataset``.

    Batches are augmented by a worker pool while the previous step trains in
    a thread; views are consumed in submission order, so the result does not
    depend on the number of workers."""
    config = state.config
    if config.deterministic or config.workers == 0:
        worker_type, max_workers = WorkerType.INLINE, 1
    else:
        worker_type, max_workers = WorkerType.SPAWN, config.workers
    reports = []
    async with open_augment_context(state.plan, worker_type, max_workers) as ctx:
        if len(state.bank) == 0:
            for batch, seeds in _warm_start_jobs(dataset, state):
                views = await ctx.augment(batch, seeds)
                await trio.to_thread.run_sync(_enqueue_keys, state, views)
            logger.info("memory bank warm-started with %d keys", len(state.bank))
        while state.epoch < config.epochs:
            epoch_reports = []
            send_channel, receive_channel = trio.open_memory_channel(0)
            async with trio.open_nursery() as nursery:
                nursery.start_soon(
                    feed_augmented,
                    ctx,
                    _epoch_jobs(dataset, state, state.epoch),
                    send_channel,
                    config.prefetch,
                )
                async with receive_channel:
                    async for views in receive_channel:
                        report = await trio.to_thread.run_sync(pretrain_step, None, state, views)
                        epoch_reports.append(report)
                        if log_file is not None:
                            log_file.write(json.dumps(report.as_dict()) + "\n")
                            log_file.flush()
                        if on_report is not None:
                            on_report(report)
            state.scheduler.step()
            state.epoch += 1
            state.step = 0
            reports.extend(epoch_reports)
            if epoch_reports:
                logger.info(
                    "epoch %d/%d: mean loss %.4f (info %.4f, d %.4f), lr %g",
                    state.epoch,
                    config.epochs,
                    np.mean([r.total for r in epoch_reports]),
                    np.mean([r.l_info for r in epoch_reports]),
                    np.mean([r.l_d for r in epoch_reports]),
                    epoch_reports[-1].lr,
                )
    return reports


def pretrain_run(
    dataset: GaitDataset,
    config: TrainConfig = TrainConfig(),
    encoder_config: EncoderConfig = EncoderConfig(),
    plan: Optional[AugmentationPlan] = None,
    run_dir=None,
    on_report: Optional[Callable[[StepReport], None]] = None,
) -> PretrainResult:
    """Pretrain an encoder on ``dataset`` for ``config.epochs`` epochs.

    With ``run_dir``, the per-step log goes to ``train.log`` (one JSON object
    per line) and the final query encoder to ``checkpoint/``."""
    if len(dataset) == 0:
        raise ValueError("cannot pretrain on an empty dataset")
    state = init_state(config, encoder_config, plan, dataset.topology)
    log_path = checkpoint = None
    with _deterministic_algorithms(config.deterministic):
        if run_dir is None:
            reports = trio.run(pretrain_async, dataset, state, None, on_report)
        else:
            run_dir = Path(run_dir)
            run_dir.mkdir(parents=True, exist_ok=True)
            log_path = run_dir / "train.log"
            with open(log_path, "w", encoding="utf-8") as log_file:
                reports = trio.run(pretrain_async, dataset, state, log_file, on_report)
            checkpoint = run_dir / "checkpoint"
            save_encoder(
                state.pair.query,
                checkpoint,
                {"train": attr.asdict(config), "epochs_completed": state.epoch},
            )
            logger.info("saved checkpoint to %s", checkpoint)
    return PretrainResult(reports, state.pair.query, checkpoint, log_path)
