"""Downstream protocols, weighted metrics and the 2-D discriminant projection."""

import copy
import logging
import os
import warnings
from typing import Optional, Tuple, Union

import attr
import numpy as np
import scipy.linalg
import torch
import torch.nn.functional as F
from sklearn.metrics import confusion_matrix
from torch import nn

from ._checkpoint import load_encoder
from ._dataset import LABEL_NAMES, NUM_CLASSES, GaitDataset, select_labeled_fraction
from ._encoder import GaitEncoder, forward_mode, parameter_digest
from ._errors import MissingLabelsError
from ._trainer import learning_rate_at

logger = logging.getLogger(__name__)

PROTOCOLS = ("linear", "finetune", "finetune-short", "semi")
SEMI_FRACTIONS = (0.05, 0.10, 0.20, 0.50)
F1_MODES = ("weighted", "sum")


################################################################
# Metrics
################################################################


def _as_counts(value):
    counts = np.asarray(value, dtype=np.int64)
    if counts.shape != (NUM_CLASSES, NUM_CLASSES):
        raise ValueError(
            f"confusion matrix must be {NUM_CLASSES}x{NUM_CLASSES}, got {counts.shape}"
        )
    if (counts < 0).any():
        raise ValueError("confusion matrix counts must be non-negative")
    counts.setflags(write=False)
    return counts


@attr.s(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray = attr.ib(converter=_as_counts)

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionMatrix":
        return cls(confusion_matrix(y_true, y_pred, labels=list(range(NUM_CLASSES))))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return np.array_equal(self.counts, other.counts)


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(num.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


@attr.s(auto_attribs=True, frozen=True, eq=False)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    class_precision: np.ndarray
    class_recall: np.ndarray
    class_f1: np.ndarray
    weights: np.ndarray
    confusion: ConfusionMatrix
    f1_mode: str = "weighted"

    def to_text(self) -> str:
        """Aggregates, per-class breakdown and the confusion matrix as plain text."""
        lines = [
            f"accuracy\t{self.accuracy:.6f}",
            f"precision\t{self.precision:.6f}",
            f"recall\t{self.recall:.6f}",
            f"f1\t{self.f1:.6f}",
            f"f1_mode\t{self.f1_mode}",
            f"samples\t{self.confusion.total}",
            "",
            "class\tweight\tprecision\trecall\tf1",
        ]
        for i, name in enumerate(LABEL_NAMES):
            lines.append(
                f"{name}\t{self.weights[i]:.6f}\t{self.class_precision[i]:.6f}"
                f"\t{self.class_recall[i]:.6f}\t{self.class_f1[i]:.6f}"
            )
        lines += ["", "confusion\t" + "\t".join(LABEL_NAMES)]
        for name, row in zip(LABEL_NAMES, self.confusion.counts):
            lines.append(name + "\t" + "\t".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"


def compute_metrics(cm, f1_mode: str = "weighted") -> MetricsReport:
    """Accuracy plus support-weighted precision, recall and F1.

    ``f1_mode="sum"`` returns the unweighted sum of per-class F1 scores
    instead of the weighted average; it can exceed 1."""
    if not isinstance(cm, ConfusionMatrix):
        cm = ConfusionMatrix(cm)
    if f1_mode not in F1_MODES:
        raise ValueError(f"f1_mode must be one of {F1_MODES}, got {f1_mode!r}")
    total = cm.total
    if total == 0:
        raise ValueError("cannot compute metrics of an empty confusion matrix")
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    precision = _ratio(tp, predicted)
    recall = _ratio(tp, support)
    f1 = _ratio(2 * precision * recall, precision + recall)
    weights = support / total
    return MetricsReport(
        accuracy=float(tp.sum() / total),
        precision=float(weights @ precision),
        recall=float(weights @ recall),
        f1=float(weights @ f1) if f1_mode == "weighted" else float(f1.sum()),
        class_precision=precision,
        class_recall=recall,
        class_f1=f1,
        weights=weights,
        confusion=cm,
        f1_mode=f1_mode,
    )


################################################################
# Protocols
################################################################

_SCHEDULES = {
    "linear": dict(epochs=200, lr=0.001, lr_milestones=(100,)),
    "finetune": dict(epochs=100, lr=0.0001, lr_milestones=(50,)),
    "finetune-short": dict(epochs=20, lr=0.001, lr_milestones=(10,)),
    "semi": dict(epochs=20, lr=0.001, lr_milestones=(10,)),
}


def _check_non_negative(instance, attribute, value):
    if value < 0:
        raise ValueError(f"{attribute.name} must be non-negative, got {value}")


def _check_positive(instance, attribute, value):
    if value <= 0:
        raise ValueError(f"{attribute.name} must be positive, got {value}")


def _check_fraction(instance, attribute, value):
    if not 0.0 < value <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {value}")
    if instance.allow_any_fraction:
        return
    if not any(abs(value - allowed) < 1e-12 for allowed in SEMI_FRACTIONS):
        raise ValueError(
            f"fraction {value} is not one of {SEMI_FRACTIONS}; "
            "pass allow_any_fraction to override"
        )


@attr.s(frozen=True)
class ProtocolConfig:
    """Schedule of one downstream protocol.

    Use :meth:`for_protocol` to get the published schedule of a protocol with
    selected fields overridden."""

    protocol: str = attr.ib(default="linear", validator=attr.validators.in_(PROTOCOLS))
    epochs: int = attr.ib(default=200, validator=_check_non_negative)
    lr: float = attr.ib(default=0.001, validator=_check_positive)
    lr_milestones: Tuple[int, ...] = attr.ib(
        default=(100,), converter=lambda v: tuple(int(x) for x in v)
    )
    lr_gamma: float = attr.ib(default=0.1, validator=_check_positive)
    sgd_momentum: float = attr.ib(default=0.9, validator=_check_non_negative)
    weight_decay: float = attr.ib(default=1e-4, validator=_check_non_negative)
    batch_size: int = attr.ib(default=32, validator=_check_positive)
    allow_any_fraction: bool = attr.ib(default=False)
    fraction: float = attr.ib(default=0.1, validator=_check_fraction)
    stratified: bool = attr.ib(default=False)
    standardize: bool = attr.ib(default=True)
    f1_mode: str = attr.ib(default="weighted", validator=attr.validators.in_(F1_MODES))
    seed: int = attr.ib(default=0, validator=_check_non_negative)

    @classmethod
    def for_protocol(cls, protocol: str, **overrides) -> "ProtocolConfig":
        if protocol not in _SCHEDULES:
            raise ValueError(f"protocol must be one of {PROTOCOLS}, got {protocol!r}")
        fields = dict(_SCHEDULES[protocol], protocol=protocol)
        fields.update(overrides)
        return cls(**fields)

    def lr_at(self, epoch: int) -> float:
        return learning_rate_at(epoch, self.lr, self.lr_milestones, self.lr_gamma)


EncoderSource = Union[GaitEncoder, str, os.PathLike]


def _encoder_from(checkpoint: EncoderSource) -> GaitEncoder:
    if isinstance(checkpoint, GaitEncoder):
        return checkpoint
    return load_encoder(checkpoint)


def _require_labels(*splits: GaitDataset) -> None:
    for split in splits:
        if len(split) == 0:
            raise ValueError("evaluation splits must not be empty")
        if not split.is_labeled:
            raise MissingLabelsError("evaluation needs fully labeled train and test splits")


def extract_features(encoder: GaitEncoder, data, batch_size: int = 64) -> torch.Tensor:
    """Fused features of ``data`` in eval mode, without gradient."""
    data = data.data if isinstance(data, GaitDataset) else np.asarray(data)
    chunks = []
    with torch.no_grad(), forward_mode(encoder, "eval"):
        for start in range(0, len(data), batch_size):
            chunks.append(encoder.features(data[start : start + batch_size]))
    if not chunks:
        dtype = next(encoder.parameters()).dtype
        return torch.zeros(0, encoder.config.feature_dim, dtype=dtype)
    return torch.cat(chunks)


def _labels(split: GaitDataset) -> torch.Tensor:
    return torch.as_tensor(split.labels.astype(np.int64))


def _new_head(in_dim: int, seed: int, dtype) -> nn.Linear:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return nn.Linear(in_dim, NUM_CLASSES).to(dtype)


def _fit(
    params, logits_of, inputs, targets: torch.Tensor, cfg: ProtocolConfig, train_modules=()
) -> None:
    optimizer = torch.optim.SGD(
        params, lr=cfg.lr, momentum=cfg.sgd_momentum, weight_decay=cfg.weight_decay
    )
    scheduler = torch.optim.lr_scheduler.MultiStepLR(
        optimizer, milestones=list(cfg.lr_milestones), gamma=cfg.lr_gamma
    )
    n = len(targets)
    for epoch in range(cfg.epochs):
        for module in train_modules:
            module.train()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss = F.cross_entropy(logits_of(inputs[idx]), targets[idx])
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        scheduler.step()
        logger.debug(
            "%s epoch %d/%d: loss %.4f", cfg.protocol, epoch + 1, cfg.epochs, np.mean(losses)
        )


def _report(logits: torch.Tensor, test: GaitDataset, cfg: ProtocolConfig) -> MetricsReport:
    predicted = logits.argmax(dim=1).cpu().numpy()
    report = compute_metrics(
        ConfusionMatrix.from_predictions(test.labels.astype(np.int64), predicted), cfg.f1_mode
    )
    logger.info(
        "%s evaluation: accuracy %.4f, f1 %.4f on %d samples",
        cfg.protocol,
        report.accuracy,
        report.f1,
        len(test),
    )
    return report


def linear_eval(
    checkpoint: EncoderSource,
    train_split: GaitDataset,
    test_split: GaitDataset,
    cfg: Optional[ProtocolConfig] = None,
) -> MetricsReport:
    """Train a linear classifier on frozen fused features and score the test split.

    The encoder is never modified; this is checked by parameter digest."""
    cfg = cfg or ProtocolConfig.for_protocol("linear")
    _require_labels(train_split, test_split)
    encoder = _encoder_from(checkpoint)
    digest = parameter_digest(encoder)

    train_x = extract_features(encoder, train_split, cfg.batch_size)
    test_x = extract_features(encoder, test_split, cfg.batch_size)
    if cfg.standardize:
        mean = train_x.mean(dim=0)
        std = train_x.std(dim=0, unbiased=False).clamp_min(1e-6)
        train_x, test_x = (train_x - mean) / std, (test_x - mean) / std

    head = _new_head(train_x.shape[1], cfg.seed, train_x.dtype)
    _fit(head.parameters(), head, train_x, _labels(train_split), cfg)
    with torch.no_grad():
        logits = head(test_x)

    if parameter_digest(encoder) != digest:
        raise RuntimeError("encoder parameters changed during linear evaluation")
    return _report(logits, test_split, cfg)


class _Classifier(nn.Module):
    def __init__(self, encoder: GaitEncoder, head: nn.Linear):
        super().__init__()
        self.encoder = encoder
        self.head = head

    def forward(self, x):
        return self.head(self.encoder.features(x))


def _finetune(
    encoder: GaitEncoder, train_split: GaitDataset, test_split: GaitDataset, cfg: ProtocolConfig
) -> MetricsReport:
    encoder = copy.deepcopy(encoder)
    for param in encoder.parameters():
        param.requires_grad_(True)
    dtype = next(encoder.parameters()).dtype
    model = _Classifier(encoder, _new_head(encoder.config.feature_dim, cfg.seed, dtype))
    # the projector is not part of the classifier
    params = [p for name, p in model.named_parameters() if ".projector." not in name]
    train_x = torch.as_tensor(train_split.data)
    _fit(params, model, train_x, _labels(train_split), cfg, train_modules=(model,))
    model.eval()
    with torch.no_grad():
        logits = torch.cat(
            [
                model(test_split.data[start : start + cfg.batch_size])
                for start in range(0, len(test_split), cfg.batch_size)
            ]
        )
    return _report(logits, test_split, cfg)


def finetune_eval(
    checkpoint: EncoderSource,
    train_split: GaitDataset,
    test_split: GaitDataset,
    cfg: Optional[ProtocolConfig] = None,
) -> MetricsReport:
    """Append a linear head and train every parameter on the labeled train split.

    Works on a copy; the encoder passed in is left untouched."""
    cfg = cfg or ProtocolConfig.for_protocol("finetune")
    _require_labels(train_split, test_split)
    return _finetune(_encoder_from(checkpoint), train_split, test_split, cfg)


def semi_supervised_eval(
    checkpoint: EncoderSource,
    train_split: GaitDataset,
    test_split: GaitDataset,
    fraction: Optional[float] = None,
    cfg: Optional[ProtocolConfig] = None,
) -> MetricsReport:
    """Finetune on ``ceil(fraction * N)`` labeled training samples."""
    if cfg is None:
        cfg = ProtocolConfig.for_protocol("semi", fraction=0.1 if fraction is None else fraction)
    elif fraction is not None:
        cfg = attr.evolve(cfg, fraction=fraction)
    _require_labels(train_split, test_split)
    labeled = select_labeled_fraction(train_split, cfg.fraction, cfg.seed, cfg.stratified)
    missing = [LABEL_NAMES[c] for c, k in enumerate(labeled.class_histogram()) if k == 0]
    if missing:
        warnings.warn(
            f"labeled subset of {len(labeled)} samples has no {', '.join(missing)} samples",
            UserWarning,
            stacklevel=2,
        )
    logger.info("semi-supervised: %d of %d samples labeled", len(labeled), len(train_split))
    return _finetune(_encoder_from(checkpoint), labeled, test_split, cfg)


################################################################
# Discriminant projection
################################################################


@attr.s(auto_attribs=True, frozen=True, eq=False)
class Projection2D:
    points: np.ndarray
    labels: np.ndarray
    classes: np.ndarray
    class_means: np.ndarray
    axes: np.ndarray

    def to_tsv(self) -> str:
        lines = ["x\ty\tlabel"]
        for (x, y), label in zip(self.points, self.labels):
            lines.append(f"{x:.9g}\t{y:.9g}\t{_label_name(label)}")
        return "\n".join(lines) + "\n"


def _label_name(label) -> str:
    label = int(label)
    return LABEL_NAMES[label] if 0 <= label < NUM_CLASSES else str(label)


def fisher_ratio(points: np.ndarray, labels: np.ndarray) -> float:
    """Between-class over within-class scatter, as traces."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    mean = points.mean(axis=0)
    between = within = 0.0
    for c in np.unique(labels):
        members = points[labels == c]
        mu = members.mean(axis=0)
        between += len(members) * np.sum((mu - mean) ** 2)
        within += np.sum((members - mu) ** 2)
    return between / max(within, np.finfo(np.float64).tiny)


def lda_projection(embeddings, labels, eps: float = 1e-6) -> Projection2D:
    """Fisher linear-discriminant projection onto 2 dimensions.

    The within-class scatter is regularized by ``eps * I`` scaled to its
    mean variance, so duplicated points are handled."""
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if x.ndim != 2 or len(x) != len(labels):
        raise ValueError("embeddings must be N x D with one label per row")
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise ValueError("discriminant projection needs at least 2 classes")
    if counts.min() < 3:
        raise ValueError("discriminant projection needs at least 3 samples per class")

    d = x.shape[1]
    mean = x.mean(axis=0)
    sw = np.zeros((d, d))
    sb = np.zeros((d, d))
    means = []
    for c in classes:
        members = x[labels == c]
        mu = members.mean(axis=0)
        means.append(mu)
        centered = members - mu
        sw += centered.T @ centered
        sb += len(members) * np.outer(mu - mean, mu - mean)
    scale = max(np.trace(sw) / d, 1.0)
    try:
        values, vectors = scipy.linalg.eigh(sb, sw + eps * scale * np.eye(d))
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"within-class scatter is singular after regularization: {exc}") from exc
    axes = vectors[:, np.argsort(values)[::-1][:2]]
    if axes.shape[1] < 2:
        axes = np.hstack([axes, np.zeros((d, 2 - axes.shape[1]))])
    return Projection2D(
        points=x @ axes,
        labels=labels,
        classes=classes,
        class_means=np.asarray(means) @ axes,
        axes=axes,
    )
