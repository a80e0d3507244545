"""The two-branch gait encoder.

A spatial-temporal graph convolution branch and a frequency-filtering image
branch each summarise a ``N x T x J x C`` batch into 64 numbers; their
concatenation is the fused feature, and a two-layer projector maps it onto
the unit sphere for contrastive training."""

import hashlib
import math
from contextlib import contextmanager
from typing import Optional, Sequence, Tuple

import attr
import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ._topology import CANONICAL_TOPOLOGY, JointTopology

VARIANTS = ("cffn", "graph", "image")
MODES = ("train", "eval")


def _check_layers(instance, attribute, value):
    if len(value) != 9:
        raise ValueError(f"{attribute.name} must list 9 layers, got {len(value)}")


def _check_positive(instance, attribute, value):
    if value <= 0:
        raise ValueError(f"{attribute.name} must be positive, got {value}")


def _check_odd(instance, attribute, value):
    if value < 1 or value % 2 == 0:
        raise ValueError(f"{attribute.name} must be a positive odd number, got {value}")


def _int_tuple(value):
    return tuple(int(v) for v in value)


@attr.s(frozen=True)
class GraphBranchConfig:
    in_channels: int = attr.ib(default=3, validator=_check_positive)
    channels: Tuple[int, ...] = attr.ib(
        default=(16, 16, 16, 32, 32, 32, 64, 64, 64), converter=_int_tuple, validator=_check_layers
    )
    strides: Tuple[int, ...] = attr.ib(
        default=(1, 1, 1, 2, 1, 1, 2, 1, 1), converter=_int_tuple, validator=_check_layers
    )
    temporal_kernel: int = attr.ib(default=9, validator=_check_odd)
    spatial_kernel: int = attr.ib(default=3, validator=attr.validators.in_((3,)))
    input_bn: bool = attr.ib(default=True)

    @property
    def out_dim(self) -> int:
        return self.channels[-1]


@attr.s(frozen=True)
class ImageBranchConfig:
    in_channels: int = attr.ib(default=3, validator=_check_positive)
    dim: int = attr.ib(default=64, validator=_check_positive)
    stem_kernel: Tuple[int, int] = attr.ib(default=(4, 2), converter=_int_tuple)
    blocks: int = attr.ib(default=2, validator=_check_positive)
    filter_hidden: int = attr.ib(default=32, validator=_check_positive)
    ffn_ratio: int = attr.ib(default=2, validator=_check_positive)

    @property
    def out_dim(self) -> int:
        return self.dim


def _graph_config(value):
    return value if isinstance(value, GraphBranchConfig) else GraphBranchConfig(**value)


def _image_config(value):
    return value if isinstance(value, ImageBranchConfig) else ImageBranchConfig(**value)


@attr.s(frozen=True)
class EncoderConfig:
    """Architecture of a :class:`GaitEncoder`.

    ``variant`` selects both branches (``"cffn"``) or one of them alone for
    ablations; the projector input width follows the variant."""

    variant: str = attr.ib(default="cffn", validator=attr.validators.in_(VARIANTS))
    graph: GraphBranchConfig = attr.ib(factory=GraphBranchConfig, converter=_graph_config)
    image: ImageBranchConfig = attr.ib(factory=ImageBranchConfig, converter=_image_config)
    projector_hidden: int = attr.ib(default=128, validator=_check_positive)
    projection_dim: int = attr.ib(default=128, validator=_check_positive)

    @property
    def feature_dim(self) -> int:
        dims = {"graph": self.graph.out_dim, "image": self.image.out_dim}
        if self.variant == "cffn":
            return dims["graph"] + dims["image"]
        return dims[self.variant]

    def as_dict(self) -> dict:
        return attr.asdict(self, retain_collection_types=False)


################################################################
# Graph branch
################################################################


class STGCNUnit(nn.Module):
    """Spatial graph convolution over a 3-subset partition, then a temporal
    convolution, with a residual connection."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        partition: torch.Tensor,
        temporal_kernel: int = 9,
        stride: int = 1,
        residual: bool = True,
    ):
        super().__init__()
        self.subsets = partition.shape[0]
        self.register_buffer("partition", partition, persistent=False)
        self.gcn = nn.Conv2d(in_channels, out_channels * self.subsets, kernel_size=1)
        pad = (temporal_kernel - 1) // 2
        self.tcn = nn.Sequential(
            nn.BatchNorm2d(out_channels),
            nn.ReLU(),
            nn.Conv2d(
                out_channels, out_channels, (temporal_kernel, 1), (stride, 1), (pad, 0)
            ),
            nn.BatchNorm2d(out_channels),
        )
        if not residual:
            self.residual = None
        elif in_channels == out_channels and stride == 1:
            self.residual = nn.Identity()
        else:
            self.residual = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, kernel_size=1, stride=(stride, 1)),
                nn.BatchNorm2d(out_channels),
            )

    def forward(self, x):
        # x: N, C, T, V
        y = self.gcn(x)
        n, kc, t, v = y.shape
        y = y.view(n, self.subsets, kc // self.subsets, t, v)
        y = torch.einsum("nkctv,kvw->nctw", y, self.partition.to(y.dtype))
        y = self.tcn(y)
        if self.residual is not None:
            y = y + self.residual(x)
        return F.relu(y)


class GraphBranch(nn.Module):
    def __init__(self, config: GraphBranchConfig, topology: JointTopology):
        super().__init__()
        self.config = config
        joints = topology.num_joints
        partition = torch.as_tensor(topology.spatial_partition(), dtype=torch.float32)
        if config.input_bn:
            self.data_bn = nn.BatchNorm1d(joints * config.in_channels)
        else:
            self.data_bn = nn.Identity()
        units = []
        in_channels = config.in_channels
        for i, (out_channels, stride) in enumerate(zip(config.channels, config.strides)):
            units.append(
                STGCNUnit(
                    in_channels,
                    out_channels,
                    partition,
                    config.temporal_kernel,
                    stride,
                    residual=i > 0,
                )
            )
            in_channels = out_channels
        self.units = nn.ModuleList(units)

    def feature_map(self, x):
        """``N x T x V x C`` batch to the final ``N x 64 x T' x V`` map."""
        n, t, v, c = x.shape
        x = x.permute(0, 2, 3, 1).reshape(n, v * c, t)
        x = self.data_bn(x)
        x = x.view(n, v, c, t).permute(0, 2, 3, 1).contiguous()
        for unit in self.units:
            x = unit(x)
        return x

    def forward(self, x):
        return self.feature_map(x).mean(dim=(2, 3))


################################################################
# Image branch
################################################################


class ChannelLayerNorm(nn.LayerNorm):
    """LayerNorm over the channel axis of an ``N x C x H x W`` map."""

    def forward(self, x):
        return super().forward(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


class AdaptiveFrequencyFilter(nn.Module):
    """Global token mixer: filter the 2-D spectrum of the token grid with
    gains generated from the spectrum itself.

    The gains are real and depend only on spectral magnitudes, which are
    conjugate-symmetric for real input, so the filtered map stays real."""

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(dim, hidden, kernel_size=1),
            nn.ReLU(),
            nn.Conv2d(hidden, dim, kernel_size=1),
        )
        # start as an all-pass filter
        nn.init.zeros_(self.net[2].weight)
        nn.init.zeros_(self.net[2].bias)

    def gains(self, spectrum):
        return 1.0 + self.net(torch.log1p(spectrum.abs()))

    def spectral_mix(self, x, gains: Optional[torch.Tensor] = None):
        """Complex result of the filtering; its imaginary part is round-off."""
        spectrum = torch.fft.fft2(x, norm="ortho")
        if gains is None:
            gains = self.gains(spectrum)
        return torch.fft.ifft2(spectrum * gains, norm="ortho")

    def forward(self, x):
        return self.spectral_mix(x).real


class AFFBlock(nn.Module):
    def __init__(self, dim: int, filter_hidden: int, ffn_ratio: int):
        super().__init__()
        self.norm1 = ChannelLayerNorm(dim)
        self.mix_in = nn.Conv2d(dim, dim, kernel_size=1)
        self.global_filter = AdaptiveFrequencyFilter(dim, filter_hidden)
        self.local = nn.Conv2d(dim, dim, kernel_size=3, padding=1, groups=dim)
        self.mix_out = nn.Conv2d(dim, dim, kernel_size=1)
        self.norm2 = ChannelLayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Conv2d(dim, dim * ffn_ratio, kernel_size=1),
            nn.GELU(),
            nn.Conv2d(dim * ffn_ratio, dim, kernel_size=1),
        )

    def forward(self, x):
        y = self.mix_in(self.norm1(x))
        # plain fusion of global and local features
        y = self.global_filter(y) + self.local(y)
        x = x + self.mix_out(y)
        return x + self.ffn(self.norm2(x))


class ImageBranch(nn.Module):
    """The sequence as a C-channel image over the T x J grid."""

    def __init__(self, config: ImageBranchConfig):
        super().__init__()
        self.config = config
        self.stem = nn.Sequential(
            nn.Conv2d(
                config.in_channels,
                config.dim,
                kernel_size=config.stem_kernel,
                stride=config.stem_kernel,
            ),
            nn.BatchNorm2d(config.dim),
        )
        self.blocks = nn.Sequential(
            *(
                AFFBlock(config.dim, config.filter_hidden, config.ffn_ratio)
                for _ in range(config.blocks)
            )
        )
        self.norm = ChannelLayerNorm(config.dim)

    def feature_map(self, x):
        x = x.permute(0, 3, 1, 2)  # N, C, T, V
        return self.norm(self.blocks(self.stem(x)))

    def forward(self, x):
        return self.feature_map(x).mean(dim=(2, 3))


################################################################
# Fusion, projector and feature drop
################################################################


class CFFN(nn.Module):
    def __init__(self, config: EncoderConfig, topology: JointTopology):
        super().__init__()
        self.variant = config.variant
        self.feature_dim = config.feature_dim
        self.graph = GraphBranch(config.graph, topology) if config.variant != "image" else None
        self.image = ImageBranch(config.image) if config.variant != "graph" else None

    def forward(self, x):
        parts = [branch(x) for branch in (self.graph, self.image) if branch is not None]
        return torch.cat(parts, dim=1) if len(parts) > 1 else parts[0]


class Projector(nn.Module):
    def __init__(
        self, in_dim: int, hidden: int = 128, out_dim: int = 128, activation: bool = True
    ):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden)
        self.act = nn.ReLU() if activation else nn.Identity()
        self.fc2 = nn.Linear(hidden, out_dim)

    def raw(self, fused):
        return self.fc2(self.act(self.fc1(fused)))

    def forward(self, fused):
        return F.normalize(self.raw(fused), dim=1)


def simam_energy(x: torch.Tensor, dims: Sequence[int] = (1,), lam: float = 1e-4) -> torch.Tensor:
    """Parameter-free salience of every activation.

    Activations far from the mean over ``dims`` get weights close to 1, a
    constant group gets 0.5 everywhere before the sigmoid."""
    dims = tuple(dims)
    n = math.prod(x.shape[d] for d in dims) - 1
    d = (x - x.mean(dim=dims, keepdim=True)).pow(2)
    energy = d / (4 * (d.sum(dim=dims, keepdim=True) / max(n, 1) + lam)) + 0.5
    return torch.sigmoid(energy)


def simam_drop(fused: torch.Tensor, drop_ratio: float = 0.25, lam: float = 1e-4) -> torch.Tensor:
    """Zero the ``floor(drop_ratio * D)`` most salient activations of each row."""
    if not 0.0 <= drop_ratio < 1.0:
        raise ValueError(f"drop_ratio must be in [0, 1), got {drop_ratio}")
    k = int(math.floor(drop_ratio * fused.shape[1]))
    if k == 0:
        return fused
    with torch.no_grad():
        top = simam_energy(fused, (1,), lam).topk(k, dim=1).indices
    keep = torch.ones_like(fused).scatter(1, top, 0.0)
    return fused * keep


class GaitEncoder(nn.Module):
    """CFFN backbone plus projector."""

    def __init__(
        self,
        config: EncoderConfig = EncoderConfig(),
        topology: JointTopology = CANONICAL_TOPOLOGY,
    ):
        super().__init__()
        self.config = config
        self.topology = topology
        self.backbone = CFFN(config, topology)
        self.projector = Projector(
            config.feature_dim, config.projector_hidden, config.projection_dim
        )

    def check_input(self, x):
        x = torch.as_tensor(x)
        expected = (self.topology.num_joints, self.config.graph.in_channels)
        if x.dim() != 4 or tuple(x.shape[2:]) != expected:
            raise ValueError(
                f"expected an N x T x {expected[0]} x {expected[1]} batch, got {tuple(x.shape)}"
            )
        if self.config.variant != "graph":
            kt, kj = self.config.image.stem_kernel
            if x.shape[1] % kt or x.shape[2] % kj:
                raise ValueError(
                    f"T x J = {x.shape[1]} x {x.shape[2]} is not divisible by the "
                    f"stem kernel {self.config.image.stem_kernel}"
                )
        return x.to(next(self.parameters()).dtype)

    def features(self, x):
        return self.backbone(self.check_input(x))

    def forward(self, x):
        return self.projector(self.features(x))


def build_encoder(
    config: EncoderConfig = EncoderConfig(),
    topology: JointTopology = CANONICAL_TOPOLOGY,
    seed: Optional[int] = None,
) -> GaitEncoder:
    if seed is None:
        return GaitEncoder(config, topology)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return GaitEncoder(config, topology)


@contextmanager
def forward_mode(module: nn.Module, mode: str):
    """Temporarily put ``module`` in ``"train"`` or ``"eval"`` mode."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    was_training = module.training
    module.train(mode == "train")
    try:
        yield module
    finally:
        module.train(was_training)


def _branch(encoder: GaitEncoder, name: str) -> nn.Module:
    branch = getattr(encoder.backbone, name)
    if branch is None:
        raise ValueError(f"the {encoder.config.variant!r} encoder has no {name} branch")
    return branch


def graph_branch_forward(seq_batch, encoder: GaitEncoder, mode: str = "eval"):
    with forward_mode(encoder, mode):
        return _branch(encoder, "graph")(encoder.check_input(seq_batch))


def image_branch_forward(seq_batch, encoder: GaitEncoder, mode: str = "eval"):
    with forward_mode(encoder, mode):
        return _branch(encoder, "image")(encoder.check_input(seq_batch))


def cffn_forward(seq_batch, encoder: GaitEncoder, mode: str = "eval"):
    with forward_mode(encoder, mode):
        return encoder.features(seq_batch)


def project(fused_batch, encoder: GaitEncoder):
    return encoder.projector(torch.as_tensor(fused_batch))


def parameter_digest(module: nn.Module) -> str:
    """Hash of every parameter and buffer, for checking frozen weights."""
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(tensor.detach().cpu().numpy()).tobytes())
    return h.hexdigest()
