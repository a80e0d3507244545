"""gait-ssa: self-supervised gait emotion representations"""

import types

from ._topology import JointTopology, CANONICAL_TOPOLOGY, JOINT_NAMES, PART_NAMES
from ._dataset import (
    SkeletonSequence,
    GaitDataset,
    LABEL_NAMES,
    load_dataset,
    save_dataset,
    split_dataset,
    split_by_group,
    select_labeled_fraction,
    resample_temporal,
)
from ._synth import SynthConfig, generate_synthetic, CLASS_RATIO_PRESETS
from ._augment import (
    RngStream,
    GeneralAugmentSpec,
    StrongAugmentSpec,
    AugmentationPlan,
    STRONG_PRESETS,
    COMPOSITIONS,
    general_spec_for,
    shear,
    spatial_flip,
    rotate,
    crop,
    temporal_flip,
    upper_body_jitter,
    spatial_mask,
    temporal_mask,
    random_spatiotemporal_mask,
    apply_general,
    apply_strong,
    make_views,
)
from ._encoder import (
    EncoderConfig,
    GraphBranchConfig,
    ImageBranchConfig,
    GaitEncoder,
    build_encoder,
    graph_branch_forward,
    image_branch_forward,
    cffn_forward,
    project,
    simam_energy,
    simam_drop,
)
from ._checkpoint import save_encoder, load_encoder
from ._losses import infonce_loss, conditional_distribution, ddm_loss
from ._trainer import (
    MemoryBank,
    MomentumPair,
    TrainConfig,
    StepReport,
    PretrainResult,
    momentum_update,
    init_state,
    warm_start_bank,
    pretrain_step,
    pretrain_run,
)
from ._evaluation import (
    ConfusionMatrix,
    MetricsReport,
    ProtocolConfig,
    Projection2D,
    compute_metrics,
    extract_features,
    linear_eval,
    finetune_eval,
    semi_supervised_eval,
    lda_projection,
)
from ._config import RunConfig, CommandConfig, load_run_config, dump_run_config
from ._pool import open_augment_context, AugmentContext, WorkerType, feed_augmented
from ._abc import BrokenWorkerError
from ._errors import (
    DatasetFormatError,
    MissingDatasetFileError,
    ShapeMismatchError,
    NonFiniteDataError,
    SchemaVersionError,
    CorruptMetadataError,
    InvalidLabelError,
    MissingLabelsError,
    EmptyBankError,
    NonFiniteLossError,
    ConfigError,
    CheckpointFormatError,
)
from ._cli import run


# Public objects report the package as their module, not the private file
# they live in. Adapted from trio._util (MIT/Apache2).
def fixup_module_metadata(module_name, namespace):
    seen_ids = set()
    pending = [
        (name, name, obj) for name, obj in namespace.items() if not name.startswith("_")
    ]
    while pending:
        qualname, name, obj = pending.pop()
        if id(obj) in seen_ids:
            continue
        seen_ids.add(id(obj))
        if not isinstance(obj, (type, types.FunctionType)):
            continue
        mod = getattr(obj, "__module__", None)
        if mod is None or not mod.startswith("gait_ssa."):
            continue
        obj.__module__ = module_name
        if hasattr(obj, "__name__") and "." not in obj.__name__:
            obj.__name__ = name
            obj.__qualname__ = qualname
        if isinstance(obj, type):
            pending.extend(
                (qualname + "." + attr_name, attr_name, attr_value)
                for attr_name, attr_value in obj.__dict__.items()
            )


fixup_module_metadata(__name__, globals())
del fixup_module_metadata, types
