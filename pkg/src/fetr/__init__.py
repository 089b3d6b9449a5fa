"""Feature-enhanced TResNet at desk scale: a numpy autodiff core, StyleRM / SE /
criss-cross attention modules, a trainable backbone, and the tooling around it."""

from .attention import (
    DCAParams,
    SEParams,
    StyleRMParams,
    cca_pass,
    count_ops,
    criss_cross_mask,
    dca_forward,
    dense_attention,
    se_forward,
    style_rm_forward,
)
from .backbone import Network, NetworkSpec, build_network, count_parameters, network_forward
from .bench import BenchReport, nonlocal_forward, run_bench
from .checkpoint import Checkpoint, load_checkpoint, restore_network, save_checkpoint, snapshot
from .config import DataConfig, parse_config
from .data import DatasetManifest, ImageSet, generate_synthetic, load_image_folder, load_images, split_train_val
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    DecodeError,
    DegenerateBatchError,
    DimensionError,
    FetrError,
    NonFiniteGradientError,
    ParseError,
    ResourceError,
)
from .metrics import RunMetrics, confusion_matrix, precision_recall_f1, run_metrics, topk_accuracy
from .tensor import Tensor, no_grad
from .training import OptimizerState, TrainConfig, evaluate, train_epoch

__version__ = "0.1.0"
