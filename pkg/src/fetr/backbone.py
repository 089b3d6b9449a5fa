"""Residual classifier assembled from basic and bottleneck blocks.

Basic blocks (stages 1-2) carry style recalibration followed by SE gating;
bottleneck blocks (stages 3-4) carry SE gating followed, on the stages listed
in ``NetworkSpec.dca_stages``, by two-pass criss-cross attention.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from .attention import DCAParams, SEParams, StyleRMParams, dca_forward, se_forward, style_rm_forward
from .errors import ConfigError, DimensionError
from .layers import BatchNorm, he_normal, named_parameters, zeros_param
from .ops import blur_pool, conv2d, space_to_depth
from .tensor import Tensor, as_tensor, relu

STEM_BLOCK = 4
EXPANSION = 4
BASIC_STAGES = (1, 2)


@dataclass(frozen=True)
class NetworkSpec:
    stage_depths: tuple = (1, 1, 1, 1)
    base_width: int = 16
    num_classes: int = 10
    dca_stages: tuple = (4,)
    se_reduction: int = 4
    input_size: tuple = (32, 32)
    style_rm: bool = True
    dca_passes: int = 2
    dca_kernel: int = 1
    stage_strides: tuple = (1, 2, 2, 1)
    dtype: str = "float32"

    def __post_init__(self):
        # normalise list inputs (e.g. from JSON) to tuples so NetworkSpec stays hashable
        for name in ("stage_depths", "dca_stages", "input_size", "stage_strides"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if len(self.stage_depths) != 4 or min(self.stage_depths) < 1:
            raise ConfigError(f"stage_depths must be 4 positive integers, got {self.stage_depths}")
        if len(self.stage_strides) != 4 or any(s not in (1, 2) for s in self.stage_strides):
            raise ConfigError(f"stage_strides must be 4 values in {{1, 2}}, got {self.stage_strides}")
        if any(s not in (1, 2, 3, 4) for s in self.dca_stages):
            raise ConfigError(f"dca_stages must be drawn from 1..4, got {self.dca_stages}")
        object.__setattr__(self, "dca_stages", tuple(sorted(set(self.dca_stages))))
        if self.base_width < 1 or self.num_classes < 1:
            raise ConfigError("base_width and num_classes must be positive")
        h, w = self.input_size
        if h % STEM_BLOCK or w % STEM_BLOCK:
            raise ConfigError(f"input size {self.input_size} must be divisible by {STEM_BLOCK}")
        if self.dca_passes < 1:
            raise ConfigError("dca_passes must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def widths(self) -> tuple:
        return tuple(self.base_width * 2**i for i in range(4))

    def stage_out_channels(self, stage: int) -> int:
        w = self.widths[stage - 1]
        return w if stage in BASIC_STAGES else w * EXPANSION

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(**d)


@dataclass
class Downsample:
    conv: Tensor
    bn: BatchNorm


@dataclass
class BasicBlockParams:
    conv1: Tensor
    bn1: BatchNorm
    conv2: Tensor
    bn2: BatchNorm
    style_rm: Optional[StyleRMParams]
    se: Optional[SEParams]
    dca: Optional[DCAParams]
    downsample: Optional[Downsample]
    stride: int = 1
    dca_passes: int = 2


@dataclass
class BottleneckParams:
    conv1: Tensor
    bn1: BatchNorm
    conv2: Tensor
    bn2: BatchNorm
    se: Optional[SEParams]
    dca: Optional[DCAParams]
    conv3: Tensor
    bn3: BatchNorm
    downsample: Optional[Downsample]
    stride: int = 1
    dca_passes: int = 2


Block = Union[BasicBlockParams, BottleneckParams]


def _identity(x, block: Block, training: bool):
    if block.downsample is None:
        return x
    if block.stride == 2:
        x = blur_pool(x)
    return block.downsample.bn(conv2d(x, block.downsample.conv), training)


def basic_block_forward(x, block: BasicBlockParams, training: bool) -> Tensor:
    x = as_tensor(x)
    out = conv2d(x, block.conv1, pad=1)
    if block.stride == 2:
        out = blur_pool(out)
    out = relu(block.bn1(out, training))
    out = block.bn2(conv2d(out, block.conv2, pad=1), training)
    if block.style_rm is not None:
        out = style_rm_forward(out, block.style_rm, training)
    if block.se is not None:
        out = se_forward(out, block.se)
    if block.dca is not None:
        out = dca_forward(out, block.dca, block.dca_passes)
    return relu(out + _identity(x, block, training))


def bottleneck_forward(x, block: BottleneckParams, training: bool) -> Tensor:
    x = as_tensor(x)
    out = relu(block.bn1(conv2d(x, block.conv1), training))
    out = conv2d(out, block.conv2, pad=1)
    if block.stride == 2:
        out = blur_pool(out)
    out = relu(block.bn2(out, training))
    if block.se is not None:
        out = se_forward(out, block.se)
    if block.dca is not None:
        out = dca_forward(out, block.dca, block.dca_passes)
    out = block.bn3(conv2d(out, block.conv3), training)
    return relu(out + _identity(x, block, training))


def _make_downsample(c_in, c_out, stride, rng, dtype) -> Optional[Downsample]:
    if c_in == c_out and stride == 1:
        return None
    return Downsample(conv=he_normal(rng, (c_out, c_in, 1, 1), c_in, dtype), bn=BatchNorm.create(c_out, dtype))


def make_basic_block(c_in, width, stride, spec: NetworkSpec, use_dca: bool, rng, dtype) -> BasicBlockParams:
    return BasicBlockParams(
        conv1=he_normal(rng, (width, c_in, 3, 3), c_in * 9, dtype),
        bn1=BatchNorm.create(width, dtype),
        conv2=he_normal(rng, (width, width, 3, 3), width * 9, dtype),
        bn2=BatchNorm.create(width, dtype, gamma=0.0),
        style_rm=StyleRMParams.create(width, rng, dtype) if spec.style_rm else None,
        se=SEParams.create(width, spec.se_reduction, rng, dtype),
        dca=DCAParams.create(width, rng, dtype, spec.dca_kernel) if use_dca else None,
        downsample=_make_downsample(c_in, width, stride, rng, dtype),
        stride=stride,
        dca_passes=spec.dca_passes,
    )


def make_bottleneck(c_in, width, stride, spec: NetworkSpec, use_dca: bool, rng, dtype) -> BottleneckParams:
    c_out = width * EXPANSION
    return BottleneckParams(
        conv1=he_normal(rng, (width, c_in, 1, 1), c_in, dtype),
        bn1=BatchNorm.create(width, dtype),
        conv2=he_normal(rng, (width, width, 3, 3), width * 9, dtype),
        bn2=BatchNorm.create(width, dtype),
        se=SEParams.create(width, spec.se_reduction, rng, dtype),
        dca=DCAParams.create(width, rng, dtype, spec.dca_kernel) if use_dca else None,
        conv3=he_normal(rng, (c_out, width, 1, 1), width, dtype),
        bn3=BatchNorm.create(c_out, dtype, gamma=0.0),
        downsample=_make_downsample(c_in, c_out, stride, rng, dtype),
        stride=stride,
        dca_passes=spec.dca_passes,
    )


@dataclass
class Stem:
    conv: Tensor
    bn: BatchNorm


def build_stem(spec: NetworkSpec, rng: np.random.Generator) -> Stem:
    c_in = 3 * STEM_BLOCK * STEM_BLOCK
    dtype = np.dtype(spec.dtype)
    return Stem(conv=he_normal(rng, (spec.base_width, c_in, 1, 1), c_in, dtype), bn=BatchNorm.create(spec.base_width, dtype))


def stem_forward(x, stem: Stem, training: bool) -> Tensor:
    return relu(stem.bn(conv2d(space_to_depth(x, STEM_BLOCK), stem.conv), training))


@dataclass
class Classifier:
    weight: Tensor
    bias: Tensor


@dataclass
class Network:
    spec: NetworkSpec = field(repr=False)
    stem: Stem
    stages: list
    classifier: Classifier

    def forward(self, x, training: bool = False) -> Tensor:
        return network_forward(x, self, training)

    __call__ = forward

    def named_parameters(self):
        return named_parameters(self)


def build_network(spec: NetworkSpec, seed: int = 0) -> Network:
    """Initialise every parameter from one seeded generator (deterministic)."""
    rng = np.random.default_rng(seed)
    dtype = np.dtype(spec.dtype)
    stem = build_stem(spec, rng)
    stages = []
    c_in = spec.base_width
    for s, (depth, width, stride) in enumerate(zip(spec.stage_depths, spec.widths, spec.stage_strides), start=1):
        make = make_basic_block if s in BASIC_STAGES else make_bottleneck
        use_dca = s in spec.dca_stages
        blocks = []
        for i in range(depth):
            block = make(c_in, width, stride if i == 0 else 1, spec, use_dca, rng, dtype)
            blocks.append(block)
            c_in = spec.stage_out_channels(s)
        stages.append(blocks)
    classifier = Classifier(
        weight=Tensor(rng.normal(0.0, 0.01, size=(spec.num_classes, c_in)).astype(dtype), requires_grad=True),
        bias=zeros_param((spec.num_classes,), dtype),
    )
    return Network(spec=spec, stem=stem, stages=stages, classifier=classifier)


def block_forward(x, block: Block, training: bool) -> Tensor:
    if isinstance(block, BasicBlockParams):
        return basic_block_forward(x, block, training)
    return bottleneck_forward(x, block, training)


def network_forward(x, net: Network, training: bool = False) -> Tensor:
    """Stem, four stages, global mean pool and a linear head: ``B x num_classes`` logits."""
    x = as_tensor(x)
    expected = (3, *net.spec.input_size)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise DimensionError(f"expected input B x {' x '.join(map(str, expected))}, got {x.shape}")
    if x.dtype != np.dtype(net.spec.dtype):
        x = Tensor(x.data.astype(net.spec.dtype))
    out = stem_forward(x, net.stem, training)
    for blocks in net.stages:
        for block in blocks:
            out = block_forward(out, block, training)
    pooled = out.mean(axis=(2, 3))
    return pooled @ net.classifier.weight.T + net.classifier.bias


_CATEGORIES = ("stem", "stages", "style_rm", "se", "dca", "classifier")


def _category(name: str) -> str:
    parts = name.split(".")
    if parts[0] in ("stem", "classifier"):
        return parts[0]
    for part in ("style_rm", "se", "dca"):
        if part in parts:
            return part
    return "stages"


def count_parameters(obj) -> tuple[int, dict]:
    """Total learnable scalars and a per-category breakdown.

    Categories: stem, stages (backbone convs, BN affines, shortcuts),
    style_rm, se, dca, classifier. Running statistics are not counted.
    """
    breakdown = dict.fromkeys(_CATEGORIES, 0)
    for name, t in named_parameters(obj):
        breakdown[_category(name)] += t.size
    return sum(breakdown.values()), breakdown
