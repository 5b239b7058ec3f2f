from .blocks import (
    CBAM,
    BatchNorm,
    Block,
    BlockConfig,
    Bottleneck,
    ChannelAttention,
    Conv,
    ConvUnit,
    Linear,
    PReLU,
    ResidualDenseBlock,
    SEBlock,
    SpatialAttention,
)
from .params import ParamStore

__all__ = [
    "ParamStore", "Block", "BlockConfig", "Conv", "BatchNorm", "PReLU", "Linear", "ConvUnit",
    "ChannelAttention", "SpatialAttention", "CBAM", "SEBlock", "ResidualDenseBlock", "Bottleneck",
]
