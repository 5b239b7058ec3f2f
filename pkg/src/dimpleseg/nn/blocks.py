"""Composite network blocks built on the autodiff ops.

Blocks register their parameters in a shared ParamStore under a path prefix
at construction time and look them up again on every call, so casting or
reloading the store is picked up without rebuilding the blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..autodiff import Tensor, ops
from ..errors import ConfigError, DimensionError
from .params import ParamStore

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
PRELU_INIT = 0.25


@dataclass(frozen=True)
class BlockConfig:
    in_channels: int
    out_channels: int
    dense_units: int = 2
    growth: Optional[int] = None  # defaults to out_channels
    attn_ratio: int = 8
    se_ratio: int = 16
    spatial_kernel: int = 7

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "dense_units", "attn_ratio", "se_ratio", "spatial_kernel"):
            if getattr(self, name) < 1:
                raise ConfigError(f"BlockConfig.{name} must be >= 1, got {getattr(self, name)}")
        if self.growth is not None and self.growth < 1:
            raise ConfigError(f"BlockConfig.growth must be >= 1, got {self.growth}")
        if self.out_channels % self.attn_ratio:
            raise ConfigError(
                f"out_channels={self.out_channels} is not divisible by attn_ratio={self.attn_ratio}"
            )
        if self.spatial_kernel % 2 == 0:
            raise ConfigError(f"spatial_kernel must be odd, got {self.spatial_kernel}")

    @property
    def unit_growth(self) -> int:
        return self.growth if self.growth is not None else self.out_channels


def _join(*parts: str) -> str:
    return "/".join(p for p in parts if p)


class Block:
    """Base class: owns a name prefix inside a ParamStore."""

    def __init__(self, store: ParamStore, prefix: str):
        self.store = store
        self.prefix = prefix

    def name(self, *parts: str) -> str:
        return _join(self.prefix, *parts)

    def p(self, *parts: str) -> Tensor:
        return self.store[self.name(*parts)]


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(np.float32)


class Conv(Block):
    def __init__(self, store, prefix, cin, cout, k, rng, bias=True):
        super().__init__(store, prefix)
        self.cin, self.cout, self.k, self.bias = cin, cout, k, bias
        store.add(self.name("weight"), he_normal(rng, (cout, cin, k, k), cin * k * k))
        if bias:
            store.add(self.name("bias"), np.zeros(cout, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        b = self.p("bias") if self.bias else None
        return ops.conv2d(x, self.p("weight"), b, stride=1, padding=(self.k - 1) // 2)


class BatchNorm(Block):
    def __init__(self, store, prefix, channels):
        super().__init__(store, prefix)
        store.add(self.name("gamma"), np.ones(channels, dtype=np.float32))
        store.add(self.name("beta"), np.zeros(channels, dtype=np.float32))
        store.add(self.name("running_mean"), np.zeros(channels, dtype=np.float32), trainable=False)
        store.add(self.name("running_var"), np.ones(channels, dtype=np.float32), trainable=False)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ops.batchnorm2d(
            x, self.p("gamma"), self.p("beta"), self.p("running_mean"), self.p("running_var"),
            training=training, momentum=BN_MOMENTUM, eps=BN_EPS,
        )


class PReLU(Block):
    def __init__(self, store, prefix):
        super().__init__(store, prefix)
        store.add(self.name("slope"), np.full(1, PRELU_INIT, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.prelu(x, self.p("slope"))


class Linear(Block):
    def __init__(self, store, prefix, cin, cout, rng):
        super().__init__(store, prefix)
        store.add(self.name("weight"), he_normal(rng, (cout, cin), cin))
        store.add(self.name("bias"), np.zeros(cout, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.p("weight"), self.p("bias"))


class ConvUnit(Block):
    """conv (no bias) -> batchnorm -> PReLU."""

    def __init__(self, store, prefix, cin, cout, k, rng):
        super().__init__(store, prefix)
        self.conv = Conv(store, self.name("conv"), cin, cout, k, rng, bias=False)
        self.bn = BatchNorm(store, self.name("bn"), cout)
        self.act = PReLU(store, self.name("act"))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return self.act(self.bn(self.conv(x), training))


class ChannelAttention(Block):
    """Channel gate from avg- and max-pooled descriptors through a shared MLP."""

    def __init__(self, store, prefix, channels, ratio, rng):
        super().__init__(store, prefix)
        if channels % ratio:
            raise ConfigError(f"channel attention: {channels} channels not divisible by ratio {ratio}")
        hidden = channels // ratio
        self.fc1 = Linear(store, self.name("fc1"), channels, hidden, rng)
        self.act = PReLU(store, self.name("act"))
        self.fc2 = Linear(store, self.name("fc2"), hidden, channels, rng)
        self.force_open = False

    def mlp(self, d: Tensor) -> Tensor:
        return self.fc2(self.act(self.fc1(d)))

    def __call__(self, x: Tensor) -> Tensor:
        N, C = x.shape[:2]
        if self.force_open:
            return Tensor(np.ones((N, C, 1, 1), dtype=x.dtype))
        avg = ops.flatten_channels(ops.global_pool(x, "avg"))
        mx = ops.flatten_channels(ops.global_pool(x, "max"))
        logits = ops.add(self.mlp(avg), self.mlp(mx))
        return ops.unflatten_channels(ops.sigmoid(logits))


class SpatialAttention(Block):
    """Spatial gate from channel-wise avg and max maps through a k x k conv."""

    def __init__(self, store, prefix, kernel, rng):
        super().__init__(store, prefix)
        if kernel % 2 == 0:
            raise ConfigError(f"spatial attention kernel must be odd, got {kernel}")
        self.conv = Conv(store, self.name("conv"), 2, 1, kernel, rng)
        self.force_open = False

    def __call__(self, x: Tensor) -> Tensor:
        N, _, H, W = x.shape
        if self.force_open:
            return Tensor(np.ones((N, 1, H, W), dtype=x.dtype))
        desc = ops.concat_channels(ops.channel_reduce(x, "avg"), ops.channel_reduce(x, "max"))
        return ops.sigmoid(self.conv(desc))


class CBAM(Block):
    """Channel gate then spatial gate, applied sequentially."""

    def __init__(self, store, prefix, channels, ratio, kernel, rng):
        super().__init__(store, prefix)
        self.channel = ChannelAttention(store, self.name("channel"), channels, ratio, rng)
        self.spatial = SpatialAttention(store, self.name("spatial"), kernel, rng)

    def set_force_open(self, value: bool) -> None:
        self.channel.force_open = value
        self.spatial.force_open = value

    def __call__(self, x: Tensor) -> Tensor:
        x = ops.mul_broadcast(x, self.channel(x))
        return ops.mul_broadcast(x, self.spatial(x))


class SEBlock(Block):
    def __init__(self, store, prefix, channels, ratio, rng):
        super().__init__(store, prefix)
        if channels % ratio:
            raise ConfigError(f"SE block: {channels} channels not divisible by ratio {ratio}")
        hidden = channels // ratio
        self.fc1 = Linear(store, self.name("fc1"), channels, hidden, rng)
        self.act = PReLU(store, self.name("act"))
        self.fc2 = Linear(store, self.name("fc2"), hidden, channels, rng)

    def gate(self, x: Tensor) -> Tensor:
        squeezed = ops.flatten_channels(ops.global_pool(x, "avg"))
        return ops.unflatten_channels(ops.sigmoid(self.fc2(self.act(self.fc1(squeezed)))))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.mul_broadcast(x, self.gate(x))


class ResidualDenseBlock(Block):
    """Densely wired conv units, 1x1 fusion, CBAM on the branch, shortcut added last.

    Unit ``i`` sees the concatenation of the block input and the outputs of
    units ``0..i-1``. The shortcut is the identity when channel counts agree,
    otherwise a 1x1 conv followed by batchnorm.
    """

    def __init__(self, store: ParamStore, prefix: str, cfg: BlockConfig, rng: np.random.Generator):
        super().__init__(store, prefix)
        self.cfg = cfg
        g = cfg.unit_growth
        self.units = [
            ConvUnit(store, self.name(f"unit{i}"), cfg.in_channels + i * g, g, 3, rng)
            for i in range(cfg.dense_units)
        ]
        self.fuse = Conv(store, self.name("fuse"), cfg.in_channels + cfg.dense_units * g, cfg.out_channels, 1, rng)
        self.attn = CBAM(store, self.name("attn"), cfg.out_channels, cfg.attn_ratio, cfg.spatial_kernel, rng)
        if cfg.in_channels != cfg.out_channels:
            self.shortcut_conv = Conv(store, self.name("shortcut", "conv"), cfg.in_channels, cfg.out_channels, 1, rng, bias=False)
            self.shortcut_bn = BatchNorm(store, self.name("shortcut", "bn"), cfg.out_channels)
        else:
            self.shortcut_conv = None
        self.identity_shortcut = False

    def branch(self, x: Tensor, training: bool) -> Tensor:
        feats = [x]
        for unit in self.units:
            inp = feats[0] if len(feats) == 1 else ops.concat_channels(*feats)
            feats.append(unit(inp, training))
        fused = self.fuse(ops.concat_channels(*feats))
        return self.attn(fused)

    def shortcut(self, x: Tensor, training: bool) -> Tensor:
        if self.shortcut_conv is None or self.identity_shortcut:
            return x
        return self.shortcut_bn(self.shortcut_conv(x), training)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise DimensionError(self.prefix or "residual_dense_block",
                                 f"expected {self.cfg.in_channels} input channels", [x.shape])
        return ops.add(self.shortcut(x, training), self.branch(x, training))


class Bottleneck(Block):
    """Three residual-dense blocks wired densely across blocks, 1x1 fusion, then SE."""

    n_blocks = 3

    def __init__(self, store, prefix, width, rng, dense_units=2, attn_ratio=8, se_ratio=16, spatial_kernel=7):
        super().__init__(store, prefix)
        self.width = width
        self.blocks = [
            ResidualDenseBlock(
                store, self.name(f"rdb{j}"),
                BlockConfig((j + 1) * width, width, dense_units, None, attn_ratio, se_ratio, spatial_kernel),
                rng,
            )
            for j in range(self.n_blocks)
        ]
        self.fuse = Conv(store, self.name("fuse"), (self.n_blocks + 1) * width, width, 1, rng)
        self.se = SEBlock(store, self.name("se"), width, se_ratio, rng)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if x.shape[1] != self.width:
            raise DimensionError(self.prefix, f"expected {self.width} input channels", [x.shape])
        feats = [x]
        for block in self.blocks:
            inp = feats[0] if len(feats) == 1 else ops.concat_channels(*feats)
            feats.append(block(inp, training))
        return self.se(self.fuse(ops.concat_channels(*feats)))
