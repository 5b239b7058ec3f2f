"""Segmentation networks: the attention residual-dense U-Net and a plain U-Net.

Both map N x 1 x H x W images to N x 1 x H x W probabilities, with H and W
multiples of 16 (four 2x2 max-pool steps between five encoder stages).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

from .autodiff import Tensor, no_grad, ops
from .errors import ConfigError, GeometryError
from .nn import CBAM, BlockConfig, Bottleneck, Conv, ConvUnit, ParamStore, ResidualDenseBlock

ARCHS = ("proposed", "unet")
N_STAGES = 5
DOWNSAMPLE = 2 ** (N_STAGES - 1)


@dataclass(frozen=True)
class ModelSpec:
    arch: str = "proposed"
    in_channels: int = 1
    base_width: int = 32
    stage_widths: Optional[tuple[int, ...]] = None
    dense_units: int = 2
    attn_ratio: int = 8
    se_ratio: int = 16
    spatial_kernel: int = 7
    out_channels: int = 1
    upsample: str = "bilinear"  # "transposed" exists only for parameter audits

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if self.stage_widths is None:
            object.__setattr__(self, "stage_widths", tuple(self.base_width * 2 ** i for i in range(N_STAGES)))
        else:
            object.__setattr__(self, "stage_widths", tuple(int(w) for w in self.stage_widths))
        if len(self.stage_widths) != N_STAGES:
            raise ConfigError(f"stage_widths needs {N_STAGES} entries, got {len(self.stage_widths)}")
        if any(w < 1 for w in self.stage_widths) or self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be positive")
        if self.upsample not in ("bilinear", "transposed"):
            raise ConfigError(f"unknown upsample mode {self.upsample!r}")

    def with_arch(self, arch: str) -> "ModelSpec":
        return replace(self, arch=arch)


class Model:
    """Common forward interface; parameters live in ``self.params``."""

    def __init__(self, spec: ModelSpec, params: ParamStore):
        self.spec = spec
        self.params = params
        self.mode = "train"

    def train(self) -> "Model":
        self.mode = "train"
        return self

    def eval(self) -> "Model":
        self.mode = "eval"
        return self

    @property
    def dtype(self):
        for _, t in self.params.items():
            return t.tensor.dtype
        return np.float32

    def check_geometry(self, shape: tuple[int, ...]) -> None:
        if len(shape) != 4 or shape[1] != self.spec.in_channels:
            raise GeometryError(f"expected N x {self.spec.in_channels} x H x W input, got {shape}", stage="input")
        h, w = shape[2:]
        for stage in range(2, N_STAGES + 1):
            if h % 2 or w % 2:
                raise GeometryError(
                    f"spatial size {shape[2]}x{shape[3]} is not divisible by {DOWNSAMPLE}; "
                    f"reaches {h}x{w} before the max pool", stage=f"enc{stage}/pool",
                )
            h, w = h // 2, w // 2

    def forward(self, batch: Union[Tensor, np.ndarray]) -> Tensor:
        if not isinstance(batch, Tensor):
            batch = Tensor(np.asarray(batch, dtype=self.dtype))
        elif batch.dtype != self.dtype:
            batch = Tensor(batch.data.astype(self.dtype))
        self.check_geometry(batch.shape)
        if self.mode == "eval":
            with no_grad():
                return self._forward(batch, training=False)
        return self._forward(batch, training=True)

    __call__ = forward

    def predict(self, images: np.ndarray) -> np.ndarray:
        """Eval-mode probabilities as a numpy array; leaves the mode unchanged."""
        prev = self.mode
        self.eval()
        try:
            return self.forward(images).data
        finally:
            self.mode = prev

    def _forward(self, x: Tensor, training: bool) -> Tensor:  # pragma: no cover - abstract
        raise NotImplementedError


def _upsampler(store, prefix, channels, spec, rng):
    if spec.upsample == "bilinear":
        return ops.bilinear_upsample2x
    w = prefix + "/weight"
    b = prefix + "/bias"
    store.add(w, (rng.standard_normal((channels, channels, 2, 2)) * np.sqrt(1.0 / channels)).astype(np.float32))
    store.add(b, np.zeros(channels, dtype=np.float32))
    return lambda x: ops.conv_transpose2x2(x, store[w], store[b])


class ProposedNet(Model):
    """5x5 stem, five attention residual-dense encoder stages, SE bottleneck,
    four bilinear-upsampling decoder stages each followed by CBAM, 1x1 head."""

    def __init__(self, spec: ModelSpec, seed: int = 0):
        super().__init__(spec, ParamStore())
        rng = np.random.default_rng(seed)
        store, w = self.params, spec.stage_widths

        def cfg(cin, cout):
            return BlockConfig(cin, cout, spec.dense_units, None, spec.attn_ratio, spec.se_ratio, spec.spatial_kernel)

        self.stem = ConvUnit(store, "stem", spec.in_channels, w[0], 5, rng)
        self.encoder = [
            ResidualDenseBlock(store, f"enc{i + 1}/rdb", cfg(w[max(i - 1, 0)], w[i]), rng)
            for i in range(N_STAGES)
        ]
        self.bottleneck = Bottleneck(
            store, "bottleneck", w[-1], rng, spec.dense_units, spec.attn_ratio, spec.se_ratio, spec.spatial_kernel
        )
        self.upsamplers, self.decoder, self.dec_attn = [], [], []
        for j in range(N_STAGES - 1):
            below, skip = w[N_STAGES - 1 - j], w[N_STAGES - 2 - j]
            self.upsamplers.append(_upsampler(store, f"dec{j + 1}/upsample", below, spec, rng))
            self.decoder.append(ResidualDenseBlock(store, f"dec{j + 1}/rdb", cfg(below + skip, skip), rng))
            self.dec_attn.append(CBAM(store, f"dec{j + 1}/attn", skip, spec.attn_ratio, spec.spatial_kernel, rng))
        self.head = Conv(store, "head", w[0], spec.out_channels, 1, rng)

    def attention_blocks(self) -> list[CBAM]:
        blocks = [b.attn for b in self.encoder] + [b.attn for b in self.decoder] + list(self.dec_attn)
        blocks += [b.attn for b in self.bottleneck.blocks]
        return blocks

    def _forward(self, x: Tensor, training: bool) -> Tensor:
        x = self.stem(x, training)
        skips = []
        for i, stage in enumerate(self.encoder):
            if i:
                x = ops.maxpool2d(x)
            x = stage(x, training)
            skips.append(x)
        x = self.bottleneck(x, training)
        for j, (up, block, attn) in enumerate(zip(self.upsamplers, self.decoder, self.dec_attn)):
            x = ops.concat_channels(up(x), skips[N_STAGES - 2 - j])
            x = attn(block(x, training))
        return ops.sigmoid(self.head(x))


class UNet(Model):
    """Plain U-Net baseline: double conv stages, max pool, bilinear upsample + concat."""

    def __init__(self, spec: ModelSpec, seed: int = 0):
        super().__init__(spec, ParamStore())
        rng = np.random.default_rng(seed)
        store, w = self.params, spec.stage_widths
        self.encoder = []
        cin = spec.in_channels
        for i in range(N_STAGES):
            self.encoder.append((
                ConvUnit(store, f"enc{i + 1}/conv0", cin, w[i], 3, rng),
                ConvUnit(store, f"enc{i + 1}/conv1", w[i], w[i], 3, rng),
            ))
            cin = w[i]
        self.upsamplers, self.decoder = [], []
        for j in range(N_STAGES - 1):
            below, skip = w[N_STAGES - 1 - j], w[N_STAGES - 2 - j]
            self.upsamplers.append(_upsampler(store, f"dec{j + 1}/upsample", below, spec, rng))
            self.decoder.append((
                ConvUnit(store, f"dec{j + 1}/conv0", below + skip, skip, 3, rng),
                ConvUnit(store, f"dec{j + 1}/conv1", skip, skip, 3, rng),
            ))
        self.head = Conv(store, "head", w[0], spec.out_channels, 1, rng)

    def _forward(self, x: Tensor, training: bool) -> Tensor:
        skips = []
        for i, (c0, c1) in enumerate(self.encoder):
            if i:
                x = ops.maxpool2d(x)
            x = c1(c0(x, training), training)
            skips.append(x)
        for j, (up, (c0, c1)) in enumerate(zip(self.upsamplers, self.decoder)):
            x = ops.concat_channels(up(x), skips[N_STAGES - 2 - j])
            x = c1(c0(x, training), training)
        return ops.sigmoid(self.head(x))


def build_proposed(spec: ModelSpec, seed: int = 0) -> ProposedNet:
    return ProposedNet(replace(spec, arch="proposed"), seed)


def build_unet(spec: ModelSpec, seed: int = 0) -> UNet:
    return UNet(replace(spec, arch="unet"), seed)


def build_model(spec: ModelSpec, seed: int = 0) -> Model:
    return build_proposed(spec, seed) if spec.arch == "proposed" else build_unet(spec, seed)


def param_count(model: Union[Model, ParamStore, None]) -> int:
    """Number of trainable scalars."""
    if model is None:
        return 0
    store = model.params if isinstance(model, Model) else model
    return store.param_count()


__all__ = [
    "ModelSpec", "Model", "ProposedNet", "UNet", "build_proposed", "build_unet", "build_model",
    "param_count", "ARCHS",
]
