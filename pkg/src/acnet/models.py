"""Generator, PatchGAN discriminator and embedding encoder.

The generator follows the CycleGAN ResNet layout at a reduced width ``c``:

    CIR(7, s1, c, reflect) -> CIR(3, s2, 2c) -> CIR(3, s2, 4c)
    -> n_res_blocks x RB(3, s1, 4c, reflect)
    -> DIR(3, s2, 2c) -> DIR(3, s2, c) -> Conv(7, s1, 3, reflect) -> tanh

The discriminator is a 70x70-style PatchGAN:

    CLR(4, s2, c) -> CILR(4, s2, 2c) -> CILR(4, s2, 4c) -> CILR(4, s1, 8c) -> Conv(4, s1, 1)
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import ops
from .module import Module, parameter
from .tensor import Tensor

LEAKY_SLOPE = 0.2


@dataclass
class GeneratorConfig:
    base_channels: int = 8
    n_res_blocks: int = 8
    image_channels: int = 3

    def __post_init__(self):
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.n_res_blocks < 0:
            raise ValueError(f"n_res_blocks must be >= 0, got {self.n_res_blocks}")


@dataclass
class DiscriminatorConfig:
    base_channels: int = 8
    image_channels: int = 3


@dataclass
class EncoderConfig:
    channels: tuple[int, ...] = (16, 32, 64, 128)
    kernel_size: int = 3
    embedding_dim: int = 64
    image_channels: int = 3

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if not self.channels:
            raise ValueError("encoder needs at least one conv block")
        if self.embedding_dim < 1:
            raise ValueError(f"embedding_dim must be >= 1, got {self.embedding_dim}")


def _normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


class Conv(Module):
    def __init__(self, cin, cout, k, stride=1, pad_type="zero", rng=None, std=0.02, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = parameter(_normal(rng, (cout, cin, k, k), std), dtype)
        self.bias = parameter(np.zeros(cout), dtype)
        self.stride = stride
        self.pad_type = pad_type
        self.padding = (k - 1) // 2 if pad_type == "reflect" or k % 2 == 1 else 1

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.pad_type)


class Deconv(Module):
    """Stride-2 transposed conv whose output is exactly twice the input side."""

    def __init__(self, cin, cout, k=3, stride=2, rng=None, std=0.02, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = parameter(_normal(rng, (cin, cout, k, k), std), dtype)
        self.bias = parameter(np.zeros(cout), dtype)
        self.stride = stride
        self.padding = (k - 1) // 2
        self.output_padding = stride - 1

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding, self.output_padding)


class ResBlock(Module):
    """x + IN(conv(ReLU(IN(conv(x))))) with reflect padding, as in CycleGAN."""

    def __init__(self, channels, rng=None, dtype=np.float32):
        self.conv1 = Conv(channels, channels, 3, 1, "reflect", rng, dtype=dtype)
        self.conv2 = Conv(channels, channels, 3, 1, "reflect", rng, dtype=dtype)

    def body(self, x: Tensor) -> Tensor:
        h = ops.instance_norm(self.conv1(x)).relu()
        return ops.instance_norm(self.conv2(h))

    def forward(self, x: Tensor) -> Tensor:
        return x + self.body(x)


class Generator(Module):
    def __init__(self, config: GeneratorConfig | None = None, seed: int = 0, dtype=np.float32):
        self.config = config or GeneratorConfig()
        c = self.config.base_channels
        ch = self.config.image_channels
        rng = np.random.default_rng(seed)
        self.down = [
            Conv(ch, c, 7, 1, "reflect", rng, dtype=dtype),
            Conv(c, 2 * c, 3, 2, "zero", rng, dtype=dtype),
            Conv(2 * c, 4 * c, 3, 2, "zero", rng, dtype=dtype),
        ]
        self.res = [ResBlock(4 * c, rng, dtype=dtype) for _ in range(self.config.n_res_blocks)]
        self.up = [
            Deconv(4 * c, 2 * c, 3, 2, rng, dtype=dtype),
            Deconv(2 * c, c, 3, 2, rng, dtype=dtype),
        ]
        self.out = Conv(c, ch, 7, 1, "reflect", rng, dtype=dtype)

    def check_input(self, shape) -> None:
        if len(shape) != 4 or shape[1] != self.config.image_channels:
            raise ops.ShapeError(f"generator expects (N, {self.config.image_channels}, H, W), got {shape}")
        h, w = shape[2], shape[3]
        if h != w or h % 4 != 0:
            raise ops.ShapeError(f"generator input must be square with side divisible by 4, got {h}x{w}")

    def encode(self, x: Tensor) -> Tensor:
        for conv in self.down:
            x = ops.instance_norm(conv(x)).relu()
        return x

    def residual_stage(self, x: Tensor) -> Tensor:
        for block in self.res:
            x = block(x)
        return x

    def decode(self, x: Tensor) -> Tensor:
        for deconv in self.up:
            x = ops.instance_norm(deconv(x)).relu()
        return self.out(x).tanh()

    def forward(self, x: Tensor) -> Tensor:
        self.check_input(x.shape)
        return self.decode(self.residual_stage(self.encode(x)))


class Discriminator(Module):
    def __init__(self, config: DiscriminatorConfig | None = None, seed: int = 0, dtype=np.float32):
        self.config = config or DiscriminatorConfig()
        c = self.config.base_channels
        rng = np.random.default_rng(seed)
        widths = [self.config.image_channels, c, 2 * c, 4 * c, 8 * c]
        strides = [2, 2, 2, 1]
        self.blocks = [
            Conv(widths[i], widths[i + 1], 4, strides[i], "zero", rng, dtype=dtype) for i in range(4)
        ]
        self.out = Conv(8 * c, 1, 4, 1, "zero", rng, dtype=dtype)

    @staticmethod
    def output_side(side: int) -> int:
        for stride in (2, 2, 2, 1, 1):
            side = (side + 2 - 4) // stride + 1
        return side

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.config.image_channels:
            raise ops.ShapeError(f"discriminator expects (N, {self.config.image_channels}, H, W), got {x.shape}")
        if min(self.output_side(x.shape[2]), self.output_side(x.shape[3])) < 1:
            raise ops.ShapeError(f"discriminator input {x.shape[2]}x{x.shape[3]} too small (side >= 24 required)")
        h = self.blocks[0](x).leaky_relu(LEAKY_SLOPE)
        for conv in self.blocks[1:]:
            h = ops.instance_norm(conv(h)).leaky_relu(LEAKY_SLOPE)
        return self.out(h)


class Encoder(Module):
    """Conv-IN-ReLU downsampling stack -> global max pool -> FC -> L2 normalisation."""

    def __init__(self, config: EncoderConfig | None = None, seed: int = 0, dtype=np.float32):
        self.config = config or EncoderConfig()
        cfg = self.config
        rng = np.random.default_rng(seed)
        widths = (cfg.image_channels,) + cfg.channels
        self.blocks = []
        for cin, cout in zip(widths[:-1], widths[1:]):
            std = np.sqrt(2.0 / (cin * cfg.kernel_size**2))
            self.blocks.append(Conv(cin, cout, cfg.kernel_size, 2, "zero", rng, std=std, dtype=dtype))
        fan_in = widths[-1]
        self.fc_weight = parameter(rng.normal(0.0, np.sqrt(1.0 / fan_in), (cfg.embedding_dim, fan_in)), dtype)
        self.fc_bias = parameter(np.zeros(cfg.embedding_dim), dtype)

    def features(self, x: Tensor) -> Tensor:
        for conv in self.blocks:
            x = ops.instance_norm(conv(x)).relu()
        return ops.global_max_pool(x)

    def forward(self, x: Tensor) -> Tensor:
        h = ops.linear(self.features(x), self.fc_weight, self.fc_bias)
        return ops.l2_normalize(h, axis=1)


def generator_param_count(c: int, n_res_blocks: int, image_channels: int = 3) -> int:
    """Closed-form parameter count of :class:`Generator` (weights + biases)."""
    ch = image_channels
    conv = lambda cin, cout, k: cin * cout * k * k + cout  # noqa: E731
    return (
        conv(ch, c, 7)
        + conv(c, 2 * c, 3)
        + conv(2 * c, 4 * c, 3)
        + n_res_blocks * 2 * conv(4 * c, 4 * c, 3)
        + conv(4 * c, 2 * c, 3)
        + conv(2 * c, c, 3)
        + conv(c, ch, 7)
    )


def discriminator_param_count(c: int, image_channels: int = 3) -> int:
    conv = lambda cin, cout: cin * cout * 16 + cout  # noqa: E731
    return conv(image_channels, c) + conv(c, 2 * c) + conv(2 * c, 4 * c) + conv(4 * c, 8 * c) + conv(8 * c, 1)


def architecture_dict(g: Generator | None = None, d: Discriminator | None = None, e: Encoder | None = None) -> dict:
    out = {}
    if g is not None:
        out["generator"] = asdict(g.config)
    if d is not None:
        out["discriminator"] = asdict(d.config)
    if e is not None:
        out["encoder"] = {**asdict(e.config), "channels": list(e.config.channels)}
    return out
