"""The five interpolation architectures and the PatchGAN discriminators."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import BatchNorm2d, Conv2d, ConvTranspose2d, Linear, Module, SelfAttention, count_parameters

ARCHITECTURES = ("edsr", "unet", "gan_basic", "gan_improved", "ddpm_unet")


@dataclass
class ModelConfig:
    arch: str = "unet"
    base_channels: int = 64
    n_res_blocks: int = 8
    res_block_convs: int = 1
    unet_levels: int = 2
    time_embed_dim: int = 256
    input_channels: int = 2
    output_channels: int = 1
    attention_reduction: int = 8
    ddpm_blocks_per_level: int = 2
    disc_channels: int = 64

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}; expected one of {ARCHITECTURES}")
        for name in ("base_channels", "n_res_blocks", "unet_levels", "time_embed_dim", "disc_channels"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.res_block_convs not in (1, 2):
            raise ValueError("res_block_convs must be 1 or 2")
        if self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even")

    def to_dict(self) -> dict:
        return asdict(self)


def paper_config(arch: str) -> ModelConfig:
    """Full-size widths and depths as described for each architecture."""
    if arch == "gan_improved":
        return ModelConfig(arch=arch, n_res_blocks=16)
    if arch == "ddpm_unet":
        return ModelConfig(arch=arch, input_channels=3, unet_levels=3, ddpm_blocks_per_level=3)
    return ModelConfig(arch=arch)


def desk_config(arch: str) -> ModelConfig:
    """Narrow variant for CPU runs: 16 base channels, same topology."""
    cfg = paper_config(arch)
    cfg.base_channels = 16
    cfg.disc_channels = 16
    if arch == "ddpm_unet":
        cfg.unet_levels = 2
        cfg.ddpm_blocks_per_level = 1
        cfg.time_embed_dim = 64
    return cfg


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def __len__(self):
        return len(self._items)


# -- EDSR-style networks ---------------------------------------------------------


class ResBlock(Module):
    """conv3x3 + ReLU with identity shortcut; ``n_convs=2`` adds a second conv after the ReLU."""

    def __init__(self, channels: int, rng, n_convs: int = 1):
        super().__init__()
        self.conv1 = Conv2d(channels, channels, 3, rng, padding=1)
        if n_convs == 2:
            self.conv2 = Conv2d(channels, channels, 3, rng, padding=1)
        self.n_convs = n_convs

    def forward(self, x):
        h = ad.relu(self.conv1(x))
        if self.n_convs == 2:
            h = self.conv2(h)
        return x + h


class EDSR(Module):
    """Entry conv, residual stack, entry-feature skip, exit conv.

    The improved generator adds spatial attention after the stack and a
    3x3 pre-exit conv.
    """

    def __init__(self, config: ModelConfig, rng, improved: bool = False):
        super().__init__()
        c = config.base_channels
        self.improved = improved
        self.entry = Conv2d(config.input_channels, c, 3, rng, padding=1)
        self.blocks = ModuleList(ResBlock(c, rng, config.res_block_convs) for _ in range(config.n_res_blocks))
        if improved:
            self.attention = SelfAttention(c, rng, config.attention_reduction)
            self.pre_exit = Conv2d(c, c, 3, rng, padding=1)
        self.exit = Conv2d(c, config.output_channels, 3, rng, padding=1)

    def forward(self, x):
        e = self.entry(x)
        h = e
        for block in self.blocks:
            h = block(h)
        if self.improved:
            h = self.pre_exit(self.attention(h))
        return self.exit(h + e)


# -- U-Net -------------------------------------------------------------------------


class DoubleConv(Module):
    def __init__(self, cin: int, cout: int, rng):
        super().__init__()
        self.conv1 = Conv2d(cin, cout, 3, rng, padding=1)
        self.conv2 = Conv2d(cout, cout, 3, rng, padding=1)

    def forward(self, x):
        return ad.relu(self.conv2(ad.relu(self.conv1(x))))


class UpBlock(Module):
    def __init__(self, cin: int, cout: int, rng):
        super().__init__()
        self.up = ConvTranspose2d(cin, cout, 2, rng)
        self.conv = DoubleConv(2 * cout, cout, rng)

    def forward(self, x, skip):
        return self.conv(ad.channel_concat(self.up(x), skip))


class UNet(Module):
    def __init__(self, config: ModelConfig, rng):
        super().__init__()
        widths = [config.base_channels * 2**i for i in range(config.unet_levels + 1)]
        self.levels = config.unet_levels
        self.encoder = ModuleList()
        cin = config.input_channels
        for w in widths[:-1]:
            self.encoder.append(DoubleConv(cin, w, rng))
            cin = w
        self.bottleneck = DoubleConv(widths[-2], widths[-1], rng)
        self.decoder = ModuleList(UpBlock(widths[i + 1], widths[i], rng) for i in reversed(range(self.levels)))
        self.final = Conv2d(widths[0], config.output_channels, 1, rng)

    def forward(self, x):
        _check_divisible(x, 2**self.levels)
        skips = []
        h = x
        for enc in self.encoder:
            h = enc(h)
            skips.append(h)
            h = ad.maxpool2d(h)
        h = self.bottleneck(h)
        for dec, skip in zip(self.decoder, reversed(skips)):
            h = dec(h, skip)
        return self.final(h)


def _check_divisible(x: Tensor, factor: int) -> None:
    if x.shape[2] % factor or x.shape[3] % factor:
        raise ValueError(f"spatial extents {x.shape[2:]} must be divisible by {factor}")


# -- PatchGAN discriminator ----------------------------------------------------------


class PatchDiscriminator(Module):
    """Strided 4x4 convs with LeakyReLU(0.2) ending in a 1-channel score map.

    ``improved`` adds a fourth strided layer and batch norm on every hidden
    conv except the first.
    """

    def __init__(self, rng, variant: str = "basic", base_channels: int = 64, input_channels: int = 1):
        super().__init__()
        if variant not in ("basic", "improved"):
            raise ValueError(f"discriminator variant must be 'basic' or 'improved', got {variant!r}")
        self.variant = variant
        n_strided = 3 if variant == "basic" else 4
        widths = [base_channels * 2**i for i in range(n_strided)]
        self.convs = ModuleList()
        self.norms = ModuleList()
        cin = input_channels
        for i, w in enumerate(widths):
            self.convs.append(Conv2d(cin, w, 4, rng, stride=2, padding=1))
            if variant == "improved" and i > 0:
                self.norms.append(BatchNorm2d(w))
            cin = w
        self.score = Conv2d(cin, 1, 4, rng, stride=1, padding=1)

    def features(self, x) -> tuple[list[Tensor], Tensor]:
        """Post-activation hidden maps and the score map."""
        feats = []
        h = x
        for i, conv in enumerate(self.convs):
            h = conv(h)
            if self.variant == "improved" and i > 0:
                h = self.norms[i - 1](h)
            h = ad.leaky_relu(h, 0.2)
            feats.append(h)
        return feats, self.score(h)

    def forward(self, x):
        return self.features(x)[1]


def score_map_extent(size: int, variant: str = "basic") -> int:
    n_strided = 3 if variant == "basic" else 4
    for _ in range(n_strided):
        size = (size + 2 - 4) // 2 + 1
    return size + 2 - 4 + 1


# -- conditional diffusion U-Net -------------------------------------------------------


def sinusoidal_time_embedding(t, dim: int = 256) -> np.ndarray:
    """Sines then cosines over geometric frequencies with base 10000; shape (len(t), dim)."""
    if dim % 2:
        raise ValueError(f"time embedding dimension must be even, got {dim}")
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


class TimeResBlock(Module):
    def __init__(self, cin: int, cout: int, tdim: int, rng):
        super().__init__()
        self.conv1 = Conv2d(cin, cout, 3, rng, padding=1)
        self.time = Linear(tdim, cout, rng)
        self.conv2 = Conv2d(cout, cout, 3, rng, padding=1)
        if cin != cout:
            self.shortcut = Conv2d(cin, cout, 1, rng)
        self.project = cin != cout

    def forward(self, x, temb):
        h = ad.relu(self.conv1(x))
        h = h + self.time(temb).reshape(temb.shape[0], -1, 1, 1)
        h = ad.relu(self.conv2(h))
        return h + (self.shortcut(x) if self.project else x)


class DDPMUNet(Module):
    """Noise predictor on concat(x_t, lower, upper) with time-conditioned residual blocks."""

    def __init__(self, config: ModelConfig, rng):
        super().__init__()
        d = config.time_embed_dim
        self.time_dim = d
        self.levels = config.unet_levels
        self.time_mlp1 = Linear(d, d, rng)
        self.time_mlp2 = Linear(d, d, rng)
        widths = [config.base_channels * 2**i for i in range(config.unet_levels + 1)]
        nb = config.ddpm_blocks_per_level
        self.stem = Conv2d(config.input_channels, widths[0], 3, rng, padding=1)
        self.down = ModuleList()
        cin = widths[0]
        for w in widths[:-1]:
            level = ModuleList()
            for _ in range(nb):
                level.append(TimeResBlock(cin, w, d, rng))
                cin = w
            self.down.append(level)
        self.mid1 = TimeResBlock(widths[-2], widths[-1], d, rng)
        self.mid_attention = SelfAttention(widths[-1], rng, config.attention_reduction)
        self.mid2 = TimeResBlock(widths[-1], widths[-1], d, rng)
        self.ups = ModuleList()
        self.up = ModuleList()
        for i in reversed(range(self.levels)):
            self.ups.append(ConvTranspose2d(widths[i + 1], widths[i], 2, rng))
            level = ModuleList(TimeResBlock(2 * widths[i] if j == 0 else widths[i], widths[i], d, rng) for j in range(nb))
            self.up.append(level)
        self.head = Conv2d(widths[0], config.output_channels, 1, rng)

    def embed_time(self, t) -> Tensor:
        emb = Tensor(sinusoidal_time_embedding(t, self.time_dim), dtype=self.time_mlp1.weight.dtype)
        return self.time_mlp2(ad.relu(self.time_mlp1(emb)))

    def forward(self, x, t):
        _check_divisible(x, 2**self.levels)
        t = np.broadcast_to(np.atleast_1d(t), (x.shape[0],))
        temb = self.embed_time(t)
        h = self.stem(x)
        skips = []
        for level in self.down:
            for block in level:
                h = block(h, temb)
            skips.append(h)
            h = ad.maxpool2d(h)
        h = self.mid2(self.mid_attention(self.mid1(h, temb)), temb)
        for upconv, level, skip in zip(self.ups, self.up, reversed(skips)):
            h = ad.channel_concat(upconv(h), skip)
            for block in level:
                h = block(h, temb)
        return self.head(h)


# -- construction ----------------------------------------------------------------------


def model_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def build_edsr(config: ModelConfig, seed: int = 0) -> EDSR:
    return EDSR(config, model_rng(seed))


def build_unet(config: ModelConfig, seed: int = 0) -> UNet:
    return UNet(config, model_rng(seed))


def build_generator_improved(config: ModelConfig, seed: int = 0) -> EDSR:
    return EDSR(config, model_rng(seed), improved=True)


def build_ddpm_unet(config: ModelConfig, seed: int = 0) -> DDPMUNet:
    return DDPMUNet(config, model_rng(seed))


def build_discriminator(variant: str = "basic", seed: int = 0, base_channels: int = 64) -> PatchDiscriminator:
    return PatchDiscriminator(model_rng(seed), variant, base_channels)


def build_model(config: ModelConfig, seed: int = 0) -> Module:
    """The predictor network for ``config.arch`` (the generator for GAN variants)."""
    builders = {
        "edsr": build_edsr,
        "unet": build_unet,
        "gan_basic": build_edsr,
        "gan_improved": build_generator_improved,
        "ddpm_unet": build_ddpm_unet,
    }
    return builders[config.arch](config, seed)


__all__ = [
    "ARCHITECTURES",
    "DDPMUNet",
    "EDSR",
    "ModelConfig",
    "PatchDiscriminator",
    "UNet",
    "build_ddpm_unet",
    "build_discriminator",
    "build_edsr",
    "build_generator_improved",
    "build_model",
    "build_unet",
    "count_parameters",
    "desk_config",
    "paper_config",
    "score_map_extent",
    "sinusoidal_time_embedding",
]
