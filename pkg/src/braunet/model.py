"""U-shaped encoder-decoder segmentation network built from routing-attention blocks.

Layout: a two-convolution patch embedding (4x downsampling), four encoder
stages of blocks joined by 2x patch merging, a bottleneck at 1/32 resolution,
a mirrored decoder using 2x patch expanding with concat+linear skip fusion,
a final 4x expansion back to input resolution, and a per-pixel linear head
producing class logits.

Stage widths follow the doubling schedule [C, 2C, 4C, 8C]. Decoder stage
depths mirror the encoder stage at the same resolution.
"""

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import checkpoint
from .attention import BraConfig, BiLevelRoutingAttention, ConfigError, TOPK_ALL
from .autodiff import Tensor, concatenate, reshape, transpose
from .nn import (
    BatchNorm2d,
    Conv2d,
    LayerNorm,
    Linear,
    Mlp,
    Module,
    gelu,
)


@dataclass(frozen=True)
class ModelConfig:
    """Complete hyperparameter record for one network instance."""

    input_size: tuple[int, int] = (224, 224)
    in_channels: int = 3
    num_classes: int = 3
    base_width: int = 96
    mlp_ratio: int = 3
    stage_depths: tuple[int, int, int, int] = (4, 4, 8, 4)
    stage_heads: tuple[int, int, int, int] = (2, 4, 8, 16)
    stage_topks: tuple[int, int, int, int] = (4, 8, 16, TOPK_ALL)
    region_grids: tuple[int, int, int, int] = (7, 7, 7, 7)
    bottleneck_depth: int = 2

    @property
    def stage_widths(self) -> tuple[int, int, int, int]:
        c = self.base_width
        return (c, 2 * c, 4 * c, 8 * c)

    def stage_resolution(self, stage: int) -> tuple[int, int]:
        h, w = self.input_size
        factor = 4 * (2 ** stage)
        return h // factor, w // factor

    def validate(self) -> None:
        h, w = self.input_size
        if h % 32 or w % 32:
            raise ConfigError(f"input size {h}x{w} must be divisible by 32")
        if self.base_width % 2:
            raise ConfigError("base width must be even (stem narrows to half width)")
        for field in ("stage_depths", "stage_heads", "stage_topks", "region_grids"):
            if len(getattr(self, field)) != 4:
                raise ConfigError(f"{field} must list exactly 4 stages")
        for i in range(4):
            sh, sw = self.stage_resolution(i)
            BraConfig(self.region_grids[i], self.stage_topks[i], self.stage_heads[i]).validate(
                sh, sw, self.stage_widths[i]
            )
        if self.num_classes < 1 or self.in_channels < 1:
            raise ConfigError("channel counts must be positive")
        if self.mlp_ratio < 1 or self.bottleneck_depth < 1:
            raise ConfigError("mlp ratio and bottleneck depth must be positive")

    def bra_config(self, stage: int) -> BraConfig:
        return BraConfig(
            region_grid=self.region_grids[stage],
            topk=self.stage_topks[stage],
            heads=self.stage_heads[stage],
        )


def default_config() -> ModelConfig:
    """Full-size configuration for 224x224 inputs."""
    return ModelConfig()


def toy_config() -> ModelConfig:
    """Desk-scale configuration: 64x64 grayscale input, width 8, depths [1,1,2,1]."""
    return ModelConfig(
        input_size=(64, 64),
        in_channels=1,
        num_classes=3,
        base_width=8,
        mlp_ratio=3,
        stage_depths=(1, 1, 2, 1),
        stage_heads=(2, 4, 8, 16),
        stage_topks=(4, 8, 4, TOPK_ALL),
        region_grids=(4, 4, 2, 1),
    )


# -- config file round trip ------------------------------------------------------

_LIST_FIELDS = ("input_size", "stage_depths", "stage_heads", "stage_topks", "region_grids")


def model_config_to_dict(cfg: ModelConfig) -> dict:
    d = asdict(cfg)
    return {k: list(v) if k in _LIST_FIELDS else v for k, v in d.items()}


def model_config_from_dict(d: dict) -> ModelConfig:
    expected = set(ModelConfig.__dataclass_fields__)
    got = set(d)
    if got != expected:
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        raise ConfigError(f"model config keys: missing={missing} unknown={extra}")
    kwargs = {k: tuple(v) if k in _LIST_FIELDS else v for k, v in d.items()}
    cfg = ModelConfig(**kwargs)
    cfg.validate()
    return cfg


def save_model_config(cfg: ModelConfig, path) -> None:
    Path(path).write_text(json.dumps(model_config_to_dict(cfg), indent=2) + "\n")


def load_model_config(path) -> ModelConfig:
    return model_config_from_dict(json.loads(Path(path).read_text()))


# -- building blocks ---------------------------------------------------------------


class PatchEmbed(Module):
    """Two stride-2 3x3 convolutions: conv -> GELU -> BN -> conv -> BN.

    Maps [B, in, H, W] to channel-last [B, H/4, W/4, C]; the intermediate
    width is C/2.
    """

    def __init__(self, in_channels, width, rng=None, dtype=np.float32):
        mid = width // 2
        self.conv1 = Conv2d(in_channels, mid, 3, stride=2, padding=1, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(mid, dtype=dtype)
        self.conv2 = Conv2d(mid, width, 3, stride=2, padding=1, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(width, dtype=dtype)

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        x = self.bn1.forward(gelu(self.conv1.forward(x)), training=training)
        x = self.bn2.forward(self.conv2.forward(x), training=training)
        return transpose(x, (0, 2, 3, 1))


class BiformerBlock(Module):
    """Residual unit: depth-wise conv, then routing attention, then MLP.

    z1 = dw(z) + z;  z2 = attn(ln(z1)) + z1;  out = mlp(ln(z2)) + z2.
    """

    def __init__(self, channels, cfg: BraConfig, mlp_ratio=3, rng=None, dtype=np.float32):
        self.dw = Conv2d(channels, channels, 3, padding=1, groups=channels, rng=rng, dtype=dtype)
        self.ln1 = LayerNorm(channels, dtype=dtype)
        self.attn = BiLevelRoutingAttention(channels, cfg, rng=rng, dtype=dtype)
        self.ln2 = LayerNorm(channels, dtype=dtype)
        self.mlp = Mlp(channels, mlp_ratio, rng=rng, dtype=dtype)

    def forward(self, z: Tensor) -> Tensor:
        z_chw = transpose(z, (0, 3, 1, 2))
        z = transpose(self.dw.forward(z_chw), (0, 2, 3, 1)) + z
        z = self.attn.forward(self.ln1.forward(z)) + z
        return self.mlp.forward(self.ln2.forward(z)) + z


class PatchMerging(Module):
    """2x downsampling: concat each 2x2 neighborhood (4c), layernorm, linear to 2c."""

    def __init__(self, channels, rng=None, dtype=np.float32):
        self.norm = LayerNorm(4 * channels, dtype=dtype)
        self.reduce = Linear(4 * channels, 2 * channels, bias=False, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        _, h, w, _ = x.shape
        if h % 2 or w % 2:
            raise ConfigError(f"patch merging needs even extents, got {h}x{w}")
        tiles = [x[:, 0::2, 0::2, :], x[:, 0::2, 1::2, :], x[:, 1::2, 0::2, :], x[:, 1::2, 1::2, :]]
        merged = concatenate(tiles, axis=-1)
        return self.reduce.forward(self.norm.forward(merged))


class PatchExpanding(Module):
    """2x upsampling: linear c->2c, spread into 2x2 tiles of c/2, layernorm."""

    def __init__(self, channels, rng=None, dtype=np.float32):
        if channels % 2:
            raise ConfigError(f"patch expanding needs even channels, got {channels}")
        self.expand = Linear(channels, 2 * channels, bias=False, rng=rng, dtype=dtype)
        self.norm = LayerNorm(channels // 2, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        b, h, w, c = x.shape
        x = self.expand.forward(x)
        x = reshape(x, (b, h, w, 2, 2, c // 2))
        x = transpose(x, (0, 1, 3, 2, 4, 5))
        x = reshape(x, (b, 2 * h, 2 * w, c // 2))
        return self.norm.forward(x)


class FinalPatchExpanding(Module):
    """4x upsampling: linear c->16c, spread into 4x4 tiles, channels preserved."""

    def __init__(self, channels, rng=None, dtype=np.float32):
        self.expand = Linear(channels, 16 * channels, bias=False, rng=rng, dtype=dtype)
        self.norm = LayerNorm(channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        b, h, w, c = x.shape
        x = self.expand.forward(x)
        x = reshape(x, (b, h, w, 4, 4, c))
        x = transpose(x, (0, 1, 3, 2, 4, 5))
        x = reshape(x, (b, 4 * h, 4 * w, c))
        return self.norm.forward(x)


class SkipFusion(Module):
    """Concatenate decoder and encoder maps on channels, project 2c back to c."""

    def __init__(self, channels, rng=None, dtype=np.float32):
        self.project = Linear(2 * channels, channels, rng=rng, dtype=dtype)

    def forward(self, decoder_x: Tensor, encoder_x: Tensor) -> Tensor:
        if decoder_x.shape != encoder_x.shape:
            raise ConfigError(
                f"skip fusion shape mismatch: {decoder_x.shape} vs {encoder_x.shape}"
            )
        return self.project.forward(concatenate([decoder_x, encoder_x], axis=-1))


# -- full network --------------------------------------------------------------------


class BraUNet(Module):
    """Encoder-decoder with routing-attention blocks and skip connections.

    Build fails fast (ConfigError) when the configured geometry is internally
    inconsistent; forward rejects inputs whose size differs from the config.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        config.validate()
        rng = np.random.default_rng(seed)
        widths = config.stage_widths
        self.config = config

        self.patch_embed = PatchEmbed(config.in_channels, config.base_width, rng=rng, dtype=dtype)

        self.encoder_stages = []
        self.merges = []
        for i in range(4):
            blocks = [
                BiformerBlock(widths[i], config.bra_config(i), config.mlp_ratio, rng=rng, dtype=dtype)
                for _ in range(config.stage_depths[i])
            ]
            self.encoder_stages.append(blocks)
            if i < 3:
                self.merges.append(PatchMerging(widths[i], rng=rng, dtype=dtype))

        self.bottleneck = [
            BiformerBlock(widths[3], config.bra_config(3), config.mlp_ratio, rng=rng, dtype=dtype)
            for _ in range(config.bottleneck_depth)
        ]

        # Decoder runs deepest-first over the resolutions of encoder stages 2, 1, 0.
        self.expands = []
        self.fusions = []
        self.decoder_stages = []
        for i in (2, 1, 0):
            self.expands.append(PatchExpanding(widths[i + 1], rng=rng, dtype=dtype))
            self.fusions.append(SkipFusion(widths[i], rng=rng, dtype=dtype))
            self.decoder_stages.append(
                [
                    BiformerBlock(widths[i], config.bra_config(i), config.mlp_ratio, rng=rng, dtype=dtype)
                    for _ in range(config.stage_depths[i])
                ]
            )

        self.final_expand = FinalPatchExpanding(config.base_width, rng=rng, dtype=dtype)
        self.head = Linear(config.base_width, config.num_classes, rng=rng, dtype=dtype)

        # Encoder/decoder mirror consistency, checked once at build time.
        for slot, i in enumerate((2, 1, 0)):
            assert len(self.decoder_stages[slot]) == config.stage_depths[i]

    def forward(self, image: Tensor, training: bool = False) -> Tensor:
        """[B, in, H, W] image to [B, num_classes, H, W] logits."""
        if image.ndim != 4:
            raise ConfigError(f"expected [B, C, H, W] input, got {image.shape}")
        b, c, h, w = image.shape
        if c != self.config.in_channels or (h, w) != tuple(self.config.input_size):
            raise ConfigError(
                f"input {c}x{h}x{w} does not match configured "
                f"{self.config.in_channels}x{self.config.input_size[0]}x{self.config.input_size[1]}"
            )

        x = self.patch_embed.forward(image, training=training)
        skips = []
        for i in range(4):
            for block in self.encoder_stages[i]:
                x = block.forward(x)
            if i < 3:
                skips.append(x)
                x = self.merges[i].forward(x)

        for block in self.bottleneck:
            x = block.forward(x)

        for slot, i in enumerate((2, 1, 0)):
            x = self.expands[slot].forward(x)
            x = self.fusions[slot].forward(x, skips[i])
            for block in self.decoder_stages[slot]:
                x = block.forward(x)

        x = self.final_expand.forward(x)
        logits = self.head.forward(x)
        return transpose(logits, (0, 3, 1, 2))

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        checkpoint.save_arrays(path, self.state_dict())

    def load(self, path) -> None:
        self.load_state_dict(checkpoint.load_arrays(path))
