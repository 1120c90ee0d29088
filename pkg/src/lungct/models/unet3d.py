"""3D encoder-decoder segmentation networks: plain and residual variants.

Both share the same four-level skeleton: per level a convolution stack,
2x2x2 stride-2 max-pooling on the way down, 2x2x2 stride-2 transposed
convolutions on the way up, and skip connections concatenating encoder
features of equal resolution. The residual variant swaps each two-conv
stack for a block of `residual_subunits` 3x3x3 convolutions with an
identity shortcut (1x1x1 projection when channel counts differ).

Instance normalization follows every 3x3x3 convolution: batch statistics
are unreliable at batch size 4.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass(frozen=True)
class SegNetConfig:
    input_cube: int = 256
    filter_schedule: tuple = (24, 48, 96, 192)
    residual_subunits: int = 4
    out_channels: int = 1
    in_channels: int = 1
    variant: str = "plain"

    def __post_init__(self):
        object.__setattr__(self, "filter_schedule", tuple(self.filter_schedule))
        fs = self.filter_schedule
        if len(fs) < 2 or any(b <= a for a, b in zip(fs, fs[1:])):
            raise ValueError(f"filter_schedule must be strictly increasing, got {fs}")
        if self.residual_subunits < 1:
            raise ValueError("residual_subunits must be >= 1")
        if self.variant not in ("plain", "residual"):
            raise ValueError(f"variant must be plain|residual, got {self.variant!r}")
        divisor = 2 ** (len(fs) - 1)
        if self.input_cube % divisor != 0:
            raise ValueError(
                f"input_cube {self.input_cube} must be divisible by {divisor} "
                f"for {len(fs)} resolution levels")

    @property
    def levels(self):
        return len(self.filter_schedule)


def _conv_in_relu(in_ch, out_ch):
    return nn.Sequential(
        nn.Conv3d(in_ch, out_ch, kernel_size=3, padding=1),
        nn.InstanceNorm3d(out_ch, affine=True),
        nn.ReLU(),
    )


class PlainBlock(nn.Module):
    """Two 3x3x3 convolutions, each followed by norm + ReLU."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.stack = nn.Sequential(_conv_in_relu(in_ch, out_ch),
                                   _conv_in_relu(out_ch, out_ch))

    def forward(self, x):
        return self.stack(x)


class ResidualBlock(nn.Module):
    """`subunits` convolutions with an identity shortcut added at the end.

    With all convolution weights zeroed the branch vanishes, so the block
    reduces to its (possibly projected) shortcut.
    """

    def __init__(self, in_ch, out_ch, subunits):
        super().__init__()
        layers = [_conv_in_relu(in_ch, out_ch)]
        layers += [_conv_in_relu(out_ch, out_ch) for _ in range(subunits - 1)]
        self.branch = nn.Sequential(*layers)
        if in_ch != out_ch:
            self.shortcut = nn.Conv3d(in_ch, out_ch, kernel_size=1)
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        return self.branch(x) + self.shortcut(x)


class UNet3d(nn.Module):
    """Symmetric encoder-decoder over volumetric grids."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        fs = config.filter_schedule

        def block(in_ch, out_ch):
            if config.variant == "residual":
                return ResidualBlock(in_ch, out_ch, config.residual_subunits)
            return PlainBlock(in_ch, out_ch)

        self.pool = nn.MaxPool3d(kernel_size=2, stride=2)
        self.encoders = nn.ModuleList()
        prev = config.in_channels
        for ch in fs:
            self.encoders.append(block(prev, ch))
            prev = ch

        self.upsamples = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for hi, lo in zip(fs[::-1], fs[-2::-1]):
            self.upsamples.append(nn.ConvTranspose3d(hi, lo, kernel_size=2, stride=2))
            self.decoders.append(block(2 * lo, lo))

        self.head = nn.Conv3d(fs[0], config.out_channels, kernel_size=1)

    def forward(self, x):
        divisor = 2 ** (self.config.levels - 1)
        for dim in x.shape[2:]:
            if dim % divisor != 0:
                raise ValueError(f"spatial size {tuple(x.shape[2:])} not divisible by {divisor}")
        skips = []
        for i, enc in enumerate(self.encoders):
            if i > 0:
                x = self.pool(x)
            x = enc(x)
            skips.append(x)
        x = skips.pop()
        for up, dec in zip(self.upsamples, self.decoders):
            x = up(x)
            x = dec(torch.cat([x, skips.pop()], dim=1))
        x = self.head(x)
        if self.config.out_channels == 1:
            x = torch.sigmoid(x)
        return x


def build_unet3d(config):
    if config.variant != "plain":
        raise ValueError(f"build_unet3d expects variant='plain', got {config.variant!r}")
    return UNet3d(config)


def build_res_unet3d(config):
    if config.variant != "residual":
        raise ValueError(f"build_res_unet3d expects variant='residual', got {config.variant!r}")
    return UNet3d(config)


def dice_loss(pred, target, eps=1e-5):
    """Soft Dice loss: 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps).

    Differentiable in `pred`; `target` is a {0, 1} grid of the same shape.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    pred = pred.reshape(-1)
    target = target.reshape(-1)
    inter = (pred * target).sum()
    return 1.0 - (2.0 * inter + eps) / (pred.sum() + target.sum() + eps)
