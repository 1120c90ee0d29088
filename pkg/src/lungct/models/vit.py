"""Vision transformer over 64x64 nodule patches.

The patch image is tiled row-major into non-overlapping squares, each
flattened and linearly projected into a token; learned positional
embeddings are added; a stack of pre-norm encoder blocks (multi-head
self-attention, then an MLP, residual connections around both) produces
token features. All tokens are flattened into the classification head
rather than pooled: 64 tokens x 64 dims feed the 2048-unit layer.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 64
    patch_size: int = 8
    projection_dim: int = 64
    encoder_blocks: int = 8
    attention_heads: int = 4
    mlp_hidden: tuple = (64, 128)
    head_hidden: tuple = (2048, 1024)
    class_count: int = 2
    dropout: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "mlp_hidden", tuple(self.mlp_hidden))
        object.__setattr__(self, "head_hidden", tuple(self.head_hidden))
        if self.image_size % self.patch_size != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.projection_dim % self.attention_heads != 0:
            raise ValueError(
                f"projection_dim {self.projection_dim} not divisible by "
                f"{self.attention_heads} heads")
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def token_count(self):
        return (self.image_size // self.patch_size) ** 2

    @property
    def token_length(self):
        return self.patch_size ** 2


def patchify(image, patch_size=8):
    """Tile a square image into row-major non-overlapping flattened patches."""
    image = np.asarray(image)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ValueError(f"image must be square 2D, got {image.shape}")
    size = image.shape[0]
    if size % patch_size != 0:
        raise ValueError(f"size {size} not divisible by patch_size {patch_size}")
    n = size // patch_size
    tiles = image.reshape(n, patch_size, n, patch_size).transpose(0, 2, 1, 3)
    return tiles.reshape(n * n, patch_size * patch_size)


def unpatchify(tokens, patch_size=8):
    """Exact inverse of `patchify`."""
    tokens = np.asarray(tokens)
    n = int(round(np.sqrt(tokens.shape[0])))
    if n * n != tokens.shape[0] or tokens.shape[1] != patch_size * patch_size:
        raise ValueError(f"cannot reassemble {tokens.shape} with patch {patch_size}")
    tiles = tokens.reshape(n, n, patch_size, patch_size).transpose(0, 2, 1, 3)
    return tiles.reshape(n * patch_size, n * patch_size)


class EncoderBlock(nn.Module):
    """Pre-norm transformer block: attention and MLP, each with a residual."""

    def __init__(self, config):
        super().__init__()
        dim = config.projection_dim
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, config.attention_heads,
                                          dropout=config.dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        layers = []
        prev = dim
        for hidden in config.mlp_hidden:
            layers += [nn.Linear(prev, hidden), nn.GELU(), nn.Dropout(config.dropout)]
            prev = hidden
        layers.append(nn.Linear(prev, dim))  # back to width `dim` for the residual
        self.mlp = nn.Sequential(*layers)

    def forward(self, x):
        attn_out, _ = self.attn(*(self.norm1(x),) * 3, need_weights=False)
        x = x + attn_out
        return x + self.mlp(self.norm2(x))

    def attention_weights(self, x):
        """Per-head-averaged attention map (rows sum to 1)."""
        h = self.norm1(x)
        was_training = self.attn.training
        self.attn.eval()  # attention dropout would break row normalization
        try:
            with torch.no_grad():
                _, weights = self.attn(h, h, h, need_weights=True)
        finally:
            self.attn.train(was_training)
        return weights


class ClassifierHead(nn.Module):
    """Flattened-token MLP head ending in class logits."""

    def __init__(self, in_features, hidden, class_count, dropout=0.1):
        super().__init__()
        layers = [nn.Flatten(), nn.Dropout(dropout)]
        prev = in_features
        for width in hidden:
            layers += [nn.Linear(prev, width), nn.GELU(), nn.Dropout(dropout)]
            prev = width
        layers.append(nn.Linear(prev, class_count))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class VisionTransformer(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        self.embed = nn.Linear(config.token_length, config.projection_dim)
        self.pos_embedding = nn.Parameter(
            torch.empty(1, config.token_count, config.projection_dim).normal_(std=0.02))
        self.blocks = nn.ModuleList(EncoderBlock(config)
                                    for _ in range(config.encoder_blocks))
        self.norm = nn.LayerNorm(config.projection_dim)
        self.head = ClassifierHead(config.token_count * config.projection_dim,
                                   config.head_hidden, config.class_count,
                                   config.dropout)

    def _to_tokens(self, images):
        p = self.config.patch_size
        n = self.config.image_size // p
        b = images.shape[0]
        if images.shape[-2:] != (self.config.image_size,) * 2:
            raise ValueError(f"expected {self.config.image_size}-px square patches, "
                             f"got {tuple(images.shape[-2:])}")
        tiles = images.reshape(b, n, p, n, p).permute(0, 1, 3, 2, 4)
        return tiles.reshape(b, n * n, p * p)

    def forward_tokens(self, images):
        """Token features after the encoder stack, (B, tokens, dim)."""
        x = self.embed(self._to_tokens(images)) + self.pos_embedding
        for block in self.blocks:
            x = block(x)
        return self.norm(x)

    def forward(self, images):
        return self.head(self.forward_tokens(images))


def build_vit(config):
    return VisionTransformer(config)
