"""Desk-scale ViT with a modality-conditional patch tokenizer.

Optical samples (modality 0) and SAR samples (modality 1) go through separate
patch projections; class token and positional embeddings are shared. Blocks
are pre-norm attention + GELU MLP. Intermediate outputs can be reshaped into
a ``B x C x H' x W'`` grid for the structural branch.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .exceptions import ConfigError, DimensionError, UsageError
from .nn import LayerNorm, Linear, Module, trunc_normal
from .tensor import Tensor, concat, gelu, softmax

OPTICAL, SAR = 0, 1


@dataclass
class ModelConfig:
    image_h: int = 64
    image_w: int = 32
    patch: int = 8
    layers: int = 6
    dim: int = 64
    heads: int = 4
    mlp_ratio: float = 4.0
    struct_layer: int = 3
    num_identities: int = 20
    in_chans: int = 3

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.image_h % self.patch or self.image_w % self.patch:
            raise ConfigError(f"image {self.image_h}x{self.image_w} not divisible by patch {self.patch}")
        if not 1 <= self.struct_layer <= self.layers:
            raise ConfigError(f"struct_layer must lie in [1, {self.layers}], got {self.struct_layer}")
        if self.dim % self.heads:
            raise ConfigError(f"heads={self.heads} does not divide dim={self.dim}")
        for f in ("patch", "layers", "dim", "heads", "num_identities", "in_chans"):
            if getattr(self, f) <= 0:
                raise ConfigError(f"{f} must be positive")

    @property
    def grid_h(self) -> int:
        return self.image_h // self.patch

    @property
    def grid_w(self) -> int:
        return self.image_w // self.patch

    @property
    def num_patches(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def embed_dim(self) -> int:
        return self.dim

    @property
    def hidden(self) -> int:
        return int(round(self.dim * self.mlp_ratio))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown model config key(s): {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def paper_scale(cls, num_identities: int = 20) -> "ModelConfig":
        return cls(image_h=256, image_w=128, patch=16, layers=12, dim=768, heads=12,
                   mlp_ratio=4.0, struct_layer=6, num_identities=num_identities)


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """``B x C x H x W`` -> ``B x N_p x (C*P*P)``, patches in row-major grid order."""
    b, c, h, w = images.shape
    x = images.reshape(b, c, h // patch, patch, w // patch, patch)
    x = x.transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(b, (h // patch) * (w // patch), c * patch * patch)


class DualHeadTokenizer(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        n_in = cfg.in_chans * cfg.patch * cfg.patch
        self.optical = self.add_child("optical", Linear(n_in, cfg.dim, rng, dtype))
        self.sar = self.add_child("sar", Linear(n_in, cfg.dim, rng, dtype))
        self.cls_token = self.add_param("cls_token", trunc_normal(rng, (1, 1, cfg.dim)), dtype)
        self.pos_embed = self.add_param("pos_embed", trunc_normal(rng, (1, 1 + cfg.num_patches, cfg.dim)), dtype)

    def __call__(self, images, modality) -> Tensor:
        cfg = self.cfg
        images = np.asarray(images.data if isinstance(images, Tensor) else images)
        modality = np.asarray(modality, dtype=np.int64).reshape(-1)
        expect = (cfg.in_chans, cfg.image_h, cfg.image_w)
        if images.ndim != 4 or images.shape[1:] != expect:
            raise DimensionError(f"expected images of shape B x {expect}, got {images.shape}")
        if modality.shape[0] != images.shape[0]:
            raise DimensionError("one modality flag per image is required")
        if not np.isin(modality, (OPTICAL, SAR)).all():
            raise UsageError("modality flags must be 0 (optical) or 1 (SAR)")

        patches = patchify(images.astype(self.pos_embed.dtype, copy=False), cfg.patch)
        opt_idx = np.flatnonzero(modality == OPTICAL)
        sar_idx = np.flatnonzero(modality == SAR)
        parts, order = [], []
        if opt_idx.size:
            parts.append(self.optical(Tensor(patches[opt_idx])))
            order.append(opt_idx)
        if sar_idx.size:
            parts.append(self.sar(Tensor(patches[sar_idx])))
            order.append(sar_idx)
        tokens = parts[0] if len(parts) == 1 else concat(parts, axis=0)
        perm = np.concatenate(order)
        if not np.array_equal(perm, np.arange(perm.size)):
            tokens = tokens[np.argsort(perm)]

        b = images.shape[0]
        cls = self.cls_token + Tensor(np.zeros((b, 1, cfg.dim), dtype=self.pos_embed.dtype))
        return concat([cls, tokens], axis=1) + self.pos_embed


class Attention(Module):
    def __init__(self, dim: int, heads: int, rng, dtype=np.float32):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = self.add_child("qkv", Linear(dim, 3 * dim, rng, dtype))
        self.proj = self.add_child("proj", Linear(dim, dim, rng, dtype))

    def __call__(self, x: Tensor) -> Tensor:
        b, t, c = x.shape
        h = self.heads
        qkv = self.qkv(x).reshape(b, t, 3, h, c // h).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = softmax((q @ k.swapaxes(-1, -2)) * self.scale, axis=-1)
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(b, t, c)
        return self.proj(out)


class Block(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        super().__init__()
        self.norm1 = self.add_child("norm1", LayerNorm(cfg.dim, dtype))
        self.attn = self.add_child("attn", Attention(cfg.dim, cfg.heads, rng, dtype))
        self.norm2 = self.add_child("norm2", LayerNorm(cfg.dim, dtype))
        self.fc1 = self.add_child("fc1", Linear(cfg.dim, cfg.hidden, rng, dtype))
        self.fc2 = self.add_child("fc2", Linear(cfg.hidden, cfg.dim, rng, dtype))

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(gelu(self.fc1(self.norm2(x))))


class ViTBackbone(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.tokenizer = self.add_child("tokenizer", DualHeadTokenizer(cfg, rng, dtype))
        self.blocks = [self.add_child(f"blocks.{i}", Block(cfg, rng, dtype)) for i in range(cfg.layers)]
        self.norm = self.add_child("norm", LayerNorm(cfg.dim, dtype))

    def tokenize(self, images, modality) -> Tensor:
        return self.tokenizer(images, modality)

    def forward_blocks(self, tokens: Tensor, start: int, stop: int) -> Tensor:
        """Run blocks ``start..stop`` (1-based, inclusive). ``start > stop`` is a no-op."""
        L = self.cfg.layers
        if start > stop:
            return tokens
        if start < 1 or stop > L:
            raise UsageError(f"block range [{start}, {stop}] outside [1, {L}]")
        self._check_tokens(tokens)
        for blk in self.blocks[start - 1:stop]:
            tokens = blk(tokens)
        return tokens

    def tokens_to_grid(self, tokens: Tensor) -> Tensor:
        """Drop the class token and lay patch tokens out as ``B x C x H' x W'``."""
        self._check_tokens(tokens)
        cfg = self.cfg
        b = tokens.shape[0]
        return tokens[:, 1:, :].reshape(b, cfg.grid_h, cfg.grid_w, cfg.dim).transpose(0, 3, 1, 2)

    def terminal_feature(self, tokens: Tensor) -> Tensor:
        return self.norm(tokens[:, 0, :])

    def _check_tokens(self, tokens: Tensor) -> None:
        cfg = self.cfg
        if tokens.ndim != 3 or tokens.shape[1:] != (1 + cfg.num_patches, cfg.dim):
            raise DimensionError(
                f"expected token sequence B x {1 + cfg.num_patches} x {cfg.dim}, got {tokens.shape}")


def backbone_parameter_count(cfg: ModelConfig) -> int:
    c, hid = cfg.dim, cfg.hidden
    patch_in = cfg.in_chans * cfg.patch * cfg.patch
    tokenizer = 2 * (patch_in * c + c) + c + (1 + cfg.num_patches) * c
    block = 2 * c + (3 * c * c + 3 * c) + (c * c + c) + 2 * c + (c * hid + hid) + (hid * c + c)
    return tokenizer + cfg.layers * block + 2 * c
