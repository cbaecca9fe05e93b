"""Full network: backbone, structural tap, decoupling heads and BNNeck classifier."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dfl
from .backbone import ModelConfig, ViTBackbone, backbone_parameter_count
from .nn import BatchNorm1d, Linear, Module
from .tensor import Tensor


@dataclass
class ForwardOutput:
    grid: Tensor          # block-B_s feature grid, B x C x H' x W'
    terminal: Tensor      # F^(L), B x d
    f_sh: Tensor | None
    f_sp: Tensor | None
    feature: Tensor       # retrieval feature (pre-BN)
    logits: Tensor | None


class SDFNet(Module):
    def __init__(self, cfg: ModelConfig, dfl_on: bool = True, fusion_mode: str = "additive",
                 seed: int = 0, dtype=np.float32):
        super().__init__()
        if fusion_mode not in dfl.FUSION_MODES:
            raise ValueError(f"unknown fusion mode {fusion_mode!r}")
        self.cfg = cfg
        self.dfl_on = dfl_on
        self.fusion_mode = fusion_mode
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.backbone = self.add_child("backbone", ViTBackbone(cfg, rng, dtype))
        if dfl_on:
            self.heads = self.add_child("dfl", dfl.DecoupleHeads(cfg.dim, rng, dtype))
        else:
            self.heads = None
        d = self.feature_dim
        self.bnneck = self.add_child("bnneck", BatchNorm1d(d, dtype))
        self.classifier = self.add_child(
            "classifier", Linear(d, cfg.num_identities, rng, dtype, bias=False,
                                 init=0.001 * rng.standard_normal((d, cfg.num_identities))))

    @property
    def feature_dim(self) -> int:
        if self.dfl_on and self.fusion_mode == "concat":
            return 2 * self.cfg.dim
        return self.cfg.dim

    def forward(self, images, modality, with_logits: bool = True) -> ForwardOutput:
        bb = self.backbone
        s = self.cfg.struct_layer
        tokens = bb.tokenize(images, modality)
        tokens = bb.forward_blocks(tokens, 1, s)
        grid = bb.tokens_to_grid(tokens)
        tokens = bb.forward_blocks(tokens, s + 1, self.cfg.layers)
        terminal = bb.terminal_feature(tokens)
        f_sh = f_sp = None
        if self.dfl_on:
            f_sh, f_sp = self.heads(terminal)
            feature = dfl.fuse(f_sh, f_sp, self.fusion_mode)
        else:
            feature = terminal
        logits = self.classifier(self.bnneck(feature)) if with_logits else None
        return ForwardOutput(grid, terminal, f_sh, f_sp, feature, logits)

    __call__ = forward


def parameter_count(cfg: ModelConfig, dfl_on: bool = True, fusion_mode: str = "additive") -> int:
    """Closed-form parameter count matching :class:`SDFNet`."""
    d = cfg.dim
    n = backbone_parameter_count(cfg)
    if dfl_on:
        n += 2 * (d * d + d)
    feat = 2 * d if dfl_on and fusion_mode == "concat" else d
    return n + feat + feat * cfg.num_identities
