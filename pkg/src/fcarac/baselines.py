"""Attention baselines sharing the encoder, head and loss of the main model."""

import math

import torch
from torch import nn

from .config import Config
from .diffcore import DTYPE
from .pipeline import CountingModel, FCARAC

VV_CHANNELS = 32
VV_POOL = 16


def attention_map(Q: torch.Tensor, K: torch.Tensor, key_mask: torch.Tensor | None = None) -> torch.Tensor:
    """softmax(Q K^T / sqrt(d_k)) over keys; masked keys get zero weight."""
    logits = Q @ K.transpose(-1, -2) / math.sqrt(Q.shape[-1])
    if key_mask is not None:
        logits = logits.masked_fill(~key_mask.unsqueeze(-2), float("-inf"))
    return torch.softmax(logits, dim=-1)


def adaptive_avg_pool_last(S: torch.Tensor, out_len: int) -> torch.Tensor:
    """Average bins [floor(i*F/n), ceil((i+1)*F/n)) along the last axis."""
    return nn.functional.adaptive_avg_pool1d(S.reshape(-1, 1, S.shape[-1]), out_len).reshape(*S.shape[:-1], out_len)


class FCV(CountingModel):
    """First-cycle queries attend over the whole sequence.

    The k attended rows C = A V are spread back onto the F frames with the
    transposed attention map, giving A^T C of shape F x d_k.
    """

    kind = "fcv"

    def __init__(self, cfg: Config, in_channels: int, d_k: int = 16):
        super().__init__(cfg, in_channels, d_k)
        self.q = nn.Linear(cfg.width, d_k, dtype=DTYPE)
        self.kp = nn.Linear(cfg.width, d_k, dtype=DTYPE)
        self.v = nn.Linear(cfg.width, d_k, dtype=DTYPE)

    def fcv_forward(self, X: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        Q = self.q(X[..., : self.k, :])
        K = self.kp(X)
        V = self.v(X)
        A = attention_map(Q, K, mask)  # k x F
        C = A @ V  # k x d_k
        return A.transpose(-1, -2) @ C

    def context(self, X, mask, seqs, store=None, K=0, neighbor_idx=None):
        return self.fcv_forward(X, mask) * mask.to(DTYPE).unsqueeze(-1), None


class VV(CountingModel):
    """Self-similarity S = Q K^T, a 3x3 conv to 32 channels, pooled to 16 columns."""

    kind = "vv"

    def __init__(self, cfg: Config, in_channels: int, d_k: int = 16):
        super().__init__(cfg, in_channels, VV_CHANNELS * VV_POOL)
        self.q = nn.Linear(cfg.width, d_k, dtype=DTYPE)
        self.kp = nn.Linear(cfg.width, d_k, dtype=DTYPE)
        self.conv = nn.Conv2d(1, VV_CHANNELS, 3, padding=1, dtype=DTYPE)

    def similarity(self, X: torch.Tensor) -> torch.Tensor:
        return self.q(X) @ self.kp(X).transpose(-1, -2)

    def vv_forward(self, X: torch.Tensor) -> torch.Tensor:
        """(F, D) -> (F, 32 * 16) context for one unpadded sequence."""
        S = self.similarity(X)
        h = torch.relu(self.conv(S.unsqueeze(0).unsqueeze(0)))[0]  # 32 x F x F
        pooled = adaptive_avg_pool_last(h, VV_POOL)  # 32 x F x 16
        return pooled.permute(1, 0, 2).reshape(X.shape[0], -1)

    def context(self, X, mask, seqs, store=None, K=0, neighbor_idx=None):
        # per sequence: pooling over padded columns would change the bins
        out = X.new_zeros(X.shape[0], X.shape[1], VV_CHANNELS * VV_POOL)
        for b in range(X.shape[0]):
            n = int(mask[b].sum())
            out[b, :n] = self.vv_forward(X[b, :n])
        return out, None


def build_model(cfg: Config, in_channels: int) -> CountingModel:
    if cfg.baseline == "fcv":
        return FCV(cfg, in_channels)
    if cfg.baseline == "vv":
        return VV(cfg, in_channels)
    return FCARAC(cfg, in_channels)
