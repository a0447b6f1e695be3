"""Density prediction head and the first-cycle MSE + relative count loss."""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .densitymap import DensityMap
from .diffcore import DTYPE


class PredictionHead(nn.Module):
    """Three same-padded 1-D convs (ReLU between, Tanh out) mapping (B, F, C) -> (B, F).

    Hidden activations are re-masked after every layer so padded frames never
    leak into real ones; a padded batch therefore gives the same densities as
    running each sequence alone. The output layer starts at zero, so an
    untrained head predicts an all-zero density.
    """

    def __init__(self, in_channels: int = 3, hidden=(16, 8), kernel_sizes=(3, 3, 3)):
        super().__init__()
        widths = [in_channels, *hidden, 1]
        self.convs = nn.ModuleList(
            nn.Conv1d(a, b, ks, padding=ks // 2, dtype=DTYPE)
            for a, b, ks in zip(widths[:-1], widths[1:], kernel_sizes)
        )
        with torch.no_grad():
            self.convs[-1].weight.zero_()
            self.convs[-1].bias.zero_()

    def forward(self, G: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        G = G.to(DTYPE)
        squeeze = G.dim() == 2
        if squeeze:
            G = G.unsqueeze(0)
            mask = None if mask is None else mask.unsqueeze(0)
        m = None if mask is None else mask.to(DTYPE).unsqueeze(1)
        h = G.transpose(1, 2)
        if m is not None:
            h = h * m
        for i, conv in enumerate(self.convs):
            h = conv(h)
            h = torch.relu(h) if i < len(self.convs) - 1 else torch.tanh(h)
            if m is not None:
                h = h * m
        out = h[:, 0, :]
        return out[0] if squeeze else out


def predict_density(G: torch.Tensor, head: PredictionHead, pad_mask=None) -> DensityMap:
    mask = None if pad_mask is None else torch.as_tensor(np.asarray(pad_mask, dtype=bool))
    with torch.no_grad():
        values = head(G, mask)
    return DensityMap(values.numpy(), None if pad_mask is None else np.asarray(pad_mask, dtype=bool))


@dataclass
class LossReport:
    l_mse: float
    l_mae: float
    total: float
    alpha: float


def loss_terms(D: torch.Tensor, mask: torch.Tensor, gt_first: torch.Tensor, gt_count: torch.Tensor):
    """Per-sequence (mse, mae) tensors for a batch of densities D (B, F)."""
    if torch.any(gt_count <= 0):
        raise ValueError("ground-truth count must be >= 1")
    k = gt_first.shape[-1]
    mse = ((D[:, :k] - gt_first) ** 2).mean(dim=1)
    pred = (D * mask.to(DTYPE)).sum(dim=1)
    mae = (gt_count - pred).abs() / gt_count
    return mse, mae


def loss(dmap: DensityMap, gt_first, gt_count: int, alpha: float = 10.0) -> LossReport:
    """Loss of a single predicted map against its first-cycle and count targets."""
    if gt_count <= 0:
        raise ValueError("ground-truth count must be >= 1")
    D = torch.as_tensor(dmap.values, dtype=DTYPE).unsqueeze(0)
    mask = torch.as_tensor(dmap.pad_mask).unsqueeze(0)
    mse, mae = loss_terms(D, mask, torch.as_tensor(np.asarray(gt_first), dtype=DTYPE), torch.tensor([float(gt_count)]))
    l_mse, l_mae = float(mse[0]), float(mae[0])
    return LossReport(l_mse, l_mae, alpha * l_mse + l_mae, alpha)
