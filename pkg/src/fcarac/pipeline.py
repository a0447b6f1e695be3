"""End-to-end counting models: sample -> encode -> context -> head -> density.

``FCARAC`` builds its context from first-cycle kernel correlation (optionally
augmented with retrieved training kernels); the baselines in
:mod:`fcarac.baselines` swap in attention-based contexts on the same encoder,
head and loss.
"""

import copy
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .config import Config
from .densitymap import DensityMap, gaussian_cycle_density
from .diffcore import DTYPE
from .encoder import TemporalEncoder
from .head import LossReport, PredictionHead, loss_terms
from .mtgc import mtgc
from .sampling import sample
from .tka import AttentionPool, EmbeddingStore, augment, topk


@dataclass
class Output:
    D: torch.Tensor  # B x F densities, zero on padded frames
    mask: torch.Tensor  # B x F bool
    sampled: list
    neighbors: list | None = None  # per sequence, store indices used

    def density_maps(self) -> list:
        D = self.D.detach().numpy()
        m = self.mask.numpy()
        return [DensityMap(D[b, : s.length], m[b, : s.length]) for b, s in enumerate(self.sampled)]

    def counts(self) -> np.ndarray:
        return (self.D.detach() * self.mask.to(DTYPE)).sum(dim=1).numpy()


class CountingModel(nn.Module):
    """Shared plumbing; subclasses implement :meth:`context`."""

    kind = "base"

    def __init__(self, cfg: Config, in_channels: int, context_channels: int):
        super().__init__()
        self.cfg = cfg
        self.in_channels = in_channels
        self.encoder = TemporalEncoder(in_channels, cfg.width, cfg.hidden, cfg.k)
        self.head = PredictionHead(context_channels)

    @property
    def k(self) -> int:
        return self.cfg.k

    def min_frames(self) -> int:
        return self.cfg.k

    def features(self, seqs: list):
        sampled = [sample(s, self.k) for s in seqs]
        feats = self.encoder.encode_many(sampled)
        Fp = max(max(f.shape[0] for f in feats), self.min_frames())
        B, Dw = len(feats), feats[0].shape[1]
        rows = [torch.cat([f, f.new_zeros(Fp - f.shape[0], Dw)]) for f in feats]
        X = torch.stack(rows)
        mask = torch.zeros(B, Fp, dtype=torch.bool)
        for b, f in enumerate(feats):
            mask[b, : f.shape[0]] = True
        return X, mask, sampled

    def context(self, X, mask, seqs, store=None, K=0, neighbor_idx=None):
        raise NotImplementedError

    def forward(self, seqs: list, store: EmbeddingStore | None = None, K: int = 0, neighbor_idx=None) -> Output:
        """``neighbor_idx`` pins the retrieved store rows (one list per sequence) instead of searching."""
        X, mask, sampled = self.features(seqs)
        ctx, neighbors = self.context(X, mask, seqs, store, K, neighbor_idx)
        D = self.head(ctx, mask)
        return Output(D, mask, sampled, neighbors)

    def targets(self, seqs: list):
        gt_first = torch.as_tensor(gaussian_cycle_density(self.k, self.cfg.sigma_rule), dtype=DTYPE)
        gt_count = torch.tensor([float(s.count) for s in seqs], dtype=DTYPE)
        return gt_first, gt_count

    def batch_loss(self, out: Output, seqs: list, alpha: float | None = None):
        """Mean over the batch of alpha * L_mse + L_mae; returns (tensor, LossReport)."""
        alpha = self.cfg.alpha if alpha is None else alpha
        gt_first, gt_count = self.targets(seqs)
        mse, mae = loss_terms(out.D, out.mask, gt_first, gt_count)
        total = (alpha * mse + mae).mean()
        report = LossReport(float(mse.mean().detach()), float(mae.mean().detach()), float(total.detach()), alpha)
        return total, report


class FCARAC(CountingModel):
    """First-cycle kernel correlation model with optional retrieval augmentation."""

    kind = "none"

    def __init__(self, cfg: Config, in_channels: int):
        super().__init__(cfg, in_channels, len(cfg.scales))
        self.pool = None

    def min_frames(self) -> int:
        return max(self.cfg.k, max(self.cfg.scales))

    def enable_tka(self, K: int, fusion: str | None = None) -> None:
        """Attach a fusion layer for K retrieved kernels (K = 0 removes it)."""
        self.pool = AttentionPool(K + 1, fusion or self.cfg.fusion) if K > 0 else None
        self.cfg = self.cfg.with_(K=K, fusion=fusion or self.cfg.fusion)

    @property
    def K(self) -> int:
        return 0 if self.pool is None else self.cfg.K

    def retrieve(self, own: torch.Tensor, seqs: list, store: EmbeddingStore, K: int, idx=None):
        exclude = self.cfg.exclude_self
        if idx is None:
            idx = [topk(store, own[b], K, exclude=s.id if exclude else None) for b, s in enumerate(seqs)]
        neighbors = torch.stack([store.embeddings[i] for i in idx])  # B x K x k x D
        return neighbors, idx

    def context(self, X, mask, seqs, store=None, K=0, neighbor_idx=None):
        own = X[:, : self.k]
        scales, norm = self.cfg.scales, self.cfg.normalize_mtgc
        m = mask.to(DTYPE).unsqueeze(-1)
        if K and K > 0:
            if store is None:
                raise ValueError("retrieval requested without an embedding store")
            if self.pool is None:
                raise ValueError("model has no fusion layer; call enable_tka first")
            neighbors, idx = self.retrieve(own, seqs, store, K, neighbor_idx)
            Gp = augment(X, own, neighbors, scales, norm)
            return self.pool(Gp) * m, idx
        return mtgc(X, own, scales, norm) * m, None


def forward_pretrain(model: CountingModel, seqs: list):
    out = model(seqs)
    _, report = model.batch_loss(out, seqs)
    return out.density_maps(), report


def forward_tka(model: FCARAC, seqs: list, store: EmbeddingStore, K: int):
    out = model(seqs, store=store, K=K)
    _, report = model.batch_loss(out, seqs)
    return out.density_maps(), report


def first_cycle_mse(model: CountingModel, seq, store=None, K=0) -> float:
    with torch.no_grad():
        out = model([seq], store=store, K=K)
        gt_first, _ = model.targets([seq])
        return float(((out.D[0, : model.k] - gt_first) ** 2).mean())


def tta_adapt(model: CountingModel, seq, steps: int, lr: float, store=None, K: int = 0) -> CountingModel:
    """Return a copy whose head took ``steps`` gradient-descent steps on the first-cycle MSE.

    Only head parameters change; everything upstream of the head is computed
    once and held fixed.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    adapted = copy.deepcopy(model)
    if steps == 0:
        return adapted
    with torch.no_grad():
        X, mask, _ = adapted.features([seq])
        ctx, _ = adapted.context(X, mask, [seq], store, K)
    gt_first, _ = adapted.targets([seq])
    params = list(adapted.head.parameters())
    for _ in range(steps):
        D = adapted.head(ctx, mask)
        mse = ((D[0, : adapted.k] - gt_first) ** 2).mean()
        grads = torch.autograd.grad(mse, params)
        with torch.no_grad():
            for p, g in zip(params, grads):
                p -= lr * g
    return adapted
