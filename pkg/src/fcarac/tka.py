"""Training-set first-cycle store, nearest-neighbour retrieval and slot fusion."""

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .diffcore import DTYPE
from .mtgc import DEFAULT_SCALES, mtgc
from .sampling import sample

FUSIONS = ("attention", "softmax", "average", "max")


@dataclass
class EmbeddingStore:
    ids: list
    embeddings: torch.Tensor  # T x k x D, detached
    refreshed_at: int = 0

    def __post_init__(self):
        if len(self.ids) != self.embeddings.shape[0]:
            raise ValueError("ids and embeddings disagree on T")

    def __len__(self) -> int:
        return len(self.ids)

    def to_tensors(self) -> dict:
        out = {f"store/{i}": e for i, e in zip(self.ids, self.embeddings)}
        out["store_meta/refreshed_at"] = torch.tensor(float(self.refreshed_at))
        return out

    @classmethod
    def from_tensors(cls, tensors: dict) -> "EmbeddingStore | None":
        ids = [name[len("store/") :] for name in tensors if name.startswith("store/")]
        if not ids:
            return None
        emb = torch.stack([tensors[f"store/{i}"] for i in ids])
        epoch = int(tensors.get("store_meta/refreshed_at", torch.tensor(0.0)).item())
        return cls(ids, emb, epoch)


@torch.no_grad()
def _encode_first_cycles(encoder, train_set: list, k: int) -> torch.Tensor:
    cycles = []
    for seq in train_set:
        s = sample(seq, k)
        s.frames = s.frames[:k]
        s.pad_mask = s.pad_mask[:k]
        cycles.append(s)
    return torch.stack(encoder.encode_many(cycles)).detach()


def build_store(encoder, train_set: list, k: int = 4, epoch: int = 0) -> EmbeddingStore:
    """Encode each training sequence's first cycle on its own (k frames in, k x D out)."""
    if not train_set:
        raise ValueError("cannot build an embedding store from an empty training set")
    return EmbeddingStore([s.id for s in train_set], _encode_first_cycles(encoder, train_set, k), epoch)


def refresh(store: EmbeddingStore, encoder, train_set: list, k: int = 4) -> EmbeddingStore:
    by_id = {s.id: s for s in train_set}
    seqs = [by_id[i] for i in store.ids]
    return EmbeddingStore(list(store.ids), _encode_first_cycles(encoder, seqs, k), store.refreshed_at + 1)


def distances(store: EmbeddingStore, query: torch.Tensor) -> torch.Tensor:
    diff = store.embeddings.reshape(len(store), -1) - query.detach().reshape(1, -1)
    return torch.sqrt((diff * diff).sum(dim=1))


def topk(store: EmbeddingStore, query: torch.Tensor, K: int, exclude: str | None = None) -> list:
    """Indices of the K nearest entries by flattened Euclidean distance, ties by id."""
    if K < 0:
        raise ValueError("K must be >= 0")
    T = len(store) - (1 if exclude is not None and exclude in store.ids else 0)
    if K > T:
        raise ValueError(f"K={K} exceeds store size {T}")
    d = distances(store, query).numpy()
    order = sorted(
        (i for i in range(len(store)) if store.ids[i] != exclude),
        key=lambda i: (d[i], store.ids[i]),
    )
    return order[:K]


def augment(X: torch.Tensor, own_kernel: torch.Tensor, neighbors: torch.Tensor, scales=DEFAULT_SCALES, normalize=True) -> torch.Tensor:
    """Stack MTGC of the own kernel (slot 0) and each neighbour kernel.

    X: (..., F, D); own_kernel: (..., k, D); neighbors: (..., K, k, D).
    Returns (..., F, S, K + 1).
    """
    if neighbors.shape[-2:] != own_kernel.shape[-2:]:
        raise ValueError(f"neighbour kernels {tuple(neighbors.shape[-2:])} != own kernel {tuple(own_kernel.shape[-2:])}")
    slots = [mtgc(X, own_kernel, scales, normalize)]
    for j in range(neighbors.shape[-3]):
        slots.append(mtgc(X, neighbors[..., j, :, :], scales, normalize))
    return torch.stack(slots, dim=-1)


class AttentionPool(nn.Module):
    """Fuse the K+1 slot axis: W = act(Linear(Gp)), G'' = sum_i W_i * Gp_i.

    The affine map acts on the slot axis and is shared across frames and
    scales. ``fusion`` picks the activation: "attention" (sigmoid),
    "softmax" (normalized over slots), "average" (fixed 1/(K+1)) or "max"
    (keep only the own slot and the single nearest neighbour).
    """

    def __init__(self, n_slots: int, fusion: str = "attention", init: str = "own"):
        super().__init__()
        if fusion not in FUSIONS:
            raise ValueError(f"unknown fusion {fusion!r}")
        self.fusion = fusion
        self.n_slots = min(n_slots, 2) if fusion == "max" else n_slots
        self.linear = nn.Linear(self.n_slots, self.n_slots, dtype=DTYPE)
        with torch.no_grad():
            self.linear.weight.zero_()
            self.linear.bias.zero_()
            if init == "own" and fusion in ("attention", "max"):
                # start close to the own-kernel-only path: w_0 ~ 0.99, others ~ 0.01
                self.linear.bias.fill_(-4.6)
                self.linear.bias[0] = 4.6
            elif init == "own" and fusion == "softmax":
                self.linear.bias[0] = 4.6

    def weights(self, Gp: torch.Tensor) -> torch.Tensor:
        z = self.linear(Gp)
        if self.fusion == "softmax":
            return torch.softmax(z, dim=-1)
        return torch.sigmoid(z)

    def forward(self, Gp: torch.Tensor) -> torch.Tensor:
        if self.fusion == "average":
            return Gp.mean(dim=-1)
        if self.fusion == "max":
            Gp = Gp[..., : self.n_slots]
        if Gp.shape[-1] != self.n_slots:
            raise ValueError(f"expected {self.n_slots} slots, got {Gp.shape[-1]}")
        return (self.weights(Gp) * Gp).sum(dim=-1)


def attention_pool(Gp: torch.Tensor, pool: AttentionPool) -> torch.Tensor:
    return pool(Gp)
