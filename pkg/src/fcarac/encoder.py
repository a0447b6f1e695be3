"""Per-clip temporal feature encoder.

Any callable mapping a :class:`SampledSequence` to a :class:`FeatureMap`
can stand in for :class:`TemporalEncoder`; :class:`PrecomputedEncoder`
passes through features extracted offline.
"""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .diffcore import DTYPE
from .sampling import SampledSequence, window_starts


@dataclass
class FeatureMap:
    X: torch.Tensor  # F x D
    pad_mask: np.ndarray = None

    def __post_init__(self):
        if self.pad_mask is None:
            self.pad_mask = np.ones(self.X.shape[0], dtype=bool)

    @property
    def length(self) -> int:
        return self.X.shape[0]


@dataclass
class CycleKernel:
    Xp: torch.Tensor  # k x D


def first_cycle(fm: FeatureMap, k: int) -> CycleKernel:
    if fm.length < k:
        raise ValueError(f"feature map has {fm.length} frames, need >= {k}")
    return CycleKernel(fm.X[:k])


class TemporalEncoder(nn.Module):
    """Two temporal conv layers per k-frame clip, emitting k/2 frames per clip.

    Layer 1 is a width-3 same-padded conv inside the clip, layer 2 a width-2
    stride-2 conv that halves the clip. Clip outputs are concatenated and the
    tail is completed by repeating the last feature frame.
    """

    def __init__(self, in_channels: int = 8, width: int = 32, hidden: int = 32, k: int = 4):
        super().__init__()
        if k % 2:
            raise ValueError("k must be even")
        self.k = k
        self.in_channels = in_channels
        self.width = width
        self.conv1 = nn.Conv1d(in_channels, hidden, 3, padding=1, dtype=DTYPE)
        self.conv2 = nn.Conv1d(hidden, width, 2, stride=2, dtype=DTYPE)

    def encode_frames(self, frames: torch.Tensor) -> torch.Tensor:
        """(F, D_in) tensor -> (F, D) features."""
        F = frames.shape[0]
        starts = window_starts(F, self.k)
        clips = frames.unfold(0, self.k, self.k // 2)  # nW x D_in x k
        assert clips.shape[0] == len(starts)
        h = torch.tanh(self.conv1(clips))
        out = torch.tanh(self.conv2(h))  # nW x D x k/2
        feats = out.permute(0, 2, 1).reshape(-1, self.width)
        if feats.shape[0] < F:
            feats = torch.cat([feats, feats[-1:].expand(F - feats.shape[0], -1)], dim=0)
        return feats

    def forward(self, sampled: SampledSequence) -> FeatureMap:
        frames = torch.as_tensor(sampled.frames, dtype=DTYPE)
        return FeatureMap(self.encode_frames(frames), sampled.pad_mask.copy())

    def encode_many(self, seqs: list) -> list:
        """Encode several sequences with one conv call per layer."""
        tensors = [torch.as_tensor(s.frames, dtype=DTYPE) for s in seqs]
        clips, counts = [], []
        for t in tensors:
            window_starts(t.shape[0], self.k)
            c = t.unfold(0, self.k, self.k // 2)
            clips.append(c)
            counts.append(c.shape[0])
        h = torch.tanh(self.conv1(torch.cat(clips)))
        out = torch.tanh(self.conv2(h)).permute(0, 2, 1).reshape(-1, self.k // 2, self.width)
        feats = []
        for t, part in zip(tensors, torch.split(out, counts)):
            f = part.reshape(-1, self.width)
            F = t.shape[0]
            if f.shape[0] < F:
                f = torch.cat([f, f[-1:].expand(F - f.shape[0], -1)], dim=0)
            feats.append(f)
        return feats


class PrecomputedEncoder(nn.Module):
    """Identity encoder for features that were extracted offline."""

    def __init__(self, in_channels: int, k: int = 4):
        super().__init__()
        self.k = k
        self.in_channels = in_channels
        self.width = in_channels

    def forward(self, sampled: SampledSequence) -> FeatureMap:
        return FeatureMap(torch.as_tensor(sampled.frames, dtype=DTYPE), sampled.pad_mask.copy())

    def encode_many(self, seqs: list) -> list:
        return [torch.as_tensor(s.frames, dtype=DTYPE) for s in seqs]
