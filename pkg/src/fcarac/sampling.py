"""First-cycle-normalized resampling and clip windows.

A sequence whose first cycle spans N frames is resampled at rate R = k/N so
that the first cycle always occupies exactly k frames. Rounding is
round-half-up throughout and done in integer arithmetic.
"""

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .seqdata import RawSequence

DEFAULT_K = 4


@dataclass
class SampledSequence:
    frames: np.ndarray  # F x D_in
    k: int
    rate: Fraction
    source_id: str
    pad_mask: np.ndarray = None

    def __post_init__(self):
        if self.pad_mask is None:
            self.pad_mask = np.ones(self.frames.shape[0], dtype=bool)

    @property
    def length(self) -> int:
        return self.frames.shape[0]


def sampled_length(L: int, N: int, k: int) -> int:
    """F = max(k, round_half_up(k * L / N))."""
    return max(k, (2 * k * L + N) // (2 * N))


def source_indices(F: int, L: int, N: int, k: int) -> np.ndarray:
    """Source frame for each output frame: round_half_up(i * N / k), clamped to L-1.

    The first k outputs are additionally clamped to N-1 so that, under heavy
    upsampling (k >= 2N), they never reach past the annotated first cycle.
    """
    i = np.arange(F, dtype=np.int64)
    idx = np.minimum((2 * i * N + k) // (2 * k), L - 1)
    idx[:k] = np.minimum(idx[:k], N - 1)
    return idx


def sample(seq: RawSequence, k: int = DEFAULT_K) -> SampledSequence:
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    L, N = seq.length, seq.first_cycle_end
    if L == 0:
        raise ValueError(f"{seq.id}: empty sequence")
    F = sampled_length(L, N, k)
    idx = source_indices(F, L, N, k)
    return SampledSequence(frames=seq.frames[idx], k=k, rate=Fraction(k, N), source_id=seq.id)


def window_starts(F: int, k: int) -> list:
    if k % 2:
        raise ValueError(f"k must be even, got {k}")
    if F < k:
        raise ValueError(f"sequence of {F} frames is shorter than one window of {k}")
    return list(range(0, F - k + 1, k // 2))


def windows(seq: SampledSequence, k: int | None = None) -> list:
    """Clips of k frames at stride k/2; a trailing partial clip is dropped."""
    k = seq.k if k is None else k
    return [seq.frames[s : s + k] for s in window_starts(seq.length, k)]


@dataclass
class Batch:
    frames: np.ndarray  # B x F x D_in
    pad_mask: np.ndarray  # B x F
    lengths: list
    source_ids: list = field(default_factory=list)


def pad_batch(seqs: list, min_length: int = 0) -> Batch:
    """Zero-pad to the longest sequence (and at least ``min_length``)."""
    if not seqs:
        raise ValueError("pad_batch needs at least one sequence")
    F = max(max(s.length for s in seqs), min_length)
    D = seqs[0].frames.shape[1]
    frames = np.zeros((len(seqs), F, D))
    mask = np.zeros((len(seqs), F), dtype=bool)
    for b, s in enumerate(seqs):
        frames[b, : s.length] = s.frames
        mask[b, : s.length] = s.pad_mask
    return Batch(frames, mask, [s.length for s in seqs], [s.source_id for s in seqs])
