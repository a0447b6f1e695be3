"""Gaussian first-cycle density targets and count extraction."""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sampling import SampledSequence
from .seqdata import RawSequence


def _phi(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def gaussian_cycle_density(k: int, sigma_rule: str = "ci99") -> np.ndarray:
    """Per-frame mass of a Gaussian whose mu +/- 3 sigma spans frames 1..k.

    d_i is the integral of N(mu, sigma) over [i - 0.5, i + 0.5]; tails outside
    the cycle are dropped rather than renormalized. ``sigma_rule="ci99"`` uses
    sigma = (k-1)/6; ``"bins"`` uses sigma = k/6 (mu +/- 3 sigma spanning the
    outer bin edges).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k == 1:
        return np.array([1.0])
    mu = (1 + k) / 2.0
    if sigma_rule == "ci99":
        sigma = (k - 1) / 6.0
    elif sigma_rule == "bins":
        sigma = k / 6.0
    else:
        raise ValueError(f"unknown sigma_rule {sigma_rule!r}")
    d = np.array([_phi((i + 0.5 - mu) / sigma) - _phi((i - 0.5 - mu) / sigma) for i in range(1, k + 1)])
    # symmetrize away last-ulp differences from the two tails
    return 0.5 * (d + d[::-1])


@dataclass
class DensityMap:
    values: np.ndarray
    pad_mask: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.pad_mask is None:
            self.pad_mask = np.ones(self.values.shape, dtype=bool)
        self.values = np.where(self.pad_mask, self.values, 0.0)

    def to_csv(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        rows = ["frame_index,value"]
        rows += [f"{i},{v:.17g}" for i, v in enumerate(self.values) if self.pad_mask[i]]
        Path(path).write_text("\n".join(rows) + "\n")


def count_from_density(dmap: DensityMap) -> float:
    return float(np.sum(np.where(dmap.pad_mask, dmap.values, 0.0)))


@dataclass
class FirstCycleTarget:
    values: np.ndarray  # k dense target values for frames 0..k
    count: int


def gt_density_for_sequence(seq: RawSequence, sampled: SampledSequence, sigma_rule: str = "ci99") -> FirstCycleTarget:
    """Dense target on the first k sampled frames plus the count-level target."""
    if seq.id != sampled.source_id:
        raise ValueError(f"sampled sequence {sampled.source_id!r} was not derived from {seq.id!r}")
    return FirstCycleTarget(gaussian_cycle_density(sampled.k, sigma_rule), seq.count)


def tiled_density(cycle_lengths: list, sigma_rule: str = "ci99") -> np.ndarray:
    """Full per-cycle map: one Gaussian cycle density per annotated cycle."""
    return np.concatenate([gaussian_cycle_density(n, sigma_rule) for n in cycle_lengths])
