"""Multi-scale correlation of a cycle kernel against a whole feature sequence."""

from dataclasses import dataclass

import torch

from .diffcore import correlate1d, interp_linear

DEFAULT_SCALES = (3, 4, 5)


def scales_default() -> tuple:
    return DEFAULT_SCALES


@dataclass
class GranularityFeature:
    G: torch.Tensor  # F x S (or B x F x S)
    scales: tuple


def mtgc(X: torch.Tensor, kernel: torch.Tensor, scales=DEFAULT_SCALES, normalize: bool = True) -> torch.Tensor:
    """Stack of correlations of ``X`` (..., F, D) with ``kernel`` (..., k, D) resampled to each scale.

    Returns (..., F, len(scales)); columns follow ascending scale order. With
    ``normalize`` each column is divided by s * D.
    """
    scales = tuple(sorted(scales))
    if not scales:
        raise ValueError("scales must be nonempty")
    F, D = X.shape[-2], X.shape[-1]
    cols = []
    for s in scales:
        if s < 1:
            raise ValueError(f"scale {s} must be >= 1")
        if s > F:
            raise ValueError(f"scale {s} exceeds sequence length {F}")
        col = correlate1d(X, interp_linear(kernel, s))
        cols.append(col / (s * D) if normalize else col)
    return torch.stack(cols, dim=-1)


def mtgc_feature(fm, kernel, scales=DEFAULT_SCALES, normalize: bool = True) -> GranularityFeature:
    return GranularityFeature(mtgc(fm.X, kernel.Xp, scales, normalize), tuple(sorted(scales)))
