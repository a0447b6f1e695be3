"""Differentiable array substrate.

Arrays are float64 ``torch.Tensor`` values; reverse-mode gradients come from
torch autograd. This module adds the handful of temporal primitives the
counting pipeline needs (same-length 1-D correlation, linear kernel
resampling), an Adam updater with the clear-after-step contract, and the
``FCARAC01`` binary checkpoint container.
"""

import struct
from pathlib import Path

import numpy as np
import torch

DTYPE = torch.float64
MAGIC = b"FCARAC01"


class ShapeError(ValueError):
    pass


def as_array(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def correlate1d(signal: torch.Tensor, kernel: torch.Tensor, stride: int = 1) -> torch.Tensor:
    """Same-length correlation of ``signal`` (..., F, D) with ``kernel`` (..., s, D).

    out[t] = sum_{j,c} signal[t + j - s//2, c] * kernel[j, c], zero outside [0, F).
    Leading batch dims must match (or the kernel may be unbatched). Output is (..., F)
    for stride 1, (..., ceil(F/stride)) otherwise.
    """
    if signal.shape[-1] != kernel.shape[-1]:
        raise ShapeError(f"channel mismatch: signal D={signal.shape[-1]}, kernel D={kernel.shape[-1]}")
    if kernel.shape[-2] < 1:
        raise ShapeError("kernel must have at least one frame")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    dtype = torch.promote_types(signal.dtype, kernel.dtype)
    signal, kernel = signal.to(dtype), kernel.to(dtype)
    s = kernel.shape[-2]
    left = s // 2
    right = s - 1 - left
    # pad the time axis (second to last)
    padded = torch.nn.functional.pad(signal, (0, 0, left, right))
    # (..., F, D, s) -> sliding windows over time
    win = padded.unfold(-2, s, 1)
    if stride > 1:
        win = win[..., ::stride, :, :]
    if kernel.dim() == 2:
        return torch.einsum("...tds,sd->...t", win, kernel)
    return torch.einsum("...tds,...sd->...t", win, kernel)


def interp_linear(kernel: torch.Tensor, target_len: int) -> torch.Tensor:
    """Resample (..., k, D) to (..., target_len, D) with endpoints preserved.

    Target positions are equally spaced over [0, k-1]; a single target frame
    sits at the midpoint.
    """
    if target_len < 1:
        raise ValueError(f"target_len must be >= 1, got {target_len}")
    k = kernel.shape[-2]
    if k < 2:
        raise ShapeError(f"need at least 2 kernel frames to interpolate, got {k}")
    if target_len == k:
        return kernel
    if target_len == 1:
        pos = np.array([(k - 1) / 2.0])
    else:
        pos = np.arange(target_len) * ((k - 1) / (target_len - 1))
        pos[-1] = k - 1
    lo = np.minimum(np.floor(pos).astype(np.int64), k - 2)
    frac = torch.as_tensor(pos - lo, dtype=kernel.dtype).unsqueeze(-1)
    lo_t = torch.as_tensor(lo)
    a = kernel.index_select(-2, lo_t)
    b = kernel.index_select(-2, lo_t + 1)
    # (1 - w) * a + w * b reproduces both endpoints exactly
    return (1.0 - frac) * a + frac * b


def backward(loss: torch.Tensor) -> None:
    if loss.numel() != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    loss.reshape(()).backward()


class Adam:
    """Bias-corrected Adam; ``step`` applies the update then clears gradients."""

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = [p for p in params if p.requires_grad]
        self._opt = torch.optim.Adam(self.params, lr=lr, betas=betas, eps=eps)

    def step(self) -> None:
        self._opt.step()
        self._opt.zero_grad(set_to_none=False)

    def zero_grad(self) -> None:
        self._opt.zero_grad(set_to_none=False)


def adam_step(opt: Adam) -> None:
    opt.step()


# -- checkpoint container -------------------------------------------------
#
# layout (little-endian):
#   b"FCARAC01"
#   u32 n_entries
#   per entry: u32 name_len, name (utf-8), u32 ndim, u64 dims[ndim], f64 payload[prod(dims)]


class CheckpointError(ValueError):
    pass


def write_container(path, tensors: dict) -> None:
    buf = bytearray(MAGIC)
    buf += struct.pack("<I", len(tensors))
    for name, value in tensors.items():
        arr = np.array(value.detach().cpu().numpy() if isinstance(value, torch.Tensor) else value, dtype="<f8", order="C")
        raw = name.encode("utf-8")
        buf += struct.pack("<I", len(raw)) + raw
        buf += struct.pack("<I", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        buf += arr.tobytes()
    Path(path).write_bytes(bytes(buf))


def read_container(path) -> dict:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:8]!r}")
    off = 8

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(data):
            raise CheckpointError(f"{path}: truncated at byte {off}")
        out = struct.unpack_from(fmt, data, off)
        off += size
        return out

    (n,) = take("<I")
    out = {}
    for _ in range(n):
        (name_len,) = take("<I")
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = take("<I")
        shape = take(f"<{ndim}Q") if ndim else ()
        count = int(np.prod(shape)) if ndim else 1
        if off + 8 * count > len(data):
            raise CheckpointError(f"{path}: truncated payload for {name!r}")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
        off += 8 * count
        out[name] = torch.tensor(arr.copy(), dtype=DTYPE)
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    return out
