"""Mask algebra: diagonal precisions, thresholding, attention-derived masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .views import BinaryMask


@dataclass(frozen=True)
class SoftMask:
    """Real-valued spatial mask; normalized producers keep entries in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"soft mask must be 2D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ShapeError("soft mask contains non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


@dataclass(frozen=True)
class PrecisionMask:
    """Flattened 0/1 diagonal of a precision matrix (row-major over the grid)."""

    data: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.ndim != 1:
            raise ShapeError(f"precision diagonal must be flat, got shape {raw.shape}")
        if not np.all((raw == 0) | (raw == 1)):
            raise ShapeError("precision entries must be exactly 0 or 1")
        arr = np.ascontiguousarray(raw, dtype=np.uint8)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    def __len__(self) -> int:
        return self.data.size

    def complement(self) -> "PrecisionMask":
        return PrecisionMask(1 - self.data)

    def unflatten(self, spatial_shape: tuple[int, ...]) -> BinaryMask:
        if int(np.prod(spatial_shape)) != self.data.size:
            raise ShapeError(f"cannot unflatten {self.data.size} entries to {spatial_shape}")
        return BinaryMask(self.data.reshape(spatial_shape))


def reshape_mask(b: BinaryMask) -> PrecisionMask:
    """Row-major flatten of a binary mask onto a precision diagonal."""
    return PrecisionMask(b.data.ravel())


def threshold_mask(soft: SoftMask, tau: float) -> BinaryMask:
    """Binarize: 1 exactly where soft >= tau."""
    if not 0.0 <= tau <= 1.0:
        raise ConfigError("task.tau", f"threshold must lie in [0, 1], got {tau}")
    if np.any(soft.data < 0.0) or np.any(soft.data > 1.0):
        raise ShapeError("soft mask entries must lie in [0, 1] before thresholding")
    return BinaryMask((soft.data >= tau).astype(np.uint8))


def attention_soft_mask(self_attn: np.ndarray, cross_attn: np.ndarray, token: int) -> SoftMask:
    """Background soft mask from attention tensors.

    Contracts self_attn[h, w, :, :] against cross_attn[token] to get a
    foreground saliency map, min-max normalizes it over the grid (a constant
    map normalizes to 0.5 everywhere), and returns its complement.
    """
    self_attn = np.asarray(self_attn, dtype=np.float64)
    cross_attn = np.asarray(cross_attn, dtype=np.float64)
    if self_attn.ndim != 4:
        raise ShapeError(f"self-attention must be rank 4, got {self_attn.ndim}")
    if cross_attn.ndim != 3:
        raise ShapeError(f"cross-attention must be rank 3, got {cross_attn.ndim}")
    h, w, h2, w2 = self_attn.shape
    n, hc, wc = cross_attn.shape
    if (h, w) != (h2, w2) or (hc, wc) != (h, w):
        raise ShapeError(
            f"attention grids disagree: self {self_attn.shape}, cross {cross_attn.shape}"
        )
    if not 0 <= token < n:
        raise ShapeError(f"token index {token} outside [0, {n})")
    fg = np.einsum("hwxy,xy->hw", self_attn, cross_attn[token])
    lo, hi = fg.min(), fg.max()
    if hi - lo == 0.0:
        normalized = np.full_like(fg, 0.5)
    else:
        normalized = (fg - lo) / (hi - lo)
    return SoftMask(1.0 - normalized)
