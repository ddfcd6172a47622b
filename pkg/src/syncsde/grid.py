"""Latent tensors carried through the sampler.

A LatentGrid is an immutable float64 array of shape (channels, height, width)
for images or (channels, length) for 1D sequences, tagged with the space it
lives in (full canvas vs. model-sized patch). Every public operation in this
package returns grids with finite entries only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

Space = str  # "canvas" | "patch"

_SPACES = ("canvas", "patch")


@dataclass(frozen=True)
class LatentGrid:
    """Immutable real-valued tensor with explicit channel-first shape."""

    data: np.ndarray
    space: Space = "canvas"

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim not in (2, 3):
            raise ShapeError(
                f"grid must be (channels, length) or (channels, height, width), got shape {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ShapeError("grid contains non-finite entries")
        if self.space not in _SPACES:
            raise ShapeError(f"unknown grid space {self.space!r}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        """(height, width) for images, (length,) for sequences."""
        return self.data.shape[1:]

    def with_data(self, data: np.ndarray) -> "LatentGrid":
        """New grid with the same space tag."""
        return LatentGrid(data, self.space)


def zeros(shape: tuple[int, ...], space: Space = "canvas") -> LatentGrid:
    return LatentGrid(np.zeros(shape), space)


def constant(shape: tuple[int, ...], value: float, space: Space = "canvas") -> LatentGrid:
    return LatentGrid(np.full(shape, float(value)), space)


def check_same_shape(a: LatentGrid, b: LatentGrid, what: str = "operands") -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what} have mismatched shapes {a.shape} vs {b.shape}")
