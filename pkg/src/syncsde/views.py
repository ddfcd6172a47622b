"""Canvas/patch index mappings and their algebra.

Every view kind reduces to one canonical form: an int array giving, for each
patch cell, the canvas cell it reads (or -1 when the patch cell is not backed
by the canvas). Channels share the spatial mapping. Partial maps fill
unbacked cells with 0 and report coverage through an explicit binary mask, so
the fill value stays inert under downstream mask multiplication.

rotate90 is counterclockwise; rotate270 is clockwise. skew cyclically shifts
row i left by offset*i columns, which keeps the map bijective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .grid import LatentGrid


@dataclass(frozen=True)
class BinaryMask:
    """Spatial 0/1 mask, shape (H, W) for images or (L,) for sequences."""

    data: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.ndim not in (1, 2):
            raise ShapeError(f"mask must be 1D or 2D, got shape {raw.shape}")
        if not np.all((raw == 0) | (raw == 1)):
            raise ShapeError("mask entries must be exactly 0 or 1")
        arr = np.ascontiguousarray(raw, dtype=np.uint8)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def complement(self) -> "BinaryMask":
        return BinaryMask(1 - self.data)


@dataclass(frozen=True)
class ViewMap:
    """Mapping from canvas coordinates to patch coordinates.

    patch_src[p] is the flat canvas index read by flat patch index p, or -1.
    Build instances through the constructor functions below.
    """

    kind: str
    canvas_shape: tuple[int, ...]
    patch_shape: tuple[int, ...]
    patch_src: np.ndarray

    def __post_init__(self):
        src = np.ascontiguousarray(self.patch_src, dtype=np.int64)
        n_canvas = int(np.prod(self.canvas_shape[1:]))
        if src.shape != (int(np.prod(self.patch_shape[1:])),):
            raise ShapeError("patch_src length does not match patch spatial size")
        if np.any(src < -1) or np.any(src >= n_canvas):
            raise ShapeError("patch_src indexes outside the canvas")
        backed = src[src >= 0]
        if backed.size != np.unique(backed).size:
            raise ShapeError("view map must be injective on the canvas")
        src.setflags(write=False)
        object.__setattr__(self, "patch_src", src)

    @property
    def is_bijective(self) -> bool:
        return (
            self.patch_src.size == int(np.prod(self.canvas_shape[1:]))
            and not np.any(self.patch_src < 0)
        )

    def coverage_mask(self) -> BinaryMask:
        """Canvas cells covered by this view's patch."""
        flat = np.zeros(int(np.prod(self.canvas_shape[1:])), dtype=np.uint8)
        flat[self.patch_src[self.patch_src >= 0]] = 1
        return BinaryMask(flat.reshape(self.canvas_shape[1:]))


def _spatial(shape: tuple[int, ...]) -> tuple[int, ...]:
    if len(shape) not in (2, 3):
        raise ShapeError(f"canvas shape must be (C, L) or (C, H, W), got {shape}")
    return shape[1:]


def identity(canvas_shape: tuple[int, ...]) -> ViewMap:
    n = int(np.prod(_spatial(canvas_shape)))
    return ViewMap("identity", canvas_shape, canvas_shape, np.arange(n))


def crop(canvas_shape: tuple[int, ...], offset: tuple[int, int], size: tuple[int, int]) -> ViewMap:
    c, h, w = canvas_shape
    r0, c0 = offset
    ph, pw = size
    if r0 < 0 or c0 < 0 or r0 + ph > h or c0 + pw > w:
        raise ConfigError("views.crop", f"window {offset}+{size} exceeds canvas {h}x{w}")
    rows = r0 + np.arange(ph)
    cols = c0 + np.arange(pw)
    src = (rows[:, None] * w + cols[None, :]).ravel()
    return ViewMap("crop", canvas_shape, (c, ph, pw), src)


def rotate90(canvas_shape: tuple[int, ...]) -> ViewMap:
    c, h, w = canvas_shape
    i, j = np.indices((w, h))
    src = (j * w + (w - 1 - i)).ravel()
    return ViewMap("rotate90", canvas_shape, (c, w, h), src)


def rotate180(canvas_shape: tuple[int, ...]) -> ViewMap:
    c, h, w = canvas_shape
    i, j = np.indices((h, w))
    src = ((h - 1 - i) * w + (w - 1 - j)).ravel()
    return ViewMap("rotate180", canvas_shape, (c, h, w), src)


def rotate270(canvas_shape: tuple[int, ...]) -> ViewMap:
    c, h, w = canvas_shape
    i, j = np.indices((w, h))
    src = ((h - 1 - j) * w + i).ravel()
    return ViewMap("rotate270", canvas_shape, (c, w, h), src)


def flip_vertical(canvas_shape: tuple[int, ...]) -> ViewMap:
    c, h, w = canvas_shape
    i, j = np.indices((h, w))
    src = ((h - 1 - i) * w + j).ravel()
    return ViewMap("flip-vertical", canvas_shape, (c, h, w), src)


def skew(canvas_shape: tuple[int, ...], column_offset_per_row: int) -> ViewMap:
    c, h, w = canvas_shape
    i, j = np.indices((h, w))
    src = (i * w + (j + column_offset_per_row * i) % w).ravel()
    return ViewMap("skew", canvas_shape, (c, h, w), src)


def segment1d(canvas_shape: tuple[int, ...], offset: int, length: int) -> ViewMap:
    c, total = canvas_shape
    if offset < 0 or offset + length > total:
        raise ConfigError("views.segment1d", f"segment [{offset}, {offset + length}) exceeds length {total}")
    return ViewMap("segment1d", canvas_shape, (c, length), offset + np.arange(length))


def table(
    canvas_shape: tuple[int, ...],
    patch_spatial: tuple[int, ...],
    pairs: np.ndarray,
) -> ViewMap:
    """Explicit injective map from (canvas_index, patch_index) rows."""
    pairs = np.asarray(pairs, dtype=np.int64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ConfigError("views.table", f"index pairs must be an (N, 2) array, got {pairs.shape}")
    n_patch = int(np.prod(patch_spatial))
    canvas_idx, patch_idx = pairs[:, 0], pairs[:, 1]
    if np.any(patch_idx < 0) or np.any(patch_idx >= n_patch):
        raise ConfigError("views.table", "patch_index outside the patch")
    if np.unique(patch_idx).size != patch_idx.size:
        raise ConfigError("views.table", "duplicate patch_index entries")
    src = np.full(n_patch, -1, dtype=np.int64)
    src[patch_idx] = canvas_idx
    return ViewMap("table", canvas_shape, (canvas_shape[0],) + tuple(patch_spatial), src)


def apply(view: ViewMap, canvas: LatentGrid) -> LatentGrid:
    """Project the canvas into the view's patch; unbacked cells read 0."""
    if canvas.shape != view.canvas_shape:
        raise ShapeError(f"canvas shape {canvas.shape} does not match map {view.canvas_shape}")
    flat = canvas.data.reshape(canvas.channels, -1)
    out = flat[:, np.clip(view.patch_src, 0, None)]
    out[:, view.patch_src < 0] = 0.0
    return LatentGrid(out.reshape(view.patch_shape), "patch")


def invert(view: ViewMap, patch: LatentGrid) -> tuple[LatentGrid, BinaryMask]:
    """Scatter patch content back onto the canvas; zeros where uncovered."""
    if patch.shape != view.patch_shape:
        raise ShapeError(f"patch shape {patch.shape} does not match map {view.patch_shape}")
    n_canvas = int(np.prod(view.canvas_shape[1:]))
    out = np.zeros((patch.channels, n_canvas))
    backed = view.patch_src >= 0
    out[:, view.patch_src[backed]] = patch.data.reshape(patch.channels, -1)[:, backed]
    cover = np.zeros(n_canvas, dtype=np.uint8)
    cover[view.patch_src[backed]] = 1
    return (
        LatentGrid(out.reshape(view.canvas_shape), "canvas"),
        BinaryMask(cover.reshape(view.canvas_shape[1:])),
    )


def transfer(src: ViewMap, dst: ViewMap, patch: LatentGrid) -> tuple[LatentGrid, BinaryMask]:
    """Carry src-view content into dst-view coordinates (dst of src-inverse)."""
    if src.canvas_shape != dst.canvas_shape:
        raise ShapeError(
            f"views live on different canvases: {src.canvas_shape} vs {dst.canvas_shape}"
        )
    canvas, cover = invert(src, patch)
    out = apply(dst, canvas)
    cover_flat = cover.data.ravel()
    got = np.where(dst.patch_src >= 0, cover_flat[np.clip(dst.patch_src, 0, None)], 0)
    return out, BinaryMask(got.astype(np.uint8).reshape(dst.patch_shape[1:]))


def compose_phi(views: list[ViewMap], patches: list[LatentGrid]) -> LatentGrid:
    """Overlay inverted patches on the canvas; later entries win on overlap."""
    if not views:
        raise ShapeError("compose_phi needs at least one view")
    if len(views) != len(patches):
        raise ShapeError(f"{len(views)} views but {len(patches)} patches")
    canvas_shape = views[0].canvas_shape
    out = np.zeros(canvas_shape)
    for view, patch in zip(views, patches):
        if view.canvas_shape != canvas_shape:
            raise ShapeError("compose_phi views must share one canvas shape")
        back, cover = invert(view, patch)
        sel = cover.data.astype(bool)
        out[:, sel] = back.data[:, sel]
    return LatentGrid(out, "canvas")
