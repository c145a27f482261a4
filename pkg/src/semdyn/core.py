"""Domain types and pixel-level primitives shared by every stage.

Conventions used throughout the package:

* Frames are ``(H, W, 3)`` float arrays with values in ``[0, 1]``.
* Flow fields are ``(H, W, 2)`` float arrays holding ``(dx, dy)`` backward
  displacements in pixels, i.e. pixel ``p`` of frame ``t`` came from
  ``p + flow[p]`` in frame ``t - 1``.
* Semantic maps are ``(H, W)`` integer arrays with labels in ``1..C``.
  Anything indexed by class (mask stacks, probability channels, network
  groups) uses 0-based slots, so slot ``k`` holds class ``k + 1``.
* Soft semantic maps are ``(H, W, C)`` arrays whose last axis is a
  probability simplex.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


class ShapeError(ValueError):
    """Raised when array shapes disagree with the operation contract."""


class NumericError(ArithmeticError):
    """Raised for non-finite coordinates or flows."""


@dataclass(frozen=True)
class ClassDecomposition:
    masks: np.ndarray  # (C, H, W) uint8, one-hot along axis 0
    masked_flows: np.ndarray  # (C, H, W, 2)

    @property
    def num_classes(self) -> int:
        return self.masks.shape[0]


@dataclass(frozen=True)
class BoundaryWeightMap:
    weights: np.ndarray  # (H, W) >= 1
    alpha: float
    gaussian_variance: float


@dataclass
class Clip:
    """Aligned frames, flows and semantic maps of one video clip.

    The first ``observed_len`` entries are the past; the remaining
    ``horizon`` entries are the future to be predicted.
    """

    frames: np.ndarray  # (L, H, W, 3)
    flows: np.ndarray  # (L, H, W, 2)
    maps: np.ndarray  # (L, H, W) labels in 1..C
    num_classes: int
    observed_len: int
    horizon: int = field(default=0)

    def __post_init__(self):
        length = self.frames.shape[0]
        if self.horizon == 0:
            self.horizon = length - self.observed_len
        if self.observed_len < 1 or self.horizon < 1:
            raise ValueError("clip needs observed_len >= 1 and horizon >= 1")
        if self.observed_len + self.horizon != length:
            raise ShapeError(
                f"clip length {length} != observed_len + horizon "
                f"({self.observed_len} + {self.horizon})"
            )
        hw = self.frames.shape[1:3]
        if self.flows.shape != (length, *hw, 2) or self.maps.shape != (length, *hw):
            raise ShapeError("frames, flows and maps must share length, H and W")

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


def soft_to_labels(probs: np.ndarray) -> np.ndarray:
    """Harden a soft map (..., C) into 1-based labels by argmax."""
    return np.argmax(probs, axis=-1).astype(np.int64) + 1


def labels_to_onehot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """1-based labels (...) -> one-hot (..., C) float array."""
    eye = np.eye(num_classes, dtype=np.float64)
    return eye[np.asarray(labels) - 1]


def decompose(labels: np.ndarray, flow: np.ndarray, num_classes: int | None = None) -> ClassDecomposition:
    """Split a semantic map and flow field into per-class masks and masked flows."""
    labels = np.asarray(labels)
    flow = np.asarray(flow)
    if labels.ndim != 2 or flow.shape != (*labels.shape, 2):
        raise ShapeError(f"map {labels.shape} and flow {flow.shape} are not aligned")
    if num_classes is None:
        num_classes = int(labels.max())
    if labels.min() < 1 or labels.max() > num_classes:
        raise ValueError(f"labels must lie in 1..{num_classes}")
    classes = np.arange(1, num_classes + 1)[:, None, None]
    masks = (labels[None] == classes).astype(np.uint8)
    masked_flows = flow[None] * masks[..., None]
    return ClassDecomposition(masks=masks, masked_flows=masked_flows)


def pixel_grid(height: int, width: int) -> np.ndarray:
    """(H, W, 2) array of pixel-center coordinates in (x, y) order."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return np.stack([xs, ys], axis=-1)


def bilinear_sample(image: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Sample ``image`` at real-valued ``(x, y)`` coordinates.

    Coordinates outside the image are clamped to the border, so sampling
    at zero displacement is exact everywhere, including the edges.
    """
    image = np.asarray(image, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    squeeze = image.ndim == 2
    if squeeze:
        image = image[..., None]
    if coords.shape[-1] != 2:
        raise ShapeError(f"coords must end in a (x, y) axis, got {coords.shape}")
    if not np.all(np.isfinite(coords)):
        raise NumericError("non-finite sampling coordinates")
    height, width = image.shape[:2]
    x = np.clip(coords[..., 0], 0.0, width - 1)
    y = np.clip(coords[..., 1], 0.0, height - 1)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    wx = (x - x0)[..., None]
    wy = (y - y0)[..., None]
    top = image[y0, x0] * (1 - wx) + image[y0, x1] * wx
    bottom = image[y1, x0] * (1 - wx) + image[y1, x1] * wx
    out = top * (1 - wy) + bottom * wy
    return out[..., 0] if squeeze else out


def nearest_sample(labels: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Nearest-neighbor lookup for integer fields, border-clamped."""
    coords = np.asarray(coords, dtype=np.float64)
    if not np.all(np.isfinite(coords)):
        raise NumericError("non-finite sampling coordinates")
    height, width = labels.shape[:2]
    xi = np.clip(np.floor(coords[..., 0] + 0.5), 0, width - 1).astype(np.intp)
    yi = np.clip(np.floor(coords[..., 1] + 0.5), 0, height - 1).astype(np.intp)
    return labels[yi, xi]


def label_edges(labels: np.ndarray) -> np.ndarray:
    """Binarized forward-difference gradient of an integer label field."""
    labels = np.asarray(labels)
    edges = np.zeros(labels.shape, dtype=bool)
    edges[:, :-1] |= labels[:, 1:] != labels[:, :-1]
    edges[:-1, :] |= labels[1:, :] != labels[:-1, :]
    return edges


def gaussian_kernel_1d(variance: float) -> np.ndarray:
    if variance <= 0:
        raise ValueError("variance must be positive")
    radius = int(math.ceil(3 * math.sqrt(variance)))
    r = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(r**2) / (2 * variance))
    return g / g.sum()


def gaussian_kernel(variance: float) -> np.ndarray:
    """Normalized 2-D Gaussian, truncated at three standard deviations."""
    g = gaussian_kernel_1d(variance)
    return np.outer(g, g)


def boundary_weights(labels: np.ndarray, alpha: float = 5.0, variance: float = 9.0) -> BoundaryWeightMap:
    """Per-pixel cross-entropy weights ``1 + alpha * (G * edges)``."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    edges = label_edges(labels).astype(np.float64)
    # The truncated kernel is an outer product, so filter rows then columns.
    g = gaussian_kernel_1d(variance)
    smooth = ndimage.convolve1d(edges, g, axis=0, mode="constant", cval=0.0)
    smooth = ndimage.convolve1d(smooth, g, axis=1, mode="constant", cval=0.0)
    return BoundaryWeightMap(weights=1.0 + alpha * smooth, alpha=alpha, gaussian_variance=variance)


def boundary_band(labels: np.ndarray, width: int = 3) -> np.ndarray:
    """Pixels within ``width`` (chessboard distance) of a class boundary."""
    labels = np.asarray(labels)
    edges = np.zeros(labels.shape, dtype=bool)
    dx = labels[:, 1:] != labels[:, :-1]
    dy = labels[1:, :] != labels[:-1, :]
    edges[:, :-1] |= dx
    edges[:, 1:] |= dx
    edges[:-1, :] |= dy
    edges[1:, :] |= dy
    if width <= 0 or not edges.any():
        return edges
    return ndimage.binary_dilation(edges, structure=np.ones((3, 3), bool), iterations=width)
