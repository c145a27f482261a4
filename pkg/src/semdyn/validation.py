"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""
from __future__ import annotations

import numpy as np

from .core import NumericError, ShapeError


def check_frame(frame, name: str = "frame") -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim < 3 or frame.shape[-1] != 3:
        raise ShapeError(f"{name} must end in an RGB axis, got {frame.shape}")
    if not np.all(np.isfinite(frame)):
        raise NumericError(f"{name} contains non-finite values")
    if frame.min() < 0.0 or frame.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return frame


def check_flow(flow, name: str = "flow") -> np.ndarray:
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim < 3 or flow.shape[-1] != 2:
        raise ShapeError(f"{name} must end in a (dx, dy) axis, got {flow.shape}")
    if not np.all(np.isfinite(flow)):
        raise NumericError(f"{name} contains non-finite values")
    return flow


def check_semantic_map(labels, num_classes: int | None = None, name: str = "map") -> np.ndarray:
    labels = np.asarray(labels)
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise ValueError(f"{name} must hold integer labels")
        labels = labels.astype(np.int64)
    if labels.size and labels.min() < 1:
        raise ValueError(f"{name} labels are 1-based; found {labels.min()}")
    if num_classes is not None and labels.size and labels.max() > num_classes:
        raise ValueError(f"{name} has label {labels.max()} > num_classes={num_classes}")
    return labels.astype(np.int64)


def check_soft_map(probs, atol: float = 1e-6, name: str = "soft map") -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.min() < 0:
        raise ValueError(f"{name} has negative probabilities")
    if not np.allclose(probs.sum(-1), 1.0, atol=atol):
        raise ValueError(f"{name} channels do not sum to 1")
    return probs


def check_sequences(maps, flows, num_classes: int | None = None, frames=None):
    """Validate batched sequences ``(N, L, H, W)`` / ``(N, L, H, W, 2)``.

    Unbatched ``(L, H, W)`` input is promoted to a batch of one.
    """
    maps = check_semantic_map(maps, num_classes)
    flows = check_flow(flows)
    if maps.ndim == 3:
        maps, flows = maps[None], flows[None]
        if frames is not None:
            frames = np.asarray(frames)[None]
    if maps.ndim != 4 or flows.shape != (*maps.shape, 2):
        raise ShapeError(f"maps {maps.shape} and flows {flows.shape} are not aligned")
    if frames is not None:
        frames = check_frame(frames)
        if frames.shape != (*maps.shape, 3):
            raise ShapeError(f"frames {frames.shape} do not match maps {maps.shape}")
        return maps, flows, frames
    return maps, flows
