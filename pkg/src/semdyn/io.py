"""Readers and writers for frames, flow fields, semantic maps and masks.

Semantic maps are stored as single-channel 8-bit PNGs whose pixel value is
the 1-based class label, the same numbering used by in-memory maps.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

FLO_MAGIC = 202021.25


def read_flo(path) -> np.ndarray:
    """Read a Middlebury ``.flo`` file into an (H, W, 2) float32 array."""
    with open(path, "rb") as fh:
        magic = np.fromfile(fh, np.float32, count=1)
        if magic.size != 1 or magic[0] != np.float32(FLO_MAGIC):
            raise ValueError(f"{path}: bad .flo magic number")
        width, height = (int(v) for v in np.fromfile(fh, np.int32, count=2))
        data = np.fromfile(fh, np.float32, count=2 * width * height)
    if data.size != 2 * width * height:
        raise ValueError(f"{path}: truncated .flo payload")
    return data.reshape(height, width, 2)


def write_flo(path, flow: np.ndarray) -> None:
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must be (H, W, 2), got {flow.shape}")
    height, width = flow.shape[:2]
    with open(path, "wb") as fh:
        np.array([FLO_MAGIC], np.float32).tofile(fh)
        np.array([width, height], np.int32).tofile(fh)
        flow.tofile(fh)


def write_frame(path, frame: np.ndarray) -> None:
    pixels = np.clip(np.rint(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(pixels, mode="RGB").save(path)


def read_frame(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_semantic_map(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.min() < 1 or labels.max() > 255:
        raise ValueError("labels must lie in 1..255 for 8-bit PNG storage")
    Image.fromarray(labels.astype(np.uint8), mode="L").save(path)


def read_semantic_map(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.int64)


def write_mask(path, mask: np.ndarray, provenance: dict | None = None) -> None:
    """Boolean mask as PNG (0 / 255); provenance goes to a JSON sidecar."""
    Image.fromarray(np.where(np.asarray(mask), 255, 0).astype(np.uint8), mode="L").save(path)
    if provenance is not None:
        Path(path).with_suffix(".json").write_text(json.dumps(provenance))


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im) > 127


def _color_wheel() -> np.ndarray:
    # Segment lengths of the Middlebury wheel: RY, YG, GC, CB, BM, MR.
    ry, yg, gc, cb, bm, mr = 15, 6, 4, 11, 13, 6
    ramps = []
    for n, start, end in (
        (ry, (255, 0, 0), (255, 255, 0)),
        (yg, (255, 255, 0), (0, 255, 0)),
        (gc, (0, 255, 0), (0, 255, 255)),
        (cb, (0, 255, 255), (0, 0, 255)),
        (bm, (0, 0, 255), (255, 0, 255)),
        (mr, (255, 0, 255), (255, 0, 0)),
    ):
        frac = np.arange(n)[:, None] / n
        ramps.append(np.array(start) * (1 - frac) + np.array(end) * frac)
    return np.concatenate(ramps, axis=0)


def flow_to_color(flow: np.ndarray, max_norm: float | None = None) -> np.ndarray:
    """Colorize a flow field with the standard optical-flow color wheel (uint8 RGB)."""
    u = flow[..., 0].astype(np.float64)
    v = flow[..., 1].astype(np.float64)
    rad = np.sqrt(u**2 + v**2)
    if max_norm is None:
        max_norm = max(rad.max(), 1e-8)
    u, v, rad = u / max_norm, v / max_norm, rad / max_norm
    wheel = _color_wheel()
    ncols = wheel.shape[0]
    angle = np.arctan2(-v, -u) / np.pi
    fk = (angle + 1) / 2 * (ncols - 1)
    k0 = np.floor(fk).astype(int)
    k1 = (k0 + 1) % ncols
    f = (fk - k0)[..., None]
    col = ((1 - f) * wheel[k0] + f * wheel[k1]) / 255.0
    r = np.minimum(rad, 1.0)[..., None]
    col = 1 - r * (1 - col)
    col[rad > 1] *= 0.75
    return np.floor(255 * col).astype(np.uint8)
