"""PNG visualizations of predictions: frame grids, colorized flow, dis-occlusion overlays."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from ..io import flow_to_color

PALETTE = np.array(
    [[0, 0, 0], [128, 64, 128], [220, 20, 60], [0, 0, 142], [250, 170, 30], [107, 142, 35], [70, 130, 180]],
    dtype=np.uint8,
)


def to_uint8(frame: np.ndarray) -> np.ndarray:
    return (np.clip(np.asarray(frame, np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def colorize_labels(labels: np.ndarray) -> np.ndarray:
    return PALETTE[np.asarray(labels) % len(PALETTE)]


def overlay_mask(frame: np.ndarray, mask: np.ndarray, color=(255, 0, 255), opacity: float = 0.6) -> np.ndarray:
    img = to_uint8(frame).astype(np.float64) if frame.dtype != np.uint8 else frame.astype(np.float64)
    m = np.asarray(mask, bool)[..., None]
    out = np.where(m, (1 - opacity) * img + opacity * np.asarray(color, np.float64), img)
    return out.astype(np.uint8)


def grid(rows: list[list[np.ndarray]], pad: int = 2) -> np.ndarray:
    """Tile equally sized uint8 RGB tiles into one image."""
    h, w = rows[0][0].shape[:2]
    ncol = max(len(r) for r in rows)
    out = np.full((len(rows) * (h + pad) + pad, ncol * (w + pad) + pad, 3), 255, dtype=np.uint8)
    for i, row in enumerate(rows):
        for j, tile in enumerate(row):
            y, x = pad + i * (h + pad), pad + j * (w + pad)
            out[y : y + h, x : x + w] = tile
    return out


def save_png(path, image: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image).save(path)
    return path


def prediction_panel(pred: dict, index: int, true_frames=None, true_maps=None, true_flows=None) -> np.ndarray:
    """One clip: rows of predicted frames, labels, colorized flow and
    dis-occlusion overlays (plus ground truth rows when given)."""
    k = pred["frames"].shape[1]
    flows = pred["flows"][index]
    max_norm = float(np.linalg.norm(flows, axis=-1).max())
    if true_flows is not None:
        max_norm = max(max_norm, float(np.linalg.norm(true_flows[index], axis=-1).max()))
    max_norm = max(max_norm, 1e-6)
    labels = np.argmax(pred["probs"][index], axis=-1) + 1
    rows = [
        [to_uint8(pred["frames"][index, t]) for t in range(k)],
        [colorize_labels(labels[t]) for t in range(k)],
        [flow_to_color(flows[t], max_norm) for t in range(k)],
        [overlay_mask(pred["anchors"][index, t], pred["disocclusion"][index, t]) for t in range(k)],
    ]
    if true_frames is not None:
        rows.insert(1, [to_uint8(true_frames[index, t]) for t in range(k)])
    if true_maps is not None:
        rows.append([colorize_labels(true_maps[index, t]) for t in range(k)])
    if true_flows is not None:
        rows.append([flow_to_color(true_flows[index, t], max_norm) for t in range(k)])
    return grid(rows)
