"""Backward warping and dis-occlusion detection.

Two complementary criteria mark pixels of the target frame that cannot be
propagated from the source frame:

* occupancy: targets splat unit mass onto their source location; where a
  source pixel collects more than ``threshold`` mass, every contributor
  except the dominant one is flagged. Targets whose source falls outside
  the canvas have no source at all and are flagged as well.
* semantic consistency: a target is flagged when its predicted label
  differs from the source label found at ``p + flow(p)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import NumericError, ShapeError, bilinear_sample, nearest_sample, pixel_grid

OCCUPANCY_THRESHOLD = 1.5


@dataclass(frozen=True)
class DisocclusionMask:
    occupancy: np.ndarray  # (H, W) bool
    semantic: np.ndarray  # (H, W) bool

    @property
    def mask(self) -> np.ndarray:
        return self.occupancy | self.semantic

    @property
    def provenance(self) -> np.ndarray:
        """0 = co-visible, 1 = occupancy only, 2 = semantic only, 3 = both."""
        return self.occupancy.astype(np.uint8) + 2 * self.semantic.astype(np.uint8)

    def summary(self) -> dict:
        prov = self.provenance
        return {
            "occupancy": int((prov == 1).sum()),
            "semantic": int((prov == 2).sum()),
            "both": int((prov == 3).sum()),
        }


@dataclass(frozen=True)
class WarpedFrame:
    pixels: np.ndarray  # (H, W, 3)
    valid: np.ndarray  # (H, W) bool, complement of the dis-occlusion mask


def _check_flow(flow: np.ndarray) -> np.ndarray:
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[-1] != 2:
        raise ShapeError(f"flow must be (H, W, 2), got {flow.shape}")
    if not np.all(np.isfinite(flow)):
        raise NumericError("flow contains non-finite values")
    return flow


def warp_frame(src: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """``out[p] = src[p + flow[p]]`` with bilinear sampling."""
    flow = _check_flow(flow)
    if np.asarray(src).shape[:2] != flow.shape[:2]:
        raise ShapeError("frame and flow sizes differ")
    return bilinear_sample(src, pixel_grid(*flow.shape[:2]) + flow)


def source_pixels(flow: np.ndarray):
    """Nearest source pixel of every target and whether it lies on the canvas."""
    h, w = flow.shape[:2]
    q = pixel_grid(h, w) + flow
    xi = np.floor(q[..., 0] + 0.5).astype(np.intp)
    yi = np.floor(q[..., 1] + 0.5).astype(np.intp)
    inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    return q, xi, yi, inside


def detect_occupancy(
    flow: np.ndarray,
    pred_map: np.ndarray | None = None,
    prev_map: np.ndarray | None = None,
    threshold: float = OCCUPANCY_THRESHOLD,
    flag_outside: bool = True,
):
    """Bilinear splat occupancy and the targets it flags.

    Returns ``(occupancy, flags)``. The dominant contributor at an
    over-occupied source has the largest splat weight; ties go to the
    target whose predicted label agrees with the source label (when maps
    are given), then to the lowest raster index.
    """
    flow = _check_flow(flow)
    h, w = flow.shape[:2]
    q, xi, yi, inside = source_pixels(flow)

    x0 = np.floor(q[..., 0]).astype(np.intp)
    y0 = np.floor(q[..., 1]).astype(np.intp)
    fx = q[..., 0] - x0
    fy = q[..., 1] - y0
    tgt_index = np.arange(h * w).reshape(h, w)
    tgts, srcs, wgts = [], [], []
    for dy, dx, wt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (0, 1, fx * (1 - fy)),
        (1, 0, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        sx, sy = x0 + dx, y0 + dy
        ok = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h) & (wt > 0)
        tgts.append(tgt_index[ok])
        srcs.append(sy[ok] * w + sx[ok])
        wgts.append(wt[ok])
    tgt = np.concatenate(tgts)
    src = np.concatenate(srcs)
    wgt = np.concatenate(wgts)

    occupancy = np.zeros(h * w)
    np.add.at(occupancy, src, wgt)

    if pred_map is not None and prev_map is not None:
        agree = np.asarray(pred_map).ravel()[tgt] == np.asarray(prev_map).ravel()[src]
    else:
        agree = np.zeros(tgt.shape, dtype=bool)
    order = np.lexsort((tgt, ~agree, -wgt, src))
    first = np.ones(order.size, dtype=bool)
    first[1:] = src[order][1:] != src[order][:-1]
    dominant = np.full(h * w, -1, dtype=np.intp)
    dominant[src[order][first]] = tgt[order][first]

    nearest = np.where(inside, yi * w + xi, 0)
    flags = inside & (occupancy[nearest] > threshold) & (dominant[nearest] != tgt_index)
    if flag_outside:
        flags |= ~inside
    return occupancy.reshape(h, w), flags


def detect_semantic(pred_map: np.ndarray, prev_map: np.ndarray, flow: np.ndarray, warped: bool = True) -> np.ndarray:
    """Flag targets whose predicted label disagrees with the source label.

    With ``warped=False`` the comparison is made at the same pixel
    position instead of at ``p + flow(p)``.
    """
    pred_map = np.asarray(pred_map)
    prev_map = np.asarray(prev_map)
    flow = _check_flow(flow)
    if pred_map.shape != prev_map.shape or pred_map.shape != flow.shape[:2]:
        raise ShapeError("maps and flow must share H and W")
    if not warped:
        return pred_map != prev_map
    src_labels = nearest_sample(prev_map, pixel_grid(*flow.shape[:2]) + flow)
    return pred_map != src_labels


def detect_disocclusion(
    pred_map: np.ndarray,
    prev_map: np.ndarray,
    flow: np.ndarray,
    threshold: float = OCCUPANCY_THRESHOLD,
    warped: bool = True,
) -> DisocclusionMask:
    """Union of the occupancy and semantic-consistency criteria."""
    _, occ = detect_occupancy(flow, pred_map, prev_map, threshold)
    sem = detect_semantic(pred_map, prev_map, flow, warped=warped)
    return DisocclusionMask(occupancy=occ, semantic=sem)
