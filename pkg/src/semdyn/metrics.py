"""Image, segmentation and flow metrics.

SSIM uses an 11-tap Gaussian window (sigma 1.5) with the usual constants
K1 = 0.01, K2 = 0.03 and unit data range. MS-SSIM follows the original
five-scale definition; contrast-structure terms are clipped at zero so the
fractional powers stay real.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .core import boundary_band

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
PSNR_CAP = 100.0
_SIGMA = 1.5
_TRUNCATE = 3.5  # radius 5 -> 11-tap window
_PAD = 5


def psnr(pred: np.ndarray, target: np.ndarray, cap: float = PSNR_CAP) -> float:
    mse = float(np.mean((np.asarray(pred, np.float64) - np.asarray(target, np.float64)) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * np.log10(1.0 / mse))


def _ssim_maps(a: np.ndarray, b: np.ndarray):
    """Per-pixel SSIM and contrast-structure maps for 2-D images."""
    c1, c2 = 0.01**2, 0.03**2

    def blur(x):
        return ndimage.gaussian_filter(x, _SIGMA, truncate=_TRUNCATE, mode="reflect")

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a**2
    var_b = blur(b * b) - mu_b**2
    cov = blur(a * b) - mu_a * mu_b
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    lum = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    return lum * cs, cs


def _channels(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[..., None] if x.ndim == 2 else x


def ssim(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean SSIM over channels; borders within the window radius are ignored
    when the image is large enough."""
    a, b = _channels(pred), _channels(target)
    vals = []
    for ch in range(a.shape[-1]):
        smap, _ = _ssim_maps(a[..., ch], b[..., ch])
        if min(smap.shape) > 2 * _PAD:
            smap = smap[_PAD:-_PAD, _PAD:-_PAD]
        vals.append(smap.mean())
    return float(np.mean(vals))


def _downsample(x: np.ndarray) -> np.ndarray:
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_ssim(pred: np.ndarray, target: np.ndarray, weights=MS_SSIM_WEIGHTS) -> float:
    a, b = _channels(pred), _channels(target)
    scores = []
    for ch in range(a.shape[-1]):
        x, y = a[..., ch], b[..., ch]
        value = 1.0
        for j, w in enumerate(weights):
            smap, cs = _ssim_maps(x, y)
            last = j == len(weights) - 1
            term = max(float((smap if last else cs).mean()), 0.0)
            value *= term**w
            if not last:
                if min(x.shape) < 2:
                    raise ValueError("image too small for the requested number of scales")
                x, y = _downsample(x), _downsample(y)
        scores.append(value)
    return float(np.mean(scores))


def confusion_matrix(pred: np.ndarray, target: np.ndarray, num_classes: int) -> np.ndarray:
    """Rows = true class, columns = predicted class (0-based slots)."""
    idx = (np.asarray(target).ravel() - 1) * num_classes + (np.asarray(pred).ravel() - 1)
    return np.bincount(idx, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def mean_iou(pred: np.ndarray, target: np.ndarray, num_classes: int) -> float:
    """Mean IoU over classes present in either map."""
    cm = confusion_matrix(pred, target, num_classes)
    inter = np.diag(cm)
    union = cm.sum(0) + cm.sum(1) - inter
    present = union > 0
    return float(np.mean(inter[present] / union[present]))


def endpoint_error(pred_flow: np.ndarray, true_flow: np.ndarray, region: np.ndarray | None = None) -> float:
    err = np.linalg.norm(np.asarray(pred_flow) - np.asarray(true_flow), axis=-1)
    if region is not None:
        if not region.any():
            return float("nan")
        err = err[region]
    return float(err.mean())


def boundary_endpoint_error(pred_flow, true_flow, true_map, width: int = 3) -> float:
    """EPE restricted to pixels within ``width`` of a true class boundary."""
    return endpoint_error(pred_flow, true_flow, boundary_band(true_map, width))
