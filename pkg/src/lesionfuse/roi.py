"""Lesion localization: find the lesion area and return a padded crop.

The detector is classical: grayscale -> 3x3 median smoothing -> Otsu
threshold (lesions are the darker side of the split) -> largest 4-connected
component -> bounding box with a 10% margin.  Precise boundaries are not
needed downstream, only a crop with enough lesion in it, so this never
fails: degenerate inputs fall back to the full image.
"""

import math
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .imaging import to_grayscale


class Rect(NamedTuple):
    x: int
    y: int
    w: int
    h: int


def _check_gray(gray: np.ndarray) -> np.ndarray:
    gray = np.asarray(gray)
    if gray.ndim != 2 or gray.dtype != np.uint8 or gray.size == 0:
        raise ValueError(f"expected non-empty (h, w) uint8 image, got {gray.shape} {gray.dtype}")
    return gray


def otsu_threshold(gray: np.ndarray) -> int:
    """Threshold t maximizing between-class variance over the 256-bin histogram.

    Pixels with value <= t are foreground.  Ties pick the smallest t; a
    constant image returns that constant (whole image foreground).
    """
    gray = _check_gray(gray)
    if gray.min() == gray.max():
        return int(gray.flat[0])
    hist = np.bincount(gray.ravel(), minlength=256).astype(np.float64)
    w0 = np.cumsum(hist)  # pixels with value <= t
    w1 = w0[-1] - w0
    s0 = np.cumsum(hist * np.arange(256))  # sum of values <= t
    s1 = s0[-1] - s0
    between = np.zeros(256)
    valid = (w0 > 0) & (w1 > 0)
    mu0 = s0[valid] / w0[valid]
    mu1 = s1[valid] / w1[valid]
    between[valid] = w0[valid] * w1[valid] * (mu0 - mu1) ** 2
    return int(np.argmax(between))


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Keep only the largest 4-connected foreground component.

    Size ties keep the component containing the smallest row-major index
    (scipy labels components in raster-scan order).  Empty in, empty out.
    """
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask)  # default structure = 4-connectivity
    if n == 0:
        return np.zeros_like(mask)
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return labels == int(np.argmax(sizes))


def lesion_bbox(mask: np.ndarray, margin_frac: float = 0.1) -> Rect:
    """Tight foreground bounding box expanded by ceil(margin_frac * max(w, h))
    per side and clamped to the image.  An empty mask yields the full frame.
    """
    mask = np.asarray(mask, dtype=bool)
    height, width = mask.shape
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        return Rect(0, 0, width, height)
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())
    # round before ceil so e.g. 0.1 * 30 = 3.0000000000000004 stays 3
    margin = math.ceil(round(margin_frac * max(x1 - x0 + 1, y1 - y0 + 1), 9))
    x0 = max(0, x0 - margin)
    y0 = max(0, y0 - margin)
    x1 = min(width - 1, x1 + margin)
    y1 = min(height - 1, y1 + margin)
    return Rect(x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def crop_lesion(
    img: np.ndarray,
    margin_frac: float = 0.1,
    invert_foreground: bool = False,
    median_filter: bool = True,
) -> np.ndarray:
    """Locate the lesion in an RGB image and return the padded crop.

    Set ``invert_foreground`` for imagery where the lesion is brighter than
    the surrounding skin.  Never fails: degenerate masks crop the full image.
    """
    gray = to_grayscale(img)
    if median_filter:
        gray = ndimage.median_filter(gray, size=3, mode="reflect")
    t = otsu_threshold(gray)
    mask = (gray > t) if invert_foreground else (gray <= t)
    mask = largest_component(mask)
    rect = lesion_bbox(mask, margin_frac)
    return np.ascontiguousarray(img[rect.y : rect.y + rect.h, rect.x : rect.x + rect.w])
