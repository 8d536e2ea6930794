"""Image decoding, grayscale conversion, resizing, patch extraction, augmentation.

All rasters are 8-bit numpy arrays: RGB images have shape (h, w, 3) in RGB
channel order, grayscale images have shape (h, w).  Data is row-major.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PilImage

from .errors import DataError

PATCH_SIDE = 256
PATCH_STRIDE = 128

# ITU-R BT.601 luma weights
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class Patch:
    """A 256x256 RGB window cut from a resized lesion crop.

    ``source_rect`` is (x, y, w, h) of the window in the coordinate frame of
    the crop after its shorter side was rescaled to 256.
    """

    image: np.ndarray
    source_rect: tuple[int, int, int, int]


def _check_rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError(f"expected (h, w, 3) uint8 image, got {img.shape} {img.dtype}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image has a zero dimension")
    return img


def load_image(path) -> np.ndarray:
    """Decode a PNG or JPEG file into an (h, w, 3) uint8 RGB array.

    Grayscale sources are expanded to three identical channels.  Raises
    DataError for unreadable files, unsupported formats, or empty images.
    """
    p = Path(path)
    if not p.is_file():
        raise DataError(f"image file not found: {p}")
    try:
        with PilImage.open(p) as im:
            if im.format not in ("PNG", "JPEG"):
                raise DataError(f"unsupported image format {im.format!r}: {p}")
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except DataError:
        raise
    except Exception as exc:
        raise DataError(f"cannot decode image {p}: {exc}") from exc
    if arr.ndim != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DataError(f"image has a zero dimension: {p}")
    return arr


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """BT.601 luma: round(0.299 R + 0.587 G + 0.114 B), as (h, w) uint8."""
    img = _check_rgb(img)
    y = img.astype(np.float64) @ _LUMA
    return np.clip(np.floor(y + 0.5), 0, 255).astype(np.uint8)


def _resize_plane(plane: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Bilinear resize of one 2-D plane with half-pixel-center mapping."""
    h, w = plane.shape
    x = (np.arange(new_w) + 0.5) * (w / new_w) - 0.5
    y = (np.arange(new_h) + 0.5) * (h / new_h) - 0.5
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = (y - y0)[:, None]
    p = plane.astype(np.float64)
    top = p[np.ix_(y0, x0)] * (1.0 - fx) + p[np.ix_(y0, x1)] * fx
    bot = p[np.ix_(y1, x0)] * (1.0 - fx) + p[np.ix_(y1, x1)] * fx
    return top * (1.0 - fy) + bot * fy


def resize_bilinear(img: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Bilinear resize of an RGB (h, w, 3) or grayscale (h, w) uint8 image.

    Sample coordinates use half-pixel centers; interpolated values are
    rounded half-up back to uint8, so outputs are bit-reproducible.
    """
    if new_w < 1 or new_h < 1:
        raise ValueError("target dimensions must be >= 1")
    img = np.asarray(img)
    if img.ndim == 2:
        out = _resize_plane(img, new_w, new_h)
    elif img.ndim == 3 and img.shape[2] == 3:
        out = np.stack(
            [_resize_plane(img[:, :, c], new_w, new_h) for c in range(3)], axis=2
        )
    else:
        raise ValueError(f"expected (h, w) or (h, w, 3) image, got {img.shape}")
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def _window_origins(size: int) -> list[int]:
    """Stride-128 window origins plus a final window flush with the far edge."""
    last = size - PATCH_SIDE
    origins = list(range(0, last + 1, PATCH_STRIDE))
    if origins[-1] != last:
        origins.append(last)
    return origins


def extract_patches(img: np.ndarray) -> list[Patch]:
    """Cut 256x256 patches from an image.

    The image is first rescaled so its shorter side is 256 (aspect ratio
    preserved, longer side rounded), then 256x256 windows are tiled with
    stride 128 in each dimension plus a window flush against each far edge.
    Every pixel of the rescaled image is covered and at least one patch is
    always returned.
    """
    img = _check_rgb(img)
    h, w = img.shape[:2]
    if min(h, w) != PATCH_SIDE:
        scale = PATCH_SIDE / min(h, w)
        if h <= w:
            nh, nw = PATCH_SIDE, max(int(np.floor(w * scale + 0.5)), PATCH_SIDE)
        else:
            nh, nw = max(int(np.floor(h * scale + 0.5)), PATCH_SIDE), PATCH_SIDE
        img = resize_bilinear(img, nw, nh)
        h, w = img.shape[:2]
    patches = []
    for y in _window_origins(h):
        for x in _window_origins(w):
            window = np.ascontiguousarray(img[y : y + PATCH_SIDE, x : x + PATCH_SIDE])
            patches.append(Patch(window, (x, y, PATCH_SIDE, PATCH_SIDE)))
    return patches


def augment(img: np.ndarray, label: int) -> list[tuple[np.ndarray, int]]:
    """The 8 dihedral transforms of an image, each paired with the label.

    Order: the 4 rotations (0, 90, 180, 270 degrees) of the original, then
    the 4 rotations of its horizontal flip.  Element 0 is the original.
    """
    img = _check_rgb(img)
    out = []
    for flipped in (False, True):
        base = img[:, ::-1] if flipped else img
        for k in range(4):
            out.append((np.ascontiguousarray(np.rot90(base, k)), label))
    return out
