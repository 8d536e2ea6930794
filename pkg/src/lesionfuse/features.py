"""Hand-crafted color and texture descriptors feeding the random forest branch.

Five feature families are extracted from a lesion crop and concatenated into
one fixed 512-length vector:

    color_histogram   48   16 uniform bins per RGB channel, each channel sums to 1
    color_moments      9   per channel: mean, population std, signed cbrt of the
                           third central moment
    glcm              20   4 offsets x 5 co-occurrence statistics
                           (contrast, correlation, energy, homogeneity, entropy)
    lbp              256   normalized histogram of 8-neighbor binary codes
    hog              144   9-bin gradient-orientation histograms on a 64x64
                           canvas, 16x16-pixel cells, 2x2-cell blocks with
                           stride 2, L2-Hys block normalization
    padding           35   zeros, keeping the total at 512

The crop is first resized to a canonical 128x128 canvas so the dimension is
identical for every input size.  All extractors are total: degenerate inputs
(too small for an offset or a neighborhood) contribute zero vectors.
"""

import json
import zlib

import numpy as np

from .imaging import resize_bilinear, to_grayscale

CANVAS_SIDE = 128
HOG_SIDE = 64
HOG_CELL = 16
HOG_BINS = 9
HOG_CLIP = 0.2
HOG_EPS = 1e-6

GLCM_LEVELS = 16
GLCM_OFFSETS = ((1, 0), (0, 1), (1, 1), (1, -1))  # (dx, dy)

FEATURE_DIM = 512
FEATURE_LAYOUT = (
    ("color_histogram", 0, 48),
    ("color_moments", 48, 9),
    ("glcm", 57, 20),
    ("lbp", 77, 256),
    ("hog", 333, 144),
    ("padding", 477, 35),
)

# clockwise from the top-left neighbor; first neighbor is the high bit
_LBP_NEIGHBORS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


def layout_hash(layout=FEATURE_LAYOUT) -> int:
    """CRC32 of the layout table; stored in model files so a forest trained
    against one extractor layout rejects vectors from another."""
    return zlib.crc32(json.dumps(list(layout)).encode("ascii"))


def color_histogram(img: np.ndarray) -> np.ndarray:
    """Concatenated per-channel 16-bin histograms (bin k covers [16k, 16k+16)),
    each channel normalized to sum 1."""
    img = np.asarray(img)
    bins = img // 16
    n = img.shape[0] * img.shape[1]
    parts = [np.bincount(bins[:, :, c].ravel(), minlength=16) / n for c in range(3)]
    return np.concatenate(parts)


def color_moments(img: np.ndarray) -> np.ndarray:
    """Per channel: mean, population standard deviation, and the
    sign-preserving cube root of the third central moment.  Order
    (mean, std, skew) for R, then G, then B."""
    img = np.asarray(img).astype(np.float64)
    out = np.empty(9)
    for c in range(3):
        ch = img[:, :, c]
        m = ch.mean()
        d = ch - m
        out[3 * c] = m
        out[3 * c + 1] = np.sqrt((d * d).mean())
        out[3 * c + 2] = np.cbrt((d * d * d).mean())
    return out


def glcm_compute(gray: np.ndarray, offset: tuple[int, int]) -> np.ndarray:
    """Symmetric normalized co-occurrence matrix at 16 gray levels.

    Luma is quantized as value // 16.  For every pixel p with p + (dx, dy)
    in bounds, both table[q(p), q(p+o)] and table[q(p+o), q(p)] are
    incremented; the table is then normalized to sum 1.
    """
    gray = np.asarray(gray)
    dx, dy = offset
    h, w = gray.shape
    if w <= abs(dx) or h <= abs(dy):
        raise ValueError(f"image {w}x{h} too small for offset {offset}")
    q = (gray // 16).astype(np.intp)
    r0, r1 = max(0, -dy), h - max(0, dy)
    c0, c1 = max(0, -dx), w - max(0, dx)
    a = q[r0:r1, c0:c1].ravel()
    b = q[r0 + dy : r1 + dy, c0 + dx : c1 + dx].ravel()
    counts = np.bincount(a * GLCM_LEVELS + b, minlength=GLCM_LEVELS * GLCM_LEVELS)
    table = counts.reshape(GLCM_LEVELS, GLCM_LEVELS).astype(np.float64)
    table += table.T
    return table / table.sum()


def _glcm_stats(table: np.ndarray) -> np.ndarray:
    i = np.arange(GLCM_LEVELS, dtype=np.float64)[:, None]
    j = np.arange(GLCM_LEVELS, dtype=np.float64)[None, :]
    contrast = float(((i - j) ** 2 * table).sum())
    pi = table.sum(axis=1)
    pj = table.sum(axis=0)
    mu_i = float((np.arange(GLCM_LEVELS) * pi).sum())
    mu_j = float((np.arange(GLCM_LEVELS) * pj).sum())
    sig_i = float(np.sqrt(((np.arange(GLCM_LEVELS) - mu_i) ** 2 * pi).sum()))
    sig_j = float(np.sqrt(((np.arange(GLCM_LEVELS) - mu_j) ** 2 * pj).sum()))
    if sig_i == 0.0 or sig_j == 0.0:
        correlation = 0.0
    else:
        correlation = float((((i - mu_i) * (j - mu_j) * table).sum()) / (sig_i * sig_j))
    energy = float((table * table).sum())
    homogeneity = float((table / (1.0 + np.abs(i - j))).sum())
    pos = table[table > 0.0]
    entropy = float(-(pos * np.log(pos)).sum())
    return np.array([contrast, correlation, energy, homogeneity, entropy])


def glcm_features(gray: np.ndarray) -> np.ndarray:
    """Contrast, correlation, energy, homogeneity, entropy for each of the
    four offsets (1,0), (0,1), (1,1), (1,-1); zeros if the image is smaller
    than 2x2."""
    gray = np.asarray(gray)
    if gray.shape[0] < 2 or gray.shape[1] < 2:
        return np.zeros(20)
    return np.concatenate([_glcm_stats(glcm_compute(gray, off)) for off in GLCM_OFFSETS])


def lbp_histogram(gray: np.ndarray) -> np.ndarray:
    """Normalized 256-bin histogram of local binary pattern codes.

    Each interior pixel yields an 8-bit code from its neighbors in clockwise
    order starting at the top-left (first neighbor = most significant bit);
    a bit is set iff neighbor >= center.  Images smaller than 3x3 yield a
    zero vector.
    """
    gray = np.asarray(gray)
    h, w = gray.shape
    if h < 3 or w < 3:
        return np.zeros(256)
    center = gray[1 : h - 1, 1 : w - 1]
    code = np.zeros(center.shape, dtype=np.intp)
    for bit, (dy, dx) in enumerate(_LBP_NEIGHBORS):
        nb = gray[1 + dy : h - 1 + dy, 1 + dx : w - 1 + dx]
        code |= (nb >= center).astype(np.intp) << (7 - bit)
    return np.bincount(code.ravel(), minlength=256) / code.size


def _l2_hys(block: np.ndarray) -> np.ndarray:
    v = block / np.sqrt((block * block).sum() + HOG_EPS**2)
    v = np.minimum(v, HOG_CLIP)
    return v / np.sqrt((v * v).sum() + HOG_EPS**2)


def hog_descriptor(gray: np.ndarray) -> np.ndarray:
    """144-length histogram-of-oriented-gradients descriptor.

    The image is resized to 64x64; gradients come from centered differences
    with replicated borders; orientations are binned into 9 unsigned bins
    over [0, 180) with linear interpolation between neighboring bin centers
    (center k at 20k degrees), weighted by gradient magnitude.  Cells are
    16x16 pixels (a 4x4 grid); blocks are 2x2 cells with stride 2 (four
    blocks), each 36-vector L2-Hys normalized, concatenated row-major.
    """
    gray = np.asarray(gray)
    if gray.shape != (HOG_SIDE, HOG_SIDE):
        gray = resize_bilinear(gray, HOG_SIDE, HOG_SIDE)
    g = gray.astype(np.float64)

    gx = np.empty_like(g)
    gx[:, 1:-1] = g[:, 2:] - g[:, :-2]
    gx[:, 0] = g[:, 1] - g[:, 0]
    gx[:, -1] = g[:, -1] - g[:, -2]
    gy = np.empty_like(g)
    gy[1:-1, :] = g[2:, :] - g[:-2, :]
    gy[0, :] = g[1, :] - g[0, :]
    gy[-1, :] = g[-1, :] - g[-2, :]

    mag = np.hypot(gx, gy)
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    pos = (ang / 20.0) % HOG_BINS
    lo = np.floor(pos).astype(np.intp)
    frac = pos - lo
    hi = (lo + 1) % HOG_BINS

    cell_of = np.arange(HOG_SIDE) // HOG_CELL  # same for rows and columns
    cell = (cell_of[:, None] * (HOG_SIDE // HOG_CELL) + cell_of[None, :]).astype(np.intp)
    n_cells = (HOG_SIDE // HOG_CELL) ** 2
    idx_lo = (cell * HOG_BINS + lo).ravel()
    idx_hi = (cell * HOG_BINS + hi).ravel()
    hist = np.bincount(idx_lo, weights=(mag * (1.0 - frac)).ravel(), minlength=n_cells * HOG_BINS)
    hist += np.bincount(idx_hi, weights=(mag * frac).ravel(), minlength=n_cells * HOG_BINS)
    cells = hist.reshape(4, 4, HOG_BINS)

    blocks = []
    for by in (0, 2):
        for bx in (0, 2):
            block = cells[by : by + 2, bx : bx + 2].reshape(-1)
            blocks.append(_l2_hys(block))
    return np.concatenate(blocks)


def final_feature_vector(img: np.ndarray) -> np.ndarray:
    """The full 512-length descriptor of a lesion crop.

    The crop is resized to the canonical 128x128 canvas (so the dimension is
    the same whatever the crop size), the five families are extracted and
    concatenated in layout order, and the tail is zero-padded to 512.
    """
    canvas = resize_bilinear(np.asarray(img), CANVAS_SIDE, CANVAS_SIDE)
    gray = to_grayscale(canvas)
    parts = [
        color_histogram(canvas),
        color_moments(canvas),
        glcm_features(gray),
        lbp_histogram(gray),
        hog_descriptor(gray),
    ]
    vec = np.zeros(FEATURE_DIM)
    vec[: FEATURE_DIM - FEATURE_LAYOUT[-1][2]] = np.concatenate(parts)
    return vec
