"""Lesion localization, step by step.

Builds a synthetic dermoscopy-like image and walks the classical ROI chain:
grayscale -> median smoothing -> Otsu threshold -> largest 4-connected
component -> padded bounding box -> crop.  Saves before/after images next
to this script.
"""

from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from lesionfuse import crop_lesion, largest_component, lesion_bbox, otsu_threshold, to_grayscale
from lesionfuse.seeding import derive_rng
from lesionfuse.synthetic import lesion_image

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

rng = derive_rng(1234, 99)
img = lesion_image(rng, textured=True, size=200)
Image.fromarray(img).save(out_dir / "roi_input.png")

# Step 1: grayscale + 3x3 median smoothing (suppresses speckle and hair-like noise)
gray = to_grayscale(img)
smooth = ndimage.median_filter(gray, size=3, mode="reflect")

# Step 2: Otsu split; lesions are darker than the surrounding skin, so the
# foreground is the <= t side
t = otsu_threshold(smooth)
mask = smooth <= t
print(f"otsu threshold: {t}  (foreground = {mask.mean():.1%} of pixels)")

# Step 3: keep the largest 4-connected blob, drop stray dark specks
blob = largest_component(mask)
print(f"largest component: {blob.sum()} px of {mask.sum()} foreground px")

# Step 4: bounding box with a 10% margin, clamped to the frame
rect = lesion_bbox(blob, margin_frac=0.1)
print(f"padded bounding box: x={rect.x} y={rect.y} w={rect.w} h={rect.h}")

# The one-call version chains all of the above
crop = crop_lesion(img)
Image.fromarray(crop).save(out_dir / "roi_crop.png")
print(f"crop shape: {crop.shape[1]}x{crop.shape[0]} (from {img.shape[1]}x{img.shape[0]})")

# Degenerate inputs fall back to the full frame rather than failing
flat = np.full((50, 50, 3), 120, np.uint8)
assert crop_lesion(flat).shape == flat.shape
print("constant image -> full-frame fallback, as expected")
