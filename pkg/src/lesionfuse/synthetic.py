"""Synthetic dermoscopy-like images for demos, tests, and the benchmark.

Two looks on a noisy skin-tone background: a dark red disc with strong
speckle texture, and a dark brown disc with an almost smooth surface.  The
benchmark dataset labels the textured look melanoma-positive and the smooth
look seborrheic-keratosis-positive, which makes both binary tasks separable
from a single image set.
"""

import csv
from pathlib import Path

import numpy as np
from PIL import Image as PilImage

from . import seeding

SKIN = (205, 165, 145)
TEXTURED_COLOR = (150, 40, 45)  # dark red
SMOOTH_COLOR = (95, 70, 55)  # dark brown


def lesion_image(rng: np.random.Generator, textured: bool, size: int = 128) -> np.ndarray:
    """One synthetic lesion image: a disc on a noisy skin-tone background."""
    img = np.array(SKIN, dtype=np.float64) + rng.normal(0.0, 8.0, size=(size, size, 3))
    cy = size / 2 + rng.uniform(-size * 0.08, size * 0.08)
    cx = size / 2 + rng.uniform(-size * 0.08, size * 0.08)
    radius = size * rng.uniform(0.20, 0.30)
    yy, xx = np.mgrid[0:size, 0:size]
    disc = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
    color = TEXTURED_COLOR if textured else SMOOTH_COLOR
    sigma = 35.0 if textured else 3.0
    lesion = np.array(color, dtype=np.float64) + rng.normal(0.0, sigma, size=(size, size, 3))
    img[disc] = lesion[disc]
    return np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)


def make_dataset(directory, n_per_class: int = 20, seed: int = 0, size: int = 128) -> Path:
    """Write a labeled synthetic dataset and return the labels CSV path.

    Textured-disc images get melanoma = 1; smooth-disc images get
    seborrheic_keratosis = 1.  Images are PNGs named SYN_####.png.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = seeding.derive_rng(seed, seeding.SYNTH)
    rows = []
    for i in range(2 * n_per_class):
        textured = i < n_per_class
        img = lesion_image(rng, textured, size)
        image_id = f"SYN_{i:04d}"
        PilImage.fromarray(img).save(directory / f"{image_id}.png")
        rows.append((image_id, 1 if textured else 0, 0 if textured else 1))
    csv_path = directory / "labels.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "melanoma", "seborrheic_keratosis"])
        writer.writerows(rows)
    return csv_path
