"""Regenerate tests/fixtures/*.png: ten 64x64 luminance crops of scikit-image sample photos.

Requires scikit-image (not a runtime dependency).
"""
from pathlib import Path

import numpy as np
from skimage import data

from narmsr.imagecore import rgb_to_luminance, write_image

# (image name, top, left)
CROPS = [
    ("camera", 180, 200),
    ("astronaut", 60, 180),
    ("coffee", 120, 260),
    ("chelsea", 100, 140),
    ("rocket", 200, 300),
    ("coins", 40, 40),
    ("moon", 300, 200),
    ("brick", 100, 100),
    ("clock", 100, 160),
    ("page", 40, 60),
]


def main(out=Path(__file__).resolve().parents[1] / "tests" / "fixtures"):
    out.mkdir(parents=True, exist_ok=True)
    for name, top, left in CROPS:
        img = getattr(data, name)().astype(np.float64) / 255.0
        if img.ndim == 3:
            img = rgb_to_luminance(img[..., :3])
        write_image(out / f"{name}.png", img[top:top + 64, left:left + 64])


if __name__ == "__main__":
    main()
