"""Regenerates the ten-image toy dataset (deterministic, no randomness)."""
import math
from pathlib import Path

from PIL import Image

ROOT = Path(__file__).parent / "images"


def disc(w, h, k):
    cx, cy, r = w / 2 + k, h / 2 - k, min(w, h) / 3
    return lambda x, y: (230, 60 + 20 * k, 40) if math.hypot(x - cx, y - cy) < r else (20, 20, 30)


def stripes(w, h, k):
    return lambda x, y: (40, 200, 90) if ((x + k * y) // (3 + k)) % 2 == 0 else (250, 250, 240)


def checker(w, h, k):
    s = 4 + k
    return lambda x, y: (30, 70, 220) if (x // s + y // s) % 2 == 0 else (200, 190, 30)


SPECS = [
    ("disc", disc, [(40, 40, 0, "png"), (48, 36, 1, "png"), (32, 32, 2, "ppm"), (64, 48, 3, "png")]),
    ("stripes", stripes, [(40, 40, 0, "png"), (36, 50, 1, "ppm"), (44, 44, 2, "png")]),
    ("checker", checker, [(40, 40, 0, "png"), (56, 40, 1, "png"), (32, 48, 2, "ppm")]),
]

for name, pattern, items in SPECS:
    (ROOT / name).mkdir(parents=True, exist_ok=True)
    for i, (w, h, k, ext) in enumerate(items):
        f = pattern(w, h, k)
        img = Image.new("RGB", (w, h))
        img.putdata([f(x, y) for y in range(h) for x in range(w)])
        img.save(ROOT / name / f"{name}-{i}.{ext}")
