"""Synthetic classification fixture: bright shapes on textured dark noise.

    python -m sakf.synthetic OUT_DIR [--per-class 20] [--size 128] [--seed 0]
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np
from PIL import Image

from .imgproc import gaussian_blur

SHAPES = ("circle", "square", "triangle")


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    coarse = gaussian_blur(rng.uniform(0, 1, (size, size)), 2.0)
    coarse = (coarse - coarse.min()) / max(coarse.max() - coarse.min(), 1e-12)
    return 15 + 35 * coarse + rng.normal(0, 6, (size, size))


SHAPES_PER_IMAGE = 5
RADIUS = (0.07, 0.10)


def _shape_mask(shape: str, size: int, rng: np.random.Generator) -> np.ndarray:
    r = rng.uniform(*RADIUS) * size
    cx, cy = rng.uniform(0.15, 0.85, 2) * size
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    if shape == "circle":
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= r ** 2
    if shape == "square":
        return (np.abs(xx - cx) <= r * 0.85) & (np.abs(yy - cy) <= r * 0.85)
    if shape == "triangle":
        # apex at the top, base at the bottom
        top = cy - r
        return (yy >= top) & (yy <= cy + r) & (np.abs(xx - cx) <= (yy - top) * 0.55)
    raise ValueError(f"unknown shape {shape!r}")


def make_image(shape: str, rng: np.random.Generator, size: int = 128,
               count: int = SHAPES_PER_IMAGE) -> np.ndarray:
    """A textured dark background with ``count`` bright copies of ``shape``."""
    img = _background(rng, size)
    for _ in range(count):
        img[_shape_mask(shape, size, rng)] = rng.uniform(200, 245)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def make_dataset(root, per_class: int = 20, size: int = 128, seed: int = 0,
                 shapes=SHAPES) -> Path:
    """Write ``len(shapes) * per_class`` PNGs under ``root/<shape>/``."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for shape in shapes:
        (root / shape).mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            Image.fromarray(make_image(shape, rng, size)).save(root / shape / f"{shape}_{i:03d}.png")
    return root


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out")
    ap.add_argument("--per-class", type=int, default=20)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    make_dataset(args.out, args.per_class, args.size, args.seed)
    print(f"wrote {args.per_class * len(SHAPES)} images to {args.out}")


if __name__ == "__main__":
    main()
