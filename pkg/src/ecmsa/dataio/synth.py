"""Synthetic two-blob dataset where only the caption says which blob is salient.

Each scene has two non-touching discs of different palette colors on a
mid-gray background.  The caption ``"the <color> object"`` names one of
them and the mask covers that disc alone, so from pixels alone either blob
is equally plausible.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from ..rng import Rng
from .manifest import SampleRecord, write_manifest
from .raster import write_raster

PALETTE = {
    "red": (0.90, 0.10, 0.10),
    "green": (0.10, 0.75, 0.15),
    "blue": (0.10, 0.20, 0.90),
    "yellow": (0.95, 0.90, 0.10),
    "black": (0.05, 0.05, 0.05),
    "white": (0.97, 0.97, 0.97),
    "purple": (0.55, 0.10, 0.70),
    "orange": (1.00, 0.55, 0.00),
}
COLORS = tuple(PALETTE)
BACKGROUND = 0.5


@dataclass
class Scene:
    image: np.ndarray       # (3, S, S)
    blob_masks: np.ndarray  # (2, S, S) in {0, 1}
    colors: tuple           # two distinct palette names
    boxes: tuple            # per blob (r0, r1, c0, c1), inclusive

    def mask_for(self, color: str) -> np.ndarray:
        return self.blob_masks[self.colors.index(color)].copy()


def caption_for(color: str) -> str:
    return f"the {color} object"


def render_scene(size: int, rng: Rng) -> Scene:
    if size < 16:
        raise ValidationError("synthetic scenes need size >= 16")
    i = rng.integers(0, len(COLORS))
    j = rng.integers(0, len(COLORS) - 1)
    j += j >= i
    colors = (COLORS[i], COLORS[j])
    rmin, rmax = size / 8.0, size / 5.0
    while True:
        radii = rng.uniform(rmin, rmax, 2)
        centers = [rng.uniform(r + 1, size - r - 2, 2) for r in radii]
        if np.hypot(*(centers[0] - centers[1])) > radii.sum() + 2:
            break
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    image = np.full((3, size, size), BACKGROUND)
    masks = np.zeros((2, size, size))
    boxes = []
    for b, (r, (cy, cx)) in enumerate(zip(radii, centers)):
        inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        masks[b] = inside
        image[:, inside] = np.asarray(PALETTE[colors[b]])[:, None]
        rows, cols = np.nonzero(inside)
        boxes.append((rows.min(), rows.max(), cols.min(), cols.max()))
    return Scene(image, masks, colors, tuple(boxes))


def synth_crossmodal(n: int, size: int, rng: Rng, out_dir=None, split: str = "train",
                     prefix: str | None = None):
    """Generate ``n`` samples; write PPM/PGM files when ``out_dir`` is given.

    Returns ``(records, scenes)``.  Records have ``None`` paths when nothing
    is written.
    """
    if n < 0:
        raise ValidationError("n must be non-negative")
    prefix = prefix or split
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
    records, scenes = [], []
    for k in range(n):
        sid = f"{prefix}{k:05d}"
        srng = rng.split(sid)
        scene = render_scene(size, srng)
        named = scene.colors[srng.integers(0, 2)]
        mask = scene.mask_for(named)
        img_path = mask_path = None
        if out is not None:
            img_path = out / "images" / f"{sid}.ppm"
            mask_path = out / "masks" / f"{sid}.pgm"
            write_raster(img_path, scene.image)
            write_raster(mask_path, mask)
        records.append(SampleRecord(sid, img_path, mask_path, caption_for(named), split))
        scenes.append(scene)
    return records, scenes


def write_synth_dataset(out_dir, n_train: int, n_test: int, size: int, seed: int):
    """Both splits under one directory with ``manifest.jsonl``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = Rng(seed)
    train, _ = synth_crossmodal(n_train, size, rng.split("train"), out, "train")
    test, _ = synth_crossmodal(n_test, size, rng.split("test"), out, "test")
    path = out / "manifest.jsonl"
    write_manifest(path, train + test)
    return path
