"""JSON Lines dataset manifests.

One object per line: ``{"id", "image", "mask", "caption", "split"}`` with
paths relative to the manifest's directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DuplicateId, FormatError, ValidationError
from .raster import raster_size, read_raster

SPLITS = ("train", "test")
FIELDS = ("id", "image", "mask", "caption", "split")


@dataclass(frozen=True)
class SampleRecord:
    id: str
    image_path: Path
    mask_path: Path
    caption: str
    split: str = "train"

    def load(self):
        """Return ``(image (3, H, W), mask (H, W) in {0, 1})``."""
        image = read_raster(self.image_path)
        mask = read_raster(self.mask_path)
        if image.ndim != 3 or mask.ndim != 2:
            raise ValidationError(f"{self.id}: image must be P6 and mask P5")
        if image.shape[1:] != mask.shape:
            raise ValidationError(f"{self.id}: mask size {mask.shape} != image size {image.shape[1:]}")
        # stored masks are {0, 255}; anything else is binarized at mid-gray
        return image, (mask >= 0.5).astype(np.float64)

    def to_json(self, root: Path) -> dict:
        return {
            "id": self.id,
            "image": os.path.relpath(self.image_path, root),
            "mask": os.path.relpath(self.mask_path, root),
            "caption": self.caption,
            "split": self.split,
        }


def scan_manifest(path, check_files: bool = True):
    """Parse and validate; return ``(records, problems)``.

    ``problems`` is a list of ``(lineno, exception)``; records are only those
    lines that passed every check.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    root = path.parent
    records, problems, seen = [], [], {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("not an object")
        except ValueError as e:
            problems.append((lineno, FormatError(f"{path}:{lineno}: malformed JSON line ({e})")))
            continue
        missing = [f for f in FIELDS if f not in obj]
        if missing:
            problems.append((lineno, FormatError(f"{path}:{lineno}: missing fields {missing}")))
            continue
        sid = str(obj["id"])
        if sid in seen:
            problems.append((lineno, DuplicateId(
                f"{path}:{lineno}: duplicate id {sid!r} (first seen on line {seen[sid]})")))
            continue
        seen[sid] = lineno
        if obj["split"] not in SPLITS:
            problems.append((lineno, ValidationError(f"{path}:{lineno}: id {sid!r} has unknown split {obj['split']!r}")))
            continue
        rec = SampleRecord(sid, root / obj["image"], root / obj["mask"], str(obj["caption"]), obj["split"])
        if check_files:
            err = _check_files(rec)
            if err:
                problems.append((lineno, ValidationError(f"{path}:{lineno}: id {sid!r}: {err}")))
                continue
        records.append(rec)
    return records, problems


def _check_files(rec: SampleRecord) -> str | None:
    for tag, p in (("image", rec.image_path), ("mask", rec.mask_path)):
        if not p.is_file():
            return f"missing {tag} file {p}"
    try:
        if raster_size(rec.image_path) != raster_size(rec.mask_path):
            return "mask size does not match image size"
    except FormatError as e:
        return str(e)
    return None


def load_manifest(path, check_files: bool = True) -> list:
    records, problems = scan_manifest(path, check_files)
    if problems:
        raise problems[0][1]
    return records


def write_manifest(path, records):
    path = Path(path)
    root = path.parent
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(root), sort_keys=True) + "\n")


def split_records(records, split: str) -> list:
    return [r for r in records if r.split == split]
