"""Training-time augmentation: horizontal flip, random contrast, random crop.

Flip and crop act jointly on image and mask; contrast touches only the
image, ``x <- clip(0.5 + c * (x - 0.5), 0, 1)`` with ``c ~ U(lo, hi)``.
Captions are never edited, so spatial words such as "left" can become
wrong after a flip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..rng import Rng, fnv1a64


@dataclass(frozen=True)
class AugmentConfig:
    hflip_prob: float = 0.5
    contrast_range: tuple = (0.75, 1.25)
    crop_ratio: float = 0.9   # 288 / 320
    enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ValidationError("hflip_prob must lie in [0, 1]")
        if not 0.0 < self.crop_ratio <= 1.0:
            raise ValidationError("crop_ratio must lie in (0, 1]")
        lo, hi = self.contrast_range
        if lo > hi or lo < 0:
            raise ValidationError("contrast_range must be [lo, hi] with 0 <= lo <= hi")


def hflip(arr: np.ndarray) -> np.ndarray:
    return arr[..., ::-1].copy()


def adjust_contrast(image: np.ndarray, c: float) -> np.ndarray:
    if c == 1.0:
        return image.copy()
    return np.clip(0.5 + c * (image - 0.5), 0.0, 1.0)


def crop_side(size: int, ratio: float, multiple: int = 1) -> int:
    side = int(np.floor(ratio * size + 1e-9))
    side -= side % multiple
    return max(side, multiple)


def sample_rng(global_seed: int, sample_id: str) -> Rng:
    """Per-sample stream: ``seed XOR fnv1a64(id)``."""
    return Rng(global_seed ^ fnv1a64(sample_id))


def augment(image: np.ndarray, mask: np.ndarray, cfg: AugmentConfig, rng: Rng, multiple: int = 1):
    """Augment one ``(3, S, S)`` image with its ``(S, S)`` mask.

    Always consumes four draws (flip, contrast, row offset, column offset)
    so streams stay aligned whether or not a step fires.  ``multiple``
    rounds the crop side down so the result fits a network's stride.
    """
    s = image.shape[-1]
    if image.shape[-2] != s or mask.shape[-2:] != image.shape[-2:]:
        raise ValidationError("augment expects square image and mask of equal size")
    u_flip, u_c, u_r, u_col = rng.random(4)
    if not cfg.enabled:
        return image.copy(), mask.copy()
    if u_flip < cfg.hflip_prob:
        image, mask = hflip(image), hflip(mask)
    lo, hi = cfg.contrast_range
    image = adjust_contrast(image, lo + (hi - lo) * u_c)
    side = crop_side(s, cfg.crop_ratio, multiple)
    span = s - side + 1
    r0 = min(int(u_r * span), span - 1)
    c0 = min(int(u_col * span), span - 1)
    return (np.ascontiguousarray(image[..., r0:r0 + side, c0:c0 + side]),
            np.ascontiguousarray(mask[..., r0:r0 + side, c0:c0 + side]))
