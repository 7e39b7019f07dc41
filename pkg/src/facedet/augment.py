"""Training-time augmentation over (image, boxes) samples.

Fixed stage order: photometric distortion, random square crop (one of five
candidates), bilinear resize to the training size, horizontal flip, then the
small-box filter.  All randomness flows through an explicit numpy Generator,
so a seed pins the whole pipeline bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops

_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64).reshape(1, 3, 1, 1)
_COLOR_OPS = ("brightness", "contrast", "saturation")


@dataclass
class Sample:
    """One training sample: (1, 3, h, w) float32 image in [0, 1] plus corner
    boxes inside the image."""

    image: np.ndarray
    boxes: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        self.image = ops.as_tensor(self.image)
        self.boxes = np.asarray(self.boxes, dtype=np.float32).reshape(-1, 4)

    @property
    def height(self) -> int:
        return self.image.shape[2]

    @property
    def width(self) -> int:
        return self.image.shape[3]


@dataclass(frozen=True)
class AugmentConfig:
    crop_scale_range: tuple[float, float] = (0.3, 1.0)
    target_size: int = 1024
    flip_prob: float = 0.5
    min_box_px: float = 20.0
    brightness_delta: float = 0.125
    contrast_range: tuple[float, float] = (0.5, 1.5)
    saturation_range: tuple[float, float] = (0.5, 1.5)

    def __post_init__(self):
        lo, hi = self.crop_scale_range
        if not 0 < lo <= hi <= 1:
            raise ValueError(f"bad crop_scale_range {self.crop_scale_range}")
        if self.target_size < 1:
            raise ValueError(f"target_size must be positive, got {self.target_size}")
        if not 0 <= self.flip_prob <= 1:
            raise ValueError(f"flip_prob must be in [0, 1], got {self.flip_prob}")


def _luma(image: np.ndarray) -> np.ndarray:
    return (image * _LUMA).sum(axis=1, keepdims=True)


def apply_color(image, brightness: float, contrast: float, saturation: float, order=_COLOR_OPS):
    """Deterministic photometric transform; clamps to [0, 1] after each op.
    Identity parameters (0, 1, 1) leave the image untouched."""
    img = ops.as_tensor(image)
    for op in order:
        if op == "brightness":
            if brightness == 0:
                continue
            img = img + np.float32(brightness)
        elif op == "contrast":
            if contrast == 1:
                continue
            mean = _luma(img).mean()
            img = (img - mean) * contrast + mean
        elif op == "saturation":
            if saturation == 1:
                continue
            gray = _luma(img)
            img = gray + (img - gray) * saturation
        else:
            raise ValueError(f"unknown color op {op!r}")
        img = np.clip(img, 0.0, 1.0)
    return img.astype(ops.DTYPE)


def color_distort(image, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()):
    """Random brightness shift, contrast and saturation scaling, applied in a
    random order."""
    brightness = rng.uniform(-cfg.brightness_delta, cfg.brightness_delta)
    contrast = rng.uniform(*cfg.contrast_range)
    saturation = rng.uniform(*cfg.saturation_range)
    order = tuple(_COLOR_OPS[i] for i in rng.permutation(3))
    return apply_color(image, brightness, contrast, saturation, order)


def crop_candidates(height, width, rng, cfg: AugmentConfig = AugmentConfig()):
    """Five square patches (x0, y0, side): the biggest centered square first,
    then four with side drawn from crop_scale_range times the short side and
    uniform placement."""
    short = min(height, width)
    candidates = [((width - short) // 2, (height - short) // 2, short)]
    lo, hi = cfg.crop_scale_range
    for _ in range(4):
        side = int(round(rng.uniform(lo, hi) * short))
        side = max(1, min(side, short))
        x0 = int(rng.integers(0, width - side + 1))
        y0 = int(rng.integers(0, height - side + 1))
        candidates.append((x0, y0, side))
    return candidates


def crop_sample(sample: Sample, x0: int, y0: int, side: int) -> Sample:
    """Cut the square patch.  Boxes whose center falls inside it survive,
    clipped to the patch and re-based to patch coordinates."""
    img = sample.image[:, :, y0 : y0 + side, x0 : x0 + side].copy()
    boxes = sample.boxes
    if len(boxes):
        cx = (boxes[:, 0] + boxes[:, 2]) / 2
        cy = (boxes[:, 1] + boxes[:, 3]) / 2
        inside = (cx >= x0) & (cx <= x0 + side) & (cy >= y0) & (cy <= y0 + side)
        kept = boxes[inside].astype(np.float64)
        kept[:, 0] = np.clip(kept[:, 0], x0, x0 + side) - x0
        kept[:, 2] = np.clip(kept[:, 2], x0, x0 + side) - x0
        kept[:, 1] = np.clip(kept[:, 1], y0, y0 + side) - y0
        kept[:, 3] = np.clip(kept[:, 3], y0, y0 + side) - y0
    else:
        kept = np.zeros((0, 4))
    return Sample(img, kept.astype(np.float32), sample.source_id)


def random_crop(sample: Sample, rng, cfg: AugmentConfig = AugmentConfig()) -> Sample:
    candidates = crop_candidates(sample.height, sample.width, rng, cfg)
    x0, y0, side = candidates[int(rng.integers(len(candidates)))]
    return crop_sample(sample, x0, y0, side)


def resize_bilinear(image, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with pixel-center alignment; exact copy when the size
    is unchanged."""
    img = ops.as_tensor(image)
    n, c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    y0f = np.floor(ys)
    x0f = np.floor(xs)
    fy = ys - y0f
    fx = xs - x0f
    y0 = np.clip(y0f.astype(np.int64), 0, h - 1)
    y1 = np.clip(y0f.astype(np.int64) + 1, 0, h - 1)
    x0 = np.clip(x0f.astype(np.int64), 0, w - 1)
    x1 = np.clip(x0f.astype(np.int64) + 1, 0, w - 1)
    rows = img[:, :, y0, :] * (1 - fy)[None, None, :, None] + img[:, :, y1, :] * fy[None, None, :, None]
    out = rows[:, :, :, x0] * (1 - fx) + rows[:, :, :, x1] * fx
    return out.astype(ops.DTYPE)


def resize_square(sample: Sample, target: int = 1024) -> Sample:
    """Resize a square patch to target x target; boxes scale along."""
    if sample.height != sample.width:
        raise ValueError(f"resize_square needs a square patch, got {sample.width}x{sample.height}")
    img = resize_bilinear(sample.image, target, target)
    boxes = sample.boxes.astype(np.float64) * (target / sample.height)
    return Sample(img, boxes.astype(np.float32), sample.source_id)


def hflip(sample: Sample, rng, p: float = 0.5) -> Sample:
    """Mirror the image columns with probability p; box x-ranges map to
    (w - x_max, w - x_min)."""
    if rng.random() >= p:
        return Sample(sample.image.copy(), sample.boxes.copy(), sample.source_id)
    img = np.ascontiguousarray(sample.image[:, :, :, ::-1])
    boxes = sample.boxes.copy()
    if len(boxes):
        boxes[:, [0, 2]] = sample.width - sample.boxes[:, [2, 0]]
    return Sample(img, boxes, sample.source_id)


def filter_boxes(sample: Sample, min_px: float = 20.0) -> Sample:
    """Drop boxes narrower or shorter than min_px (strictly less than)."""
    boxes = sample.boxes
    if len(boxes):
        keep = (boxes[:, 2] - boxes[:, 0] >= min_px) & (boxes[:, 3] - boxes[:, 1] >= min_px)
        boxes = boxes[keep]
    return Sample(sample.image.copy(), boxes.copy(), sample.source_id)


def augment_pipeline(sample: Sample, rng, cfg: AugmentConfig = AugmentConfig()) -> Sample:
    """color_distort -> random_crop -> resize_square -> hflip -> filter_boxes."""
    out = Sample(color_distort(sample.image, rng, cfg), sample.boxes.copy(), sample.source_id)
    out = random_crop(out, rng, cfg)
    out = resize_square(out, cfg.target_size)
    out = hflip(out, rng, cfg.flip_prob)
    return filter_boxes(out, cfg.min_box_px)
