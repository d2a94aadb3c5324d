"""Training-time augmentation: normalisation, flips, CutOut and CutMix.

All functions are pure given their ``numpy.random.Generator``; images are
H x W x 3 float arrays in [0, 1] unless stated otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from recapdet.data import ImageSample
from recapdet.errors import ConfigError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class AugConfig:
    normalize_mean: tuple = IMAGENET_MEAN
    normalize_std: tuple = IMAGENET_STD
    cutout_size: float = 0.25
    cutout_prob: float = 0.25
    cutmix_beta: float = 1.0
    cutmix_prob: float = 0.25
    horizontal_flip_prob: float = 0.5
    augment_eval: bool = False
    seed: int = 0

    def __post_init__(self):
        self.normalize_mean = tuple(float(v) for v in self.normalize_mean)
        self.normalize_std = tuple(float(v) for v in self.normalize_std)
        problems = []
        if len(self.normalize_mean) != 3 or len(self.normalize_std) != 3:
            problems.append("normalize_mean and normalize_std need 3 values")
        if any(s <= 0 for s in self.normalize_std):
            problems.append("normalize_std must be strictly positive")
        for name in ("cutout_size", "cutout_prob", "cutmix_prob", "horizontal_flip_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                problems.append(f"{name} must lie in [0, 1], got {v}")
        if self.cutmix_beta <= 0:
            problems.append("cutmix_beta must be positive")
        if problems:
            raise ConfigError("invalid AugConfig: " + "; ".join(problems), problems)


@dataclass
class MixedSample:
    pixels: np.ndarray
    label_weights: tuple
    labels: tuple
    domains: tuple
    pasted_area: int = 0
    box: tuple = field(default=(0, 0, 0, 0))

    def class_weights(self, num_classes: int = 2) -> np.ndarray:
        w = np.zeros(num_classes)
        w[self.labels[0]] += self.label_weights[0]
        w[self.labels[1]] += self.label_weights[1]
        return w


def normalize(img: np.ndarray, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float32)
    std = np.asarray(std, dtype=np.float32)
    return ((np.asarray(img, dtype=np.float32) - mean) / std).astype(np.float32)


def denormalize(img: np.ndarray, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> np.ndarray:
    return np.asarray(img, dtype=np.float32) * np.asarray(std, dtype=np.float32) + np.asarray(mean, dtype=np.float32)


def random_flip(img: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    if rng.random() < p:
        return img[:, ::-1].copy()
    return img


def _clipped_box(cy: int, cx: int, bh: int, bw: int, h: int, w: int) -> tuple:
    # An extent that spans the whole image along an axis covers that axis entirely.
    if bh >= h:
        y0, y1 = 0, h
    else:
        y0, y1 = max(cy - bh // 2, 0), min(cy - bh // 2 + bh, h)
    if bw >= w:
        x0, x1 = 0, w
    else:
        x0, x1 = max(cx - bw // 2, 0), min(cx - bw // 2 + bw, w)
    return y0, y1, x0, x1


def cutout(img: np.ndarray, hole_fraction: float, rng: np.random.Generator, fill=IMAGENET_MEAN) -> np.ndarray:
    """Blank one square of side ``hole_fraction * min(H, W)`` with ``fill``.

    The square's centre is uniform over the image and the square is clipped
    at the borders.
    """
    if not 0.0 <= hole_fraction <= 1.0:
        raise ValueError("hole_fraction must lie in [0, 1]")
    h, w = img.shape[:2]
    side = int(round(hole_fraction * min(h, w)))
    cy, cx = int(rng.integers(h)), int(rng.integers(w))
    if side == 0:
        return img
    y0, y1, x0, x1 = _clipped_box(cy, cx, side, side, h, w)
    out = img.copy()
    out[y0:y1, x0:x1] = np.asarray(fill, dtype=img.dtype)
    return out


def cutmix(a: ImageSample, b: ImageSample, beta: float, rng: np.random.Generator, lam: float | None = None) -> MixedSample:
    """Paste a rectangle of ``b`` into ``a``.

    The rectangle has area ``(1 - lam) * H * W`` (rounded to whole pixels) and
    the image's aspect ratio, with ``lam ~ Beta(beta, beta)`` unless given. Its
    position is uniform over the placements that keep it inside the image, so
    the pasted fraction is an unbiased estimate of ``1 - lam``. The label
    weights are computed from the pixels actually pasted.
    """
    pa, pb = a.pixels, b.pixels
    if pa.shape != pb.shape:
        raise ValueError(f"cutmix needs equal extents, got {pa.shape} and {pb.shape}")
    h, w = pa.shape[:2]
    if lam is None:
        lam = float(rng.beta(beta, beta))
    ratio = np.sqrt(1.0 - lam)
    bh, bw = min(int(round(h * ratio)), h), min(int(round(w * ratio)), w)
    y0, x0 = int(rng.integers(h - bh + 1)), int(rng.integers(w - bw + 1))
    out = pa.copy()
    if bh == 0 or bw == 0:
        box = (0, 0, 0, 0)
    else:
        box = (y0, y0 + bh, x0, x0 + bw)
        out[y0:y0 + bh, x0:x0 + bw] = pb[y0:y0 + bh, x0:x0 + bw]
    area = (box[1] - box[0]) * (box[3] - box[2])
    # both weights come straight from integer pixel counts
    weights = ((h * w - area) / (h * w), area / (h * w))
    return MixedSample(out, weights, (a.label, b.label), (a.domain, b.domain), area, box)


def augment_batch(images: np.ndarray, labels: np.ndarray, domains: list, cfg: AugConfig,
                  rng: np.random.Generator, num_classes: int = 2) -> tuple:
    """Flip, CutMix, CutOut, then normalise a batch.

    Returns ``(pixels, targets)``, where ``targets`` is an (N, num_classes)
    array of class weights.
    """
    n = len(images)
    flipped = [random_flip(images[i], cfg.horizontal_flip_prob, rng) for i in range(n)]
    targets = np.zeros((n, num_classes), dtype=np.float32)
    out = []
    for i in range(n):
        img = flipped[i]
        t = np.zeros(num_classes)
        t[labels[i]] = 1.0
        if n > 1 and rng.random() < cfg.cutmix_prob:
            j = int(rng.integers(n - 1))
            j = j + 1 if j >= i else j
            mixed = cutmix(ImageSample(img, int(labels[i]), domains[i]),
                           ImageSample(flipped[j], int(labels[j]), domains[j]), cfg.cutmix_beta, rng)
            img, t = mixed.pixels, mixed.class_weights(num_classes)
        if rng.random() < cfg.cutout_prob:
            img = cutout(img, cfg.cutout_size, rng, cfg.normalize_mean)
        out.append(normalize(img, cfg.normalize_mean, cfg.normalize_std))
        targets[i] = t
    return np.stack(out), targets
