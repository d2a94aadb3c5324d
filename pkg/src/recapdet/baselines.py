"""Handcrafted forensic baselines: LBP(8,1) histograms, residual correlation
coefficients, and a linear max-margin classifier."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from recapdet.data import RECAPTURED
from recapdet.tensor import ShapeError

LBP_DIM = 59
CORR_DIM = 54
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class FeatureVector:
    values: np.ndarray
    extractor: str
    sample_id: str = ""


def luminance(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return img @ LUMA


def _transitions(code: int, p: int = 8) -> int:
    bits = [(code >> i) & 1 for i in range(p)]
    return sum(bits[i] != bits[(i + 1) % p] for i in range(p))


def uniform_lookup(p: int = 8) -> np.ndarray:
    """Map each P-bit code to its uniform-pattern bin; non-uniform codes share the last bin."""
    uniform = [c for c in range(2 ** p) if _transitions(c, p) <= 2]
    table = np.full(2 ** p, len(uniform), dtype=np.int64)
    table[uniform] = np.arange(len(uniform))
    return table


_LOOKUP = uniform_lookup()


def lbp_codes(img: np.ndarray) -> np.ndarray:
    """LBP(8,1) codes for interior pixels, bilinear sampling on the unit circle.

    Bit p is set when the sample at angle 2*pi*p/8 is >= the centre, so
    ties count as 1. Interpolation is done on differences from the centre,
    which keeps flat regions exactly at zero.
    """
    lum = luminance(img)
    h, w = lum.shape
    if h < 3 or w < 3:
        raise ValueError(f"LBP needs at least a 3x3 image, got {h}x{w}")
    c = lum[1:h - 1, 1:w - 1]
    codes = np.zeros(c.shape, dtype=np.int64)

    def at(dy, dx):
        return lum[1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx] - c

    for p in range(8):
        ang = 2 * math.pi * p / 8
        dy, dx = -math.sin(ang), math.cos(ang)
        if abs(dy - round(dy)) < 1e-9 and abs(dx - round(dx)) < 1e-9:
            diff = at(int(round(dy)), int(round(dx)))
        else:
            y0, x0 = math.floor(dy), math.floor(dx)
            ty, tx = dy - y0, dx - x0
            d00, d01 = at(y0, x0), at(y0, x0 + 1)
            d10, d11 = at(y0 + 1, x0), at(y0 + 1, x0 + 1)
            diff = d00 + tx * (d01 - d00) + ty * (d10 - d00) + tx * ty * (d00 - d01 - d10 + d11)
        codes |= (diff >= 0).astype(np.int64) << p
    return codes


def lbp_histogram(img: np.ndarray, sample_id: str = "") -> FeatureVector:
    """59-bin uniform LBP(8,1) histogram, L1-normalised."""
    bins = _LOOKUP[lbp_codes(img)]
    hist = np.bincount(bins.ravel(), minlength=LBP_DIM).astype(np.float64)
    return FeatureVector(hist / hist.sum(), "lbp", sample_id)


def correlation_offsets() -> list:
    """The 18 half-plane offsets (dy, dx) with dy^2 + dx^2 <= 10."""
    out = []
    for dy in range(0, 4):
        for dx in range(-3, 4):
            if dy * dy + dx * dx > 10 or (dy == 0 and dx <= 0):
                continue
            out.append((dy, dx))
    return out


_OFFSETS = correlation_offsets()
_BINOMIAL = np.array([0.25, 0.5, 0.25])


def noise_residual(channel: np.ndarray) -> np.ndarray:
    smooth = correlate1d(correlate1d(channel, _BINOMIAL, 0, mode="nearest"), _BINOMIAL, 1, mode="nearest")
    return channel - smooth


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a.ravel() - a.mean()
    b = b.ravel() - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    if den == 0:
        return 0.0
    return float(np.clip((a @ b) / den, -1.0, 1.0))


def residual_correlations(r: np.ndarray) -> np.ndarray:
    """Pearson correlation of a 2-D residual with its 18 shifted copies."""
    h, w = r.shape
    vals = []
    for dy, dx in _OFFSETS:
        a = r[0:h - dy, max(0, -dx):w - max(0, dx)]
        b = r[dy:h, max(0, dx):w + min(0, dx)]
        vals.append(pearson(a, b))
    return np.array(vals)


def corr_features(img: np.ndarray, sample_id: str = "") -> FeatureVector:
    """Per-channel correlation of the 3x3 noise residual with 18 shifted copies (3 x 18 = 54)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    h, w = img.shape[:2]
    if h < 16 or w < 16:
        raise ValueError(f"correlation features need at least 16x16, got {h}x{w}")
    vals = [residual_correlations(noise_residual(img[..., ch])) for ch in range(3)]
    return FeatureVector(np.concatenate(vals), "corr", sample_id)


EXTRACTORS = {"lbp": lbp_histogram, "corr": corr_features}


def extract(extractor: str, images) -> np.ndarray:
    if extractor not in EXTRACTORS:
        raise ValueError(f"unknown extractor {extractor!r}; choose from {sorted(EXTRACTORS)}")
    fn = EXTRACTORS[extractor]
    return np.stack([fn(im).values for im in images])


# -- linear max-margin model -----------------------------------------------------------

@dataclass
class LinearHyper:
    reg: float = 1e-3
    epochs: int = 300
    seed: int = 0


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    hyper: LinearHyper = field(default_factory=LinearHyper)
    degenerate: bool = False


def _hinge_objective(w, b, x, y, reg):
    margins = y * (x @ w + b)
    return 0.5 * reg * float(w @ w) + float(np.maximum(0.0, 1.0 - margins).mean())


def train_linear(features: np.ndarray, labels: np.ndarray, hyper: LinearHyper | None = None,
                 positive: int = RECAPTURED) -> LinearModel:
    """L2-regularised hinge loss minimised by full-batch sub-gradient descent.

    Features are standardised internally and the scaling is folded back into
    the returned weights, so ``predict_linear`` works on raw features. A
    positive score predicts the ``positive`` class.
    """
    hyper = hyper or LinearHyper()
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or len(x) != len(labels):
        raise ShapeError(f"features {x.shape} do not match {len(labels)} labels")
    if len(x) < 2:
        raise ValueError("need at least two samples")
    y = np.where(labels == positive, 1.0, -1.0)
    if np.all(y == y[0]):
        raise ValueError("training set contains a single class")

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    if np.all(std == 0):
        majority = 1.0 if (y > 0).sum() >= (y < 0).sum() else -1.0
        return LinearModel(np.zeros(x.shape[1]), majority, hyper, degenerate=True)
    scale = np.where(std > 0, std, 1.0)
    xs = (x - mean) / scale

    w = np.zeros(xs.shape[1])
    b = 0.0
    best = (_hinge_objective(w, b, xs, y, hyper.reg), w.copy(), b)
    for t in range(1, hyper.epochs + 1):
        eta = 1.0 / (hyper.reg * (t + 100))
        viol = (y * (xs @ w + b)) < 1.0
        gw = hyper.reg * w - (y[viol, None] * xs[viol]).sum(axis=0) / len(y)
        gb = -float(y[viol].sum()) / len(y)
        w = w - eta * gw
        b = b - eta * gb
        obj = _hinge_objective(w, b, xs, y, hyper.reg)
        if obj < best[0]:
            best = (obj, w.copy(), b)
    _, w, b = best
    w_raw = w / scale
    return LinearModel(w_raw, float(b - w_raw @ mean), hyper)


def predict_linear(model: LinearModel, features) -> np.ndarray | float:
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != model.weights.shape[0]:
        raise ShapeError(f"feature dim {x.shape[-1]} does not match model dim {model.weights.shape[0]}")
    out = x @ model.weights + model.bias
    return float(out) if np.ndim(out) == 0 else out
