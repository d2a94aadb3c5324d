"""Synthetic recapture simulator.

Procedural scenes stand in for single-capture photographs. A recaptured
counterpart is produced by composing display/re-photograph artefacts in a
fixed order: lens blur, screen/sensor moire, tone response and tint, sensor
noise. Each :class:`DomainSpec` fixes the artefact magnitudes of one
synthetic domain.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from PIL import Image
from scipy.ndimage import correlate1d

from recapdet.data import ORIGINAL, RECAPTURED, DomainDataset, ImageSample
from recapdet.errors import ConfigError

SCENE_KINDS = ("gradient", "texture", "shapes", "text")
# per-channel phase offsets (radians) that turn luminance moire into colour moire
MOIRE_CHANNEL_PHASE = (-0.35, 0.0, 0.35)


@dataclass(frozen=True)
class SceneSpec:
    kind: str = "texture"
    size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ConfigError(f"unknown scene kind {self.kind!r}; choose from {SCENE_KINDS}")
        if self.size < 4:
            raise ConfigError("scene size must be at least 4")


@dataclass(frozen=True)
class DomainSpec:
    domain_id: str = "D1"
    moire_frequency: float = 0.3
    moire_angle: float = 0.35
    moire_amplitude: float = 0.25
    blur_sigma: float = 0.5
    noise_std: float = 0.01
    contrast_gamma: float = 0.9
    tint: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    # relative per-sample spread of each artefact magnitude
    jitter: float = 0.2
    # scenes are rendered at content_scale * size and upsampled
    content_scale: float = 1.0
    # sensor noise present in originals and recaptures alike
    capture_noise: float = 0.0
    # device tone response and white balance shared by every image of the domain
    capture_gamma: float = 1.0
    capture_tint: tuple = (0.0, 0.0, 0.0)
    capture_contrast: float = 1.0
    scene_kinds: tuple = SCENE_KINDS
    image_size: int = 64

    def __post_init__(self):
        object.__setattr__(self, "tint", tuple(float(t) for t in self.tint))
        object.__setattr__(self, "capture_tint", tuple(float(t) for t in self.capture_tint))
        object.__setattr__(self, "scene_kinds", tuple(self.scene_kinds))
        problems = []
        if not 0 <= self.moire_amplitude <= 1:
            problems.append("moire_amplitude must lie in [0, 1]")
        if not 0 <= self.noise_std <= 1 or not 0 <= self.capture_noise <= 1:
            problems.append("noise levels must lie in [0, 1]")
        if self.blur_sigma < 0:
            problems.append("blur_sigma must be >= 0")
        if self.capture_contrast < 0:
            problems.append("capture_contrast must be >= 0")
        if self.contrast_gamma <= 0 or self.capture_gamma <= 0:
            problems.append("contrast_gamma and capture_gamma must be > 0")
        if len(self.tint) != 3 or len(self.capture_tint) != 3:
            problems.append("tint and capture_tint need 3 values")
        if not 0 <= self.jitter < 1:
            problems.append("jitter must lie in [0, 1)")
        if not 0 < self.content_scale <= 1:
            problems.append("content_scale must lie in (0, 1]")
        bad = [k for k in self.scene_kinds if k not in SCENE_KINDS]
        if bad or not self.scene_kinds:
            problems.append(f"scene_kinds must be a non-empty subset of {SCENE_KINDS}")
        if problems:
            raise ConfigError(f"invalid DomainSpec {self.domain_id}: " + "; ".join(problems), problems)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tint"] = list(self.tint)
        d["capture_tint"] = list(self.capture_tint)
        d["scene_kinds"] = list(self.scene_kinds)
        return d


def default_domains(seed: int = 0, image_size: int = 64) -> list:
    """Three synthetic domains with distinct artefact mixtures and capture devices.

    D1' photographs text with a sharp device and shows the strongest moire.
    D2' uses a soft, low-resolution device and has the weakest moire, after
    the heaviest blur. D3' has a noisy sensor, a strong tint and
    low-resolution content. Device traits are shared by originals and
    recaptures, so each domain stays recognisable in both classes.
    """
    return [
        DomainSpec("D1", moire_frequency=0.30, moire_angle=0.35, moire_amplitude=1.0, blur_sigma=0.4,
                   noise_std=0.01, contrast_gamma=0.85, tint=(0.03, 0.0, -0.02), seed=seed * 1000 + 1,
                   jitter=0.02, scene_kinds=("text",), image_size=image_size),
        DomainSpec("D2", moire_frequency=0.22, moire_angle=1.10, moire_amplitude=0.7, blur_sigma=1.0,
                   noise_std=0.015, contrast_gamma=0.85, tint=(-0.01, 0.02, 0.03), seed=seed * 1000 + 2,
                   jitter=0.02, content_scale=0.35, scene_kinds=("gradient", "shapes", "texture"),
                   image_size=image_size),
        DomainSpec("D3", moire_frequency=0.36, moire_angle=-0.6, moire_amplitude=0.85, blur_sigma=0.6,
                   noise_std=0.04, contrast_gamma=0.8, tint=(0.05, 0.03, -0.04), seed=seed * 1000 + 3,
                   jitter=0.02, content_scale=0.5, capture_noise=0.05, scene_kinds=("gradient", "texture", "text"),
                   image_size=image_size),
    ]


# -- scenes -------------------------------------------------------------------------

def _grid(n: int):
    y, x = np.mgrid[0:n, 0:n].astype(np.float64)
    return y / max(n - 1, 1), x / max(n - 1, 1)


def _gradient_bg(rng, n):
    y, x = _grid(n)
    c0, c1 = rng.uniform(0.1, 0.9, 3), rng.uniform(0.1, 0.9, 3)
    theta = rng.uniform(0, 2 * math.pi)
    t = (x * math.cos(theta) + y * math.sin(theta))
    t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
    return c0 + (c1 - c0) * t[..., None]


def _scene_gradient(rng, n):
    img = _gradient_bg(rng, n)
    y, x = _grid(n)
    for _ in range(rng.integers(2, 5)):
        cy, cx, r = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.1, 0.4)
        blob = np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2 * r * r))
        img += blob[..., None] * rng.uniform(-0.3, 0.3, 3)
    # fine grain so every scene carries some high-frequency detail
    img += rng.normal(0, 0.02, (n, n, 1))
    return img


def _scene_texture(rng, n):
    img = _gradient_bg(rng, n) * 0.5 + 0.25
    y, x = np.mgrid[0:n, 0:n].astype(np.float64)
    for _ in range(rng.integers(3, 7)):
        f = rng.uniform(0.03, 0.4)
        th = rng.uniform(0, math.pi)
        amp = rng.uniform(0.03, 0.12)
        wave = np.sin(2 * math.pi * f * (x * math.cos(th) + y * math.sin(th)) + rng.uniform(0, 2 * math.pi))
        img += amp * wave[..., None] * rng.uniform(0.5, 1.0, 3)
    grain = rng.normal(0, 1, (n, n))
    grain = correlate1d(correlate1d(grain, [0.25, 0.5, 0.25], 0, mode="wrap"), [0.25, 0.5, 0.25], 1, mode="wrap")
    img += 0.08 * grain[..., None]
    return img


def _scene_shapes(rng, n):
    img = _gradient_bg(rng, n)
    y, x = _grid(n)
    for _ in range(rng.integers(3, 8)):
        color = rng.uniform(0, 1, 3)
        if rng.random() < 0.5:
            y0, x0 = rng.uniform(0, 0.8, 2)
            h, w = rng.uniform(0.1, 0.5, 2)
            m = (y >= y0) & (y < y0 + h) & (x >= x0) & (x < x0 + w)
        else:
            cy, cx, r = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.05, 0.3)
            m = (y - cy) ** 2 + (x - cx) ** 2 < r * r
        img[m] = color
    img += rng.normal(0, 0.015, (n, n, 1))
    return img


def _scene_text(rng, n):
    page = rng.uniform(0.75, 1.0, 3)
    ink = rng.uniform(0.0, 0.3, 3)
    img = np.broadcast_to(page, (n, n, 3)).copy()
    line_h = max(int(rng.integers(4, 8) * n / 64), 3)
    row = int(rng.integers(1, 4))
    while row + line_h < n:
        col = int(rng.integers(1, 4))
        glyph_h = max(line_h - 2, 2)
        while col < n - 2:
            gw = int(rng.integers(1, 4))
            if rng.random() < 0.8:
                pattern = rng.random((glyph_h, gw)) < 0.6
                sub = img[row:row + glyph_h, col:col + gw]
                sub[pattern[: sub.shape[0], : sub.shape[1]]] = ink
            col += gw + int(rng.integers(1, 3)) + (3 if rng.random() < 0.15 else 0)
        row += line_h + int(rng.integers(1, 3))
    img += rng.normal(0, 0.01, (n, n, 1))
    return img


_SCENES = {"gradient": _scene_gradient, "texture": _scene_texture, "shapes": _scene_shapes, "text": _scene_text}


def _resize(img: np.ndarray, size: int) -> np.ndarray:
    chans = [np.asarray(Image.fromarray(img[..., c].astype(np.float32), mode="F").resize((size, size), Image.BILINEAR))
             for c in range(3)]
    return np.stack(chans, axis=-1).astype(np.float64)


def render_scene(spec: SceneSpec, content_scale: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    n = max(int(round(spec.size * content_scale)), 4)
    img = _SCENES[spec.kind](rng, n)
    if n != spec.size:
        img = _resize(img, spec.size)
    return np.clip(img, 0.0, 1.0)


def generate_scene(spec: SceneSpec, domain: str = "", content_scale: float = 1.0, sample_id: str = "") -> ImageSample:
    """Deterministic procedural image labelled as an original capture."""
    return ImageSample(render_scene(spec, content_scale), ORIGINAL, domain, sample_id)


# -- artefacts ------------------------------------------------------------------------

def _pixels(img):
    return img.pixels if isinstance(img, ImageSample) else np.asarray(img, dtype=np.float64)


def apply_moire(img, freq: float, angle: float, amplitude: float, phase: float = 0.0,
                channel_phase=MOIRE_CHANNEL_PHASE) -> np.ndarray:
    """Multiply each channel by ``1 + amplitude * sin(2 pi freq (x cos a + y sin a) + phase + offset_c)``.

    Zero ``channel_phase`` offsets give an achromatic grating.
    """
    if not 0 <= amplitude <= 1:
        raise ValueError("moire amplitude must lie in [0, 1]")
    px = _pixels(img)
    if amplitude == 0:
        return px.copy()
    h, w = px.shape[:2]
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    arg = 2 * math.pi * freq * (x * math.cos(angle) + y * math.sin(angle)) + phase
    factor = np.stack([1.0 + amplitude * np.sin(arg + off) for off in channel_phase], axis=-1)
    return np.clip(px * factor, 0.0, 1.0)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalised 1-D Gaussian taps over radius ceil(3 sigma)."""
    if sigma <= 0:
        return np.ones(1)
    r = int(math.ceil(3 * sigma))
    t = np.arange(-r, r + 1, dtype=np.float64)
    with np.errstate(over="ignore"):
        k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def apply_blur(img, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with edge-replicate padding."""
    if sigma < 0:
        raise ValueError("blur sigma must be >= 0")
    px = _pixels(img)
    if sigma == 0:
        return px.copy()
    k = gaussian_kernel(sigma)
    return correlate1d(correlate1d(px, k, axis=0, mode="nearest"), k, axis=1, mode="nearest")


def apply_noise(img, std: float, rng: np.random.Generator) -> np.ndarray:
    if std < 0:
        raise ValueError("noise std must be >= 0")
    px = _pixels(img)
    if std == 0:
        return px.copy()
    return np.clip(px + rng.normal(0.0, std, px.shape), 0.0, 1.0)


def apply_tone(img, gamma: float, tint=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Per-channel power law followed by an additive tint, clipped to [0, 1]."""
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    px = _pixels(img)
    tint = np.asarray(tint, dtype=np.float64)
    if gamma == 1 and not tint.any():
        return px.copy()
    return np.clip(px ** gamma + tint, 0.0, 1.0)


def apply_contrast(img, factor: float) -> np.ndarray:
    """Scale deviations from mid-grey by ``factor``, clipped to [0, 1]."""
    if factor < 0:
        raise ValueError("contrast factor must be >= 0")
    px = _pixels(img)
    if factor == 1:
        return px.copy()
    return np.clip(0.5 + factor * (px - 0.5), 0.0, 1.0)


def sample_artefacts(spec: DomainSpec, rng: np.random.Generator) -> dict:
    """Draw one recapture's artefact parameters around the domain's nominal values."""
    j = spec.jitter

    def spread():
        return 1.0 + rng.uniform(-j, j)

    return {
        "blur_sigma": spec.blur_sigma * spread(),
        "moire_frequency": spec.moire_frequency * spread(),
        "moire_angle": spec.moire_angle + rng.uniform(-j, j) * math.pi / 4,
        "moire_amplitude": min(spec.moire_amplitude * spread(), 1.0),
        "moire_phase": rng.uniform(0, 2 * math.pi),
        "contrast_gamma": spec.contrast_gamma ** spread(),
        "tint": tuple(t * spread() for t in spec.tint),
        "noise_std": min(spec.noise_std * spread(), 1.0),
    }


def recapture(img, spec: DomainSpec, rng: np.random.Generator | None = None, sample_id: str = "") -> ImageSample:
    """Blur, moire, tone/tint, then noise; label becomes recaptured."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    a = sample_artefacts(spec, rng)
    px = apply_blur(img, a["blur_sigma"])
    px = apply_moire(px, a["moire_frequency"], a["moire_angle"], a["moire_amplitude"], a["moire_phase"])
    px = apply_tone(px, a["contrast_gamma"], a["tint"])
    px = apply_noise(px, a["noise_std"], rng)
    return ImageSample(px, RECAPTURED, spec.domain_id, sample_id)


def quantize(px: np.ndarray) -> np.ndarray:
    """Round to 8-bit levels so images survive a PNG round trip bit-exactly."""
    return to_float(to_uint8(px))


def to_uint8(px: np.ndarray) -> np.ndarray:
    return np.round(np.clip(px, 0.0, 1.0) * 255.0).astype(np.uint8)


def to_float(u8: np.ndarray) -> np.ndarray:
    return u8.astype(np.float32) / np.float32(255.0)


def sample_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index, stream]))


def build_domain(spec: DomainSpec, n_pairs: int) -> DomainDataset:
    """``n_pairs`` scenes, each as an original and as a recapture of that original."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    samples_o, samples_r = [], []
    for i in range(n_pairs):
        rng = sample_rng(spec.seed, i)
        kind = spec.scene_kinds[int(rng.integers(len(spec.scene_kinds)))]
        scene = SceneSpec(kind, spec.image_size, int(rng.integers(2 ** 31)))
        clean = apply_tone(render_scene(scene, spec.content_scale), spec.capture_gamma, spec.capture_tint)
        clean = apply_contrast(clean, spec.capture_contrast)
        original = clean
        if spec.capture_noise > 0:
            original = apply_noise(clean, spec.capture_noise, sample_rng(spec.seed, i, 1))
        samples_o.append(ImageSample(quantize(original), ORIGINAL, spec.domain_id, f"{spec.domain_id}-{i:05d}-o"))
        rec = recapture(original, spec, sample_rng(spec.seed, i, 2), f"{spec.domain_id}-{i:05d}-r")
        rec.pixels = quantize(rec.pixels)
        samples_r.append(rec)
    return DomainDataset(spec.domain_id, samples_o + samples_r)
