"""Image samples and labelled collections shared across the package."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# Class indices follow the two-class loss convention: index 0 is the
# recaptured class, index 1 the original (single-capture) class.
RECAPTURED = 0
ORIGINAL = 1
LABEL_NAMES = {RECAPTURED: "recaptured", ORIGINAL: "original"}
LABEL_IDS = {v: k for k, v in LABEL_NAMES.items()}


@dataclass
class ImageSample:
    """An H x W x 3 float image in [0, 1] with class label and domain id."""

    pixels: np.ndarray
    label: int
    domain: str
    sample_id: str = ""

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"expected H x W x 3 pixels, got {self.pixels.shape}")
        if self.label not in LABEL_NAMES:
            raise ValueError(f"label must be {RECAPTURED} (recaptured) or {ORIGINAL} (original)")

    @property
    def size(self) -> tuple:
        return self.pixels.shape[:2]


@dataclass
class DomainDataset:
    """Samples belonging to a single domain (or a pooled set of domains)."""

    name: str
    samples: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    @property
    def domains(self) -> list:
        return [s.domain for s in self.samples]

    @property
    def ids(self) -> list:
        return [s.sample_id for s in self.samples]

    def pixels(self) -> np.ndarray:
        return np.stack([s.pixels for s in self.samples]).astype(np.float32)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for s in self.samples:
            h.update(s.sample_id.encode())
            h.update(bytes([s.label]))
            h.update(np.ascontiguousarray(s.pixels, dtype=np.float32).tobytes())
        return h.hexdigest()

    def subset(self, indices: Iterable[int], name: str | None = None) -> "DomainDataset":
        return DomainDataset(name or self.name, [self.samples[i] for i in indices])


def pool(datasets: Sequence[DomainDataset], name: str | None = None) -> DomainDataset:
    samples = [s for d in datasets for s in d.samples]
    return DomainDataset(name or "+".join(d.name for d in datasets), samples)
