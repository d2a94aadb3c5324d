"""CSV tables, PNG images and JSON dataset manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from recapdet.data import LABEL_IDS, LABEL_NAMES, DomainDataset, ImageSample
from recapdet.errors import ConfigError

MANIFEST_VERSION = 1


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if v is None:
        return ""
    return str(v)


def write_csv(path, header, rows) -> Path:
    """Write rows with a header; floats use their shortest round-trip repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"row has {len(row)} cells, header has {len(header)}")
            w.writerow([_cell(v) for v in row])
    return path


def _parse(s: str):
    if s == "":
        return None
    if s in ("true", "false"):
        return s == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def read_csv(path) -> tuple:
    """Return ``(header, rows)`` with ints, floats and booleans parsed back."""
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[_parse(c) for c in row] for row in r]
    return header, rows


def feature_header(dim: int) -> list:
    return ["id", "domain", "label"] + [f"f{i:02d}" for i in range(dim)]


def write_feature_csv(path, dataset: DomainDataset, features: np.ndarray) -> Path:
    if len(features) != len(dataset):
        raise ValueError(f"{len(features)} feature rows for {len(dataset)} samples")
    rows = [[s.sample_id, s.domain, LABEL_NAMES[s.label], *map(float, f)] for s, f in zip(dataset, features)]
    return write_csv(path, feature_header(features.shape[1]), rows)


# -- images -------------------------------------------------------------------------------

def save_png(path, pixels: np.ndarray) -> None:
    u8 = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path, format="PNG", optimize=False)


def load_image(path, size: int | None = None) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB")
        if size is not None and im.size != (size, size):
            im = im.resize((size, size), Image.BILINEAR)
        return np.asarray(im, dtype=np.uint8).astype(np.float32) / np.float32(255.0)


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- manifests ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    path: str
    label: str
    domain: str
    device: str | None = None


@dataclass
class Manifest:
    name: str
    version: int = MANIFEST_VERSION
    entries: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"name": self.name, "version": self.version, "entries": [asdict(e) for e in self.entries]}


def validate_manifest(m: Manifest, root: Path | None = None) -> None:
    problems = []
    if m.version != MANIFEST_VERSION:
        problems.append(f"manifest version {m.version} is not supported (expected {MANIFEST_VERSION})")
    seen = set()
    for e in m.entries:
        if e.path in seen:
            problems.append(f"duplicate path {e.path}")
        seen.add(e.path)
        if e.label not in LABEL_IDS:
            problems.append(f"{e.path}: label {e.label!r} not in {sorted(LABEL_IDS)}")
        if root is not None and not (root / e.path).is_file():
            problems.append(f"{e.path}: file not found under {root}")
    if problems:
        raise ConfigError(f"invalid manifest {m.name}: " + "; ".join(problems[:5]), problems)


def read_manifest(path) -> Manifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
        entries = [ManifestEntry(**e) for e in raw["entries"]]
        m = Manifest(raw["name"], raw.get("version", MANIFEST_VERSION), entries)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"malformed manifest {path}: {exc}") from exc
    validate_manifest(m, path.parent)
    return m


def write_manifest(path, m: Manifest) -> Path:
    path = Path(path)
    path.write_text(json.dumps(m.to_dict(), indent=1) + "\n")
    return path


def load_dataset(manifest_path, size: int | None = None) -> DomainDataset:
    """Load every image of a manifest; ids are the relative paths."""
    manifest_path = Path(manifest_path)
    m = read_manifest(manifest_path)
    samples = [ImageSample(load_image(manifest_path.parent / e.path, size), LABEL_IDS[e.label], e.domain, e.path)
               for e in m.entries]
    return DomainDataset(m.name, samples)


def write_dataset(directory, dataset: DomainDataset) -> Path:
    """PNG per sample plus ``manifest.json``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in dataset:
        rel = f"{s.sample_id}.png"
        save_png(directory / rel, s.pixels)
        entries.append(ManifestEntry(rel, LABEL_NAMES[s.label], s.domain))
    return write_manifest(directory / "manifest.json", Manifest(dataset.name, MANIFEST_VERSION, entries))
