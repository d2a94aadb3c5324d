"""Experiment configuration files (TOML), validated in full before any compute."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from recapdet.augment import AugConfig
from recapdet.errors import ConfigError
from recapdet.harness.splits import SplitSpec
from recapdet.harness.training import DomainAdvConfig, TrainConfig
from recapdet.swin import SwinConfig
from recapdet.synth import DomainSpec, default_domains


@dataclass
class SynthConfig:
    n_pairs: int = 200

    def __post_init__(self):
        if self.n_pairs < 1:
            raise ConfigError(f"n_pairs must be >= 1, got {self.n_pairs}")


@dataclass
class TsneConfig:
    perplexity: float = 30.0
    iters: int = 1000
    exaggeration_iters: int = 250
    n_per_domain: int = 200

    def __post_init__(self):
        if self.perplexity <= 0 or self.iters < 1 or self.exaggeration_iters < 0 or self.n_per_domain < 1:
            raise ConfigError("tsne perplexity, iters and n_per_domain must be positive")


@dataclass
class BaselineConfig:
    extractor: str = "lbp"
    reg: float = 1e-3
    epochs: int = 300

    def __post_init__(self):
        if self.extractor not in ("lbp", "corr"):
            raise ConfigError(f"baseline extractor must be 'lbp' or 'corr', got {self.extractor!r}")


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/default"
    protocols: object = "all"
    train_protocol: str = "inter"
    model: SwinConfig = field(default_factory=SwinConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    augmentation: AugConfig = field(default_factory=AugConfig)
    adversarial: DomainAdvConfig = field(default_factory=DomainAdvConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    synth: SynthConfig = field(default_factory=SynthConfig)
    tsne: TsneConfig = field(default_factory=TsneConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    domains: list = field(default_factory=list)
    manifests: list = field(default_factory=list)

    def domain_specs(self) -> list:
        return list(self.domains) if self.domains else default_domains(self.seed, self.model.input_size)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("seed", "out", "protocols", "train_protocol", "manifests")}
        d["model"] = self.model.to_dict()
        for k in ("training", "augmentation", "adversarial", "split", "synth", "tsne", "baseline"):
            d[k] = dataclasses.asdict(getattr(self, k))
        d["domains"] = [s.to_dict() for s in self.domain_specs()]
        return d


SECTIONS = {
    "model": SwinConfig, "training": TrainConfig, "augmentation": AugConfig, "adversarial": DomainAdvConfig,
    "split": SplitSpec, "synth": SynthConfig, "tsne": TsneConfig, "baseline": BaselineConfig,
}
TOP_LEVEL = {"seed", "out", "protocols", "train_protocol", "domains", "manifests"} | set(SECTIONS)
TUPLE_FIELDS = {"depths", "num_heads", "normalize_mean", "normalize_std", "tint", "capture_tint", "scene_kinds"}


def _build(cls, raw, where: str, problems: list):
    if not isinstance(raw, dict):
        problems.append(f"[{where}] must be a table")
        return None
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    for k in unknown:
        problems.append(f"[{where}] unknown key {k!r}")
    kwargs = {k: (tuple(v) if k in TUPLE_FIELDS and isinstance(v, list) else v) for k, v in raw.items() if k in names}
    try:
        obj = cls(**kwargs)
    except ConfigError as exc:
        problems.extend(f"[{where}] {p}" for p in exc.problems)
        return None
    except (TypeError, ValueError) as exc:
        problems.append(f"[{where}] {exc}")
        return None
    return None if unknown else obj


def parse_config(raw: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig`, listing every offending key on failure.

    ``overrides`` may set ``seed``, ``out``, ``epochs`` and ``input_size``.
    """
    raw = {k: (dict(v) if isinstance(v, dict) else v) for k, v in raw.items()}
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    problems = [f"unknown top-level key {k!r}" for k in sorted(set(raw) - TOP_LEVEL)]
    if "epochs" in overrides:
        raw.setdefault("training", {})["epochs"] = overrides["epochs"]
    if "input_size" in overrides:
        raw.setdefault("model", {})["input_size"] = overrides["input_size"]
        raw.setdefault("training", {})["input_size"] = overrides["input_size"]
    seed = overrides.get("seed", raw.get("seed", 0))
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        problems.append(f"seed must be a non-negative integer, got {seed!r}")
        seed = 0
    training = raw.setdefault("training", {})
    if "seed" in overrides or "seed" not in training:
        training["seed"] = seed
    model_raw = raw.get("model", {})
    if "input_size" in model_raw:
        raw.setdefault("training", {}).setdefault("input_size", model_raw["input_size"])

    built = {name: _build(cls, raw.get(name, {}), name, problems) for name, cls in SECTIONS.items()}

    domains = []
    for i, d in enumerate(raw.get("domains", [])):
        spec = _build(DomainSpec, d, f"domains.{i}", problems)
        if spec is not None:
            domains.append(spec)
    if len({d.domain_id for d in domains}) != len(domains):
        problems.append("domain ids must be unique")
    manifests = raw.get("manifests", [])
    if not isinstance(manifests, list) or not all(isinstance(m, str) for m in manifests):
        problems.append("manifests must be a list of paths")
    protocols = raw.get("protocols", "all")
    if not (protocols == "all" or (isinstance(protocols, list) and all(isinstance(p, str) for p in protocols))):
        problems.append("protocols must be 'all' or a list of protocol names")
    if built["model"] and built["training"] and built["model"].input_size != built["training"].input_size:
        problems.append(f"[training] input_size {built['training'].input_size} differs from "
                        f"[model] input_size {built['model'].input_size}")
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems), problems)
    return ExperimentConfig(seed=seed, out=str(overrides.get("out", raw.get("out", "runs/default"))),
                            protocols=protocols, train_protocol=str(raw.get("train_protocol", "inter")),
                            domains=domains, manifests=list(manifests), **built)


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    if path is None:
        return parse_config({}, overrides)
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc
    return parse_config(raw, overrides)
