"""Mini-batch training and evaluation of the window-attention classifier."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from recapdet import functional as F
from recapdet.augment import AugConfig, augment_batch, normalize
from recapdet.data import ORIGINAL, RECAPTURED, DomainDataset
from recapdet.errors import ConfigError
from recapdet.harness.metrics import MetricsReport, compute_metrics
from recapdet.optim import AdamState, adam_step
from recapdet.swin import SwinClassifier, SwinConfig
from recapdet.tensor import Tensor, backward, no_grad, parameter

OPTIMIZERS = ("adam",)
LOSSES = ("cross_entropy",)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 10
    optimizer: str = "adam"
    loss: str = "cross_entropy"
    input_size: int = 64
    seed: int = 0
    augment: bool = True
    eval_batch_size: int = 64

    def problems(self) -> list:
        out = []
        if not self.learning_rate > 0:
            out.append(f"learning_rate must be positive, got {self.learning_rate}")
        for k in ("batch_size", "input_size", "eval_batch_size"):
            if int(getattr(self, k)) < 1:
                out.append(f"{k} must be positive, got {getattr(self, k)}")
        if int(self.epochs) < 0:
            out.append(f"epochs must be >= 0, got {self.epochs}")
        if self.optimizer not in OPTIMIZERS:
            out.append(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.loss not in LOSSES:
            out.append(f"loss must be one of {LOSSES}, got {self.loss!r}")
        return out

    def __post_init__(self):
        p = self.problems()
        if p:
            raise ConfigError("invalid TrainConfig: " + "; ".join(p), p)


@dataclass
class DomainAdvConfig:
    enabled: bool = False
    weight: float = 0.0
    width: int = 64
    apply_to: str = "original"

    def __post_init__(self):
        p = []
        if self.weight < 0:
            p.append(f"adversarial weight must be >= 0, got {self.weight}")
        if self.width < 1:
            p.append(f"discriminator width must be positive, got {self.width}")
        if self.apply_to not in ("original", "all"):
            p.append(f"apply_to must be 'original' or 'all', got {self.apply_to!r}")
        if p:
            raise ConfigError("invalid DomainAdvConfig: " + "; ".join(p), p)


@dataclass
class TrainRun:
    config: dict
    seed: int
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)
    adv_losses: list = field(default_factory=list)
    wall_clock: float = 0.0
    checkpoint: str | None = None

    @property
    def n_epochs(self) -> int:
        return len(self.train_loss)


class DomainDiscriminator:
    """One hidden GELU layer mapping pooled features to domain logits."""

    def __init__(self, in_dim: int, width: int, n_domains: int, rng: np.random.Generator, dtype=np.float32):
        def w(shape):
            return parameter(np.clip(rng.normal(0, 0.02, shape), -0.04, 0.04), dtype)

        self.params = [w((in_dim, width)), parameter(np.zeros(width), dtype),
                       w((width, n_domains)), parameter(np.zeros(n_domains), dtype)]

    def __call__(self, feats: Tensor) -> Tensor:
        w1, b1, w2, b2 = self.params
        return F.linear(F.gelu(F.linear(feats, w1, b1)), w2, b2)


def _one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    t = np.zeros((len(labels), k), dtype=np.float32)
    t[np.arange(len(labels)), labels] = 1.0
    return t


def _streams(seed: int) -> dict:
    init, shuffle, aug, adv = np.random.SeedSequence(seed).spawn(4)
    return {"init": int(init.generate_state(1)[0]), "shuffle": np.random.default_rng(shuffle),
            "aug": np.random.default_rng(aug), "adv": np.random.default_rng(adv)}


def predict_logits(model: SwinClassifier, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    out = []
    with no_grad():
        for i in range(0, len(x), batch_size):
            out.append(model(x[i:i + batch_size]).data)
    return np.concatenate(out)


def _check_inputs(model_cfg: SwinConfig, train_cfg: TrainConfig, sets: dict) -> None:
    problems = []
    if train_cfg.input_size != model_cfg.input_size:
        problems.append(f"training input_size {train_cfg.input_size} != model input_size {model_cfg.input_size}")
    for name, ds in sets.items():
        if ds is None or len(ds) == 0:
            problems.append(f"{name} set is empty")
        elif ds[0].pixels.shape[:2] != (model_cfg.input_size, model_cfg.input_size):
            problems.append(f"{name} images are {ds[0].pixels.shape[:2]}, model expects {model_cfg.input_size}")
    if problems:
        raise ConfigError("cannot train: " + "; ".join(problems), problems)


def train(model_cfg: SwinConfig, train_set: DomainDataset, val_set: DomainDataset,
          train_cfg: TrainConfig | None = None, aug_cfg: AugConfig | None = None,
          adv_cfg: DomainAdvConfig | None = None, model: SwinClassifier | None = None) -> tuple:
    """Train with seeded shuffling and train-only augmentation.

    Returns ``(model, TrainRun)``. Passing ``model`` continues from its
    current weights instead of a fresh initialisation.
    """
    train_cfg = train_cfg or TrainConfig(input_size=model_cfg.input_size)
    aug_cfg = aug_cfg or AugConfig()
    adv_cfg = adv_cfg or DomainAdvConfig()
    _check_inputs(model_cfg, train_cfg, {"train": train_set, "validation": val_set})

    streams = _streams(train_cfg.seed)
    if model is None:
        model = SwinClassifier(model_cfg, seed=streams["init"])
    params = model.parameters()
    opt = AdamState(learning_rate=train_cfg.learning_rate)

    x_all = train_set.pixels()
    y_all = train_set.labels
    doms = train_set.domains
    domain_names = sorted(set(doms))
    dom_idx = np.array([domain_names.index(d) for d in doms], dtype=np.int64)
    x_val = normalize(val_set.pixels(), aug_cfg.normalize_mean, aug_cfg.normalize_std)
    y_val = val_set.labels

    disc = disc_opt = None
    if adv_cfg.enabled:
        disc = DomainDiscriminator(model_cfg.feature_dim, adv_cfg.width, max(len(domain_names), 2), streams["adv"])
        disc_opt = AdamState(learning_rate=train_cfg.learning_rate)

    run = TrainRun(config={"model": model_cfg.to_dict(), "train": asdict(train_cfg), "aug": asdict(aug_cfg),
                           "adv": asdict(adv_cfg)}, seed=train_cfg.seed)
    start = time.perf_counter()
    n, bs = len(y_all), train_cfg.batch_size
    k = model_cfg.num_classes
    for _ in range(train_cfg.epochs):
        perm = streams["shuffle"].permutation(n)
        loss_sum = correct = 0.0
        for b0 in range(0, n, bs):
            idx = perm[b0:b0 + bs]
            if train_cfg.augment:
                x, targets = augment_batch(x_all[idx], y_all[idx], [doms[i] for i in idx], aug_cfg, streams["aug"], k)
            else:
                x = normalize(x_all[idx], aug_cfg.normalize_mean, aug_cfg.normalize_std)
                targets = _one_hot(y_all[idx], k)
            feats = model.extract_features(x)
            logits = model.head(feats)
            loss = F.cross_entropy(logits, targets)
            total = loss
            if disc is not None:
                sel = np.arange(len(idx)) if adv_cfg.apply_to == "all" else np.flatnonzero(y_all[idx] == ORIGINAL)
                if len(sel):
                    adv = F.cross_entropy(disc(F.grad_reverse(F.take(feats, sel, axis=0))), dom_idx[idx][sel])
                    total = total + adv * adv_cfg.weight
                    run.adv_losses.append(float(adv.data))
            for p in params:
                p.grad = None
            if disc is not None:
                for p in disc.params:
                    p.grad = None
            backward(total)
            adam_step(params, [p.grad for p in params], opt)
            if disc is not None:
                adam_step(disc.params, [p.grad for p in disc.params], disc_opt)
            lv = float(loss.data)
            run.step_losses.append(lv)
            loss_sum += lv * len(idx)
            correct += float((logits.data.argmax(axis=1) == targets.argmax(axis=1)).sum())
        run.train_loss.append(loss_sum / n)
        run.train_acc.append(correct / n)
        vl = predict_logits(model, x_val, train_cfg.eval_batch_size)
        with no_grad():
            run.val_loss.append(float(F.cross_entropy(Tensor(vl), y_val).data))
        run.val_acc.append(float((vl.argmax(axis=1) == y_val).mean()))
    run.wall_clock = time.perf_counter() - start
    return model, run


def score(model: SwinClassifier, dataset: DomainDataset, aug_cfg: AugConfig | None = None,
          batch_size: int = 64) -> np.ndarray:
    """Softmax probability of the recaptured class for every sample."""
    aug_cfg = aug_cfg or AugConfig()
    imgs = dataset.pixels()
    if aug_cfg.augment_eval:
        x, _ = augment_batch(imgs, dataset.labels, dataset.domains, aug_cfg,
                             np.random.default_rng(aug_cfg.seed), model.cfg.num_classes)
    else:
        x = normalize(imgs, aug_cfg.normalize_mean, aug_cfg.normalize_std)
    logits = predict_logits(model, x, batch_size)
    with no_grad():
        probs = F.softmax(Tensor(logits.astype(np.float64)), axis=-1).data
    return probs[:, RECAPTURED]


def evaluate(model: SwinClassifier, dataset: DomainDataset, aug_cfg: AugConfig | None = None,
             batch_size: int = 64) -> MetricsReport:
    if len(dataset) == 0:
        raise ValueError("test set is empty")
    return compute_metrics(score(model, dataset, aug_cfg, batch_size), dataset.labels)
