"""Run named train/test protocols over a set of domains."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from recapdet.augment import AugConfig
from recapdet.data import DomainDataset, pool
from recapdet.errors import ConfigError
from recapdet.harness.metrics import MetricsReport, compute_metrics
from recapdet.harness.splits import ExperimentProtocol, SplitSpec, split_8_1_1
from recapdet.harness.training import DomainAdvConfig, TrainConfig, TrainRun, score, train
from recapdet.swin import SwinClassifier, SwinConfig


class LeakageError(RuntimeError):
    """A sample id appears in both the training pool and the test pool."""


@dataclass
class ProtocolData:
    train: DomainDataset
    val: DomainDataset
    test: DomainDataset


@dataclass
class ProtocolResult:
    protocol: ExperimentProtocol
    run: TrainRun
    report: MetricsReport
    model: SwinClassifier
    scores: np.ndarray
    n_train: int
    n_test: int


def audit_leakage(train_ids, test_ids) -> None:
    shared = set(train_ids) & set(test_ids)
    if shared:
        raise LeakageError(f"{len(shared)} sample ids shared between train and test, e.g. {sorted(shared)[:3]}")


def assemble(protocol: ExperimentProtocol, datasets: dict, split: SplitSpec = SplitSpec()) -> ProtocolData:
    """Pool the 8:1:1 splits of the training domains.

    Intra and inter protocols test on the held-out test splits; cross
    protocols test on every sample of the unseen domains.
    """
    missing = [d for d in set(protocol.train_domains) | set(protocol.test_domains) if d not in datasets]
    if missing:
        raise ConfigError(f"protocol {protocol.name} needs missing domains {sorted(missing)}")
    parts = {d: split_8_1_1(datasets[d], split) for d in protocol.train_domains}
    tr = pool([parts[d][0] for d in protocol.train_domains], "+".join(protocol.train_domains))
    va = pool([parts[d][1] for d in protocol.train_domains])
    if protocol.kind == "cross":
        te = pool([datasets[d] for d in protocol.test_domains])
    else:
        te = pool([parts[d][2] for d in protocol.test_domains])
    audit_leakage(tr.ids + va.ids, te.ids)
    return ProtocolData(tr, va, te)


def run_protocol(protocol: ExperimentProtocol, datasets: dict, model_cfg: SwinConfig | None = None,
                 train_cfg: TrainConfig | None = None, aug_cfg: AugConfig | None = None,
                 adv_cfg: DomainAdvConfig | None = None, split: SplitSpec | None = None) -> ProtocolResult:
    model_cfg = model_cfg or SwinConfig()
    aug_cfg = aug_cfg or AugConfig()
    data = assemble(protocol, datasets, split or SplitSpec())
    model, run = train(model_cfg, data.train, data.val, train_cfg, aug_cfg, adv_cfg)
    s = score(model, data.test, aug_cfg, (train_cfg or TrainConfig()).eval_batch_size)
    report = evaluate_scores(s, data.test)
    return ProtocolResult(protocol, run, report, model, s, len(data.train), len(data.test))


def evaluate_scores(scores: np.ndarray, test: DomainDataset) -> MetricsReport:
    return compute_metrics(scores, test.labels)
