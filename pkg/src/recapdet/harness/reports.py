"""CSV layouts for metrics, ROC points, epoch curves and embeddings."""

from __future__ import annotations

from recapdet.data import LABEL_NAMES
from recapdet.harness.metrics import MetricsReport
from recapdet.io import write_csv

METRICS_COLUMNS = ["protocol", "kind", "model", "train_domains", "test_domains", "n_train", "n_test",
                   "tp", "fp", "tn", "fn", "accuracy", "precision", "recall", "f1", "auc"]
ROC_COLUMNS = ["protocol", "model", "fpr", "tpr", "threshold"]
EPOCH_COLUMNS = ["protocol", "epoch", "train_loss", "train_acc", "val_loss", "val_acc"]
TSNE_COLUMNS = ["id", "domain", "label", "category", "x", "y"]


def metrics_row(name: str, kind: str, model: str, train_domains, test_domains, n_train: int, n_test: int,
                r: MetricsReport) -> list:
    return [name, kind, model, "+".join(train_domains), "+".join(test_domains), n_train, n_test,
            r.tp, r.fp, r.tn, r.fn, r.accuracy, r.precision, r.recall, r.f1, r.auc]


def roc_rows(name: str, model: str, r: MetricsReport) -> list:
    return [[name, model, f, t, th] for f, t, th in r.roc_points]


def epoch_rows(name: str, run) -> list:
    return [[name, i + 1, run.train_loss[i], run.train_acc[i], run.val_loss[i], run.val_acc[i]]
            for i in range(run.n_epochs)]


def write_metrics(path, rows):
    return write_csv(path, METRICS_COLUMNS, rows)


def write_roc(path, rows):
    return write_csv(path, ROC_COLUMNS, rows)


def write_epochs(path, rows):
    return write_csv(path, EPOCH_COLUMNS, rows)


def tsne_rows(dataset, points) -> list:
    return [[s.sample_id, s.domain, LABEL_NAMES[s.label], f"{s.domain}/{LABEL_NAMES[s.label]}", float(p[0]),
             float(p[1])] for s, p in zip(dataset, points)]


def write_tsne(path, rows):
    return write_csv(path, TSNE_COLUMNS, rows)
