"""
Transformer versus LBP on one domain
====================================

Trains the toy shifted-window model on a single synthetic domain, fits the
LBP + linear baseline on the same split, and writes both ROC curves.

    python demos/02_train_and_compare.py [domain] [epochs]
"""

import sys
from pathlib import Path

import numpy as np

from recapdet.baselines import LinearHyper, extract, predict_linear, train_linear
from recapdet.harness import TrainConfig, assemble, build_protocols, compute_metrics, evaluate, train
from recapdet.svg import roc_svg
from recapdet.swin import SwinConfig
from recapdet.synth import build_domain, default_domains

domain = sys.argv[1] if len(sys.argv) > 1 else "D1"
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 10

datasets = {s.domain_id: build_domain(s, 200) for s in default_domains(seed=0)}
protocol = next(p for p in build_protocols(sorted(datasets)) if p.name == f"intra-{domain}")
data = assemble(protocol, datasets)
print(f"{protocol.name}: {len(data.train)} train / {len(data.val)} val / {len(data.test)} test")

# 10 epochs of 320 images at batch 32 is 100 Adam steps
model, run = train(SwinConfig(), data.train, data.val, TrainConfig(epochs=epochs))
for e in range(run.n_epochs):
    print(f"epoch {e + 1:2d}  train loss {run.train_loss[e]:.4f}  val acc {run.val_acc[e]:.3f}")
swin = evaluate(model, data.test)

# The baseline sees the same train pool and the same test images.
lin = train_linear(extract("lbp", data.train.pixels()), data.train.labels, LinearHyper())
raw = predict_linear(lin, extract("lbp", data.test.pixels()))
lbp = compute_metrics(1.0 / (1.0 + np.exp(-raw)), data.test.labels)

for name, r in (("swin", swin), ("lbp", lbp)):
    print(f"{name:5s} acc {r.accuracy:.3f}  precision {r.precision:.3f}  recall {r.recall:.3f}  AUC {r.auc:.4f}")

out = Path("demo_out")
out.mkdir(exist_ok=True)
(out / f"roc_{protocol.name}.svg").write_text(
    roc_svg([("swin", swin.roc_points, swin.auc), ("lbp", lbp.roc_points, lbp.auc)], protocol.name))
print(f"wrote {out / f'roc_{protocol.name}.svg'}")
