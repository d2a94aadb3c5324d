"""
Where do the domains sit in feature space?
==========================================

Trains on the pooled domains, embeds pooled features of 200 images per
domain with exact t-SNE, and reports how well the domains separate.

    python demos/03_feature_embedding.py [epochs]
"""

import sys
from pathlib import Path

import numpy as np

from recapdet.augment import normalize
from recapdet.cli import sample_per_domain
from recapdet.harness import TrainConfig, assemble, build_protocols, silhouette, train, tsne_embed
from recapdet.harness.reports import tsne_rows
from recapdet.svg import scatter_svg
from recapdet.swin import SwinConfig
from recapdet.synth import build_domain, default_domains
from recapdet.tensor import no_grad

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 10
datasets = {s.domain_id: build_domain(s, 200) for s in default_domains(seed=0)}
inter = next(p for p in build_protocols(sorted(datasets)) if p.kind == "inter")
data = assemble(inter, datasets)
model, _ = train(SwinConfig(), data.train, data.val, TrainConfig(epochs=epochs))

ds = sample_per_domain(datasets, 200, seed=0)
with no_grad():
    feats = model.extract_features(normalize(ds.pixels())).data.astype(np.float64)
print(f"features {feats.shape}")

res = tsne_embed(feats, perplexity=30, iters=1000, seed=0)
for it, kl in res.kl_history[::4]:
    print(f"iter {it:4d}  KL {kl:.4f}")

dom_sil = silhouette(res.points, ds.domains)
cls_sil = silhouette(res.points, ds.labels)
print(f"silhouette by domain {dom_sil:.3f}, by class {cls_sil:.3f}")

# six colours: every (domain, class) pair
cats = [r[3] for r in tsne_rows(ds, res.points)]
out = Path("demo_out")
out.mkdir(exist_ok=True)
(out / "tsne.svg").write_text(scatter_svg(res.points, cats, "t-SNE of pooled features"))
print(f"wrote {out / 'tsne.svg'}")
