"""Command-line entry point: ``recapdet synth|train|eval|baseline|tsne|protocols``.

Exit status is 0 on success, 1 when validation fails (bad config, manifest,
checkpoint or arguments) and 2 on any other runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from recapdet.augment import AugConfig
from recapdet.baselines import LinearHyper, extract, predict_linear, train_linear
from recapdet.checkpoint import load_checkpoint, save_checkpoint
from recapdet.config import ExperimentConfig, load_config, parse_config
from recapdet.data import DomainDataset, pool
from recapdet.errors import CheckpointError, ConfigError
from recapdet.harness import reports
from recapdet.harness.experiment import assemble
from recapdet.harness.metrics import compute_metrics
from recapdet.harness.splits import ExperimentProtocol, build_protocols
from recapdet.harness.training import evaluate, train
from recapdet.harness.tsne import silhouette, tsne_embed
from recapdet.io import file_sha256, load_dataset, write_csv, write_dataset, write_feature_csv
from recapdet.svg import roc_svg, scatter_svg
from recapdet.synth import build_domain

log = logging.getLogger("recapdet")


class UsageError(ConfigError):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def worker_count() -> int:
    raw = os.environ.get("RECAP_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"RECAP_THREADS must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"RECAP_THREADS must be a positive integer, got {raw!r}")
    return n


@contextmanager
def staged_output(out: Path):
    """Write into a scratch directory and publish it only when the block succeeds.

    On failure the scratch directory is removed and only ``error.log`` is left.
    """
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    stage = out / f".partial-{os.getpid()}"
    shutil.rmtree(stage, ignore_errors=True)
    stage.mkdir()
    try:
        yield stage
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        (out / "error.log").write_text(traceback.format_exc())
        raise
    for item in sorted(stage.iterdir()):
        dest = out / item.name
        if dest.is_dir():
            shutil.rmtree(dest)
        elif dest.exists():
            dest.unlink()
        item.rename(dest)
    stage.rmdir()


def _overrides(args) -> dict:
    return {"seed": getattr(args, "seed", None), "out": getattr(args, "out", None),
            "epochs": getattr(args, "epochs", None), "input_size": getattr(args, "input_size", None)}


def resolve_datasets(cfg: ExperimentConfig, data: str | None, manifests=None) -> dict:
    """Domain name -> dataset, from manifests, a synth output directory, or fresh synthesis."""
    if manifests:
        paths = [Path(m) for m in manifests]
    elif data:
        paths = sorted(Path(data).glob("*/manifest.json"))
        if not paths:
            raise ConfigError(f"no */manifest.json found under {data}")
    else:
        paths = [Path(m) for m in cfg.manifests]
    if paths:
        out = {}
        for p in paths:
            ds = load_dataset(p, cfg.model.input_size)
            if ds.name in out:
                raise ConfigError(f"dataset name {ds.name!r} appears in more than one manifest")
            out[ds.name] = ds
        return out
    return {s.domain_id: build_domain(s, cfg.synth.n_pairs) for s in cfg.domain_specs()}


def select_protocols(cfg: ExperimentConfig, names, wanted) -> list:
    protos = build_protocols(names)
    if wanted in (None, "all"):
        return protos
    wanted = [wanted] if isinstance(wanted, str) else list(wanted)
    known = {p.name: p for p in protos}
    missing = [w for w in wanted if w not in known]
    if missing:
        raise ConfigError(f"unknown protocol(s) {missing}; available: {sorted(known)}")
    return [known[w] for w in wanted]


def _checkpoint_extra(cfg: ExperimentConfig, protocol) -> dict:
    config = cfg.to_dict()
    # the output location is not part of the run and would break byte-identical checkpoints
    config.pop("out")
    return {"protocol": protocol.to_dict(), "config": config}


def _config_for_checkpoint(args, model, extra: dict) -> ExperimentConfig:
    """The ``--config`` file if given, else the run config stored in the checkpoint."""
    if args.config:
        cfg = load_config(args.config, _overrides(args))
    else:
        raw = dict(extra.get("config", {}))
        cfg = parse_config(raw, _overrides(args))
    if cfg.model != model.cfg:
        raise CheckpointError(f"checkpoint {args.checkpoint} was built for a different model config")
    return cfg


def _run_protocol_task(args):
    cfg, protocol, datasets = args
    data = assemble(protocol, datasets, cfg.split)
    model, run = train(cfg.model, data.train, data.val, cfg.training, cfg.augmentation, cfg.adversarial)
    report = evaluate(model, data.test, cfg.augmentation, cfg.training.eval_batch_size)
    return protocol, run, report, len(data.train), len(data.test), model


def run_protocols(cfg: ExperimentConfig, datasets: dict, protocols: list, workers: int = 1) -> list:
    tasks = [(cfg, p, datasets) for p in protocols]
    if workers <= 1 or len(tasks) == 1:
        return [_run_protocol_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks)), mp_context=get_context("spawn")) as ex:
        return list(ex.map(_run_protocol_task, tasks))


def baseline_report(extractor: str, protocol, datasets: dict, cfg: ExperimentConfig, cache: dict):
    data = assemble(protocol, datasets, cfg.split)

    def feats(ds: DomainDataset):
        missing = [i for i, s in enumerate(ds) if s.sample_id not in cache]
        if missing:
            vals = extract(extractor, [ds[i].pixels for i in missing])
            for i, v in zip(missing, vals):
                cache[ds[i].sample_id] = v
        return np.stack([cache[s.sample_id] for s in ds])

    model = train_linear(feats(data.train), data.train.labels,
                         LinearHyper(cfg.baseline.reg, cfg.baseline.epochs, cfg.seed))
    raw = predict_linear(model, feats(data.test))
    # a logistic squash keeps the 0.5 threshold at the decision boundary
    scores = 1.0 / (1.0 + np.exp(-np.clip(raw, -500, 500)))
    return compute_metrics(scores, data.test.labels), len(data.train), len(data.test)


# -- commands ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    specs = cfg.domain_specs()
    with staged_output(Path(cfg.out)) as stage:
        hashes = {}
        for spec in specs:
            ds = build_domain(spec, cfg.synth.n_pairs)
            manifest = write_dataset(stage / spec.domain_id, ds)
            files = {p.name: file_sha256(p) for p in sorted(manifest.parent.glob("*.png"))}
            hashes[spec.domain_id] = {"dataset_sha256": ds.content_hash(), "n_images": len(files), "files": files}
            print(f"{spec.domain_id}: {len(files)} images -> {Path(cfg.out) / spec.domain_id}")
        (stage / "hashes.json").write_text(json.dumps(hashes, indent=1, sort_keys=True) + "\n")
        (stage / "domains.json").write_text(json.dumps([s.to_dict() for s in specs], indent=1) + "\n")
    return 0


def _write_eval(stage: Path, name: str, kind: str, model_name: str, protocol, n_train: int, n_test: int, report):
    reports.write_metrics(stage / "metrics.csv", [reports.metrics_row(
        name, kind, model_name, protocol.train_domains, protocol.test_domains, n_train, n_test, report)])
    reports.write_roc(stage / "roc.csv", reports.roc_rows(name, model_name, report))
    (stage / "roc.svg").write_text(roc_svg([(name, report.roc_points, report.auc)], f"ROC {name}"))


def cmd_train(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    model = None
    if args.resume:
        model, _ = load_checkpoint(args.resume, expected=cfg.model)
    datasets = resolve_datasets(cfg, args.data, getattr(args, 'manifests', None))
    (protocol,) = select_protocols(cfg, sorted(datasets), args.protocol or cfg.train_protocol)
    with staged_output(Path(cfg.out)) as stage:
        data = assemble(protocol, datasets, cfg.split)
        model, run = train(cfg.model, data.train, data.val, cfg.training, cfg.augmentation, cfg.adversarial, model)
        report = evaluate(model, data.test, cfg.augmentation, cfg.training.eval_batch_size)
        save_checkpoint(stage / "model.ckpt", model, _checkpoint_extra(cfg, protocol))
        reports.write_epochs(stage / "epochs.csv", reports.epoch_rows(protocol.name, run))
        _write_eval(stage, protocol.name, protocol.kind, "swin", protocol, len(data.train), len(data.test), report)
        (stage / "run.json").write_text(json.dumps({"config": cfg.to_dict(), "seed": run.seed,
                                                    "wall_clock": run.wall_clock}, indent=1) + "\n")
        auc = "n/a" if report.auc is None else f"{report.auc:.4f}"
        print(f"{protocol.name}: accuracy {report.accuracy:.4f} AUC {auc}")
    return 0


def cmd_eval(args) -> int:
    model, extra = load_checkpoint(args.checkpoint)
    cfg = _config_for_checkpoint(args, model, extra)
    if args.manifest:
        test = load_dataset(args.manifest, model.cfg.input_size)
        doms = tuple(sorted(set(test.domains)))
        protocol = ExperimentProtocol(f"eval-{test.name}", doms, doms, "inter" if len(doms) > 1 else "intra")
        n_train = 0
    else:
        datasets = resolve_datasets(cfg, args.data, getattr(args, 'manifests', None))
        name = args.protocol or extra.get("protocol", {}).get("name")
        (protocol,) = select_protocols(cfg, sorted(datasets), name)
        data = assemble(protocol, datasets, cfg.split)
        test, n_train = data.test, len(data.train)
    with staged_output(Path(args.out)) as stage:
        report = evaluate(model, test, cfg.augmentation, cfg.training.eval_batch_size)
        _write_eval(stage, protocol.name, protocol.kind, "swin", protocol, n_train, len(test), report)
        auc = "n/a" if report.auc is None else f"{report.auc:.4f}"
        print(f"{protocol.name}: accuracy {report.accuracy:.4f} AUC {auc}")
    return 0


def cmd_baseline(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    datasets = resolve_datasets(cfg, args.data, getattr(args, 'manifests', None))
    protocols = select_protocols(cfg, sorted(datasets), args.protocol or cfg.protocols)
    with staged_output(Path(cfg.out)) as stage:
        cache, rows, roc_rows, curves = {}, [], [], []
        for p in protocols:
            report, n_train, n_test = baseline_report(args.extractor, p, datasets, cfg, cache)
            rows.append(reports.metrics_row(p.name, p.kind, args.extractor, p.train_domains, p.test_domains,
                                            n_train, n_test, report))
            roc_rows += reports.roc_rows(p.name, args.extractor, report)
            curves.append((p.name, report.roc_points, report.auc))
            print(f"{p.name}: {args.extractor} AUC {report.auc:.4f}" if report.auc is not None else p.name)
        reports.write_metrics(stage / "metrics.csv", rows)
        reports.write_roc(stage / "roc.csv", roc_rows)
        (stage / "roc.svg").write_text(roc_svg(curves, f"{args.extractor} baseline"))
        everything = pool([datasets[k] for k in sorted(datasets)])
        feats = np.stack([cache[s.sample_id] if s.sample_id in cache else extract(args.extractor, [s.pixels])[0]
                          for s in everything])
        write_feature_csv(stage / f"features_{args.extractor}.csv", everything, feats)
    return 0


def sample_per_domain(datasets: dict, n: int, seed: int) -> DomainDataset:
    """``n`` samples from every domain, split evenly between the classes where possible."""
    rng = np.random.default_rng(seed)
    picked = []
    for name in sorted(datasets):
        ds = datasets[name]
        if len(ds) < n:
            raise ConfigError(f"t-SNE needs {n} samples from {name}, only {len(ds)} available "
                              f"(short by {n - len(ds)})")
        labels = ds.labels
        idx = []
        for k, cls in enumerate(sorted(set(labels.tolist()))):
            pool_idx = np.flatnonzero(labels == cls)
            want = n // 2 + (n % 2 if k == 0 else 0)
            idx += rng.choice(pool_idx, size=min(want, len(pool_idx)), replace=False).tolist()
        if len(idx) < n:
            rest = np.setdiff1d(np.arange(len(ds)), idx)
            idx += rng.choice(rest, size=n - len(idx), replace=False).tolist()
        picked += [ds[i] for i in sorted(idx)]
    return DomainDataset("tsne", picked)


def tsne_for_model(model, datasets: dict, n: int, cfg: ExperimentConfig, aug: AugConfig):
    from recapdet.augment import normalize
    from recapdet.tensor import no_grad

    ds = sample_per_domain(datasets, n, cfg.seed)
    x = normalize(ds.pixels(), aug.normalize_mean, aug.normalize_std)
    feats = []
    with no_grad():
        for i in range(0, len(x), 64):
            feats.append(model.extract_features(x[i:i + 64]).data)
    feats = np.concatenate(feats).astype(np.float64)
    res = tsne_embed(feats, cfg.tsne.perplexity, cfg.tsne.iters, cfg.seed,
                     exaggeration_iters=cfg.tsne.exaggeration_iters)
    return ds, feats, res


def cmd_tsne(args) -> int:
    model, extra = load_checkpoint(args.checkpoint)
    cfg = _config_for_checkpoint(args, model, extra)
    if args.n_per_dataset is not None:
        cfg.tsne.n_per_domain = args.n_per_dataset
    datasets = resolve_datasets(cfg, args.data, getattr(args, 'manifests', None))
    with staged_output(Path(cfg.out)) as stage:
        ds, _, res = tsne_for_model(model, datasets, cfg.tsne.n_per_domain, cfg, cfg.augmentation)
        rows = reports.tsne_rows(ds, res.points)
        reports.write_tsne(stage / "tsne.csv", rows)
        (stage / "tsne.svg").write_text(scatter_svg(res.points, [r[3] for r in rows], "t-SNE of pooled features"))
        sil = silhouette(res.points, ds.domains)
        write_csv(stage / "tsne_summary.csv", ["n_points", "kl_initial", "kl_final", "domain_silhouette"],
                  [[len(ds), res.kl_initial, res.kl_final, sil]])
        print(f"{len(ds)} points, KL {res.kl_initial:.4f} -> {res.kl_final:.4f}, domain silhouette {sil:.4f}")
    return 0


def cmd_protocols(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    workers = worker_count()
    datasets = resolve_datasets(cfg, args.data, getattr(args, 'manifests', None))
    protocols = select_protocols(cfg, sorted(datasets), cfg.protocols)
    with staged_output(Path(cfg.out)) as stage:
        rows, roc_rows, epoch_rows, curves = [], [], [], []
        for protocol, run, report, n_train, n_test, _ in run_protocols(cfg, datasets, protocols, workers):
            rows.append(reports.metrics_row(protocol.name, protocol.kind, "swin", protocol.train_domains,
                                            protocol.test_domains, n_train, n_test, report))
            roc_rows += reports.roc_rows(protocol.name, "swin", report)
            epoch_rows += reports.epoch_rows(protocol.name, run)
            curves.append((protocol.name, report.roc_points, report.auc))
            auc = "n/a" if report.auc is None else f"{report.auc:.4f}"
            print(f"{protocol.name}: accuracy {report.accuracy:.4f} AUC {auc}")
        if args.baseline:
            cache = {}
            for p in protocols:
                report, n_train, n_test = baseline_report(args.baseline, p, datasets, cfg, cache)
                rows.append(reports.metrics_row(p.name, p.kind, args.baseline, p.train_domains, p.test_domains,
                                                n_train, n_test, report))
                roc_rows += reports.roc_rows(p.name, args.baseline, report)
        reports.write_metrics(stage / "metrics.csv", rows)
        reports.write_roc(stage / "roc.csv", roc_rows)
        reports.write_epochs(stage / "epochs.csv", epoch_rows)
        (stage / "roc.svg").write_text(roc_svg(curves, "ROC per protocol"))
    return 0


def build_parser() -> Parser:
    parser = Parser(prog="recapdet", description="Recaptured-image detection experiments.")
    sub = parser.add_subparsers(dest="command", parser_class=Parser)
    sub.required = True

    def common(p, out_required=False):
        p.add_argument("--config", help="TOML experiment config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--epochs", type=int, help="override training epochs")
        p.add_argument("--input-size", type=int, dest="input_size", help="override model input size")
        return p

    def data_args(p):
        p.add_argument("--data", help="directory holding <domain>/manifest.json")
        p.add_argument("--manifest", action="append", dest="manifests", help="dataset manifest (repeatable)")

    p = common(sub.add_parser("synth", help="generate synthetic domains as PNG + manifest"))
    p.set_defaults(func=cmd_synth)

    p = common(sub.add_parser("train", help="train one protocol and write a checkpoint"))
    data_args(p)
    p.add_argument("--protocol", help="protocol name (default: config train_protocol)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("eval", help="evaluate a checkpoint"), out_required=True)
    p.add_argument("--checkpoint", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--manifest", help="evaluate on every sample of this manifest")
    group.add_argument("--protocol", help="evaluate on this protocol's test pool")
    p.add_argument("--data", help="directory holding <domain>/manifest.json")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("baseline", help="handcrafted features + linear model"))
    p.add_argument("--extractor", required=True, choices=("lbp", "corr"))
    p.add_argument("--protocol", help="protocol name (default: config protocols)")
    data_args(p)
    p.set_defaults(func=cmd_baseline)

    p = common(sub.add_parser("tsne", help="embed pooled features of a checkpoint"))
    p.add_argument("--checkpoint", required=True)
    data_args(p)
    p.add_argument("--n-per-dataset", type=int, dest="n_per_dataset")
    p.set_defaults(func=cmd_tsne)

    p = common(sub.add_parser("protocols", help="run every configured protocol"))
    data_args(p)
    p.add_argument("--baseline", choices=("lbp", "corr"), help="also report this baseline")
    p.set_defaults(func=cmd_protocols)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported, mapped to exit status 2
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
