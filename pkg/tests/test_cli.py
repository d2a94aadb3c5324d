"""Config parsing, file formats, SVG plots and the command-line front end."""

import json
import math
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recapdet.cli import main, sample_per_domain
from recapdet.config import ExperimentConfig, load_config, parse_config
from recapdet.data import DomainDataset, ImageSample
from recapdet.errors import ConfigError
from recapdet.harness.metrics import compute_metrics
from recapdet.harness.reports import METRICS_COLUMNS
from recapdet.io import (Manifest, ManifestEntry, load_dataset, load_image, read_csv, read_manifest,
                         save_png, validate_manifest, write_csv, write_dataset, write_manifest)
from recapdet.svg import roc_svg, scatter_svg, _map
from recapdet.synth import default_domains

TINY_TOML = """
seed = 3
train_protocol = "intra-D1"
protocols = ["intra-D1", "cross-D1+D2-D3"]

[model]
input_size = 16
patch_size = 2
embed_dim = 8
depths = [2, 2, 2]
num_heads = [1, 2, 2]
window_size = 2

[training]
epochs = 1
batch_size = 16

[synth]
n_pairs = 20

[tsne]
perplexity = 5
iters = 300
exaggeration_iters = 100
n_per_domain = 20
"""


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.toml"
    cfg.write_text(TINY_TOML)
    assert main(["synth", "--config", str(cfg), "--out", str(root / "data")]) == 0
    assert main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(root / "run")]) == 0
    return root, cfg


# -- config ----------------------------------------------------------------------------

def test_config_defaults_follow_training_table():
    cfg = load_config()
    assert cfg.training.learning_rate == 1e-4
    assert cfg.training.batch_size == 32
    assert cfg.training.epochs == 10
    assert cfg.training.optimizer == "adam"
    assert cfg.training.loss == "cross_entropy"
    assert cfg.model.input_size == cfg.training.input_size == 64
    assert [d.domain_id for d in cfg.domain_specs()] == ["D1", "D2", "D3"]


def test_config_lists_every_offending_key():
    raw = {"bogus": 1, "training": {"loss": "hinge", "warmup": 3}, "model": {"depth": 2}}
    with pytest.raises(ConfigError) as info:
        parse_config(raw)
    text = "\n".join(info.value.problems)
    for key in ("bogus", "warmup", "depth", "loss"):
        assert key in text


def test_config_overrides_and_seed_propagation():
    cfg = parse_config({"seed": 1, "model": {"input_size": 32}}, {"seed": 7, "epochs": 2, "out": "x"})
    assert cfg.seed == cfg.training.seed == 7
    assert cfg.training.epochs == 2
    assert cfg.training.input_size == 32
    assert cfg.out == "x"
    cfg = parse_config({}, {"input_size": 32})
    assert cfg.model.input_size == cfg.training.input_size == 32


def test_config_input_size_conflict_rejected():
    with pytest.raises(ConfigError, match="input_size"):
        parse_config({"model": {"input_size": 64}, "training": {"input_size": 32}})


def test_config_rejects_bad_toml_and_missing_file(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = = 1")
    with pytest.raises(ConfigError, match="TOML"):
        load_config(bad)
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.toml")


def test_config_domains_round_trip():
    cfg = ExperimentConfig()
    again = parse_config({k: v for k, v in cfg.to_dict().items()})
    assert again.domain_specs() == default_domains(0, 64)
    assert again.model == cfg.model and again.augmentation == cfg.augmentation


# -- csv and manifests -----------------------------------------------------------------

cells = st.one_of(st.integers(-10**6, 10**6), st.floats(allow_nan=False), st.booleans(),
                  st.text(alphabet="abcxyz-_+/.", min_size=1, max_size=8).filter(
                      lambda s: s not in ("inf", "-inf", "True", "False", "nan")
                      and not s.replace(".", "").replace("-", "").replace("+", "").isdigit()))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(cells, min_size=3, max_size=3), min_size=0, max_size=6))
def test_csv_round_trip_is_lossless(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("csv") / "t.csv"
    write_csv(path, ["a", "b", "c"], rows)
    header, back = read_csv(path)
    assert header == ["a", "b", "c"]
    assert len(back) == len(rows)
    for r, b in zip(rows, back):
        for x, y in zip(r, b):
            assert type(x) is type(y) or (isinstance(x, float) and isinstance(y, float))
            assert x == y


def test_png_round_trip_exact_on_8bit_values(tmp_path):
    rng = np.random.default_rng(0)
    px = (rng.integers(0, 256, (9, 7, 3)) / 255.0).astype(np.float32)
    save_png(tmp_path / "a.png", px)
    np.testing.assert_array_equal(load_image(tmp_path / "a.png"), px)


def test_dataset_round_trip_through_manifest(tmp_path):
    from recapdet.synth import build_domain

    ds = build_domain(default_domains(0, 16)[1], 5)
    m = write_dataset(tmp_path / "D2", ds)
    back = load_dataset(m)
    assert back.name == ds.name and len(back) == len(ds) == 10
    np.testing.assert_array_equal(back.pixels(), ds.pixels())
    assert list(back.labels) == list(ds.labels) and back.domains == ds.domains


def test_manifest_validation(tmp_path):
    save_png(tmp_path / "a.png", np.zeros((4, 4, 3)))
    ok = Manifest("x", 1, [ManifestEntry("a.png", "original", "X")])
    validate_manifest(ok, tmp_path)
    write_manifest(tmp_path / "m.json", ok)
    assert read_manifest(tmp_path / "m.json") == ok
    cases = [
        Manifest("x", 1, [ManifestEntry("a.png", "original", "X"), ManifestEntry("a.png", "original", "X")]),
        Manifest("x", 1, [ManifestEntry("a.png", "screen", "X")]),
        Manifest("x", 1, [ManifestEntry("b.png", "original", "X")]),
        Manifest("x", 9, [ManifestEntry("a.png", "original", "X")]),
    ]
    for bad, word in zip(cases, ("duplicate", "label", "not found", "version")):
        with pytest.raises(ConfigError, match=word):
            validate_manifest(bad, tmp_path)


# -- svg -------------------------------------------------------------------------------

NS = "{http://www.w3.org/2000/svg}"


def test_roc_svg_is_well_formed_with_one_polyline_per_curve():
    rng = np.random.default_rng(1)
    curves = []
    for k in range(3):
        labels = rng.integers(0, 2, 30)
        r = compute_metrics(rng.random(30), labels)
        curves.append((f"c{k}", r.roc_points, r.auc))
    root = ET.fromstring(roc_svg(curves, "t < & >"))
    assert len(root.findall(f"{NS}polyline")) == 3
    assert len(root.findall(f"{NS}line")) == 1
    texts = [t.text for t in root.iter(f"{NS}text")]
    assert any(f"AUC={curves[0][2]:.4f}" in (t or "") for t in texts)


def test_perfect_roc_passes_through_top_left():
    r = compute_metrics(np.array([0.9, 0.8, 0.2, 0.1]), np.array([0, 0, 1, 1]))
    assert r.auc == 1.0
    root = ET.fromstring(roc_svg([("p", r.roc_points, r.auc)]))
    pts = root.find(f"{NS}polyline").get("points").split()
    assert "%.2f,%.2f" % _map(0, 1) in pts


def test_scatter_svg_legend_lists_categories():
    pts = np.arange(24, dtype=float).reshape(12, 2)
    cats = [f"D{i % 3}/{'ab'[i % 2]}" for i in range(12)]
    root = ET.fromstring(scatter_svg(pts, cats))
    assert len([g for g in root.iter(f"{NS}g") if g.get("class") == "legend"]) == 6
    assert len(root.findall(f"{NS}circle")) == 12


# -- commands --------------------------------------------------------------------------

def test_synth_default_config_counts_and_hashes(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "a")]) == 0
    assert main(["synth", "--out", str(tmp_path / "b")]) == 0
    for d in ("D1", "D2", "D3"):
        pngs = list((tmp_path / "a" / d).glob("*.png"))
        assert len(pngs) == 400
        assert len(read_manifest(tmp_path / "a" / d / "manifest.json").entries) == len(pngs)
    ha = json.loads((tmp_path / "a" / "hashes.json").read_text())
    hb = json.loads((tmp_path / "b" / "hashes.json").read_text())
    assert ha == hb


def test_train_writes_one_row_epoch_csv(work):
    root, _ = work
    header, rows = read_csv(root / "run" / "epochs.csv")
    assert header[:2] == ["protocol", "epoch"] and len(rows) == 1
    assert {p.name for p in (root / "run").iterdir()} >= {"model.ckpt", "epochs.csv", "metrics.csv", "run.json"}


def test_resume_with_zero_epochs_reproduces_metrics(work):
    root, cfg = work
    out = root / "resumed"
    assert main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(out),
                 "--resume", str(root / "run" / "model.ckpt"), "--epochs", "0"]) == 0
    assert (out / "metrics.csv").read_bytes() == (root / "run" / "metrics.csv").read_bytes()


def test_invalid_loss_rejected_before_data_loading(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[training]\nloss = "hinge"\n')
    rc = main(["train", "--config", str(cfg), "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")])
    assert rc == 1
    err = capsys.readouterr().err
    assert "loss" in err and "manifest" not in err
    assert not (tmp_path / "o").exists()


def test_eval_prints_auc_matching_csv(work, capsys):
    root, _ = work
    assert main(["eval", "--checkpoint", str(root / "run" / "model.ckpt"), "--data", str(root / "data"),
                 "--out", str(root / "ev")]) == 0
    printed = capsys.readouterr().out.strip().split("AUC ")[-1]
    header, rows = read_csv(root / "ev" / "metrics.csv")
    assert printed == f"{rows[0][header.index('auc')]:.4f}"
    assert (root / "ev" / "metrics.csv").read_bytes() == (root / "run" / "metrics.csv").read_bytes()
    ET.fromstring((root / "ev" / "roc.svg").read_text())


def test_eval_on_manifest_and_mismatched_checkpoint(work, tmp_path):
    root, _ = work
    assert main(["eval", "--checkpoint", str(root / "run" / "model.ckpt"),
                 "--manifest", str(root / "data" / "D2" / "manifest.json"), "--out", str(tmp_path / "m")]) == 0
    header, rows = read_csv(tmp_path / "m" / "metrics.csv")
    assert rows[0][header.index("n_test")] == 40
    other = tmp_path / "other.toml"
    other.write_text("[model]\nembed_dim = 16\n")
    assert main(["eval", "--checkpoint", str(root / "run" / "model.ckpt"), "--config", str(other),
                 "--data", str(root / "data"), "--out", str(tmp_path / "x")]) == 1
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"not a checkpoint")
    assert main(["eval", "--checkpoint", str(junk), "--data", str(root / "data"), "--out", str(tmp_path / "y")]) == 1


def test_baseline_schema_and_corr_width(work):
    root, cfg = work
    assert main(["baseline", "--config", str(cfg), "--extractor", "corr", "--data", str(root / "data"),
                 "--out", str(root / "bl")]) == 0
    header, rows = read_csv(root / "bl" / "metrics.csv")
    assert header == METRICS_COLUMNS == read_csv(root / "run" / "metrics.csv")[0]
    assert {r[header.index("model")] for r in rows} == {"corr"}
    fh, frows = read_csv(root / "bl" / "features_corr.csv")
    assert len([c for c in fh if c.startswith("f")]) == 54
    assert len(frows) == 120


def test_lbp_baseline_beats_chance_on_synthetic_domains(work):
    root, cfg = work
    assert main(["baseline", "--config", str(cfg), "--extractor", "lbp", "--data", str(root / "data"),
                 "--protocol", "intra-D1", "--out", str(root / "lbp")]) == 0
    header, rows = read_csv(root / "lbp" / "metrics.csv")
    assert rows[0][header.index("auc")] > 0.5


def test_unknown_extractor_is_a_usage_error(capsys):
    assert main(["baseline", "--extractor", "sift"]) == 1
    assert "invalid choice" in capsys.readouterr().err


def test_tsne_points_categories_and_determinism(work, tmp_path):
    root, _ = work
    ck = str(root / "run" / "model.ckpt")
    for name in ("a", "b"):
        assert main(["tsne", "--checkpoint", ck, "--data", str(root / "data"), "--out", str(tmp_path / name)]) == 0
    header, rows = read_csv(tmp_path / "a" / "tsne.csv")
    assert len(rows) == 60
    assert len({r[header.index("category")] for r in rows}) == 6
    assert (tmp_path / "a" / "tsne.csv").read_bytes() == (tmp_path / "b" / "tsne.csv").read_bytes()
    root_svg = ET.fromstring((tmp_path / "a" / "tsne.svg").read_text())
    assert len([g for g in root_svg.iter(f"{NS}g") if g.get("class") == "legend"]) == 6


def test_tsne_shortfall_names_the_gap(work, tmp_path, capsys):
    root, _ = work
    rc = main(["tsne", "--checkpoint", str(root / "run" / "model.ckpt"), "--data", str(root / "data"),
               "--n-per-dataset", "50", "--out", str(tmp_path / "t")])
    assert rc == 1
    assert "short by 10" in capsys.readouterr().err
    assert [p.name for p in (tmp_path / "t").iterdir()] == ["error.log"]


def test_sample_per_domain_balances_classes():
    samples = [ImageSample(np.zeros((2, 2, 3)), i % 2, "A", f"a{i}") for i in range(10)]
    ds = sample_per_domain({"A": DomainDataset("A", samples)}, 6, 0)
    assert len(ds) == 6 and sorted(ds.labels.tolist()) == [0, 0, 0, 1, 1, 1]


def test_protocols_parallel_matches_serial(work, tmp_path, monkeypatch):
    root, cfg = work
    outs = []
    for threads in ("1", "2"):
        monkeypatch.setenv("RECAP_THREADS", threads)
        out = tmp_path / f"p{threads}"
        assert main(["protocols", "--config", str(cfg), "--data", str(root / "data"), "--out", str(out)]) == 0
        outs.append((out / "metrics.csv").read_bytes())
    assert outs[0] == outs[1]
    header, rows = read_csv(tmp_path / "p1" / "metrics.csv")
    assert [r[0] for r in rows] == ["intra-D1", "cross-D1+D2-D3"]


def test_bad_thread_count_is_validation_error(work, tmp_path, monkeypatch):
    root, cfg = work
    monkeypatch.setenv("RECAP_THREADS", "zero")
    assert main(["protocols", "--config", str(cfg), "--data", str(root / "data"), "--out", str(tmp_path / "p")]) == 1


def test_runtime_failure_exit_2_with_only_log(work, tmp_path, monkeypatch):
    root, cfg = work
    import recapdet.cli as cli

    def boom(*a, **k):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli.reports, "write_epochs", boom)
    out = tmp_path / "fail"
    assert main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(out)]) == 2
    assert [p.name for p in out.iterdir()] == ["error.log"]
    assert "disk on fire" in (out / "error.log").read_text()


def test_unwritable_output_names_the_path(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["synth", "--out", str(blocker / "sub")]) == 2
    assert str(blocker / "sub") in capsys.readouterr().err
