"""Evaluation matrix plumbing: configs, reports, determinism, ablations."""

import json
import os

import numpy as np
import pytest

from atkit import bench, io, zoo
from atkit.attacks import AttackConfig
from atkit.bench import (EvalReport, ExperimentConfig, ReportRow,
                         attack_success_rate, default_attack_config,
                         run_ablation, run_matrix)
from atkit.shield import DefenseSpec


def small_config(models, **kw):
    kw.setdefault("models", {mid: f"{mid}.atkm" for mid in models})
    kw.setdefault("surrogates", ["archA"])
    kw.setdefault("victims", ["archC"])
    kw.setdefault("attacks", [AttackConfig(method="MIM", T=2)])
    kw.setdefault("images", 8)
    return ExperimentConfig(**kw)


# ---------------------------------------------------------------------------
# configs


def test_default_attack_config_per_method():
    assert default_attack_config("MIM").eta == 0.6
    assert default_attack_config("ADMIX").eta == 0.2
    assert default_attack_config("PAM").m == 4
    assert default_attack_config("SIM").m == 5
    assert default_attack_config("ADMIX", eta=0.5).eta == 0.5


def test_experiment_config_round_trip():
    cfg = small_config(["archA", "archC"],
                       attacks=[AttackConfig(method="SIM", T=3)],
                       defenses=[DefenseSpec("BIT_RED", bits=2)])
    back = ExperimentConfig.from_json_dict(cfg.to_json_dict())
    assert back == cfg
    with pytest.raises(ValueError, match="unknown experiment config keys"):
        ExperimentConfig.from_json_dict(dict(cfg.to_json_dict(), bogus=1))


def test_experiment_config_hash_is_stable_and_sensitive():
    cfg = small_config(["archA", "archC"])
    h = cfg.config_hash()
    assert len(h) == 16 and int(h, 16) >= 0
    assert h == small_config(["archA", "archC"]).config_hash()
    assert h != small_config(["archA", "archC"], images=9).config_hash()


def test_experiment_config_validation():
    with pytest.raises(ValueError, match="at least one surrogate"):
        small_config(["archA", "archC"], surrogates=[]).validate()
    with pytest.raises(ValueError, match="at least one attack"):
        small_config(["archA", "archC"], attacks=[]).validate()
    with pytest.raises(ValueError, match="not in the models table"):
        small_config(["archA", "archC"], victims=["archZ"]).validate()
    with pytest.raises(ValueError, match="not in the models table"):
        small_config(["archA", "archC"], surrogates=[["archA", "archZ"]]).validate()
    with pytest.raises(ValueError, match="images"):
        small_config(["archA", "archC"], images=0).validate()
    with pytest.raises(ValueError, match="workers"):
        small_config(["archA", "archC"], workers=0).validate()
    with pytest.raises(ValueError, match="defense_victim"):
        small_config(["archA", "archC"], defense_victim="archZ").validate()


# ---------------------------------------------------------------------------
# scoring helpers


def test_attack_success_rate_counts_misclassifications(small_zoo, small_test_dataset):
    model = small_zoo["archA"]
    images = small_test_dataset.images[:10]
    labels = list(small_test_dataset.labels[:10])
    n, successes, rate = attack_success_rate(model, images, labels)
    wrong = sum(zoo.predict(model, img)[0] != lab for img, lab in zip(images, labels))
    assert (n, successes) == (10, wrong)
    assert rate == 100.0 * wrong / 10


def test_attack_success_rate_keep_mask(small_zoo, small_test_dataset):
    model = small_zoo["archA"]
    images = small_test_dataset.images[:6]
    labels = list(small_test_dataset.labels[:6])
    keep = [True, False, True, False, True, False]
    n, _, _ = attack_success_rate(model, images, labels, keep=keep)
    assert n == 3
    with pytest.raises(ValueError, match="no images left"):
        attack_success_rate(model, images, labels, keep=[False] * 6)


def test_interleaved_balances_labels(small_test_dataset):
    images, labels = bench._interleaved(small_test_dataset, 16)
    assert sorted(labels[:8]) == list(range(8))
    assert sorted(labels[8:]) == list(range(8))
    assert len(images) == 16
    with pytest.raises(ValueError, match="requested"):
        bench._interleaved(small_test_dataset, len(small_test_dataset) + 1)


# ---------------------------------------------------------------------------
# the matrix


def test_run_matrix_row_grid(small_zoo, small_test_dataset):
    cfg = small_config(
        ["archA", "archC"],
        attacks=[AttackConfig(method="MIM", T=2), AttackConfig(method="SIM", T=2, m=2)],
        defenses=[DefenseSpec("BIT_RED", bits=2)],
        images=4,
    )
    report = run_matrix(cfg, models=small_zoo, dataset=small_test_dataset)
    assert len(report.rows) == 2 * 1 * (1 + 1)
    assert [r.attack for r in report.rows] == sorted(r.attack for r in report.rows)
    cells = {(r.attack, r.victim, r.defense) for r in report.rows}
    assert ("MIM", "archC", "") in cells
    assert ("SIM", "archC", "BIT_RED(bits=2)") in cells
    for r in report.rows:
        assert r.n_images == 4
        assert 0 <= r.successes <= r.n_images
        assert r.rate_pct == 100.0 * r.successes / r.n_images
    assert report.convention == "all_images"


def test_run_matrix_csv_byte_identical_across_runs(small_zoo, small_test_dataset):
    cfg = small_config(["archA", "archC"], attacks=[AttackConfig(method="SIM", T=2, m=2)],
                       images=4)
    a = run_matrix(cfg, models=small_zoo, dataset=small_test_dataset)
    b = run_matrix(cfg, models=small_zoo, dataset=small_test_dataset)
    assert a.csv_text().encode() == b.csv_text().encode()


def test_run_matrix_worker_count_does_not_change_results(small_zoo, small_test_dataset):
    base = small_config(["archA", "archC"], images=4)
    threaded = small_config(["archA", "archC"], images=4, workers=3)
    a = run_matrix(base, models=small_zoo, dataset=small_test_dataset)
    b = run_matrix(threaded, models=small_zoo, dataset=small_test_dataset)
    assert a.csv_text() == b.csv_text()


def test_run_matrix_ensemble_surrogate_label(small_zoo, small_test_dataset):
    cfg = small_config(["archA", "archC"], surrogates=[["archA", "archC"]], images=4)
    report = run_matrix(cfg, models=small_zoo, dataset=small_test_dataset)
    assert {r.surrogate for r in report.rows} == {"archA+archC"}


def test_run_matrix_filter_correct_convention(small_zoo, small_dataset):
    cfg = small_config(["archA", "archC"], images=12, filter_correct=True)
    report = run_matrix(cfg, models=small_zoo, dataset=small_dataset)
    images, labels = bench._interleaved(small_dataset, 12)
    clean_right = sum(zoo.predict(small_zoo["archC"], img)[0] == lab
                      for img, lab in zip(images, labels))
    assert report.convention == "filter_correct"
    assert report.rows[0].n_images == clean_right


def test_run_matrix_writes_outputs(small_zoo, small_test_dataset, tmp_path):
    out = tmp_path / "report"
    cfg = small_config(["archA", "archC"], images=2, save_ppm=True)
    report = run_matrix(cfg, models=small_zoo, dataset=small_test_dataset, out_dir=str(out))
    csv_doc = (out / "report.csv").read_text()
    assert csv_doc.splitlines()[0] == EvalReport.CSV_HEADER
    assert len(csv_doc.splitlines()) == 1 + len(report.rows)
    sidecar = json.loads((out / "report.json").read_text())
    assert sidecar["config_hash"] == cfg.config_hash()
    assert sidecar["rows"] == len(report.rows)
    assert sidecar["convention"] == "all_images"
    adv_dir = out / "adv" / "MIM__archA"
    assert sorted(p.name for p in adv_dir.iterdir()) == [
        "img_0000.atkt", "img_0000.ppm", "img_0001.atkt", "img_0001.ppm"]
    adv = io.load_tensor(str(adv_dir / "img_0000.atkt"))
    assert adv.shape == zoo.IMAGE_SHAPE


def test_run_matrix_requires_known_models(small_zoo, small_test_dataset):
    cfg = small_config(["archA", "archC"], victims=["archB"])
    cfg.models["archB"] = "archB.atkm"
    with pytest.raises(ValueError, match="missing models"):
        run_matrix(cfg, models=small_zoo, dataset=small_test_dataset)


def test_run_matrix_missing_model_file():
    cfg = small_config(["archA", "archC"])
    cfg.models = {"archA": "/nonexistent/archA.atkm", "archC": "/nonexistent/archC.atkm"}
    with pytest.raises(FileNotFoundError):
        run_matrix(cfg)


# ---------------------------------------------------------------------------
# csv details


def test_csv_text_formatting():
    report = EvalReport(
        rows=[ReportRow("MIM", "archA", "archC", "", 3, 1, 100.0 / 3)],
        seed=7, config_hash="ab" * 8, convention="all_images")
    lines = report.csv_text().splitlines()
    assert lines[0] == "attack,surrogate,victim,defense,n_images,successes,rate_pct"
    assert lines[1] == f"MIM,archA,archC,,3,1,{100.0 / 3!r}"
    assert all(line.count(",") == 6 for line in lines)


# ---------------------------------------------------------------------------
# ablations


def test_run_ablation_long_rows(small_zoo, small_test_dataset, tmp_path):
    cfg = small_config(["archA", "archC"], attacks=[], images=2)
    rows = run_ablation(cfg, "eta", [0.2, 0.8], out_dir=str(tmp_path),
                        overrides={"T": 2, "m": 2, "n": 2})
    assert len(rows) == 2
    assert [r[:2] for r in rows] == [("eta", 0.2), ("eta", 0.8)]
    assert all(r[2] == "archC" and 0.0 <= r[3] <= 100.0 for r in rows)
    doc = (tmp_path / "ablation.csv").read_text().splitlines()
    assert doc[0] == "param,value,victim,rate_pct"
    assert len(doc) == 3


def test_run_ablation_validation(small_zoo):
    cfg = small_config(["archA", "archC"], attacks=[])
    with pytest.raises(ValueError, match="ablation param"):
        run_ablation(cfg, "T", [1])
    with pytest.raises(ValueError, match="at least one value"):
        run_ablation(cfg, "eta", [])
    with pytest.raises(ValueError, match="sweep and override"):
        run_ablation(cfg, "eta", [0.5], overrides={"eta": 0.1})
