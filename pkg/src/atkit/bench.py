"""Attack/victim evaluation matrix and ablation sweeps.

`run_matrix` crafts adversarial examples once per (attack, surrogate) pair
and scores them against every victim model and every defense.  Success is
counted as prediction != true label over all evaluated images; pass
`filter_correct=True` for the alternative convention that only counts images
the undefended victim classifies correctly when clean (the convention is
recorded in the report sidecar).  Per-image attack seeds are derived from
(master seed, attack, surrogate, image index), so reports are byte-identical
across runs and across worker counts.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import genpool, io, shield, zoo
from .attacks import AttackConfig, run_attack
from .seeds import derive_seed

VERSION = "0.1.0"


def default_attack_config(method: str, **overrides) -> AttackConfig:
    """Standard hyperparameters per method at desk scale."""
    params = {"method": method}
    if method == "ADMIX":
        params["eta"] = 0.2
    if method == "PAM":
        params["m"] = 4
    params.update(overrides)
    return AttackConfig(**params)


@dataclass
class ExperimentConfig:
    models: dict                      # model id -> .atkm path
    surrogates: list
    victims: list
    attacks: list                     # AttackConfig instances
    defenses: list = field(default_factory=list)   # DefenseSpec instances
    defense_victim: str = None        # defaults to the first victim
    dataset: dict = field(default_factory=lambda: {"per_class": 25, "seed": 11})
    images: int = 100
    seed: int = 7
    filter_correct: bool = False
    workers: int = 1
    pool: str = None                  # sampler pool dir; procedural sampler if unset
    save_ppm: bool = False

    def validate(self) -> None:
        if not self.surrogates:
            raise ValueError("need at least one surrogate")
        if not self.victims:
            raise ValueError("need at least one victim")
        if not self.attacks:
            raise ValueError("need at least one attack")
        flat = []
        for sid in self.surrogates:  # an ensemble surrogate is a list of model ids
            flat.extend(sid if isinstance(sid, (list, tuple)) else [sid])
        for mid in flat + list(self.victims):
            if mid not in self.models:
                raise ValueError(f"model id {mid!r} is not in the models table")
        if self.defense_victim is not None and self.defense_victim not in self.models:
            raise ValueError(f"defense_victim {self.defense_victim!r} is not in the models table")
        if self.images < 1:
            raise ValueError(f"images must be >= 1, got {self.images}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")

    def to_json_dict(self) -> dict:
        return {
            "models": dict(self.models),
            "surrogates": list(self.surrogates),
            "victims": list(self.victims),
            "attacks": [a.to_json_dict() for a in self.attacks],
            "defenses": [d.to_json_dict() for d in self.defenses],
            "defense_victim": self.defense_victim,
            "dataset": dict(self.dataset),
            "images": self.images,
            "seed": self.seed,
            "filter_correct": self.filter_correct,
            "workers": self.workers,
            "pool": self.pool,
            "save_ppm": self.save_ppm,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {"models", "surrogates", "victims", "attacks", "defenses", "defense_victim",
                 "dataset", "images", "seed", "filter_correct", "workers", "pool", "save_ppm"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown experiment config keys: {sorted(unknown)}")
        doc = dict(doc)
        doc["attacks"] = [AttackConfig.from_json_dict(a) for a in doc.get("attacks", [])]
        doc["defenses"] = [shield.DefenseSpec.from_json_dict(d) for d in doc.get("defenses", [])]
        return cls(**doc)

    def config_hash(self) -> str:
        text = json.dumps(self.to_json_dict(), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class ReportRow:
    attack: str
    surrogate: str
    victim: str
    defense: str
    n_images: int
    successes: int
    rate_pct: float


@dataclass
class EvalReport:
    rows: list
    seed: int
    config_hash: str
    convention: str
    wall_clock_s: float = 0.0
    version: str = VERSION

    CSV_HEADER = "attack,surrogate,victim,defense,n_images,successes,rate_pct"

    def csv_text(self) -> str:
        lines = [self.CSV_HEADER]
        for r in self.rows:
            lines.append(f"{r.attack},{r.surrogate},{r.victim},{r.defense},"
                         f"{r.n_images},{r.successes},{r.rate_pct!r}")
        return "\n".join(lines) + "\n"

    def sidecar_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "convention": self.convention,
            "wall_clock_s": self.wall_clock_s,
            "version": self.version,
            "rows": len(self.rows),
        }

    def write(self, out_dir) -> str:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, "report.csv")
        with open(csv_path, "w") as f:
            f.write(self.csv_text())
        with open(os.path.join(out_dir, "report.json"), "w") as f:
            json.dump(self.sidecar_dict(), f, indent=1)
        return csv_path


def attack_success_rate(victim, adv_images, labels, defense=None, keep=None,
                        defense_index_base: int = 0) -> tuple:
    """(n_images, successes, rate in percent); success means prediction != label."""
    n = 0
    successes = 0
    for i, (adv, label) in enumerate(zip(adv_images, labels)):
        if keep is not None and not keep[i]:
            continue
        n += 1
        if defense is None:
            pred = zoo.predict(victim, adv)[0]
        else:
            pred = shield.defended_predict(victim, adv, defense, defense_index_base + i)
        if pred != label:
            successes += 1
    if n == 0:
        raise ValueError("no images left to evaluate")
    return n, successes, 100.0 * successes / n


def _interleaved(dataset: zoo.Dataset, count: int):
    """First `count` items taken round-robin across classes, keeping label balance."""
    if count > len(dataset):
        raise ValueError(f"requested {count} images but dataset has {len(dataset)}")
    by_label = {}
    for i, label in enumerate(dataset.labels):
        by_label.setdefault(label, []).append(i)
    order = []
    pools = [by_label[k] for k in sorted(by_label)]
    depth = 0
    while len(order) < count:
        added = False
        for pool in pools:
            if depth < len(pool):
                order.append(pool[depth])
                added = True
                if len(order) == count:
                    break
        if not added:
            break
        depth += 1
    return [dataset.images[i] for i in order], [dataset.labels[i] for i in order]


def load_eval_dataset(config: ExperimentConfig) -> zoo.Dataset:
    spec = config.dataset
    if "manifest" in spec:
        return zoo.load_manifest(spec["manifest"])
    return zoo.make_synthetic_dataset(spec.get("per_class", 25), spec.get("seed", 11), split="test")


def _craft_set(attack: AttackConfig, surrogate_models, images, labels, sampler, donors, master_seed,
               attack_name, surrogate_id, workers):
    def craft(i):
        seed = derive_seed(master_seed, attack_name, surrogate_id, i)
        adv, _ = run_attack(attack, surrogate_models, images[i], labels[i],
                            sampler=sampler, donors=donors, seed=seed)
        return adv

    if workers == 1:
        return [craft(i) for i in range(len(images))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(craft, range(len(images))))


def run_matrix(config: ExperimentConfig, models: dict = None, dataset: zoo.Dataset = None,
               out_dir=None) -> EvalReport:
    """Evaluate every attack x surrogate x (victim | defense) cell.

    `models` may inject already-loaded Model objects (id -> Model); otherwise
    model files from the config are loaded up front, failing fast on a
    missing path.
    """
    config.validate()
    start = time.monotonic()
    if models is None:
        models = {}
        for mid, path in config.models.items():
            if not os.path.exists(path):
                raise FileNotFoundError(f"model file for {mid!r} not found: {path}")
            models[mid] = zoo.load_model(path)
    flat = []
    for sid in config.surrogates:
        flat.extend(sid if isinstance(sid, (list, tuple)) else [sid])
    missing = [mid for mid in flat + list(config.victims) if mid not in models]
    if missing:
        raise ValueError(f"missing models for ids: {missing}")

    if dataset is None:
        dataset = load_eval_dataset(config)
    images, labels = _interleaved(dataset, config.images)
    donors = list(zip(dataset.images, dataset.labels))
    sampler = genpool.FilePoolSampler(config.pool) if config.pool else genpool.ProceduralSampler()

    defense_victim = config.defense_victim or config.victims[0]
    keep_for = {}
    if config.filter_correct:
        for vid in set(list(config.victims) + [defense_victim]):
            keep_for[vid] = [zoo.predict(models[vid], img)[0] == lab
                             for img, lab in zip(images, labels)]

    rows = []
    for attack in config.attacks:
        for sid in config.surrogates:
            surrogate_models = [models[m] for m in (sid if isinstance(sid, (list, tuple)) else [sid])]
            sid_name = "+".join(sid) if isinstance(sid, (list, tuple)) else sid
            advs = _craft_set(attack, surrogate_models, images, labels, sampler, donors,
                              config.seed, attack.name, sid_name, config.workers)
            if out_dir is not None:
                adv_dir = os.path.join(out_dir, "adv", f"{attack.name}__{sid_name}")
                os.makedirs(adv_dir, exist_ok=True)
                for i, adv in enumerate(advs):
                    io.save_tensor(os.path.join(adv_dir, f"img_{i:04d}.atkt"), adv)
                    if config.save_ppm:
                        io.save_ppm(os.path.join(adv_dir, f"img_{i:04d}.ppm"), adv)
            for vid in config.victims:
                n, successes, rate = attack_success_rate(models[vid], advs, labels,
                                                         keep=keep_for.get(vid))
                rows.append(ReportRow(attack.name, sid_name, vid, "", n, successes, rate))
            for defense in config.defenses:
                n, successes, rate = attack_success_rate(models[defense_victim], advs, labels,
                                                         defense=defense,
                                                         keep=keep_for.get(defense_victim))
                rows.append(ReportRow(attack.name, sid_name, defense_victim, defense.label(),
                                      n, successes, rate))

    rows.sort(key=lambda r: (r.attack, r.surrogate, r.victim, r.defense))
    report = EvalReport(
        rows=rows,
        seed=config.seed,
        config_hash=config.config_hash(),
        convention="filter_correct" if config.filter_correct else "all_images",
        wall_clock_s=round(time.monotonic() - start, 3),
    )
    if out_dir is not None:
        report.write(out_dir)
    return report


ABLATION_PARAMS = ("eta", "n", "m", "strength")


def run_ablation(config: ExperimentConfig, param: str, values, out_dir=None, overrides=None):
    """Sweep one sample-mixing hyperparameter; returns long-format rows.

    Each value gets a fresh fast sample-mixing attack built from the desk
    defaults with `param` overridden; rows are (param, value, victim, rate).
    `overrides` are fixed settings applied to every swept attack, e.g. a
    shorter iteration budget for smoke runs.
    """
    if param not in ABLATION_PARAMS:
        raise ValueError(f"ablation param must be one of {ABLATION_PARAMS}, got {param!r}")
    values = list(values)
    if not values:
        raise ValueError("ablation needs at least one value")
    if param in (overrides or {}):
        raise ValueError(f"cannot both sweep and override {param!r}")

    long_rows = []
    for value in values:
        attack = default_attack_config("SDAM_FAST", **dict(overrides or {}, **{param: value}))
        sub = ExperimentConfig(
            models=config.models, surrogates=config.surrogates, victims=config.victims,
            attacks=[attack], defenses=list(config.defenses), defense_victim=config.defense_victim,
            dataset=config.dataset, images=config.images, seed=config.seed,
            filter_correct=config.filter_correct, workers=config.workers, pool=config.pool,
        )
        report = run_matrix(sub)
        for row in report.rows:
            victim = row.defense if row.defense else row.victim
            long_rows.append((param, value, victim, row.rate_pct))

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "ablation.csv"), "w") as f:
            f.write("param,value,victim,rate_pct\n")
            for p, v, vic, rate in long_rows:
                f.write(f"{p},{v!r},{vic},{rate!r}\n")
    return long_rows
