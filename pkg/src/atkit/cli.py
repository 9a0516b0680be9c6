"""Command-line front end.

Subcommands: gen-data, train, gen-pool, attack, eval, ablate.  Every
subcommand takes --seed/--config/--out where meaningful.  Exit codes:
0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import bench, genpool, io, zoo
from .attacks import AttackConfig, run_attack
from .seeds import derive_seed


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _load_manifest_arg(path):
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.json")
    return zoo.load_manifest(path)


def _cmd_gen_data(args) -> int:
    train = zoo.make_synthetic_dataset(args.per_class, args.seed, split="train")
    test = zoo.make_synthetic_dataset(args.test_per_class, args.seed, split="test")
    zoo.save_dataset(train, os.path.join(args.out, "train"))
    zoo.save_dataset(test, os.path.join(args.out, "test"))
    print(f"wrote {len(train)} train / {len(test)} test images under {args.out}")
    return 0


def _cmd_train(args) -> int:
    data = _load_manifest_arg(args.data)
    test_data = _load_manifest_arg(args.test_data) if args.test_data else None
    spec = zoo.ModelSpec(args.arch, args.seed)
    if args.adv_eps is not None:
        model = zoo.adversarial_train(spec, data, args.adv_eps, args.epochs, args.lr,
                                      args.seed, test_data=test_data)
    else:
        model = zoo.train(spec, data, args.epochs, args.lr, args.seed, test_data=test_data)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    zoo.save_model(model, args.out)
    sidecar = {"arch": args.arch, "seed": args.seed, "epochs": args.epochs, "lr": args.lr,
               "adversarial_eps": args.adv_eps, **model.meta}
    with open(args.out + ".json", "w") as f:
        json.dump(sidecar, f, indent=1)
    acc = model.meta.get("test_accuracy")
    print(f"saved {args.out}; train acc {model.meta.get('train_accuracy')}, test acc {acc}")
    return 0


def _cmd_gen_pool(args) -> int:
    genpool.materialize_pool(args.out, args.per_class, args.seed, args.strength)
    print(f"wrote {args.per_class} samples per class under {args.out}")
    return 0


def _cmd_attack(args) -> int:
    with open(args.config) as f:
        config = AttackConfig.from_json_dict(json.load(f))
    models = [zoo.load_model(p) for p in args.model]

    if args.image is not None:
        if args.label is None:
            raise ValueError("--image needs --label")
        items = [(io.load_tensor(args.image), args.label)]
        donors = _load_manifest_arg(args.data) if args.data else None
        donor_pairs = list(zip(donors.images, donors.labels)) if donors else None
    elif args.data is not None:
        data = _load_manifest_arg(args.data)
        images, labels = bench._interleaved(data, args.count)
        items = list(zip(images, labels))
        donor_pairs = list(zip(data.images, data.labels))
    else:
        raise ValueError("need --image with --label, or --data")

    sampler = genpool.FilePoolSampler(args.pool) if args.pool else genpool.ProceduralSampler()
    os.makedirs(args.out, exist_ok=True)
    summary = []
    for i, (img, label) in enumerate(items):
        adv, trace = run_attack(config, models, img, int(label), sampler=sampler,
                                donors=donor_pairs, seed=derive_seed(args.seed, "cli", i))
        io.save_tensor(os.path.join(args.out, f"adv_{i:04d}.atkt"), adv)
        if args.ppm:
            io.save_ppm(os.path.join(args.out, f"adv_{i:04d}.ppm"), adv)
        last = trace[-1]
        summary.append({"index": i, "label": int(label), "prediction": last.prediction,
                        "linf": last.linf, "loss": last.loss})
    with open(os.path.join(args.out, "attack_summary.json"), "w") as f:
        json.dump({"method": config.name, "count": len(items), "results": summary}, f, indent=1)
    fooled = sum(1 for s in summary if s["prediction"] != s["label"])
    print(f"crafted {len(items)} adversarial images under {args.out}; "
          f"{fooled} fool the surrogate")
    return 0


def _experiment_from_file(path) -> bench.ExperimentConfig:
    with open(path) as f:
        return bench.ExperimentConfig.from_json_dict(json.load(f))


def _cmd_eval(args) -> int:
    config = _experiment_from_file(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.filter_correct:
        config.filter_correct = True
    if args.workers is not None:
        config.workers = args.workers
    report = bench.run_matrix(config, out_dir=args.out)
    print(f"wrote {os.path.join(args.out, 'report.csv')} ({len(report.rows)} rows, "
          f"seed {report.seed}, hash {report.config_hash})")
    return 0


def _parse_values(text):
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            out.append(int(part))
        except ValueError:
            out.append(float(part))
    return out


def _cmd_ablate(args) -> int:
    config = _experiment_from_file(args.config)
    if args.seed is not None:
        config.seed = args.seed
    rows = bench.run_ablation(config, args.param, args.values, out_dir=args.out)
    print(f"wrote {os.path.join(args.out, 'ablation.csv')} ({len(rows)} rows)")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="atkit", description="transfer attack toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic dataset to disk")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-class", type=int, default=400)
    p.add_argument("--test-per-class", type=int, default=50)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a classifier on a dataset manifest")
    p.add_argument("--data", required=True, help="manifest path or dataset directory")
    p.add_argument("--test-data", default=None)
    p.add_argument("--arch", choices=sorted(zoo.ARCHITECTURES), default="archA")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--adv-eps", type=float, default=None,
                   help="enable 50/50 adversarial training at this epsilon")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output .atkm path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("gen-pool", help="materialize a procedural sample pool")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-class", type=int, default=10)
    p.add_argument("--strength", type=float, default=1.0)
    p.set_defaults(func=_cmd_gen_pool)

    p = sub.add_parser("attack", help="craft adversarial examples")
    p.add_argument("--config", required=True, help="attack config JSON")
    p.add_argument("--model", action="append", required=True,
                   help="surrogate .atkm (repeat for an ensemble)")
    p.add_argument("--image", default=None, help="single input .atkt")
    p.add_argument("--label", type=int, default=None)
    p.add_argument("--data", default=None, help="dataset manifest (inputs and admix donors)")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--pool", default=None, help="file pool dir for the image sampler")
    p.add_argument("--ppm", action="store_true", help="also write PPM previews")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("eval", help="run the attack/victim evaluation matrix")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--filter-correct", action="store_true",
                   help="only count images the clean victim classifies correctly")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="sweep one sample-mixing hyperparameter")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--param", required=True, choices=bench.ABLATION_PARAMS)
    p.add_argument("--values", required=True, type=_parse_values,
                   help="comma-separated values")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except Exception as e:  # runtime failure: missing files, bad data, ...
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
