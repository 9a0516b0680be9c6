"""Defense demo: the same adversarial batch scored through input processing.

Crafts white-box examples against a quickly trained model, then scores them
undefended and behind each inference-time defense, plus the defenses' cost
on clean inputs.
"""

import argparse

import numpy as np

from atkit import zoo
from atkit.attacks import run_attack
from atkit.bench import default_attack_config
from atkit.seeds import derive_seed
from atkit.shield import DefenseSpec, defended_predict


def rate(model, images, labels, spec=None):
    wrong = 0
    for i, (x, y) in enumerate(zip(images, labels)):
        pred = defended_predict(model, x, spec, i) if spec else zoo.predict(model, x)[0]
        wrong += pred != y
    return 100.0 * wrong / len(images)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--images", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    data = zoo.make_synthetic_dataset(100, seed=0, split="train")
    test = zoo.make_synthetic_dataset(10, seed=0, split="test")
    print("training the victim ...")
    model = zoo.train(zoo.ModelSpec("archB", 21), data, epochs=2, lr=0.05, seed=21)

    images = test.images[: args.images]
    labels = test.labels[: args.images]
    cfg = default_attack_config("MIM")
    advs = [run_attack(cfg, model, x, y, seed=derive_seed(args.seed, "MIM", i))[0]
            for i, (x, y) in enumerate(zip(images, labels))]

    specs = [DefenseSpec("BIT_RED", bits=2), DefenseSpec("RND_RESIZE_PAD"),
             DefenseSpec("RAND_SMOOTH")]
    print(f"{'defense':34s} {'adv error %':>12s} {'clean error %':>14s}")
    print(f"{'(none)':34s} {rate(model, advs, labels):12.1f} "
          f"{rate(model, images, labels):14.1f}")
    for spec in specs:
        print(f"{spec.label():34s} {rate(model, advs, labels, spec):12.1f} "
              f"{rate(model, images, labels, spec):14.1f}")


if __name__ == "__main__":
    main()
