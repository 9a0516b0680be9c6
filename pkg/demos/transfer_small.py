"""Small end-to-end transfer demo.

Trains two quick classifiers on the synthetic texture data, crafts
adversarial examples on one of them with three attacks, and prints how
often each batch fools the model it was crafted on versus the model it
never saw. Runs in about a minute on one core.
"""

import argparse

import numpy as np

from atkit import zoo
from atkit.attacks import run_attack
from atkit.bench import default_attack_config
from atkit.genpool import ProceduralSampler
from atkit.seeds import derive_seed


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--images", type=int, default=24)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    data = zoo.make_synthetic_dataset(100, seed=0, split="train")
    test = zoo.make_synthetic_dataset(10, seed=0, split="test")
    print("training surrogate (archA) and victim (archC) ...")
    surrogate = zoo.train(zoo.ModelSpec("archA", 11), data, epochs=2, lr=0.05, seed=11)
    victim = zoo.train(zoo.ModelSpec("archC", 31), data, epochs=2, lr=0.05, seed=31)
    print(f"clean accuracy: surrogate {zoo.accuracy(surrogate, test):.2f}, "
          f"victim {zoo.accuracy(victim, test):.2f}")

    sampler = ProceduralSampler()
    batch = list(zip(test.images, test.labels))[: args.images]
    for method in ("MIM", "SIM", "SDAM_FAST"):
        cfg = default_attack_config(method)
        fooled_s = fooled_v = 0
        for i, (x, y) in enumerate(batch):
            adv, _ = run_attack(cfg, surrogate, x, y, sampler=sampler,
                                seed=derive_seed(args.seed, method, i))
            assert np.abs(adv - x).max() <= cfg.eps + 1e-12
            fooled_s += zoo.predict(surrogate, adv)[0] != y
            fooled_v += zoo.predict(victim, adv)[0] != y
        n = len(batch)
        print(f"{method:10s} white-box {100 * fooled_s / n:5.1f}%   "
              f"transfer {100 * fooled_v / n:5.1f}%")


if __name__ == "__main__":
    main()
