"""Pluggable sources of class-conditioned images for sample-mixing attacks.

A sampler answers a `SampleRequest` with `count` images of the requested
class, optionally conditioned on a base image via `strength` in [0, 1]:
strength 0 reproduces the base exactly, strength 1 ignores it.  Samplers are
pure functions of the request (per-sample streams keyed by (seed, index)), so
an attack that asks again with the same request gets the same images.

`CachedSampler` adds the reuse semantics of the fast sample-mixing attack:
the first request for a given attack-instance key materializes images from
the inner sampler (the attack sends its original input there because the
first request happens at iteration 0), and every later request for that key
returns the stored images regardless of how the attacked image has moved.

Concrete samplers count how many images they produce in `.generated`, which
is how the sampler-budget checks are instrumented.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass

import numpy as np

from . import io
from .seeds import rng_from
from .zoo import IMAGE_SHAPE, NUM_CLASSES, class_prototype


@dataclass
class SampleRequest:
    base: np.ndarray
    label: int
    strength: float
    count: int
    seed: int

    def validate(self) -> None:
        if np.asarray(self.base).shape != IMAGE_SHAPE:
            raise ValueError(f"base must have shape {IMAGE_SHAPE}, got {np.asarray(self.base).shape}")
        if not 0 <= self.label < NUM_CLASSES:
            raise ValueError(f"label {self.label} out of range for {NUM_CLASSES} classes")
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError(f"strength must be in [0, 1], got {self.strength}")
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")


class GenerativeSampler:
    """Interface: sample(request) -> list of CHW arrays in [0, 1]."""

    def __init__(self):
        self.generated = 0

    def sample(self, request: SampleRequest) -> list:
        raise NotImplementedError


class ProceduralSampler(GenerativeSampler):
    """Draws fresh class prototypes from the dataset's texture families.

    Output j is clamp((1-strength)*base + strength*prototype_j + xi_j, 0, 1)
    with xi_j uniform noise of amplitude 0.02*strength.  At strength 0 this
    is bitwise the base image; at strength 1 it is independent of the base.

    Generation over-draws: a seeded pool of CANDIDATE_POOL family draws is
    thinned to `count` by greedy farthest-point selection, the usual guard
    against near-duplicate generations.  Independent draws of a texture
    family collide in orientation or phase often enough that a raw batch of
    five can carry three near-copies; the spread subset keeps the batch
    representative of the family.  Selection never looks at the base, so
    strength-1 outputs stay base-independent.
    """

    CANDIDATE_POOL = 48

    def _candidates(self, request: SampleRequest) -> list:
        k = max(request.count, self.CANDIDATE_POOL)
        return [class_prototype(request.label, rng_from(request.seed, "cand", i))
                for i in range(k)]

    @staticmethod
    def _spread_subset(protos: list, count: int) -> list:
        flat = np.stack([p.mean(axis=0).ravel() for p in protos])
        center = flat.mean(axis=0)
        chosen = [int(np.argmax(((flat - center) ** 2).sum(axis=1)))]
        while len(chosen) < count:
            gap = ((flat[:, None, :] - flat[None, chosen, :]) ** 2).sum(axis=2).min(axis=1)
            gap[chosen] = -1.0
            chosen.append(int(np.argmax(gap)))
        return chosen

    def sample(self, request: SampleRequest) -> list:
        request.validate()
        base = np.asarray(request.base, dtype=np.float64)
        s = float(request.strength)
        protos = self._candidates(request)
        order = self._spread_subset(protos, request.count)
        out = []
        for j, k in zip(range(request.count), order):
            xi = rng_from(request.seed, "noise", j).uniform(-0.02 * s, 0.02 * s, IMAGE_SHAPE)
            out.append(np.clip((1.0 - s) * base + s * protos[k] + xi, 0.0, 1.0))
        self.generated += request.count
        return out


class FilePoolSampler(GenerativeSampler):
    """Serves images from a directory pool laid out as <pool>/<label>/*.atkt.

    Selection is a seeded permutation: a request for exactly the pool size
    returns each image once; overflow wraps into further permutations, so
    count = pool + k repeats exactly k images.  `strength` does not transform
    pool images; it is recorded as provenance only.
    """

    def __init__(self, pool_dir):
        super().__init__()
        self.pool_dir = str(pool_dir)
        self.provenance = []
        if not os.path.isdir(self.pool_dir):
            raise FileNotFoundError(f"pool directory not found: {self.pool_dir}")

    def _class_files(self, label: int) -> list:
        cdir = os.path.join(self.pool_dir, str(label))
        if not os.path.isdir(cdir):
            raise FileNotFoundError(f"no pool directory for class {label}: {cdir}")
        files = sorted(f for f in os.listdir(cdir) if f.endswith(".atkt"))
        if not files:
            raise FileNotFoundError(f"pool directory for class {label} is empty: {cdir}")
        return [os.path.join(cdir, f) for f in files]

    def sample(self, request: SampleRequest) -> list:
        request.validate()
        files = self._class_files(request.label)
        rng = rng_from(request.seed, "pool")
        chosen = []
        while len(chosen) < request.count:
            perm = rng.permutation(len(files))
            chosen.extend(files[k] for k in perm)
        chosen = chosen[:request.count]
        self.provenance.append({"label": request.label, "strength": request.strength, "files": chosen})
        out = []
        for path in chosen:
            img = io.load_tensor(path)
            if img.shape != IMAGE_SHAPE:
                raise ValueError(f"{path}: expected image shape {IMAGE_SHAPE}, got {img.shape}")
            out.append(img)
        self.generated += request.count
        return out


class CachedSampler(GenerativeSampler):
    """Materialize once per attack-instance key, then replay bitwise."""

    def __init__(self, inner: GenerativeSampler):
        super().__init__()
        self.inner = inner
        self._cache = {}
        self._lock = threading.Lock()

    def sample(self, request: SampleRequest, key=None) -> list:
        with self._lock:
            if key not in self._cache:
                self._cache[key] = self.inner.sample(request)
            return self._cache[key]


def procedural_sample(request: SampleRequest) -> list:
    return ProceduralSampler().sample(request)


def filepool_sample(request: SampleRequest, pool_dir) -> list:
    return FilePoolSampler(pool_dir).sample(request)


def cached_sampler(inner: GenerativeSampler) -> CachedSampler:
    return CachedSampler(inner)


def materialize_pool(out_dir, per_class: int, seed: int, strength: float = 1.0) -> None:
    """Write a procedural pool to disk in the FilePoolSampler layout."""
    sampler = ProceduralSampler()
    gray = np.full(IMAGE_SHAPE, 0.5)
    for label in range(NUM_CLASSES):
        cdir = os.path.join(out_dir, str(label))
        os.makedirs(cdir, exist_ok=True)
        req = SampleRequest(gray, label, strength, per_class, seed + label)
        for j, img in enumerate(sampler.sample(req)):
            io.save_tensor(os.path.join(cdir, f"sample_{j:04d}.atkt"), img)
