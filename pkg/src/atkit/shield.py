"""Input-processing defenses applied at victim inference time.

All three defenses wrap a model's prediction rather than its training:
bit-depth reduction quantizes pixels onto a 2^bits-level lattice, random
resize/pad re-randomizes the input geometry (same transform family the
diversity attack uses, but applied outside the gradient graph), and
randomized smoothing takes a majority vote over gaussian-noised copies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import zoo
from .attacks import DimSpec, draw_dim
from .seeds import derive_seed, rng_from

DEFENSE_KINDS = ("BIT_RED", "RND_RESIZE_PAD", "RAND_SMOOTH")


@dataclass
class DefenseSpec:
    kind: str
    bits: int = 3
    sigma: float = 0.12
    votes: int = 25
    seed: int = 0

    _JSON_FIELDS = ("kind", "bits", "sigma", "votes", "seed")

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.kind not in DEFENSE_KINDS:
            raise ValueError(f"unknown defense kind {self.kind!r}; known: {DEFENSE_KINDS}")
        if int(self.bits) != self.bits or not 1 <= self.bits <= 16:
            raise ValueError(f"bits must be an integer in [1, 16], got {self.bits}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if int(self.votes) != self.votes or self.votes < 1:
            raise ValueError(f"votes must be an integer >= 1, got {self.votes}")

    def label(self) -> str:
        if self.kind == "BIT_RED":
            return f"BIT_RED(bits={self.bits})"
        if self.kind == "RND_RESIZE_PAD":
            return "RND_RESIZE_PAD"
        # single token: these labels land in comma-separated report columns
        return f"RAND_SMOOTH(sigma={self.sigma};votes={self.votes})"

    def to_json_dict(self) -> dict:
        return {name: getattr(self, name) for name in self._JSON_FIELDS}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "DefenseSpec":
        unknown = set(doc) - set(cls._JSON_FIELDS)
        if unknown:
            raise ValueError(f"unknown defense config keys: {sorted(unknown)}")
        if "kind" not in doc:
            raise ValueError("defense config must name a kind")
        return cls(**doc)


def bit_reduce(x: np.ndarray, bits: int) -> np.ndarray:
    """Quantize [0, 1] values onto 2^bits evenly spaced levels, rounding half up."""
    if int(bits) != bits or not 1 <= bits <= 16:
        raise ValueError(f"bits must be an integer in [1, 16], got {bits}")
    levels = float(2 ** bits - 1)
    return np.floor(np.asarray(x, dtype=np.float64) * levels + 0.5) / levels


def rnd_resize_pad(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Shrink-and-pad with the diversity transform's geometry, always applied.

    Runs outside the autodiff graph: this is victim-side preprocessing, not
    something attack gradients flow through.
    """
    if x.ndim != 3:
        raise ValueError(f"rnd_resize_pad: need CHW input, got shape {x.shape}")
    h, w = x.shape[1], x.shape[2]
    if h != w:
        raise ValueError(f"rnd_resize_pad: need square input, got {h}x{w}")
    spec: DimSpec = draw_dim(rng, h, 1.0)
    rows = (np.arange(spec.size) * h) // spec.size
    cols = (np.arange(spec.size) * w) // spec.size
    resized = x[:, rows[:, None], cols[None, :]]
    return np.pad(resized, ((0, 0),
                            (spec.top, h - spec.size - spec.top),
                            (spec.left, w - spec.size - spec.left)))


def smooth_predict(model, x: np.ndarray, sigma: float, votes: int, seed: int) -> int:
    """Majority vote over gaussian-noised copies; ties go to the lowest class."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if votes < 1:
        raise ValueError(f"votes must be >= 1, got {votes}")
    rng = rng_from(seed, "smooth")
    counts = np.zeros(zoo.NUM_CLASSES, dtype=int)
    for _ in range(votes):
        noisy = np.clip(x + rng.normal(0.0, sigma, x.shape) if sigma > 0 else x, 0.0, 1.0)
        counts[zoo.predict(model, noisy)[0]] += 1
    return int(np.argmax(counts))


def defended_predict(model, x: np.ndarray, spec: DefenseSpec, image_index: int = 0) -> int:
    """Prediction through a defense; randomness keyed by (spec.seed, image_index)."""
    if spec.kind == "BIT_RED":
        return zoo.predict(model, bit_reduce(x, spec.bits))[0]
    if spec.kind == "RND_RESIZE_PAD":
        rng = rng_from(spec.seed, "rrp", image_index)
        return zoo.predict(model, rnd_resize_pad(np.asarray(x, dtype=np.float64), rng))[0]
    return smooth_predict(model, x, spec.sigma, spec.votes,
                          seed=derive_seed(spec.seed, "vote", image_index))
