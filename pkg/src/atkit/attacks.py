"""Momentum-iterative transfer attacks with input-transformation variants.

All methods share one loop: at each step an averaged input-gradient `gbar`
is computed from a set of transformed copies of the current iterate, fed
through L1-normalized momentum, and applied as a signed step projected onto
the L-inf ball around the original image (then onto [0, 1]).

Methods differ only in the set of copies.  Every copy is affine in the
attacked image, so a copy is described by a `Term` (coefficient on x, plus
an optional constant offset image, plus an optional random resize/pad
transform).  Terms are grouped into blocks: one block per donor image for
the admix method, per augmentation-path baseline for the path method, per
generated sample for the sample-mixing methods, and a single block for the
scale-copies method.  The gradient is the mean over blocks of per-block term
means, with the cross-block mean computed as a running mean.  A running mean
of identical blocks is exact in float arithmetic, which is what makes the
degenerate-parameter reductions (e.g. sample mixing at eta=1 collapsing to
scale copies for any sample count) bit-identical rather than approximate.

Gradient checks: `strategy_gradient` is a pure function of (models, x, y,
blocks), so tests freeze a block set and compare the reverse-mode result
against central finite differences of `strategy_loss` on the same blocks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor
from .genpool import CachedSampler, SampleRequest
from .seeds import derive_seed, rng_from
from .tensor import Tensor

METHODS = ("MIM", "DIM", "TIM", "SIM", "ADMIX", "PAM", "SDAM", "SDAM_FAST")

# augmentation-path baselines: black, mid-gray, white and five solid colors
PATH_COLORS = {
    "black": (0.0, 0.0, 0.0),
    "gray": (0.5, 0.5, 0.5),
    "white": (1.0, 1.0, 1.0),
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "cyan": (0.0, 1.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
}

DEFAULT_PATH_POOL = ("black", "gray", "white", "red", "green", "blue", "cyan", "yellow")


class ConfigError(ValueError):
    pass


def baseline_image(name: str, shape=(3, 32, 32)) -> np.ndarray:
    if name not in PATH_COLORS:
        raise ConfigError(f"unknown path baseline {name!r}; known: {sorted(PATH_COLORS)}")
    img = np.empty(shape)
    for c, v in enumerate(PATH_COLORS[name]):
        img[c] = v
    return img


@dataclass
class AttackConfig:
    """Threat model plus method hyperparameters; pixel values live in [0, 1]."""

    method: str
    eps: float = 16.0 / 255.0
    alpha: float = 1.6 / 255.0
    T: int = 10
    mu: float = 1.0
    m: int = 5            # scale copies per block
    m1: int = 5           # admix: scale copies
    m2: int = 3           # admix: donor images per step
    eta: float = 0.6      # admix mixing strength / sample-mixing ratio
    n: int = 5            # generated samples per step
    strength: float = 0.7  # sampler conditioning strength
    dim_p: float = 0.5
    tim_kernel: int = 7
    path_pool: tuple = DEFAULT_PATH_POOL
    compose_dim: bool = False
    compose_tim: bool = False
    compose_paths: bool = False

    _JSON_FIELDS = ("eps", "alpha", "T", "mu", "method", "m", "m1", "m2", "eta", "n",
                    "strength", "dim_p", "tim_kernel", "path_pool",
                    "compose_dim", "compose_tim", "compose_paths")

    def __post_init__(self):
        self.path_pool = tuple(self.path_pool)
        self.validate()

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; known: {METHODS}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if int(self.T) != self.T or self.T < 1:
            raise ConfigError(f"T must be an integer >= 1, got {self.T}")
        if self.mu < 0:
            raise ConfigError(f"mu must be >= 0, got {self.mu}")
        for name in ("m", "m1", "m2", "n"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {v}")
        for name in ("eta", "strength", "dim_p"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if int(self.tim_kernel) != self.tim_kernel or self.tim_kernel < 1 or self.tim_kernel % 2 == 0:
            raise ConfigError(f"tim_kernel must be an odd integer >= 1, got {self.tim_kernel}")
        if not self.path_pool:
            raise ConfigError("path_pool must not be empty")
        for name in self.path_pool:
            if name not in PATH_COLORS:
                raise ConfigError(f"unknown path baseline {name!r}; known: {sorted(PATH_COLORS)}")

    def to_json_dict(self) -> dict:
        out = {}
        for name in self._JSON_FIELDS:
            v = getattr(self, name)
            out[name] = list(v) if name == "path_pool" else v
        return out

    @classmethod
    def from_json_dict(cls, doc: dict) -> "AttackConfig":
        unknown = set(doc) - set(cls._JSON_FIELDS)
        if unknown:
            raise ConfigError(f"unknown attack config keys: {sorted(unknown)}")
        if "method" not in doc:
            raise ConfigError("attack config must name a method")
        return cls(**doc)

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "AttackConfig":
        return cls.from_json_dict(json.loads(text))

    @property
    def name(self) -> str:
        suffix = ""
        if self.compose_dim:
            suffix += "-DI"
        if self.compose_tim:
            suffix += "-TI"
        if self.compose_paths:
            suffix += "-PA"
        return self.method + suffix


# ---------------------------------------------------------------------------
# step machinery


def scale_copies(x: np.ndarray, m: int) -> list:
    """[x / 2^i for i in 0..m-1]."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    return [x * (0.5 ** i) for i in range(m)]


def momentum_update(g_prev: np.ndarray, gbar: np.ndarray, mu: float) -> np.ndarray:
    """g <- mu * g_prev + gbar / ||gbar||_1; a zero gbar contributes nothing."""
    l1 = np.abs(gbar).sum()
    norm_term = gbar / l1 if l1 > 0 else np.zeros_like(gbar)
    return mu * g_prev + norm_term


def step_and_project(x_t: np.ndarray, g: np.ndarray, x0: np.ndarray,
                     alpha: float, eps: float) -> np.ndarray:
    """Signed ascent step, clamped to the eps-ball around x0 and then to [0, 1]."""
    stepped = x_t + alpha * np.sign(g)
    return np.clip(np.clip(stepped, x0 - eps, x0 + eps), 0.0, 1.0)


def gaussian_kernel(size: int, sigma: float = None) -> np.ndarray:
    """Normalized 2-D gaussian; sigma defaults to size/3."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be an odd integer >= 1, got {size}")
    if sigma is None:
        sigma = size / 3.0
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    half = size // 2
    d = np.arange(size, dtype=np.float64) - half
    k = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


def tim_smooth(g: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Channel-wise same-size convolution of a gradient with a smoothing kernel."""
    if g.ndim != 3:
        raise ValueError(f"tim_smooth: need CHW gradient, got shape {g.shape}")
    size = kernel.shape[0]
    if kernel.shape != (size, size) or size % 2 == 0:
        raise ValueError(f"tim_smooth: kernel must be odd square, got {kernel.shape}")
    if size == 1:
        return g * kernel[0, 0]
    half = size // 2
    out = np.empty_like(g)
    for c in range(g.shape[0]):
        padded = np.pad(g[c], half)
        windows = sliding_window_view(padded, (size, size))
        out[c] = np.einsum("hwij,ij->hw", windows, kernel, optimize=True)
    return out


# ---------------------------------------------------------------------------
# gradient strategies


@dataclass(frozen=True)
class DimSpec:
    """One draw of the random resize/pad input transform."""
    apply: bool
    size: int = 0
    top: int = 0
    left: int = 0


def draw_dim(rng: np.random.Generator, h: int, p: float) -> DimSpec:
    """Keep-or-transform draw: with prob p, shrink to r in [ceil(0.75h), h] and pad back."""
    if rng.random() >= p:
        return DimSpec(False)
    lo = math.ceil(0.75 * h)
    size = int(rng.integers(lo, h + 1))
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, h - size + 1))
    return DimSpec(True, size, top, left)


def apply_dim(node: Tensor, spec: DimSpec) -> Tensor:
    if not spec.apply:
        return node
    h, w = node.data.shape[1], node.data.shape[2]
    resized = tensor.resize_nearest(node, spec.size, spec.size)
    return tensor.pad_image(resized, spec.top, h - spec.size - spec.top,
                            spec.left, w - spec.size - spec.left, 0.0)


@dataclass(frozen=True)
class Term:
    """One transformed copy: model input is coeff * x + offset, then resize/pad."""
    coeff: float
    offset: np.ndarray = None
    dim: DimSpec = None


def _fused_logits(models, weights, node: Tensor) -> Tensor:
    if len(models) == 1:
        return models[0].forward(node)
    fused = None
    for model, w in zip(models, weights):
        part = tensor.scale(model.forward(node), w)
        fused = part if fused is None else tensor.add(fused, part)
    return fused


def _normalized_weights(models, weights) -> list:
    if weights is None:
        return [1.0 / len(models)] * len(models)
    w = [float(v) for v in weights]
    if len(w) != len(models):
        raise ValueError(f"got {len(w)} weights for {len(models)} models")
    if any(v < 0 for v in w):
        raise ValueError("ensemble weights must be non-negative")
    total = sum(w)
    if total <= 0:
        raise ValueError("ensemble weights must not sum to zero")
    return [v / total for v in w]


def ensemble_logits(models, weights, image) -> Tensor:
    """Weighted sum of per-model logits on a shared input node."""
    models = list(models)
    weights = _normalized_weights(models, weights)
    node = image if isinstance(image, Tensor) else Tensor(image)
    return _fused_logits(models, weights, node)


def ensemble_loss(models, weights, image, label: int) -> Tensor:
    return tensor.softmax_cross_entropy(ensemble_logits(models, weights, image), label)


def strategy_loss(models, weights, x_leaf: Tensor, label: int, block: list) -> Tensor:
    """Mean cross-entropy over one block of transformed copies of x_leaf."""
    total = None
    for term in block:
        node = tensor.scale(x_leaf, term.coeff)
        if term.offset is not None:
            node = tensor.add(node, Tensor(term.offset))
        if term.dim is not None:
            node = apply_dim(node, term.dim)
        li = tensor.softmax_cross_entropy(_fused_logits(models, weights, node), label)
        total = li if total is None else tensor.add(total, li)
    return tensor.scale(total, 1.0 / len(block))


def strategy_gradient(models, weights, x: np.ndarray, label: int, blocks: list):
    """(mean input gradient, mean loss) over blocks of transformed copies.

    Per-block gradients come from one reverse pass each; the cross-block mean
    is a running mean, so identical blocks collapse without rounding.
    """
    if not blocks:
        raise ValueError("strategy_gradient: need at least one block")
    gbar = None
    loss_mean = 0.0
    for k, block in enumerate(blocks, 1):
        x_leaf = Tensor(x)
        loss = strategy_loss(models, weights, x_leaf, label, block)
        g = tensor.backward(loss)[x_leaf]
        if gbar is None:
            gbar = g
            loss_mean = loss.item()
        else:
            gbar = gbar + (g - gbar) / k
            loss_mean = loss_mean + (loss.item() - loss_mean) / k
    return gbar, loss_mean


def _donor_candidates(donors, label: int) -> list:
    return [np.asarray(img, dtype=np.float64) for img, lab in donors if int(lab) != int(label)]


def _pick_donors(donors, label: int, m2: int, rng: np.random.Generator) -> list:
    candidates = _donor_candidates(donors, label)
    if len(candidates) < m2:
        raise ValueError(f"need at least {m2} donor images with label != {label}, have {len(candidates)}")
    idx = rng.choice(len(candidates), size=m2, replace=False)
    return [candidates[int(i)] for i in idx]


def _sim_blocks(m: int) -> list:
    return [[Term(0.5 ** i) for i in range(m)]]


def _admix_blocks(m1: int, eta: float, donor_images: list) -> list:
    return [[Term(0.5 ** i, (0.5 ** i * eta) * d) for i in range(m1)] for d in donor_images]


def _path_blocks(m: int, baselines: list) -> list:
    return [[Term(0.5 ** i, (1.0 - 0.5 ** i) * b) for i in range(m)] for b in baselines]


def _mix_blocks(m: int, eta: float, samples: list) -> list:
    return [[Term(0.5 ** i * eta, (0.5 ** i * (1.0 - eta)) * s) for i in range(m)] for s in samples]


def sim_gradient(models, x, label, m, weights=None):
    """Mean gradient over m power-of-two scale copies."""
    return strategy_gradient(_as_models(models), weights, x, label, _sim_blocks(m))[0]


def admix_gradient(models, x, label, m1, m2, eta, donors, rng, weights=None):
    """Mean gradient over m2 donor mixes, each expanded into m1 scale copies."""
    picked = _pick_donors(donors, label, m2, rng)
    return strategy_gradient(_as_models(models), weights, x, label, _admix_blocks(m1, eta, picked))[0]


def pam_gradient(models, x, label, m, baselines, weights=None):
    """Mean gradient over augmentation paths toward baseline images."""
    blocks = _path_blocks(m, [np.asarray(b, dtype=np.float64) for b in baselines])
    return strategy_gradient(_as_models(models), weights, x, label, blocks)[0]


def sdam_gradient(models, x, label, m, n, eta, strength, sampler, seed, t, weights=None):
    """Mean gradient over n fresh generated samples mixed into the iterate."""
    req = SampleRequest(np.asarray(x, dtype=np.float64), int(label), strength, n,
                        derive_seed(seed, "gen", t))
    samples = sampler.sample(req)
    return strategy_gradient(_as_models(models), weights, x, label, _mix_blocks(m, eta, samples))[0]


def sdam_fast_gradient(models, x, label, m, n, eta, strength, cache, seed, key=None, weights=None):
    """Like sdam_gradient but replays the iteration-0 samples from `cache`."""
    req = SampleRequest(np.asarray(x, dtype=np.float64), int(label), strength, n,
                        derive_seed(seed, "gen", 0))
    samples = cache.sample(req, key=key)
    return strategy_gradient(_as_models(models), weights, x, label, _mix_blocks(m, eta, samples))[0]


def _as_models(models) -> list:
    return list(models) if isinstance(models, (list, tuple)) else [models]


# ---------------------------------------------------------------------------
# the attack loop


@dataclass(frozen=True)
class IterationRecord:
    t: int
    loss: float
    prediction: int
    linf: float
    x_min: float
    x_max: float


def _build_blocks(config: AttackConfig, x_t, label, t, rng, sampler, cache, donors, seed):
    mth = config.method
    if mth in ("MIM", "TIM"):
        blocks = [[Term(1.0)]]
    elif mth == "DIM":
        blocks = [[Term(1.0, dim=draw_dim(rng, x_t.shape[1], config.dim_p))]]
    elif mth == "SIM":
        blocks = _sim_blocks(config.m)
    elif mth == "ADMIX":
        picked = _pick_donors(donors, label, config.m2, rng)
        blocks = _admix_blocks(config.m1, config.eta, picked)
    elif mth == "PAM":
        baselines = [baseline_image(name, x_t.shape) for name in config.path_pool]
        blocks = _path_blocks(config.m, baselines)
    elif mth == "SDAM":
        req = SampleRequest(x_t, label, config.strength, config.n, derive_seed(seed, "gen", t))
        blocks = _mix_blocks(config.m, config.eta, sampler.sample(req))
    elif mth == "SDAM_FAST":
        req = SampleRequest(x_t, label, config.strength, config.n, derive_seed(seed, "gen", 0))
        blocks = _mix_blocks(config.m, config.eta, cache.sample(req))
    else:
        raise ConfigError(f"unknown method {mth!r}")

    if config.compose_paths and mth != "PAM":
        baselines = [baseline_image(name, x_t.shape) for name in config.path_pool]
        blocks = blocks + _path_blocks(config.m, baselines)
    if config.compose_dim:
        blocks = [[replace(term, dim=draw_dim(rng, x_t.shape[1], config.dim_p)) for term in block]
                  for block in blocks]
    return blocks


def run_attack(config: AttackConfig, models, x0, label, sampler=None, donors=None,
               weights=None, seed: int = 0):
    """Craft one adversarial example; returns (x_adv, per-iteration trace).

    `sampler` is required for the sample-mixing methods; `donors` (an
    iterable of (image, label) pairs) is required for the admix method.
    Determinism: all randomness is keyed by (seed, iteration), so the same
    call is bit-reproducible.
    """
    config.validate()
    models = _as_models(models)
    weights = _normalized_weights(models, weights)
    if config.method in ("SDAM", "SDAM_FAST") and sampler is None:
        raise ConfigError(f"method {config.method} requires a sampler")
    if config.method == "ADMIX":
        if donors is None:
            raise ConfigError("method ADMIX requires donor images")
        donors = [(np.asarray(img, dtype=np.float64), int(lab)) for img, lab in donors]
        have = len(_donor_candidates(donors, label))
        if have < config.m2:
            raise ConfigError(f"method ADMIX needs m2={config.m2} donors with label != {label}, have {have}")

    x0 = np.asarray(x0, dtype=np.float64)
    label = int(label)
    cache = CachedSampler(sampler) if config.method == "SDAM_FAST" else None
    kernel = gaussian_kernel(config.tim_kernel) if (config.method == "TIM" or config.compose_tim) else None

    x_t = x0.copy()
    g_mom = np.zeros_like(x0)
    trace = []
    for t in range(config.T):
        rng = rng_from(seed, "iter", t)
        blocks = _build_blocks(config, x_t, label, t, rng, sampler, cache, donors, seed)
        gbar, loss = strategy_gradient(models, weights, x_t, label, blocks)
        if kernel is not None:
            gbar = tim_smooth(gbar, kernel)
        g_mom = momentum_update(g_mom, gbar, config.mu)
        x_t = step_and_project(x_t, g_mom, x0, config.alpha, config.eps)
        fused = sum(w * mdl.logits(x_t) for mdl, w in zip(models, weights))
        trace.append(IterationRecord(
            t=t,
            loss=loss,
            prediction=int(np.argmax(fused)),
            linf=float(np.abs(x_t - x0).max()),
            x_min=float(x_t.min()),
            x_max=float(x_t.max()),
        ))
    return x_t, trace
