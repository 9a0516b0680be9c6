"""Synthetic texture dataset and a small zoo of CNN classifiers.

The dataset is procedural: each of the 8 classes is a parametric texture
family (three stripe orientations, a checkerboard, rings, a radial blob,
gaussian blobs, a plaid).  Per-sample parameter jitter plus uniform pixel
noise of amplitude 0.05 gives within-class variety while keeping the classes
separable enough for a small CNN to reach high held-out accuracy in a few
epochs.  Everything is keyed off `seeds.rng_from`, so regenerating a dataset
with the same seed is bit-identical.

Model files (.atkm):

    magic 'ATKM' | u32 version=1 | u32 nparams
    | per param: u32 name length | name utf-8 | embedded .atkt tensor blob
    | u8 architecture id (ascii letter) | u64 init seed
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import io, tensor
from .seeds import rng_from
from .tensor import Tensor

NUM_CLASSES = 8
IMAGE_SHAPE = (3, 32, 32)

# texture contrast band for the synthetic classes; low ceiling keeps logit
# margins small relative to a 16/255 perturbation budget
CONTRAST_RANGE = (0.16, 0.38)

# smoothing floor of the input-standardization front-end; comparable to the
# low end of per-image pixel standard deviations
NORM_SCALE = 0.05

MODEL_MAGIC = b"ATKM"
MODEL_VERSION = 1

_YY, _XX = np.meshgrid(np.arange(32, dtype=np.float64), np.arange(32, dtype=np.float64), indexing="ij")


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# synthetic data


def _stripes(rng, base_angle):
    # +-31 degree jitter makes neighbouring orientation classes overlap; narrow
    # frequency band and phases near zero keep draws spatially aligned
    theta = np.deg2rad(base_angle + rng.uniform(-31.0, 31.0))
    freq = rng.uniform(3.4, 4.6)
    phase = rng.uniform(-0.5, 0.5)
    axis = _XX * np.cos(theta) + _YY * np.sin(theta)
    return 0.5 + 0.5 * np.sin(2.0 * np.pi * freq * axis / 32.0 + phase)


def class_prototype(label: int, rng: np.random.Generator) -> np.ndarray:
    """One noise-free texture for `label`, as a 3x32x32 array in [0, 1].

    The same generator family backs both the dataset (noise amplitude 0.05)
    and the procedural image sampler (noise amplitude 0.02 * strength).
    """
    if not 0 <= label < NUM_CLASSES:
        raise ValueError(f"label {label} out of range for {NUM_CLASSES} classes")
    if label in (0, 1, 2):
        p = _stripes(rng, 60.0 * label)
    elif label == 3:
        fx, fy = rng.uniform(3.5, 4.5, size=2)
        p1, p2 = rng.uniform(-0.5, 0.5, size=2)
        p = 0.5 + 0.5 * np.sin(2.0 * np.pi * fx * _XX / 32.0 + p1) * np.sin(2.0 * np.pi * fy * _YY / 32.0 + p2)
    elif label == 4:
        # low end of the frequency range makes slow rings resemble gradients
        cy, cx = rng.uniform(14.5, 17.5, size=2)
        freq = rng.uniform(2.2, 3.2)
        phase = rng.uniform(-0.5, 0.5)
        r = np.hypot(_YY - cy, _XX - cx)
        p = 0.5 + 0.5 * np.sin(2.0 * np.pi * freq * r / 32.0 + phase)
    elif label == 5:
        cy, cx = rng.uniform(13.0, 19.0, size=2)
        radius = rng.uniform(13.0, 19.0)
        r = np.hypot(_YY - cy, _XX - cx)
        p = np.clip(1.0 - r / radius, 0.0, 1.0)
    elif label == 6:
        # few large blobs can look like a gradient or a slow ring
        p = np.zeros((32, 32))
        for _ in range(int(rng.integers(4, 8))):
            cy, cx = rng.uniform(4.0, 28.0, size=2)
            sigma = rng.uniform(2.0, 4.0)
            d2 = (_YY - cy) ** 2 + (_XX - cx) ** 2
            p += np.exp(-d2 / (2.0 * sigma * sigma))
        p = p / max(p.max(), 1e-9)
    else:
        fx, fy = rng.uniform(3.5, 4.5, size=2)
        p1, p2 = rng.uniform(-0.5, 0.5, size=2)
        sx = 0.5 + 0.5 * np.sin(2.0 * np.pi * fx * _XX / 32.0 + p1)
        sy = 0.5 + 0.5 * np.sin(2.0 * np.pi * fy * _YY / 32.0 + p2)
        p = np.clip(sx + sy - 0.5, 0.0, 1.0)

    contrast = rng.uniform(*CONTRAST_RANGE)
    p = 0.5 + contrast * (p - 0.5)
    gains = rng.uniform(0.5, 1.0, size=3)
    return np.clip(gains[:, None, None] * p[None], 0.0, 1.0)


@dataclass
class Dataset:
    images: list
    labels: list
    split: str
    classes: int = NUM_CLASSES

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i):
        return self.images[i], self.labels[i]


_SPLIT_CODES = {"train": 0, "test": 1}


def make_synthetic_dataset(num_per_class: int, seed: int, split: str = "train") -> Dataset:
    """Procedural labelled images; uniform label histogram by construction."""
    if num_per_class < 1:
        raise ValueError(f"num_per_class must be >= 1, got {num_per_class}")
    if split not in _SPLIT_CODES:
        raise ValueError(f"split must be one of {sorted(_SPLIT_CODES)}, got {split!r}")
    code = _SPLIT_CODES[split]
    images, labels = [], []
    for label in range(NUM_CLASSES):
        for i in range(num_per_class):
            rng = rng_from(seed, "data", code, label, i)
            proto = class_prototype(label, rng)
            noise = rng.uniform(-0.05, 0.05, IMAGE_SHAPE)
            images.append(np.clip(proto + noise, 0.0, 1.0))
            labels.append(label)
    return Dataset(images, labels, split)


def save_dataset(dataset: Dataset, out_dir) -> str:
    """Write images as .atkt files plus a JSON manifest; returns manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, (img, label) in enumerate(zip(dataset.images, dataset.labels)):
        name = f"img_{i:05d}.atkt"
        io.save_tensor(os.path.join(out_dir, name), img)
        entries.append({"path": name, "label": int(label)})
    manifest = os.path.join(out_dir, "manifest.json")
    with open(manifest, "w") as f:
        json.dump({"images": entries, "classes": NUM_CLASSES}, f, indent=1)
    return manifest


def load_manifest(manifest_path, split: str = "test") -> Dataset:
    with open(manifest_path) as f:
        doc = json.load(f)
    if "images" not in doc:
        raise io.FormatError(f"{manifest_path}: manifest is missing the 'images' key")
    base = os.path.dirname(os.path.abspath(manifest_path))
    images, labels = [], []
    for entry in doc["images"]:
        path = entry["path"]
        if not os.path.isabs(path):
            path = os.path.join(base, path)
        img = io.load_tensor(path)
        if img.shape != IMAGE_SHAPE:
            raise ValueError(f"{path}: expected image shape {IMAGE_SHAPE}, got {img.shape}")
        images.append(img)
        labels.append(int(entry["label"]))
    classes = int(doc.get("classes", NUM_CLASSES))
    if any(not 0 <= l < classes for l in labels):
        raise ValueError(f"{manifest_path}: label out of range for {classes} classes")
    return Dataset(images, labels, split, classes)


# ---------------------------------------------------------------------------
# architectures


@dataclass(frozen=True)
class Conv:
    out_ch: int
    kernel: int
    pad: int
    stride: int = 1


@dataclass(frozen=True)
class Dense:
    out_dim: int


ARCHITECTURES = {
    "archA": (Conv(16, 5, 2), "relu", "avgpool", Conv(32, 3, 1), "relu", "avgpool", "flatten", Dense(NUM_CLASSES)),
    "archB": (Conv(12, 5, 2), "relu", "maxpool", Conv(12, 3, 1), "relu", "avgpool", "flatten", Dense(NUM_CLASSES)),
    "archC": (
        Conv(6, 3, 1), "relu", "maxpool",
        Conv(12, 3, 1), "relu", "maxpool",
        Conv(24, 3, 1), "relu", "avgpool",
        "flatten", Dense(NUM_CLASSES),
    ),
    "archD": (Conv(12, 5, 2), "relu", "maxpool", Conv(8, 1, 0), "relu", "avgpool", "flatten", Dense(32), "relu", Dense(NUM_CLASSES)),
}

_ARCH_IDS = {name: name[-1].encode("ascii") for name in ARCHITECTURES}
_ARCH_FROM_ID = {v: k for k, v in _ARCH_IDS.items()}


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    seed: int

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}; known: {sorted(ARCHITECTURES)}")


class Model:
    """A feed-forward classifier; parameters are autodiff leaf tensors."""

    def __init__(self, spec: ModelSpec, params: dict):
        self.spec = spec
        self.params = params  # insertion order == layer order
        self.meta = {}

    def forward(self, image) -> Tensor:
        x = image if isinstance(image, Tensor) else Tensor(image)
        if x.data.shape != IMAGE_SHAPE:
            raise ValueError(f"expected input shape {IMAGE_SHAPE}, got {x.data.shape}")
        # contrast-normalization front-end, differentiable end to end:
        # x <- (x - mean) / sqrt(NORM_SCALE^2 + var).  Texture classes are
        # defined by structure, not brightness or gain, so every model in the
        # zoo standardizes its input.  NORM_SCALE keeps the map smooth and
        # leaves a controlled sensitivity to overall intensity.
        mean = tensor.scale(tensor.reduce_sum(x), 1.0 / x.size)
        x = tensor.sub(x, tensor.spread(mean, x.shape))
        var = tensor.scale(tensor.reduce_sum(tensor.mul(x, x)), 1.0 / x.size)
        inv = tensor.recip(tensor.sqrt(tensor.add(var, NORM_SCALE ** 2)))
        x = tensor.mul(x, tensor.spread(inv, x.shape))
        for i, layer in enumerate(ARCHITECTURES[self.spec.arch]):
            if isinstance(layer, Conv):
                x = tensor.conv2d(x, self.params[f"layer{i}.weight"], self.params[f"layer{i}.bias"],
                                  stride=layer.stride, pad=layer.pad)
            elif isinstance(layer, Dense):
                x = tensor.dense(x, self.params[f"layer{i}.weight"], self.params[f"layer{i}.bias"])
            elif layer == "relu":
                x = tensor.relu(x)
            elif layer == "avgpool":
                x = tensor.avgpool2(x)
            elif layer == "maxpool":
                x = tensor.maxpool2(x)
            elif layer == "flatten":
                x = tensor.flatten(x)
            else:
                raise ValueError(f"unknown layer kind {layer!r}")
        return x

    def logits(self, image) -> np.ndarray:
        return self.forward(image).data


def build_model(spec: ModelSpec) -> Model:
    """Fresh model with seeded He/Glorot-style init; bit-identical per spec."""
    params = {}
    shape = IMAGE_SHAPE
    pidx = 0
    for i, layer in enumerate(ARCHITECTURES[spec.arch]):
        if isinstance(layer, Conv):
            c, h, w = shape
            rng = rng_from(spec.seed, "init", pidx)
            std = np.sqrt(2.0 / (c * layer.kernel * layer.kernel))
            params[f"layer{i}.weight"] = Tensor(rng.normal(0.0, std, (layer.out_ch, c, layer.kernel, layer.kernel)))
            params[f"layer{i}.bias"] = Tensor(np.zeros(layer.out_ch))
            oh = (h + 2 * layer.pad - layer.kernel) // layer.stride + 1
            ow = (w + 2 * layer.pad - layer.kernel) // layer.stride + 1
            shape = (layer.out_ch, oh, ow)
            pidx += 1
        elif isinstance(layer, Dense):
            in_dim = int(np.prod(shape))
            rng = rng_from(spec.seed, "init", pidx)
            # gentler than He; large-fan-in dense layers destabilise SGD otherwise
            std = np.sqrt(1.0 / in_dim)
            params[f"layer{i}.weight"] = Tensor(rng.normal(0.0, std, (layer.out_dim, in_dim)))
            params[f"layer{i}.bias"] = Tensor(np.zeros(layer.out_dim))
            shape = (layer.out_dim,)
            pidx += 1
        elif layer in ("avgpool", "maxpool"):
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
        elif layer == "flatten":
            shape = (int(np.prod(shape)),)
    return Model(spec, params)


def predict(model: Model, image) -> tuple:
    """(argmax class, logits tensor); ties resolve to the lowest class index."""
    logits = model.forward(image)
    return int(np.argmax(logits.data)), logits


def accuracy(model: Model, dataset: Dataset) -> float:
    hits = sum(1 for img, label in dataset if predict(model, img)[0] == label)
    return hits / len(dataset)


# ---------------------------------------------------------------------------
# training


def _batch_loss(model: Model, images, labels) -> Tensor:
    total = None
    for img, label in zip(images, labels):
        li = tensor.softmax_cross_entropy(model.forward(img), label)
        total = li if total is None else tensor.add(total, li)
    return tensor.scale(total, 1.0 / len(images))


def _sgd_epoch(model, velocities, images, labels, order, lr, momentum, batch_size,
               craft=None):
    losses = []
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        batch_x = [images[j] for j in idx]
        batch_y = [labels[j] for j in idx]
        if craft is not None:
            batch_x = craft(model, batch_x, batch_y)
        loss = _batch_loss(model, batch_x, batch_y)
        if not np.isfinite(loss.data):
            raise TrainingDiverged("training loss is not finite; try a lower learning rate")
        losses.append(loss.item())
        grads = tensor.backward(loss)
        for name, p in model.params.items():
            g = grads.get(p)
            if g is None:
                continue
            v = velocities[name]
            v *= momentum
            v += g
            p.data -= lr * v
    return losses


def _fit(spec, data, epochs, lr, seed, momentum, batch_size, craft=None, test_data=None):
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    model = build_model(spec)
    velocities = {name: np.zeros_like(p.data) for name, p in model.params.items()}
    shuffle = rng_from(seed, "shuffle")
    epoch_losses = []
    for _ in range(epochs):
        order = shuffle.permutation(len(data))
        losses = _sgd_epoch(model, velocities, data.images, data.labels, order,
                            lr, momentum, batch_size, craft)
        epoch_losses.append(float(np.mean(losses)))
    model.meta["epoch_losses"] = epoch_losses
    model.meta["train_accuracy"] = accuracy(model, data) if epochs else None
    if test_data is not None:
        model.meta["test_accuracy"] = accuracy(model, test_data)
    return model


def train(spec: ModelSpec, data: Dataset, epochs: int, lr: float, seed: int,
          momentum: float = 0.9, batch_size: int = 32, test_data: Dataset = None) -> Model:
    """Minibatch SGD with momentum; deterministic given (spec, data, seed)."""
    return _fit(spec, data, epochs, lr, seed, momentum, batch_size, test_data=test_data)


def fgsm(model: Model, image: np.ndarray, label: int, eps: float) -> np.ndarray:
    """Single-step sign-gradient example, clamped to the valid pixel range."""
    x = Tensor(image)
    loss = tensor.softmax_cross_entropy(model.forward(x), label)
    g = tensor.backward(loss)[x]
    return np.clip(image + eps * np.sign(g), 0.0, 1.0)


def adversarial_train(spec: ModelSpec, data: Dataset, eps: float, epochs: int, lr: float,
                      seed: int, momentum: float = 0.9, batch_size: int = 32,
                      test_data: Dataset = None) -> Model:
    """Train on 50% clean / 50% single-step adversarial minibatches.

    The second half of every batch is re-crafted against the current weights.
    With eps=0 the crafted half equals the clean half, so the run matches
    `train` bitwise.
    """
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")

    def craft(model, batch_x, batch_y):
        out = list(batch_x)
        for k in range(len(batch_x) // 2, len(batch_x)):
            out[k] = fgsm(model, batch_x[k], batch_y[k], eps)
        return out

    model = _fit(spec, data, epochs, lr, seed, momentum, batch_size,
                 craft=craft, test_data=test_data)
    model.meta["adversarial_eps"] = eps
    return model


# benchmark zoo: one shared dataset, four architectures, fixed training seeds
REFERENCE_DATA = {"per_class": 400, "seed": 0}
REFERENCE_EPOCHS = 5
REFERENCE_LR = 0.05
REFERENCE_SEEDS = {"archA": 11, "archB": 21, "archC": 31, "archD": 41}
# adversarial minibatches need a gentler schedule than clean training: at
# lr 0.05 the half-crafted batches collapse the model to a constant class
REFERENCE_ADV = {"arch": "archB", "seed": 51, "eps": 16.0 / 255.0,
                 "epochs": 10, "lr": 0.01}


def reference_zoo(cache_dir=None, include_adversarial: bool = False) -> dict:
    """The benchmark classifiers, trained on one shared dataset.

    archA (the designated surrogate) reaches >= 97% test accuracy; all four
    clean models disagree pairwise on >= 1% of test predictions, so transfer
    rates between them are informative.  Training is deterministic, so
    `cache_dir` only skips the retrain: cached models are bitwise identical
    to freshly trained ones.  `include_adversarial` adds an adversarially
    trained victim under the key "archB_adv".
    """
    data = make_synthetic_dataset(REFERENCE_DATA["per_class"], REFERENCE_DATA["seed"],
                                  split="train")
    jobs = [(arch, seed, None) for arch, seed in REFERENCE_SEEDS.items()]
    if include_adversarial:
        jobs.append((REFERENCE_ADV["arch"] + "_adv", REFERENCE_ADV["seed"],
                     REFERENCE_ADV["eps"]))
    models = {}
    for name, seed, adv_eps in jobs:
        path = os.path.join(cache_dir, f"{name}.atkm") if cache_dir else None
        if path and os.path.exists(path):
            models[name] = load_model(path)
            continue
        arch = name[:5]
        if adv_eps is None:
            models[name] = train(ModelSpec(arch, seed), data, REFERENCE_EPOCHS,
                                 REFERENCE_LR, seed)
        else:
            models[name] = adversarial_train(ModelSpec(arch, seed), data, adv_eps,
                                             REFERENCE_ADV["epochs"], REFERENCE_ADV["lr"],
                                             seed)
        if path:
            os.makedirs(cache_dir, exist_ok=True)
            save_model(models[name], path)
    return models


# ---------------------------------------------------------------------------
# model files


def save_model(model: Model, path) -> None:
    parts = [MODEL_MAGIC, struct.pack("<II", MODEL_VERSION, len(model.params))]
    for name, p in model.params.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(io.tensor_to_bytes(p.data))
    parts.append(_ARCH_IDS[model.spec.arch])
    parts.append(struct.pack("<Q", model.spec.seed))
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_model(path) -> Model:
    with open(path, "rb") as f:
        buf = f.read()
    r = io._Reader(buf, str(path))
    if r.take(4) != MODEL_MAGIC:
        raise io.BadMagicError(f"{path}: bad model magic")
    version = r.u32()
    if version != MODEL_VERSION:
        raise io.BadVersionError(f"{path}: unsupported model version {version}")
    nparams = r.u32()
    params = {}
    for _ in range(nparams):
        name = r.take(r.u32()).decode("utf-8")
        params[name] = Tensor(io.tensor_from_reader(r))
    arch_id = r.take(1)
    if arch_id not in _ARCH_FROM_ID:
        raise io.FormatError(f"{path}: unknown architecture id byte {arch_id!r}")
    seed = r.u64()
    if not r.done():
        raise io.FormatError(f"{path}: trailing bytes after model data")
    spec = ModelSpec(_ARCH_FROM_ID[arch_id], seed)
    expected = set(build_model(spec).params)
    if set(params) != expected:
        raise io.FormatError(f"{path}: parameter names do not match architecture {spec.arch}")
    return Model(spec, params)
