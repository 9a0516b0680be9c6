"""Shared fixtures: cheap untrained models, trained zoos, FD helper."""

import os

import numpy as np
import pytest

from atkit import tensor, zoo
from atkit.seeds import rng_from
from atkit.zoo import ARCHITECTURES, ModelSpec, build_model, make_synthetic_dataset, train

ZOO_CACHE = os.path.join(os.path.dirname(__file__), "_cache", "zoo")


def fd_gradient(f, x, h=1e-5):
    """Central finite differences of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
        it.iternext()
    return g


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def check_grad(build, x, h=1e-5, tol=1e-6):
    """`build` maps a Tensor leaf to a scalar loss Tensor; compares autodiff
    against central differences and returns the max relative error."""
    leaf = tensor.Tensor(x)
    loss = build(leaf)
    auto = tensor.backward(loss)[leaf]
    num = fd_gradient(lambda a: build(tensor.Tensor(a)).item(), x, h=h)
    err = rel_err(auto, num)
    assert err <= tol, f"gradient mismatch: rel err {err:.3e} > {tol}"
    return err


@pytest.fixture(scope="session")
def tiny_model():
    """Untrained small CNN; enough for gradient and attack plumbing tests."""
    return build_model(ModelSpec("archC", seed=3))


@pytest.fixture(scope="session")
def tiny_images():
    rng = rng_from(2024, "fixture")
    return [(rng.random((3, 32, 32)), int(rng.integers(0, 8))) for _ in range(6)]


@pytest.fixture(scope="session")
def small_dataset():
    return make_synthetic_dataset(12, seed=5, split="train")


@pytest.fixture(scope="session")
def small_test_dataset():
    return make_synthetic_dataset(6, seed=5, split="test")


@pytest.fixture(scope="session")
def small_zoo(small_dataset):
    """Two quickly trained models; used where real decision boundaries matter
    but full training would be too slow."""
    return {
        arch: train(ModelSpec(arch, seed=1), small_dataset, epochs=2, lr=0.05, seed=1)
        for arch in ("archA", "archC")
    }


@pytest.fixture(scope="session")
def bench_zoo():
    """The four benchmark classifiers; disk-cached, so only the first run
    of a fresh checkout pays the training time."""
    return zoo.reference_zoo(cache_dir=ZOO_CACHE)


@pytest.fixture(scope="session")
def eval_dataset():
    """Held-out pool the transfer benchmarks draw from."""
    return make_synthetic_dataset(25, seed=11, split="test")


def all_architectures():
    return list(ARCHITECTURES)
