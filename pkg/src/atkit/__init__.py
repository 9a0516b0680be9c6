"""Transfer-based adversarial attack toolkit.

Layers, bottom up: `tensor` (float64 reverse-mode autodiff), `io` (binary
tensor files, PPM export), `zoo` (synthetic texture dataset + CNN
classifiers), `genpool` (class-conditioned image samplers), `attacks`
(momentum-iterative attacks and their input-transformation variants),
`shield` (inference-time defenses), `bench` (evaluation matrix, ablations)
and `cli` (the `atkit` command).
"""

__version__ = "0.1.0"

from .attacks import AttackConfig, run_attack  # noqa: F401
from .tensor import Tensor, backward  # noqa: F401
from .zoo import Dataset, Model, ModelSpec, make_synthetic_dataset, predict, train  # noqa: F401
