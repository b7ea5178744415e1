from .autograd import (GradientTape, Tensor, constants, grad_check, value_and_grad)
from .linalg import (PSD_FLOOR, matmul, min_eigenvalue, nearest_psd,
                     project_capped_simplex, softmax, symmetrize)
from .optim import Adam, AdamState, adam_step
from .rng import RNG_ALGORITHM, derive_seed, rng_stream, split_streams

__all__ = [
    "GradientTape", "Tensor", "constants", "grad_check", "value_and_grad",
    "PSD_FLOOR", "matmul", "min_eigenvalue", "nearest_psd", "project_capped_simplex",
    "softmax", "symmetrize", "Adam", "AdamState", "adam_step", "RNG_ALGORITHM",
    "derive_seed", "rng_stream", "split_streams",
]
