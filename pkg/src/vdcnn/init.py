from __future__ import annotations

import numpy as np

from .autodiff import Tensor, get_dtype


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def he_init(shape, fan_in: int, seed) -> Tensor:
    """Zero-mean Gaussian with variance 2 / fan_in.

    ``seed`` may be an int or a numpy Generator (which is advanced in place).
    For a temporal conv fan_in is ``C_in * w``; for a dense layer it is the
    input size.
    """
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    values = _rng(seed).normal(0.0, np.sqrt(2.0 / fan_in), size=tuple(shape))
    return Tensor(values.astype(get_dtype()))


def uniform_init(shape, bound: float, seed) -> Tensor:
    values = _rng(seed).uniform(-bound, bound, size=tuple(shape))
    return Tensor(values.astype(get_dtype()))
