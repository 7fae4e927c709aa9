"""Finite-difference verification of every operator and a tiny full model."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import ops
from .autodiff import Parameter, Tensor, grad_check, precision
from .model import ArchSpec, VDCNN

THRESHOLDS = {64: 1e-5, 32: 1e-3}


@dataclass
class CheckResult:
    name: str
    error: float
    threshold: float
    seconds: float
    gated: bool = True  # False: reported only, does not decide the outcome

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error)) and self.error < self.threshold


def _weighted_sum(out: Tensor, weights: Tensor) -> Tensor:
    # a random linear readout so that every output entry matters differently
    return ad.sum_all(ad.mul(out, weights))


def spaced(rng, shape, gap: float = 0.05) -> np.ndarray:
    """Distinct values at least ``gap`` apart, so no max/top-k tie or kink lies within reach."""
    n = int(np.prod(shape))
    return ((rng.permutation(n) - n / 2 + 0.5) * gap).reshape(shape)


def away_from_zero(rng, shape, margin: float = 0.1) -> np.ndarray:
    x = rng.standard_normal(shape)
    return np.sign(x) * (np.abs(x) + margin)


def _leaf(arr, name: str) -> Parameter:
    return Parameter(arr, name)


def _op_cases(rng) -> dict:
    """name -> (closure building the loss, tensors to perturb)."""
    cases = {}

    def readout(shape):
        return Tensor(away_from_zero(rng, shape))

    A, B = _leaf(away_from_zero(rng, (3, 4)), "A"), _leaf(away_from_zero(rng, (4, 2)), "B")
    R = readout((3, 2))
    cases["matmul"] = (lambda A=A, B=B, R=R: _weighted_sum(ad.matmul(A, B), R), [A, B])

    for kind in ("add", "sub", "mul"):
        x, y = _leaf(away_from_zero(rng, (2, 3, 4)), "x"), _leaf(away_from_zero(rng, (2, 3, 4)), "y")
        R = readout((2, 3, 4))
        cases[kind] = (lambda k=kind, x=x, y=y, R=R: _weighted_sum(ad.elementwise(k, x, y), R), [x, y])
    x, b = _leaf(away_from_zero(rng, (2, 3, 4)), "x"), _leaf(away_from_zero(rng, 3), "bias")
    R = readout((2, 3, 4))
    cases["add_channel_bias"] = (lambda x=x, b=b, R=R: _weighted_sum(ad.add(x, b), R), [x, b])
    x = _leaf(away_from_zero(rng, (3, 5)), "x")
    R = readout((3, 5))
    cases["relu"] = (lambda x=x, R=R: _weighted_sum(ad.relu(x), R), [x])

    table = _leaf(away_from_zero(rng, (7, 3)), "table")
    ids = rng.integers(0, 7, size=(2, 5))
    R = readout((2, 3, 5))
    cases["embedding"] = (lambda t=table, R=R: _weighted_sum(ops.embedding_lookup(ids, t), R), [table])

    for name, stride, s, w, pad in (("temporal_conv", 1, 7, 3, 1), ("temporal_conv_stride2", 2, 8, 3, 1),
                                    ("temporal_conv_1x1_stride2", 2, 7, 1, 0)):
        x = _leaf(away_from_zero(rng, (2, 3, s)), "x")
        cw = ops.ConvWeights(_leaf(away_from_zero(rng, (4, 3, w)), "kernels"), _leaf(away_from_zero(rng, 4), "bias"))
        out_len = ops.conv_output_length(s, w, stride, pad)
        R = readout((2, 4, out_len))
        cases[name] = (lambda x=x, cw=cw, R=R, st=stride, p=pad: _weighted_sum(ops.temporal_conv(x, cw, st, p), R),
                       [x, cw.kernels, cw.bias])

    for mode in ("train", "eval"):
        x = _leaf(away_from_zero(rng, (2, 3, 5)) * 2 + 1, "x")
        bn = ops.BatchNormState.create(3, "bn")
        bn.gamma.data[...] = rng.uniform(0.5, 1.5, 3)
        bn.beta.data[...] = away_from_zero(rng, 3)
        bn.running_mean[...] = away_from_zero(rng, 3)
        bn.running_var[...] = rng.uniform(0.5, 2.0, 3)
        R = readout((2, 3, 5))
        cases[f"temporal_batch_norm_{mode}"] = (
            lambda x=x, bn=bn, R=R, mode=mode: _weighted_sum(ops.temporal_batch_norm(x, bn, mode), R),
            [x, bn.gamma, bn.beta])

    x = _leaf(spaced(rng, (2, 3, 9)), "x")
    R = readout((2, 3, 5))
    cases["temporal_max_pool"] = (lambda x=x, R=R: _weighted_sum(ops.temporal_max_pool(x), R), [x])
    x = _leaf(spaced(rng, (2, 3, 9)), "x")
    R = readout((2, 3, 5))
    cases["half_k_max_pool"] = (lambda x=x, R=R: _weighted_sum(ops.half_k_max_pool(x), R), [x])
    x = _leaf(spaced(rng, (2, 3, 9)), "x")
    R = readout((2, 3, 4))
    cases["k_max_pool"] = (lambda x=x, R=R: _weighted_sum(ops.k_max_pool(x, 4), R), [x])

    x = _leaf(away_from_zero(rng, (3, 5)), "x")
    W, b = _leaf(away_from_zero(rng, (4, 5)), "W"), _leaf(away_from_zero(rng, 4), "b")
    R = readout((3, 4))
    cases["fully_connected"] = (lambda x=x, W=W, b=b, R=R: _weighted_sum(ops.fully_connected(x, W, b), R),
                                [x, W, b])

    logits = _leaf(away_from_zero(rng, (4, 5)), "logits")
    labels = rng.integers(0, 5, size=4)
    cases["softmax_cross_entropy"] = (lambda: ops.softmax_cross_entropy(logits, labels), [logits])
    return cases


GRADCHECK_MODEL_SPEC = dict(block_counts=(1, 1, 1, 1), width_multiplier="1/8", seq_len=32, kmax_k=4, n_classes=3)


def full_model_case(rng, spec: ArchSpec | None = None, m: int = 2):
    spec = spec or ArchSpec(**GRADCHECK_MODEL_SPEC)
    model = VDCNN(spec, seed=int(rng.integers(1 << 31)))
    # non-trivial affine BN parameters
    for _, bn in model.batch_norms():
        bn.gamma.data[...] = rng.uniform(0.5, 1.5, bn.gamma.shape)
        bn.beta.data[...] = rng.uniform(-0.2, 0.2, bn.beta.shape)
    ids = rng.integers(1, spec.vocab_size, size=(m, spec.seq_len))
    labels = rng.integers(0, spec.n_classes, size=m)
    return (lambda: ops.softmax_cross_entropy(model.forward(ids, "train"), labels)), model.parameters()


def run_suite(bits: int = 64, seed: int = 0, full_model: bool = True, entries_per_param: int = 8,
              progress: Callable[[CheckResult], None] | None = None) -> list:
    """Check each operator (all entries) and a small VDCNN (sampled entries).

    In 32-bit mode the analytic gradients are computed in 32-bit and compared
    with finite differences taken in 64-bit from the same parameter values.
    The full-model figure is then informational only: batch-norm backward
    cancellation leaves float32 gradients with an absolute error near 1e-5,
    which swamps entries whose true gradient is of that size.
    """
    threshold = THRESHOLDS[bits]
    results = []
    with precision(bits):
        rng = np.random.default_rng(seed)
        ref = None if bits == 64 else 64
        for name, (f, params) in _op_cases(rng).items():
            t0 = time.perf_counter()
            err = grad_check(f, params, epsilon=1e-4, reference_bits=ref)
            results.append(CheckResult(name, err, threshold, time.perf_counter() - t0))
            if progress:
                progress(results[-1])
        if full_model:
            f, params = full_model_case(rng)
            t0 = time.perf_counter()
            err = grad_check(f, params, epsilon=1e-5, n_steps=4, max_entries=entries_per_param,
                             seed=seed, reference_bits=ref)
            results.append(CheckResult("full_model", err, threshold, time.perf_counter() - t0, gated=bits == 64))
            if progress:
                progress(results[-1])
    return results
