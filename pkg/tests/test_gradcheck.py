import pytest

from vdcnn import autodiff as ad
from vdcnn.autodiff import Parameter, grad_check
from vdcnn.gradcheck import run_suite

OPS = {"matmul", "add", "sub", "mul", "add_channel_bias", "relu", "embedding", "temporal_conv",
       "temporal_conv_stride2", "temporal_conv_1x1_stride2", "temporal_batch_norm_train",
       "temporal_batch_norm_eval", "temporal_max_pool", "half_k_max_pool", "k_max_pool",
       "fully_connected", "softmax_cross_entropy"}


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_every_operator_below_1e6_in_64bit(seed):
    results = run_suite(64, seed=seed, full_model=False)
    assert {r.name for r in results} == OPS
    worst = max(results, key=lambda r: r.error)
    assert worst.error < 1e-6, worst


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_every_operator_below_1e3_in_32bit(seed):
    worst = max(run_suite(32, seed=seed, full_model=False), key=lambda r: r.error)
    assert worst.error < 1e-3, worst


def test_composed_network(f64, rng):
    A = Parameter(rng.standard_normal((4, 6)), "A")
    B = Parameter(rng.standard_normal((6, 5)), "B")
    C = Parameter(rng.standard_normal((5, 3)), "C")
    f = lambda: ad.sum_all(ad.matmul(ad.relu(ad.matmul(A, B)), C))  # noqa: E731
    # piecewise bilinear: a larger step adds no truncation error, only less roundoff
    assert grad_check(f, [A, B, C], epsilon=1e-4, n_steps=1) < 1e-6
