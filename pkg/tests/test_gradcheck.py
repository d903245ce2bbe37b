import numpy as np
import pytest

from cyclemlp import gradcheck
from cyclemlp.tensor import Rng


@pytest.mark.parametrize("op", gradcheck.OP_NAMES + ("block",))
def test_op_passes_on_ten_seeds(op):
    for seed in range(10):
        errs = gradcheck.check_op(op, seed)
        assert max(errs.values()) < gradcheck.DEFAULT_TOLERANCE, (seed, errs)


def test_model_toy_passes():
    errs = gradcheck.check_op("model-toy", 0)
    assert "input" in errs and "head.weight" in errs
    assert max(errs.values()) < gradcheck.TOLERANCE["model-toy"]


@pytest.mark.parametrize("op", ["cycle_fc", "layer_norm", "block"])
def test_corrupted_vjp_is_caught(op):
    errs = gradcheck.check_op(op, 0, corrupt=True)
    assert max(errs.values()) > gradcheck.DEFAULT_TOLERANCE


def test_rel_error_metric():
    a = np.array([1.0, -2.0])
    assert gradcheck.rel_error(a, a) == 0.0
    assert gradcheck.rel_error(a, a + np.array([0.0, 0.02])) == pytest.approx(0.01)
    assert gradcheck.rel_error(np.zeros(2), np.zeros(2)) == 0.0


def test_fd_check_on_quadratic():
    x = np.array([1.0, -3.0, 0.5])
    errs = gradcheck.fd_check(lambda: float(np.sum(x ** 2)), {"x": x}, {"x": 2 * x})
    assert errs["x"] < 1e-9
    errs = gradcheck.fd_check(lambda: float(np.sum(x ** 2)), {"x": x}, {"x": 2 * x},
                              rng=Rng(0), max_entries=2)
    assert errs["x"] < 1e-9


def test_unknown_target():
    with pytest.raises(ValueError):
        gradcheck.check_op("conv")
