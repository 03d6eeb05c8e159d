import time

import numpy as np
import pytest

from alimnet import verify
from alimnet.diffcore import functional as F
from alimnet.diffcore.gradcheck import gradient_check
from alimnet.diffcore.tensor import Tensor, make_node
from alimnet.exceptions import InvalidInputError


@pytest.fixture(scope="module")
def suite():
    start = time.perf_counter()
    results = verify.run_suite()
    return results, time.perf_counter() - start


def test_suite_covers_every_layer_and_both_objectives(suite):
    results, _ = suite
    names = {r.name for r in results}
    assert names == set(verify.CHECK_NAMES)
    assert set(verify.OBJECTIVES) <= names
    for kind in ("dense", "conv2d", "maxpool2d", "upsample2d", "batchnorm_train", "gru_sequence", "dropout"):
        assert kind in names


def test_suite_passes_within_budget(suite):
    results, seconds = suite
    failed = [(r.name, r.error) for r in results if not r.passed]
    assert not failed
    assert seconds < 120
    for r in results:
        expected = verify.OBJECTIVE_TOLERANCE if r.name in verify.OBJECTIVES else verify.LAYER_TOLERANCE
        assert r.tolerance == expected
        assert r.refined == 0 or r.name in verify.OBJECTIVES


def test_suite_uses_millistep():
    assert verify.EPS == 1e-3


def test_single_check_and_unknown_name():
    (r,) = verify.run_suite("relu")
    assert r.name == "relu" and r.passed
    with pytest.raises(InvalidInputError):
        verify.run_suite("attention")


def wrong_square(t):
    """x**2 whose backward reports 2.1x."""
    return make_node(t.data ** 2, (t,), lambda g: (g * 2.1 * t.data,))


def test_wrong_gradient_is_caught_even_with_refinement():
    x = Tensor(np.linspace(0.5, 2.0, 6), requires_grad=True)
    for refine in (False, True):
        assert gradient_check(lambda t: F.sum(wrong_square(t)), x, refine_kinks=refine) > 0.04


def test_kink_inside_step_is_reprobed():
    # 4e-4 sits within one millistep of the relu kink at zero
    x = Tensor(np.array([4e-4, 0.7, -0.3]), requires_grad=True)
    op = lambda t: F.sum(F.activation(t, "relu"))
    assert gradient_check(op, x) > 0.1
    err, refined = gradient_check(op, x, refine_kinks=True, return_refined=True)
    assert err < 1e-9 and refined == 1


def test_refinement_is_a_no_op_on_smooth_ops():
    x = Tensor(np.random.default_rng(0).standard_normal(8), requires_grad=True)
    op = lambda t: F.sum(F.activation(t, "tanh"))
    err, refined = gradient_check(op, x, refine_kinks=True, return_refined=True)
    assert refined == 0 and err == gradient_check(op, x)
