import numpy as np
import numpy.testing as npt
import pytest

from lsst.errors import NonFiniteGradientError
from lsst.numerics import AdamState, Tensor, adam_step


def _params(rng):
    return {"w": Tensor(rng.standard_normal((3, 2))),
            "b": Tensor(rng.standard_normal(2))}


def test_zero_gradient_leaves_params_unchanged():
    rng = np.random.default_rng(0)
    params = _params(rng)
    before = {n: p.data.copy() for n, p in params.items()}
    state = AdamState(params, lr=1e-2)
    adam_step(state, params, {n: np.zeros_like(p.data)
                              for n, p in params.items()})
    for n in params:
        npt.assert_array_equal(params[n].data, before[n])


def test_first_step_magnitude_is_lr():
    # constant gradient g: after bias correction the step is
    # lr * g / (|g| + eps) ~= lr * sign(g)
    lr = 4e-4
    params = {"w": Tensor(np.zeros(4))}
    state = AdamState(params, lr=lr)
    g = np.full(4, 2.5)
    adam_step(state, params, {"w": g})
    npt.assert_allclose(np.abs(params["w"].data), lr, rtol=1e-6)
    assert np.all(np.sign(params["w"].data) == -1.0)


def test_two_runs_same_seed_bitwise_identical():
    def run():
        rng = np.random.default_rng(7)
        params = _params(rng)
        state = AdamState(params, lr=3e-3)
        for step in range(25):
            grads = {n: rng.standard_normal(p.shape)
                     for n, p in params.items()}
            adam_step(state, params, grads)
        return {n: p.data.copy() for n, p in params.items()}

    a, b = run(), run()
    for n in a:
        npt.assert_array_equal(a[n], b[n])


def test_nan_gradient_aborts_with_parameter_name():
    rng = np.random.default_rng(1)
    params = _params(rng)
    before = {n: p.data.copy() for n, p in params.items()}
    state = AdamState(params, lr=1e-3)
    grads = {"w": np.zeros((3, 2)), "b": np.array([np.nan, 0.0])}
    with pytest.raises(NonFiniteGradientError) as exc:
        adam_step(state, params, grads)
    assert "b" in str(exc.value)
    assert state.step == 0
    for n in params:
        npt.assert_array_equal(params[n].data, before[n])


def test_step_counter_strictly_increases_and_moments_match_shapes():
    rng = np.random.default_rng(2)
    params = _params(rng)
    state = AdamState(params)
    for expected in (1, 2, 3):
        adam_step(state, params,
                  {n: rng.standard_normal(p.shape) for n, p in params.items()})
        assert state.step == expected
    for n, p in params.items():
        assert state.m[n].shape == p.shape
        assert state.v[n].shape == p.shape
