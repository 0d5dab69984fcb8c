import numpy as np
import numpy.testing as npt
import pytest

from lsst.errors import ConfigError, ShapeError
from lsst.numerics import Tape, Tensor, gradients, ops
from lsst.optics import (NoiseSpec, SensingOperator, adjoint_sense,
                         forward_sense, random_mask, shift_back_init,
                         shift_back_node, synth_scene)


def _dense_operator_matrix(op):
    """Explicit matrix of the sensing map, column by column (brute force)."""
    H, W = op.mask.shape
    n_in = H * W * op.bands
    n_out = H * op.measurement_width
    phi = np.zeros((n_out, n_in))
    for idx in range(n_in):
        e = np.zeros(n_in)
        e[idx] = 1.0
        phi[:, idx] = forward_sense(e.reshape(H, W, op.bands), op).ravel()
    return phi


def test_full_scale_measurement_geometry():
    op = SensingOperator(np.ones((256, 256)), 2, 28)
    assert op.measurement_shape == (256, 310)


def test_single_band_all_ones_mask_is_identity():
    rng = np.random.default_rng(0)
    x = rng.random((5, 7, 1))
    op = SensingOperator(np.ones((5, 7)), 3, 1)
    npt.assert_array_equal(forward_sense(x, op), x[:, :, 0])


def test_forward_matches_dense_matrix():
    rng = np.random.default_rng(1)
    mask = random_mask(4, 4, 0.6, 1)
    op = SensingOperator(mask, 1, 3)
    phi = _dense_operator_matrix(op)
    x = rng.random((4, 4, 3))
    npt.assert_allclose(forward_sense(x, op).ravel(), phi @ x.ravel(),
                        atol=1e-13)
    # adjoint equals the matrix transpose route
    y = rng.random(op.measurement_shape)
    npt.assert_allclose(adjoint_sense(y, op).ravel(), phi.T @ y.ravel(),
                        atol=1e-13)


def test_adjoint_identity_many_instances():
    rng = np.random.default_rng(2)
    for trial in range(100):
        mask = (rng.random((4, 4)) < 0.5).astype(float)
        op = SensingOperator(mask, int(rng.integers(0, 3)), 3)
        x = rng.standard_normal((4, 4, 3))
        y = rng.standard_normal(op.measurement_shape)
        lhs = np.vdot(forward_sense(x, op), y)
        rhs = np.vdot(x, adjoint_sense(y, op))
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_adjoint_zero_and_broadcast_cases():
    op = SensingOperator(np.ones((3, 4)), 0, 5)
    npt.assert_array_equal(adjoint_sense(np.zeros((3, 4)), op),
                           np.zeros((3, 4, 5)))
    y = np.arange(12.0).reshape(3, 4)
    back = adjoint_sense(y, op)
    for k in range(5):
        npt.assert_array_equal(back[:, :, k], y)


def test_forward_linearity():
    rng = np.random.default_rng(3)
    mask = random_mask(6, 5, 0.5, 3)
    op = SensingOperator(mask, 2, 4)
    x = rng.random((6, 5, 4))
    z = rng.random((6, 5, 4))
    lhs = forward_sense(2.5 * x + 0.5 * z, op)
    rhs = 2.5 * forward_sense(x, op) + 0.5 * forward_sense(z, op)
    npt.assert_allclose(lhs, rhs, atol=1e-12)


def test_measurement_width_formula():
    for W, d, bands in [(10, 0, 4), (10, 1, 4), (10, 3, 7), (256, 2, 28)]:
        op = SensingOperator(np.ones((4, W)), d, bands)
        assert op.measurement_width == W + d * (bands - 1)


def test_shift_back_windows():
    op = SensingOperator(np.ones((3, 4)), 2, 3)
    y = np.arange(3 * 8, dtype=float).reshape(3, 8)
    cube = shift_back_init(y, op)
    for k in range(3):
        npt.assert_array_equal(cube[:, :, k], y[:, 2 * k:2 * k + 4])


def test_shift_back_zero_step():
    op = SensingOperator(np.ones((3, 4)), 0, 5)
    y = np.arange(12.0).reshape(3, 4)
    cube = shift_back_init(y, op)
    for k in range(5):
        npt.assert_array_equal(cube[:, :, k], y)


def test_shift_back_inverts_pure_shift():
    rng = np.random.default_rng(4)
    x = rng.random((4, 4, 1))
    op = SensingOperator(np.ones((4, 4)), 2, 1)
    npt.assert_array_equal(shift_back_init(forward_sense(x, op), op), x)


def test_shift_back_identity_when_bands_do_not_overlap():
    # step >= W: each band occupies its own window, all-ones mask
    rng = np.random.default_rng(5)
    x = rng.random((3, 4, 3))
    op = SensingOperator(np.ones((3, 4)), 4, 3)
    npt.assert_allclose(shift_back_init(forward_sense(x, op), op), x,
                        atol=1e-15)


def test_shift_back_node_gradients():
    rng = np.random.default_rng(6)
    op = SensingOperator(random_mask(4, 4, 0.5, 0), 2, 3)
    y = Tensor(rng.standard_normal(op.measurement_shape))
    r = Tensor(rng.standard_normal((4, 4, 3)))
    tape = Tape()
    cube = shift_back_node(tape, y, op)
    loss = ops.sum_all(tape, ops.mul(tape, cube, r))
    g = gradients(tape, loss, [y])[0]
    # the adjoint of window-cropping is window-accumulation
    expected = np.zeros(op.measurement_shape)
    for k in range(3):
        expected[:, 2 * k:2 * k + 4] += r.data[:, :, k]
    npt.assert_allclose(g, expected, atol=1e-15)


def test_forward_shape_errors():
    op = SensingOperator(np.ones((4, 4)), 2, 3)
    with pytest.raises(ShapeError):
        forward_sense(np.zeros((4, 5, 3)), op)
    with pytest.raises(ShapeError):
        adjoint_sense(np.zeros((4, 9)), op)


def test_noise_spec():
    op = SensingOperator(np.ones((4, 4)), 1, 2)
    x = np.ones((4, 4, 2))
    clean = forward_sense(x, op)
    noisy1 = forward_sense(x, op, NoiseSpec("additive-gaussian", 0.1, 42))
    noisy2 = forward_sense(x, op, NoiseSpec("additive-gaussian", 0.1, 42))
    npt.assert_array_equal(noisy1, noisy2)
    assert not np.array_equal(noisy1, clean)
    with pytest.raises(ConfigError):
        NoiseSpec("poisson", 0.1, 0)
    with pytest.raises(ConfigError):
        NoiseSpec("additive-gaussian", -1.0, 0)


def test_random_mask_properties():
    m1 = random_mask(256, 256, 0.5, 11)
    m2 = random_mask(256, 256, 0.5, 11)
    npt.assert_array_equal(m1, m2)
    assert set(np.unique(m1)) <= {0.0, 1.0}
    assert abs(m1.mean() - 0.5) < 0.02
    npt.assert_array_equal(random_mask(8, 8, 1.0, 0), np.ones((8, 8)))
    with pytest.raises(ConfigError):
        random_mask(8, 8, 0.0, 0)


def test_synth_scene_deterministic_and_bounded():
    a = synth_scene(16, 16, 6, seed=3)
    b = synth_scene(16, 16, 6, seed=3)
    npt.assert_array_equal(a, b)
    assert a.min() >= 0.0 and a.max() <= 1.0
    assert a.shape == (16, 16, 6)
    with pytest.raises(ConfigError):
        synth_scene(8, 8, 4, 0, blobs=0)


def test_synth_scene_adjacent_band_correlation():
    # adjacent bands should correlate more strongly than far-apart bands
    near, far = [], []
    for seed in range(10):
        cube = synth_scene(24, 24, 8, seed=seed)
        flat = cube.reshape(-1, 8).T
        corr = np.corrcoef(flat)
        near.extend(corr[i, i + 1] for i in range(7))
        far.extend(corr[i, j] for i in range(8) for j in range(8) if j - i >= 4)
    assert np.mean(near) > np.mean(far)
