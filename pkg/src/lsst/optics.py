"""CASSI sensing model: coded mask, dispersive shift, sensor integration.

A scene cube x (H, W, bands) is modulated pixel-wise by the coded mask,
each band is shifted right by ``step * band`` columns, and the shifted
bands are summed onto a single sensor plane of width W + step*(bands-1).
Band index is 0-based and shifts increase with it; the adjoint and the
shift-back initialization use the same convention, so the choice is
self-consistent throughout.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import Tensor


@dataclass(frozen=True)
class SensingOperator:
    """Coded mask plus per-band dispersion step, for a fixed band count."""

    mask: np.ndarray
    step: int
    bands: int

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=np.float64)
        if m.ndim != 2:
            raise ConfigError("mask must be 2-D")
        if not np.all(np.isfinite(m)) or m.min() < 0 or m.max() > 1:
            raise ConfigError("mask values must be finite and within [0, 1]")
        if self.step < 0:
            raise ConfigError("dispersion step must be >= 0")
        if self.bands < 1:
            raise ConfigError("bands must be >= 1")
        object.__setattr__(self, "mask", m)

    @property
    def scene_shape(self):
        return (*self.mask.shape, self.bands)

    @property
    def measurement_width(self):
        return self.mask.shape[1] + self.step * (self.bands - 1)

    @property
    def measurement_shape(self):
        return (self.mask.shape[0], self.measurement_width)


@dataclass(frozen=True)
class NoiseSpec:
    """Additive sensor noise hook; kind "none" disables it."""

    kind: str = "none"
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "additive-gaussian"):
            raise ConfigError(f"unknown noise kind '{self.kind}'")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")


def _check_cube(x, op):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != op.scene_shape:
        raise ShapeError(f"cube shape {x.shape} does not match operator "
                         f"scene shape {op.scene_shape}")
    return x


def _check_measurement(y, op):
    y = np.asarray(y, dtype=np.float64)
    if y.shape != op.measurement_shape:
        raise ShapeError(f"measurement shape {y.shape} does not match "
                         f"operator shape {op.measurement_shape}")
    return y


def forward_sense(x, op, noise=None):
    """Simulate the sensor: mask, disperse, integrate, optionally add noise.

    y[i, j] collects mask[i, j'] * x[i, j', k] over all bands k with
    j' = j - step*k inside the scene.
    """
    x = _check_cube(x, op)
    H, W, _ = x.shape
    y = np.zeros(op.measurement_shape)
    coded = x * op.mask[:, :, None]
    for k in range(op.bands):
        off = op.step * k
        y[:, off:off + W] += coded[:, :, k]
    if noise is not None and noise.kind == "additive-gaussian":
        rng = np.random.default_rng(noise.seed)
        y = y + rng.normal(0.0, noise.sigma, size=y.shape)
    return y


def adjoint_sense(y, op):
    """Exact adjoint of the noise-free forward model.

    <forward_sense(x), y> == <x, adjoint_sense(y)> for all x, y.
    """
    y = _check_measurement(y, op)
    H, W = op.mask.shape
    x = np.empty(op.scene_shape)
    for k in range(op.bands):
        off = op.step * k
        x[:, :, k] = op.mask * y[:, off:off + W]
    return x


def shift_back_init(y, op):
    """Undo the dispersion: band k is the W-wide window starting at column
    step*k.  This is the network's input estimate for the scene."""
    y = _check_measurement(y, op)
    W = op.mask.shape[1]
    x = np.empty(op.scene_shape)
    for k in range(op.bands):
        off = op.step * k
        x[:, :, k] = y[:, off:off + W]
    return x


def shift_back_node(tape, y, op):
    """Tape-recorded shift-back so gradients can flow to the measurement."""
    if y.shape != op.measurement_shape:
        raise ShapeError(f"measurement shape {y.shape} does not match "
                         f"operator shape {op.measurement_shape}")
    W = op.mask.shape[1]
    step, bands = op.step, op.bands
    out = Tensor._wrap(shift_back_init(y.data, op))
    if tape is not None:
        yshape = y.shape

        def vjp(g):
            gy = np.zeros(yshape)
            for k in range(bands):
                gy[:, step * k:step * k + W] += g[:, :, k]
            return (gy,)
        tape.record(out, (y,), vjp)
    return out


def random_mask(H, W, density, seed):
    """I.i.d. Bernoulli(density) binary coded aperture."""
    if not 0.0 < density <= 1.0:
        raise ConfigError("density must be in (0, 1]")
    rng = np.random.default_rng(seed)
    return (rng.random((H, W)) < density).astype(np.float64)


def synth_scene(H, W, bands, seed, blobs=6):
    """Synthetic scene: random spatial Gaussian blobs, each carrying a smooth
    spectral signature (low-order polynomial in the band index, clamped to
    [0, 1]).  Smooth signatures make adjacent bands correlate more strongly
    than distant ones, which is the statistic the attention design exploits.
    """
    if blobs < 1:
        raise ConfigError("blobs must be >= 1")
    rng = np.random.default_rng(seed)
    ii, jj = np.mgrid[0:H, 0:W]
    t = np.linspace(0.0, 1.0, bands)
    cube = np.zeros((H, W, bands))
    for _ in range(blobs):
        ci = rng.uniform(0, H)
        cj = rng.uniform(0, W)
        sig = rng.uniform(0.08, 0.25) * max(H, W)
        amp = rng.uniform(0.4, 1.0)
        g = np.exp(-((ii - ci) ** 2 + (jj - cj) ** 2) / (2.0 * sig * sig))
        coef = rng.uniform(-1.0, 1.0, size=4)
        spec = coef[0] + coef[1] * t + coef[2] * t ** 2 + coef[3] * t ** 3
        spec = np.clip(0.5 + 0.5 * spec, 0.0, 1.0)
        cube += amp * g[:, :, None] * spec[None, None, :]
    return np.clip(cube, 0.0, 1.0)
