"""Reconstruction quality metrics: PSNR, SSIM, SAM, band correlations."""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate

from .errors import ConfigError, MetricUndefinedError, ShapeError

PSNR_CAP_DB = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    sam: float
    band_psnr: np.ndarray
    band_ssim: np.ndarray

    def to_dict(self):
        return {
            "psnr_db": self.psnr,
            "ssim": self.ssim,
            "sam_degrees": self.sam,
            "band_psnr_db": [float(v) for v in self.band_psnr],
            "band_ssim": [float(v) for v in self.band_ssim],
        }


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 3:
        raise ShapeError(f"expected (H, W, bands) cubes, got {a.shape}")
    return a, b


def psnr(a, b, data_range=1.0):
    """Per-band PSNR in dB (10*log10(range^2 / MSE)), capped at 100 dB,
    reported as the mean over bands together with the per-band vector."""
    a, b = _check_pair(a, b)
    mse = np.mean((a - b) ** 2, axis=(0, 1))
    band = np.full(mse.shape, PSNR_CAP_DB)
    nz = mse > 0
    band[nz] = np.minimum(10.0 * np.log10(data_range ** 2 / mse[nz]),
                          PSNR_CAP_DB)
    return float(band.mean()), band


def _gaussian_kernel(radius, sigma):
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    return np.outer(k, k)


def _ssim_band(a, b, data_range):
    rad = SSIM_WINDOW // 2
    kern = _gaussian_kernel(rad, SSIM_SIGMA)

    def filt(img):
        # interior of a constant-padded correlation equals a valid-mode one
        return correlate(img, kern, mode="constant")[rad:-rad, rad:-rad]

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b, data_range=1.0):
    """Single-scale SSIM per band (11x11 Gaussian window, sigma 1.5,
    K1=0.01, K2=0.03), averaged over bands."""
    a, b = _check_pair(a, b)
    H, W, bands = a.shape
    if H < SSIM_WINDOW or W < SSIM_WINDOW:
        raise ConfigError(f"images must be at least {SSIM_WINDOW} pixels "
                          f"per side, got {H}x{W}")
    band = np.array([_ssim_band(a[:, :, k], b[:, :, k], data_range)
                     for k in range(bands)])
    return float(band.mean()), band


def sam(a, b):
    """Mean spectral angle in degrees over pixels; pixels whose spectrum is
    zero in either cube are excluded.  Invariant to positive per-pixel
    scaling of either argument."""
    a, b = _check_pair(a, b)
    H, W, bands = a.shape
    fa = a.reshape(-1, bands)
    fb = b.reshape(-1, bands)
    na = np.linalg.norm(fa, axis=1)
    nb = np.linalg.norm(fb, axis=1)
    valid = (na > 0) & (nb > 0)
    if not np.any(valid):
        raise MetricUndefinedError("every pixel has a zero spectrum")
    ua = fa[valid] / na[valid][:, None]
    ub = fb[valid] / nb[valid][:, None]
    # chord-angle form 2*arcsin(|ua-ub|/2): exact at zero angle, where the
    # arccos of a rounded cosine is badly conditioned
    chord = np.linalg.norm(ua - ub, axis=1)
    angles = np.degrees(2.0 * np.arcsin(np.clip(0.5 * chord, 0.0, 1.0)))
    return float(angles.mean())


def band_correlation_map(cube):
    """Pearson correlation between every pair of flattened bands.

    Constant bands get diagonal 1 and off-diagonal 0 by convention.
    """
    cube = np.asarray(cube, dtype=np.float64)
    if cube.ndim != 3 or cube.shape[0] * cube.shape[1] < 2:
        raise ShapeError("need an (H, W, bands) cube with at least 2 pixels")
    bands = cube.shape[2]
    flat = cube.reshape(-1, bands).T
    centered = flat - flat.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centered, axis=1)
    corr = np.eye(bands)
    # exactly-constant bands (max == min) follow the diag-1/off-diag-0
    # convention; mean subtraction alone leaves rounding residue
    nz = flat.max(axis=1) != flat.min(axis=1)
    if np.any(nz):
        sub = centered[nz] / norms[nz][:, None]
        corr_nz = np.clip(sub @ sub.T, -1.0, 1.0)
        idx = np.flatnonzero(nz)
        corr[np.ix_(idx, idx)] = corr_nz
        np.fill_diagonal(corr, 1.0)
    return corr


def near_diagonal_dominance(corr, near=1):
    """Mean |correlation| of bands ``near`` apart minus the mean for pairs at
    least bands/2 apart; positive values mirror the adjacency structure the
    attention grouping assumes."""
    bands = corr.shape[0]
    near_vals = [corr[i, i + near] for i in range(bands - near)]
    far = bands // 2
    far_vals = [corr[i, j] for i in range(bands) for j in range(bands)
                if j - i >= far]
    return float(np.mean(near_vals) - np.mean(far_vals))


def evaluate(pred, truth, data_range=1.0):
    """Full metric report for a reconstruction against its ground truth."""
    p, band_p = psnr(pred, truth, data_range)
    s, band_s = ssim(pred, truth, data_range)
    return MetricReport(p, s, sam(pred, truth), band_p, band_s)
