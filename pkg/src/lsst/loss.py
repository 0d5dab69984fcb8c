"""Per-band RMSE, focal weighting, and the focal spectrum loss.

The loss is mean_k(w_k * l_k) where l_k is the RMSE of band k and
w_k = log(l_k**alpha + 1) (natural log).  Weights grow with the band
error, so badly reconstructed bands dominate the objective.  The weights
are treated as frozen coefficients: they are recomputed from detached
band errors every evaluation and gradients do not flow through them.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numerics import Tensor, ops


@dataclass
class BandLossReport:
    band_rmse: np.ndarray
    weights: np.ndarray
    alpha: float
    total: float

    def csv_rows(self):
        return [(k, float(self.band_rmse[k]), float(self.weights[k]))
                for k in range(len(self.band_rmse))]


def _check_pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.ndim != 3:
        raise ShapeError(f"expected (H, W, bands) cubes, got {pred.shape}")
    return pred, target


def band_rmse(pred, target):
    """RMSE of each spectral band over its H*W pixels."""
    pred, target = _check_pair(pred, target)
    d = pred - target
    return np.sqrt(np.mean(d * d, axis=(0, 1)))


def focal_weight(l, alpha):
    """w = log(l**alpha + 1); zero exactly when the band error is zero."""
    l = np.asarray(l, dtype=np.float64)
    if np.any(l < 0):
        raise ValueError("band errors must be >= 0")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    return np.log(np.power(l, alpha) + 1.0)


def focal_spectrum_loss(pred, target, alpha=0.5):
    """Loss value plus the per-band report, on plain arrays."""
    l = band_rmse(pred, target)
    w = focal_weight(l, alpha)
    total = float(np.mean(w * l))
    return total, BandLossReport(l, w, alpha, total)


def rmse_loss(pred, target):
    """Global RMSE over every entry (ablation baseline)."""
    pred, target = _check_pair(pred, target)
    d = pred - target
    return float(np.sqrt(np.mean(d * d)))


def focal_spectrum_loss_node(tape, pred, target, alpha=0.5, weights=None):
    """Tape-recorded focal spectrum loss of a predicted cube tensor.

    Weights come from the detached band errors of the current prediction,
    entering the graph as constants; the gradient therefore weights each
    band's RMSE gradient by its frozen w_k.  Returns (loss node, report).
    Pass ``weights`` to pin the frozen coefficients explicitly (finite
    difference checks of the stop-gradient semantics need this).
    """
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    H, W, bands = pred.shape
    diff = ops.sub(tape, pred, Tensor(target))
    sq = ops.mul(tape, diff, diff)
    mse = ops.scale(tape, ops.sum_axes(tape, sq, (0, 1)), 1.0 / (H * W))
    l = ops.sqrt(tape, mse)
    w = focal_weight(l.data, alpha) if weights is None else weights
    weighted = ops.mul(tape, l, Tensor(w))
    loss = ops.scale(tape, ops.sum_all(tape, weighted), 1.0 / bands)
    report = BandLossReport(l.data.copy(), w, alpha, float(loss.data))
    return loss, report


def rmse_loss_node(tape, pred, target):
    """Tape-recorded global RMSE of a predicted cube tensor."""
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = ops.sub(tape, pred, Tensor(target))
    sq = ops.mul(tape, diff, diff)
    return ops.sqrt(tape, ops.mean_all(tape, sq))
