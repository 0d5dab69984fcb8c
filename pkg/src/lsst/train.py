"""Adam training loop over simulated measurements.

One step: forward every batch sample on its own tape, average the
per-sample parameter gradients in sample order (deterministic regardless
of thread count), then apply one Adam update in place.  The logged loss
of step t is evaluated before the update, so a run resumed from a
checkpoint written after step t reproduces the uninterrupted run's loss
at step t+1 exactly.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import ConfigError
from .loss import focal_spectrum_loss_node, rmse_loss_node, band_rmse, focal_weight
from .numerics import AdamState, Tape, Tensor, adam_step, backward
from .optics import forward_sense


def _sample_pass(model, op, scene, y, loss_kind, alpha, params):
    tape = Tape(parameters=params)
    pred = model.forward(tape, Tensor(y), op)
    if loss_kind == "fsl":
        loss, _ = focal_spectrum_loss_node(tape, pred, scene, alpha)
    elif loss_kind == "rmse":
        loss = rmse_loss_node(tape, pred, scene)
    else:
        raise ConfigError(f"unknown loss '{loss_kind}'")
    grads = backward(tape, loss)
    return float(loss.data), band_rmse(pred.data, scene), grads


def train(model, op, scenes, steps, *, lr=4e-4, loss_kind="fsl", alpha=0.5,
          threads=1, state=None, start_step=0, on_step=None):
    """Train in place for ``steps`` updates; returns (history, adam state).

    History rows carry the pre-update loss plus per-band RMSE and focal
    weights (batch means), one row per step.
    """
    scenes = [np.asarray(s, dtype=np.float64) for s in scenes]
    ys = [forward_sense(s, op) for s in scenes]
    params = model.store.as_dict()
    if state is None:
        state = AdamState(params, lr=lr)

    def one(args):
        scene, y = args
        return _sample_pass(model, op, scene, y, loss_kind, alpha, params)

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    history = []
    try:
        for i in range(steps):
            if pool is not None:
                results = list(pool.map(one, zip(scenes, ys)))
            else:
                results = [one(a) for a in zip(scenes, ys)]
            n = len(results)
            loss_val = sum(r[0] for r in results) / n
            band = sum(r[1] for r in results) / n
            grads = {}
            for name in params:
                grads[name] = sum(r[2][name] for r in results) / n
            row = {
                "step": start_step + i,
                "loss": loss_val,
                "band_rmse": band,
                "weights": focal_weight(band, alpha),
            }
            adam_step(state, params, grads)
            history.append(row)
            if on_step is not None:
                on_step(row)
    finally:
        if pool is not None:
            pool.shutdown()
    return history, state


def history_csv_rows(history):
    """Flatten history rows for CSV export: step, loss, l_k..., w_k..."""
    rows = []
    for row in history:
        rows.append([row["step"], row["loss"],
                     *[float(v) for v in row["band_rmse"]],
                     *[float(v) for v in row["weights"]]])
    return rows


def history_csv_header(bands):
    return ["step", "loss",
            *[f"band_rmse_{k}" for k in range(bands)],
            *[f"weight_{k}" for k in range(bands)]]
