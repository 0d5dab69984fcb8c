"""Gradient-check battery covering every layer, block, and a micro model.

Each entry perturbs one tensor (an input or a weight) and compares tape
gradients of a fixed random projection of the output against central
finite differences.  grad_check perturbs the tensor's buffer in place, so
closures may simply reuse the same Tensor objects between evaluations.
"""

import numpy as np

from .attention import SSTB, AttentionWeights, grouped_spectral_attention
from .blocks import LSCB, LSSTB, ModelConfig, build_model
from .loss import focal_spectrum_loss, focal_spectrum_loss_node, rmse_loss_node
from .numerics import Tensor, grad_check, ops
from .optics import SensingOperator, forward_sense, random_mask, synth_scene

LAYER_TOL = 1e-4
MODEL_TOL = 1e-3


def _proj(rng, shape):
    return Tensor(rng.standard_normal(shape))


def _scalarize(tape, out, r):
    return ops.sum_all(tape, ops.mul(tape, out, r))


def layer_checks(seed=0):
    """(name, max relative error, tolerance) for every primitive layer."""
    rng = np.random.default_rng(seed)
    rows = []

    def check(name, f, x, tol=LAYER_TOL):
        rows.append((name, grad_check(f, x), tol))

    a = Tensor(rng.standard_normal((4, 3)))
    b = Tensor(rng.standard_normal((3, 5)))
    r_mm = _proj(rng, (4, 5))
    check("matmul/a", lambda t, tape: _scalarize(
        tape, ops.matmul(tape, t, b), r_mm), a)
    check("matmul/b", lambda t, tape: _scalarize(
        tape, ops.matmul(tape, a, t), r_mm), b)

    s = Tensor(rng.standard_normal((5, 7)))
    r_sm = _proj(rng, (5, 7))
    check("softmax_rows/x", lambda t, tape: _scalarize(
        tape, ops.softmax_rows(tape, t), r_sm), s)

    x = Tensor(rng.standard_normal((6, 6, 4)))
    w = Tensor(0.3 * rng.standard_normal((3, 3, 4, 5)))
    bias = Tensor(rng.standard_normal(5))
    r_cv = _proj(rng, (6, 6, 5))
    check("conv2d/x", lambda t, tape: _scalarize(
        tape, ops.conv2d(tape, t, w, bias), r_cv), x)
    check("conv2d/w", lambda t, tape: _scalarize(
        tape, ops.conv2d(tape, x, t, bias), r_cv), w)
    check("conv2d/b", lambda t, tape: _scalarize(
        tape, ops.conv2d(tape, x, w, t), r_cv), bias)

    ws = Tensor(0.3 * rng.standard_normal((4, 4, 4, 6)))
    r_st = _proj(rng, (3, 3, 6))
    check("conv2d_strided/x", lambda t, tape: _scalarize(
        tape, ops.conv2d(tape, t, ws, stride=2, padding=1), r_st), x)

    xd = Tensor(rng.standard_normal((8, 8, 4)))
    wd = Tensor(0.3 * rng.standard_normal((7, 7, 1, 4)))
    r_dw = _proj(rng, (8, 8, 4))
    check("dwconv7/x", lambda t, tape: _scalarize(
        tape, ops.conv2d(tape, t, wd, groups=4), r_dw), xd)
    check("dwconv7/w", lambda t, tape: _scalarize(
        tape, ops.conv2d(tape, xd, t, groups=4), r_dw), wd)

    y = Tensor(rng.standard_normal((3, 3, 4)))
    wt = Tensor(0.3 * rng.standard_normal((2, 2, 2, 4)))
    r_tc = _proj(rng, (6, 6, 2))
    check("transposed_conv2d/y", lambda t, tape: _scalarize(
        tape, ops.transposed_conv2d(tape, t, wt), r_tc), y)
    check("transposed_conv2d/w", lambda t, tape: _scalarize(
        tape, ops.transposed_conv2d(tape, y, t), r_tc), wt)

    xg = Tensor(rng.standard_normal((4, 4, 6)))
    gamma = Tensor(rng.uniform(0.5, 1.5, 6))
    beta = Tensor(rng.standard_normal(6))
    r_ln = _proj(rng, (4, 4, 6))
    check("layer_norm/x", lambda t, tape: _scalarize(
        tape, ops.layer_norm(tape, t, gamma, beta), r_ln), xg)
    check("layer_norm/gamma", lambda t, tape: _scalarize(
        tape, ops.layer_norm(tape, xg, t, beta), r_ln), gamma)
    check("layer_norm/beta", lambda t, tape: _scalarize(
        tape, ops.layer_norm(tape, xg, gamma, t), r_ln), beta)

    check("gelu/x", lambda t, tape: _scalarize(
        tape, ops.gelu(tape, t), r_ln), Tensor(rng.standard_normal((4, 4, 6))))

    tok = Tensor(rng.standard_normal((5, 4)))
    gw = AttentionWeights.create(4, rng)
    r_at = _proj(rng, (5, 4))
    check("grouped_attention/x", lambda t, tape: _scalarize(
        tape, grouped_spectral_attention(tape, t, gw), r_at), tok)
    check("grouped_attention/wq", lambda t, tape: _scalarize(
        tape, grouped_spectral_attention(
            tape, tok, AttentionWeights(t, gw.wk, gw.wv)), r_at), gw.wq)
    check("grouped_attention/wv", lambda t, tape: _scalarize(
        tape, grouped_spectral_attention(
            tape, tok, AttentionWeights(gw.wq, gw.wk, t)), r_at), gw.wv)
    return rows


def block_checks(seed=0):
    """(name, error, tolerance) for sstb / lscb / lsstb and the losses."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(channels=8, groups=4, repeats=(1, 1, 1), bands=4,
                      variant="S")
    rows = []

    def check(name, f, x, tol=LAYER_TOL):
        rows.append((name, grad_check(f, x), tol))

    xs = Tensor(rng.standard_normal((4, 4, 8)))
    r = _proj(rng, (4, 4, 8))
    sstb = SSTB(8, 4, rng)
    check("sstb/x", lambda t, tape: _scalarize(tape, sstb(tape, t), r), xs)
    check("sstb/wv", lambda t, tape: _scalarize(tape, sstb(tape, xs), r),
          sstb.local.wv)

    lscb = LSCB(8, rng, dw_kernel=7, expansion=4)
    check("lscb/x", lambda t, tape: _scalarize(tape, lscb(tape, t), r), xs)
    check("lscb/dw.w", lambda t, tape: _scalarize(tape, lscb(tape, xs), r),
          lscb.dw.w)

    lsstb = LSSTB(8, cfg, rng)
    # the fusion projection starts at zero; randomize it so the check
    # exercises a non-degenerate path
    lsstb.fuse_pw.w.data[:] = 0.3 * rng.standard_normal((1, 1, 8, 8))
    check("lsstb/x", lambda t, tape: _scalarize(tape, lsstb(tape, t), r), xs)
    check("lsstb/fuse_pw.w", lambda t, tape: _scalarize(
        tape, lsstb(tape, xs), r), lsstb.fuse_pw.w)

    target = rng.random((4, 4, 3))
    pred = Tensor(rng.random((4, 4, 3)) + 0.1)
    _, rep = focal_spectrum_loss(pred.data, target, 0.5)
    check("focal_spectrum_loss/pred", lambda t, tape:
          focal_spectrum_loss_node(tape, t, target, 0.5,
                                   weights=rep.weights)[0], pred)
    check("rmse_loss/pred", lambda t, tape:
          rmse_loss_node(tape, t, target), pred)
    return rows


def model_checks(seed=0):
    """Whole-network check on an 8x8x4 micro configuration.

    Differentiates the focal loss w.r.t. the measurement (through the
    shift-back) and w.r.t. representative parameter tensors from the top,
    middle, and bottom of the network.
    """
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(channels=4, groups=2, repeats=(1, 1, 1), bands=4,
                      step=2, variant="S")
    mask = random_mask(8, 8, 0.5, seed)
    op = SensingOperator(mask, cfg.step, cfg.bands)
    scene = synth_scene(8, 8, cfg.bands, seed)
    y = Tensor(forward_sense(scene, op))
    model = build_model(cfg, seed)
    # zero-started projections would leave interior parameters with exactly
    # zero gradients; randomize them so every path is exercised
    for name, t in model.store.items():
        if ("fuse_pw.w" in name or name == "out_conv.w") \
                and not np.any(t.data):
            t.data[:] = 0.2 * rng.standard_normal(t.shape)
    # freeze the focal weights at the base point so finite differences see
    # the same stop-gradient objective the tape differentiates
    _, base = focal_spectrum_loss(model.reconstruct(y.data, op), scene,
                                  cfg.alpha)

    def loss_of(t, tape, meas):
        pred = model.forward(tape, meas, op)
        return focal_spectrum_loss_node(tape, pred, scene, cfg.alpha,
                                        weights=base.weights)[0]

    rows = [("model/measurement",
             grad_check(lambda t, tape: loss_of(t, tape, t), y), MODEL_TOL)]
    for pname in ("shallow.w", "bottleneck.0.sstb.local.wv", "out_conv.w",
                  "enc1.0.lscb.dw.w"):
        p = model.store[pname]
        rows.append((f"model/{pname}",
                     grad_check(lambda t, tape: loss_of(t, tape, y), p),
                     MODEL_TOL))
    return rows


def gradcheck_battery(scope="all", seed=0):
    rows = []
    if scope in ("all", "layer"):
        rows.extend(layer_checks(seed))
    if scope in ("all", "block"):
        rows.extend(block_checks(seed))
    if scope in ("all", "model"):
        rows.extend(model_checks(seed))
    return rows
