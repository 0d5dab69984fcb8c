"""Analytic parameter and multiply-add accounting.

The per-layer table here is computed by closed-form arithmetic that walks
the architecture definition directly, independently of the allocator in
``blocks``; tests assert the two agree exactly, and an instrumented
forward pass cross-checks the attention and convolution counts against
what the kernels actually multiply.

Conventions: a fused multiply-add counts as one MAC and 2 FLOPs.  The
headline attention cost counts only the two attention matmuls per phase
(2 * HW * C_g * C MACs); q/k/v projections are tallied separately, and
softmax/norm/activation work is reported as an elementwise-op count
outside the MAC totals.  Published tables for models of this family quote
MAC totals under the name FLOPs, so comparisons against the reference
targets below use ``macs_total``.
"""

from dataclasses import dataclass

import numpy as np

from .attention import AttentionWeights, local_spectral_attention
from .blocks import build_model
from .errors import ConfigError
from .numerics import CountingTape, Tensor

# Published reference totals (parameters, MACs) for each variant at the
# standard 256x256x28 setting; used for side-by-side reporting only.
REFERENCE_TARGETS = {
    "S": (0.69e6, 8.37e9),
    "M": (0.85e6, 13.04e9),
    "L": (1.22e6, 16.35e9),
    "Plus": (1.35e6, 22.60e9),
}


@dataclass
class LayerCount:
    name: str
    kind: str
    params: int
    macs: int


@dataclass
class ComplexityReport:
    variant: str
    height: int
    width: int
    rows: list
    params_total: int
    conv_macs: int
    attention_core_macs: int
    attention_proj_macs: int
    elementwise_ops: int

    @property
    def macs_total(self):
        return self.conv_macs + self.attention_core_macs \
            + self.attention_proj_macs

    @property
    def flops_total(self):
        return 2 * self.macs_total


def attention_flops(variant, H, W, C, M=None, C_g=None):
    """Closed-form attention-matmul cost of one attention application.

    global: 2*(HW)^2*C, windowed: 2*M^2*HW*C, spectral: 2*HW*C^2,
    separate-spectral: 2*HW*C_g*C.
    """
    if min(H, W, C) < 1:
        raise ConfigError("dimensions must be positive")
    hw = H * W
    if variant == "g-msa":
        return 2 * hw * hw * C
    if variant == "w-msa":
        if M is None or M < 1:
            raise ConfigError("w-msa needs a window size M")
        return 2 * M * M * hw * C
    if variant == "s-msa":
        return 2 * hw * C * C
    if variant == "ss-msa":
        if C_g is None or C_g < 1 or C % C_g != 0:
            raise ConfigError("ss-msa needs a group width C_g dividing C")
        return 2 * hw * C_g * C
    raise ConfigError(f"unknown attention variant '{variant}'")


def _stage_rows(cfg, prefix, H, W):
    """Per-layer counts of one single-stage network, in allocator order."""
    c1, c2, c3 = cfg.stage_channels
    n1, n2, n3 = cfg.repeats
    G = cfg.groups
    e = cfg.expansion
    p = prefix + "." if prefix else ""
    hw = [(H >> s) * (W >> s) if H else 0 for s in range(3)]
    rows = []

    def conv(name, k, cin, cout, hw_out, groups=1):
        rows.append(LayerCount(p + name, "conv",
                               k * k * (cin // groups) * cout + cout,
                               k * k * (cin // groups) * cout * hw_out))

    def block(name, c, hw_s):
        cg = c // G
        rows.append(LayerCount(f"{p}{name}.sstb.norm", "norm", 2 * c, 0))
        for phase in ("local", "nonlocal"):
            rows.append(LayerCount(f"{p}{name}.sstb.{phase}", "attention",
                                   3 * cg * cg, 2 * hw_s * cg * c))
            rows.append(LayerCount(f"{p}{name}.sstb.{phase}.proj",
                                   "attention_proj", 0, 3 * hw_s * cg * c))
        conv(f"{name}.lscb.dw", cfg.dw_kernel, c, c, hw_s, groups=c)
        conv(f"{name}.lscb.expand", 1, c, e * c, hw_s)
        conv(f"{name}.lscb.reduce", 1, e * c, c, hw_s)
        conv(f"{name}.fuse_dw", cfg.fusion_kernel, c, c, hw_s, groups=c)
        conv(f"{name}.fuse_pw", 1, c, c, hw_s)

    conv("shallow", 3, cfg.bands + 1, c1, hw[0])
    for i in range(n1):
        block(f"enc1.{i}", c1, hw[0])
    conv("down1", 4, c1, c2, hw[1])
    for i in range(n2):
        block(f"enc2.{i}", c2, hw[1])
    conv("down2", 4, c2, c3, hw[2])
    for i in range(n3):
        block(f"bottleneck.{i}", c3, hw[2])
    # transposed convs: weights are those of the paired 2x2 stride-2 conv,
    # cost scales with the *input* spatial size
    rows.append(LayerCount(f"{p}up1", "tconv", 4 * c2 * c3 + c2,
                           4 * c2 * c3 * hw[2]))
    conv("fuse1", 1, 2 * c2, c2, hw[1])
    for i in range(n2):
        block(f"dec2.{i}", c2, hw[1])
    rows.append(LayerCount(f"{p}up2", "tconv", 4 * c1 * c2 + c1,
                           4 * c1 * c2 * hw[1]))
    conv("fuse2", 1, 2 * c1, c1, hw[0])
    for i in range(n1):
        block(f"dec1.{i}", c1, hw[0])
    conv("out_conv", 3, c1, cfg.bands, hw[0])
    return rows


def _elementwise_ops(cfg, H, W):
    """Elements touched by norm, softmax, and GELU (kept out of MAC totals)."""
    c1, c2, c3 = cfg.stage_channels
    n1, n2, n3 = cfg.repeats
    total = 0
    for c, n, s in ((c1, 2 * n1, 0), (c2, 2 * n2, 1), (c3, n3, 2)):
        hw = (H >> s) * (W >> s)
        cg = c // cfg.groups
        per_block = hw * c                      # layer norm
        per_block += 2 * cfg.groups * cg * cg   # softmax over both phases
        per_block += hw * c + hw * cfg.expansion * c  # the two GELUs
        total += n * per_block
    return total


def _report(cfg, H, W):
    stages = cfg.cascade_stages
    rows = []
    for t in range(stages):
        prefix = f"stage{t}" if stages > 1 else ""
        rows.extend(_stage_rows(cfg, prefix, H, W))
    return ComplexityReport(
        variant=cfg.variant,
        height=H or 0,
        width=W or 0,
        rows=rows,
        params_total=sum(r.params for r in rows),
        conv_macs=sum(r.macs for r in rows if r.kind in ("conv", "tconv")),
        attention_core_macs=sum(r.macs for r in rows
                                if r.kind == "attention"),
        attention_proj_macs=sum(r.macs for r in rows
                                if r.kind == "attention_proj"),
        elementwise_ops=(_elementwise_ops(cfg, H, W) * stages) if H else 0,
    )


def count_params(config):
    """Closed-form parameter total plus the per-layer table."""
    return _report(config, None, None)


def count_model_flops(config, H, W):
    """Closed-form MAC/FLOP totals for one forward pass at H x W."""
    if H % 4 != 0 or W % 4 != 0:
        raise ConfigError("H and W must be divisible by 4")
    return _report(config, H, W)


def instrumented_attention_macs(H, W, C, G, seed=0):
    """Run one grouped-attention phase and count its attention matmuls."""
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((H * W, C)))
    weights = AttentionWeights.create(C // G, rng)
    tape = CountingTape()
    local_spectral_attention(tape, x, G, weights)
    return tape.counter.total("attention_core")


def instrumented_model_macs(config, H, W, seed=0):
    """Forward the real model once, counting kernel multiply-adds by tag."""
    from .optics import SensingOperator, forward_sense, random_mask, synth_scene

    mask = random_mask(H, W, 0.5, seed)
    op = SensingOperator(mask, config.step, config.bands)
    scene = synth_scene(H, W, config.bands, seed)
    y = forward_sense(scene, op)
    model = build_model(config, seed)
    tape = CountingTape()
    model.forward(tape, Tensor(y), op)
    return dict(tape.counter.counts)


def audit(config, H, W, seed=0):
    """Cross-check every counting route; returns the comparison dict.

    analytic parameter total vs allocator enumeration, and analytic conv /
    attention MACs vs the instrumented kernel counters, all as exact
    integer comparisons.
    """
    report = count_model_flops(config, H, W)
    model = build_model(config, seed)
    enumerated = model.store.total_size()
    counted = instrumented_model_macs(config, H, W, seed)
    return {
        "report": report,
        "params_analytic": report.params_total,
        "params_enumerated": enumerated,
        "params_match": report.params_total == enumerated,
        "conv_macs_analytic": report.conv_macs,
        "conv_macs_instrumented": counted.get("conv", 0),
        "conv_match": report.conv_macs == counted.get("conv", 0),
        "attention_core_analytic": report.attention_core_macs,
        "attention_core_instrumented": counted.get("attention_core", 0),
        "attention_core_match":
            report.attention_core_macs == counted.get("attention_core", 0),
        "attention_proj_analytic": report.attention_proj_macs,
        "attention_proj_instrumented": counted.get("attention_proj", 0),
        "attention_proj_match":
            report.attention_proj_macs == counted.get("attention_proj", 0),
    }


def variant_table(channels=28, groups=4, bands=28, step=2, H=256, W=256):
    """Params/MACs for every variant beside the reference targets."""
    from .blocks import ModelConfig

    out = []
    for tag, (ref_params, ref_macs) in REFERENCE_TARGETS.items():
        cfg = ModelConfig.from_variant(tag, channels=channels, groups=groups,
                                       bands=bands, step=step)
        rep = count_model_flops(cfg, H, W)
        out.append({
            "variant": tag,
            "params": rep.params_total,
            "macs": rep.macs_total,
            "flops_2x": rep.flops_total,
            "ref_params": ref_params,
            "ref_macs": ref_macs,
            "params_ratio": rep.params_total / ref_params,
            "macs_ratio": rep.macs_total / ref_macs,
        })
    return out
