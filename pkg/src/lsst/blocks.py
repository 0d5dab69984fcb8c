"""Network blocks and the U-shaped reconstruction model.

Layout: shift-back cube + mask channel -> shallow 3x3 conv -> two encoder
stages (blocks then strided 4x4 downsample doubling channels) -> bottleneck
blocks -> mirrored decoder (transposed-conv upsample halving channels, skip
concat + 1x1 fusion, blocks) -> 3x3 output conv -> add the shift-back cube.

Every block is residual-anchored: zeroing its non-residual output weights
makes it the identity map.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .attention import SSTB
from .errors import ConfigError, ShapeError
from .numerics import Tensor, ops
from .optics import shift_back_node

VARIANT_REPEATS = {"S": (1, 1, 2), "M": (2, 2, 2), "L": (2, 3, 3),
                   "Plus": (1, 1, 2)}


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 28
    groups: int = 4
    repeats: tuple = (1, 1, 2)
    dw_kernel: int = 7
    fusion_kernel: int = 3
    expansion: int = 4
    bands: int = 28
    step: int = 2
    alpha: float = 0.5
    variant: str = "S"

    def __post_init__(self):
        if self.variant not in VARIANT_REPEATS:
            raise ConfigError(f"unknown variant '{self.variant}'")
        if len(self.repeats) != 3 or any(r < 1 for r in self.repeats):
            raise ConfigError("repeats must be three counts >= 1")
        if self.channels < 1 or self.bands < 1 or self.step < 0:
            raise ConfigError("channels/bands/step out of range")
        if self.channels % self.groups != 0:
            raise ConfigError(f"channels {self.channels} not divisible by "
                              f"groups {self.groups}")
        if self.expansion < 1 or self.dw_kernel % 2 == 0 \
                or self.fusion_kernel % 2 == 0:
            raise ConfigError("bad expansion or even block kernel")
        if self.alpha <= 0:
            raise ConfigError("alpha must be > 0")

    @classmethod
    def from_variant(cls, tag, **overrides):
        overrides.setdefault("repeats", VARIANT_REPEATS[tag])
        return cls(variant=tag, **overrides)

    @property
    def stage_channels(self):
        c = self.channels
        return (c, 2 * c, 4 * c)

    @property
    def cascade_stages(self):
        return 3 if self.variant == "Plus" else 1


class ParameterStore:
    """Named learnable tensors with deterministic iteration order."""

    def __init__(self):
        self._params = {}

    def add(self, name, tensor):
        if name in self._params:
            raise ConfigError(f"duplicate parameter name '{name}'")
        self._params[name] = tensor

    def update(self, mapping):
        for name, t in mapping.items():
            self.add(name, t)

    def as_dict(self):
        return dict(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def __getitem__(self, name):
        return self._params[name]

    def __len__(self):
        return len(self._params)

    def total_size(self):
        return sum(t.size for t in self._params.values())

    def state_arrays(self):
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_state(self, arrays):
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ConfigError(f"parameter set mismatch: missing={sorted(missing)[:3]} "
                              f"extra={sorted(extra)[:3]}")
        for n, t in self._params.items():
            a = np.asarray(arrays[n], dtype=t.dtype)
            if a.shape != t.shape:
                raise ShapeError(f"shape {a.shape} != {t.shape} for '{n}'")
            t.data = a.copy()


def _xavier(rng, shape, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape))


class Conv2d:
    def __init__(self, rng, k, cin, cout, groups=1, stride=1, padding="same",
                 init="xavier"):
        cin_g = cin // groups
        if init == "zero":
            self.w = Tensor(np.zeros((k, k, cin_g, cout)))
        else:
            self.w = _xavier(rng, (k, k, cin_g, cout),
                             k * k * cin_g, k * k * cout // groups)
        self.b = Tensor(np.zeros(cout))
        self.stride = stride
        self.padding = padding
        self.groups = groups

    def named(self, prefix):
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}

    def __call__(self, tape, x):
        return ops.conv2d(tape, x, self.w, self.b, stride=self.stride,
                          padding=self.padding, groups=self.groups)


class TransposedConv2d:
    def __init__(self, rng, k, cin, cout, stride=2, padding=0):
        # weights shaped as the paired conv cout -> cin
        self.w = _xavier(rng, (k, k, cout, cin), k * k * cout, k * k * cin)
        self.b = Tensor(np.zeros(cout))
        self.stride = stride
        self.padding = padding

    def named(self, prefix):
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}

    def __call__(self, tape, x):
        return ops.transposed_conv2d(tape, x, self.w, self.b,
                                     stride=self.stride, padding=self.padding)


class LSCB:
    """Spatial block: depth-wise k x k first, then 1x1 expand / 1x1 reduce.

    out = x + reduce(gelu(expand(gelu(dw(x))))), all around GELU, with the
    depth-wise conv placed before the channel expansion to keep parameters
    and compute down.
    """

    def __init__(self, C, rng, dw_kernel=7, expansion=4):
        self.dw = Conv2d(rng, dw_kernel, C, C, groups=C)
        self.expand = Conv2d(rng, 1, C, expansion * C)
        self.reduce = Conv2d(rng, 1, expansion * C, C)

    def named(self, prefix):
        out = {}
        out.update(self.dw.named(f"{prefix}.dw"))
        out.update(self.expand.named(f"{prefix}.expand"))
        out.update(self.reduce.named(f"{prefix}.reduce"))
        return out

    def __call__(self, tape, x):
        h = ops.gelu(tape, self.dw(tape, x))
        h = ops.gelu(tape, self.expand(tape, h))
        h = self.reduce(tape, h)
        return ops.add(tape, x, h)


class LSSTB:
    """Spectral branch + spatial branch, summed, fused by a depth-wise
    separable conv, with an input residual:

        out = x + pw(dw3(sstb(x) + lscb(x)))
    """

    def __init__(self, C, cfg, rng):
        self.sstb = SSTB(C, cfg.groups, rng)
        self.lscb = LSCB(C, rng, cfg.dw_kernel, cfg.expansion)
        self.fuse_dw = Conv2d(rng, cfg.fusion_kernel, C, C, groups=C)
        # zero-started fusion projection: the block opens as the identity,
        # otherwise activations grow multiplicatively with depth and the
        # short-budget training targets are unreachable
        self.fuse_pw = Conv2d(rng, 1, C, C, init="zero")

    def named(self, prefix):
        out = {}
        out.update(self.sstb.named(f"{prefix}.sstb"))
        out.update(self.lscb.named(f"{prefix}.lscb"))
        out.update(self.fuse_dw.named(f"{prefix}.fuse_dw"))
        out.update(self.fuse_pw.named(f"{prefix}.fuse_pw"))
        return out

    def __call__(self, tape, x):
        h = ops.add(tape, self.sstb(tape, x), self.lscb(tape, x))
        h = self.fuse_pw(tape, self.fuse_dw(tape, h))
        return ops.add(tape, x, h)


class LsstNet:
    """Single-stage U-shaped reconstruction network."""

    def __init__(self, config, rng):
        c1, c2, c3 = config.stage_channels
        n1, n2, n3 = config.repeats
        self.config = config
        self.shallow = Conv2d(rng, 3, config.bands + 1, c1)
        self.enc1 = [LSSTB(c1, config, rng) for _ in range(n1)]
        self.down1 = Conv2d(rng, 4, c1, c2, stride=2, padding=1)
        self.enc2 = [LSSTB(c2, config, rng) for _ in range(n2)]
        self.down2 = Conv2d(rng, 4, c2, c3, stride=2, padding=1)
        self.bottleneck = [LSSTB(c3, config, rng) for _ in range(n3)]
        self.up1 = TransposedConv2d(rng, 2, c3, c2, stride=2)
        self.fuse1 = Conv2d(rng, 1, 2 * c2, c2)
        self.dec2 = [LSSTB(c2, config, rng) for _ in range(n2)]
        self.up2 = TransposedConv2d(rng, 2, c2, c1, stride=2)
        self.fuse2 = Conv2d(rng, 1, 2 * c1, c1)
        self.dec1 = [LSSTB(c1, config, rng) for _ in range(n1)]
        # zero-started output conv: the untrained prediction is exactly the
        # shift-back estimate, the natural starting point for the residual
        self.out_conv = Conv2d(rng, 3, c1, config.bands, init="zero")
        self.store = ParameterStore()
        self.store.update(self.named(""))

    def named(self, prefix):
        p = prefix + "." if prefix else ""
        out = {}
        out.update(self.shallow.named(f"{p}shallow"))
        for i, b in enumerate(self.enc1):
            out.update(b.named(f"{p}enc1.{i}"))
        out.update(self.down1.named(f"{p}down1"))
        for i, b in enumerate(self.enc2):
            out.update(b.named(f"{p}enc2.{i}"))
        out.update(self.down2.named(f"{p}down2"))
        for i, b in enumerate(self.bottleneck):
            out.update(b.named(f"{p}bottleneck.{i}"))
        out.update(self.up1.named(f"{p}up1"))
        out.update(self.fuse1.named(f"{p}fuse1"))
        for i, b in enumerate(self.dec2):
            out.update(b.named(f"{p}dec2.{i}"))
        out.update(self.up2.named(f"{p}up2"))
        out.update(self.fuse2.named(f"{p}fuse2"))
        for i, b in enumerate(self.dec1):
            out.update(b.named(f"{p}dec1.{i}"))
        out.update(self.out_conv.named(f"{p}out_conv"))
        return out

    def _check_spatial(self, H, W):
        if H % 4 != 0 or W % 4 != 0:
            raise ConfigError(f"spatial dims ({H}, {W}) must be divisible "
                              "by 4 for two downsampling stages")

    def _run(self, tape, x0, mask, trace=None):
        inp = ops.concat_channels(tape, [x0, mask])
        h = self.shallow(tape, inp)
        for b in self.enc1:
            h = b(tape, h)
        e1 = h
        h = self.down1(tape, h)
        for b in self.enc2:
            h = b(tape, h)
        e2 = h
        h = self.down2(tape, h)
        for b in self.bottleneck:
            h = b(tape, h)
        h = self.up1(tape, h)
        if h.shape != e2.shape:
            raise ShapeError(f"decoder stage 2 shape {h.shape} does not "
                             f"match encoder skip {e2.shape}")
        h = self.fuse1(tape, ops.concat_channels(tape, [h, e2]))
        for b in self.dec2:
            h = b(tape, h)
        h = self.up2(tape, h)
        if h.shape != e1.shape:
            raise ShapeError(f"decoder stage 1 shape {h.shape} does not "
                             f"match encoder skip {e1.shape}")
        h = self.fuse2(tape, ops.concat_channels(tape, [h, e1]))
        for b in self.dec1:
            h = b(tape, h)
        r = self.out_conv(tape, h)
        if trace is not None:
            trace["enc1"] = e1.shape
            trace["enc2"] = e2.shape
            trace["residual"] = r.shape
        return ops.add(tape, x0, r)

    def _mask_tensor(self, op):
        return Tensor(op.mask[:, :, None])

    def forward(self, tape, y, op, trace=None):
        """Reconstruct from a measurement tensor y (H, W + step*(bands-1))."""
        if op.bands != self.config.bands or op.step != self.config.step:
            raise ConfigError("sensing operator bands/step do not match the "
                              "model configuration")
        self._check_spatial(*op.mask.shape)
        x0 = shift_back_node(tape, y, op)
        return self._run(tape, x0, self._mask_tensor(op), trace)

    def forward_from_cube(self, tape, cube, op, trace=None):
        """Refine an existing estimate cube (H, W, bands) instead of the
        shift-back initialization; used by cascade stages after the first."""
        if cube.shape != op.scene_shape:
            raise ShapeError(f"cube shape {cube.shape} != {op.scene_shape}")
        self._check_spatial(*op.mask.shape)
        return self._run(tape, cube, self._mask_tensor(op), trace)

    def reconstruct(self, y, op):
        """Pure inference from a measurement array; returns an ndarray cube."""
        out = self.forward(None, Tensor(np.asarray(y, dtype=np.float64)), op)
        return out.data


class CascadeModel:
    """Three single-stage networks chained end to end; later stages refine
    the previous stage's reconstruction (weights are not shared)."""

    def __init__(self, stages, config):
        self.stages = stages
        self.config = config
        self.store = ParameterStore()
        for t, s in enumerate(stages):
            self.store.update(s.named(f"stage{t}"))

    def forward(self, tape, y, op, trace=None):
        cube = self.stages[0].forward(tape, y, op, trace)
        for s in self.stages[1:]:
            cube = s.forward_from_cube(tape, cube, op)
        return cube

    def reconstruct(self, y, op):
        out = self.forward(None, Tensor(np.asarray(y, dtype=np.float64)), op)
        return out.data


def build_model(config, seed):
    """Deterministically initialized model for the given configuration.

    Seeds are split per cascade stage, and a single-stage build uses the
    same first split, so stage 0 of an untrained cascade is identical to a
    standalone build with the same seed.
    """
    ss = np.random.SeedSequence(seed)
    if config.variant == "Plus":
        stage_cfg = replace(config, variant="S")
        stages = [LsstNet(stage_cfg, np.random.default_rng(child))
                  for child in ss.spawn(3)]
        return CascadeModel(stages, config)
    return LsstNet(config, np.random.default_rng(ss.spawn(1)[0]))
