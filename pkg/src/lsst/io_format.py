"""Bit-exact binary file formats plus CSV export helpers.

Cube container ("HSC1"): magic, little-endian u32 height/width/bands, one
dtype byte (4 = f32, 8 = f64), then band-sequential raster data (each
band's H x W plane contiguous, row-major).  Masks and measurements reuse
the container with bands = 1.

Checkpoint container ("LSSTCKPT"): magic, the full model configuration,
one dtype byte, then ordered (name, shape, raw data) entries matching the
parameter store's deterministic order.

All writers go through a temp file and an atomic rename; readers convert
any malformed input into FormatError with a byte offset, never a crash.
"""

import csv
import os
import struct
import tempfile

import numpy as np

from .blocks import ModelConfig
from .errors import ConfigError, FormatError

CUBE_MAGIC = b"HSC1"
CKPT_MAGIC = b"LSSTCKPT"

_DTYPE_TAGS = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise FormatError(
                f"truncated file: expected {n} more bytes for {what}, "
                f"have {len(self.blob) - self.pos}", offset=self.pos)
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def f64(self, what):
        return struct.unpack("<d", self.take(8, what))[0]

    def u8(self, what):
        return self.take(1, what)[0]

    def expect_end(self):
        if self.pos != len(self.blob):
            raise FormatError(
                f"{len(self.blob) - self.pos} trailing bytes", offset=self.pos)


def _atomic_write(path, blob):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dtype_tag(arr):
    if arr.dtype == np.float32:
        return 4
    if arr.dtype == np.float64:
        return 8
    raise ConfigError(f"unsupported dtype {arr.dtype}")


def write_cube(path, cube):
    """Write an (H, W, bands) array; 2-D input is treated as bands=1."""
    cube = np.asarray(cube)
    if cube.ndim == 2:
        cube = cube[:, :, None]
    if cube.ndim != 3:
        raise ConfigError(f"expected 2-D or 3-D array, got {cube.ndim}-D")
    if not np.all(np.isfinite(cube)):
        raise ConfigError("refusing to write non-finite values")
    if cube.dtype not in (np.float32, np.float64):
        cube = cube.astype(np.float64)
    H, W, bands = cube.shape
    header = CUBE_MAGIC + struct.pack("<IIIB", H, W, bands, _dtype_tag(cube))
    body = np.ascontiguousarray(np.moveaxis(cube, 2, 0)).tobytes()
    _atomic_write(path, header + body)


def read_cube(path):
    with open(path, "rb") as f:
        r = _Reader(f.read())
    magic = r.take(4, "magic")
    if magic != CUBE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CUBE_MAGIC!r}",
                          offset=0)
    H = r.u32("height")
    W = r.u32("width")
    bands = r.u32("bands")
    tag = r.u8("dtype tag")
    if tag not in _DTYPE_TAGS:
        raise FormatError(f"unknown dtype tag {tag}", offset=r.pos - 1)
    dt = _DTYPE_TAGS[tag]
    if H < 1 or W < 1 or bands < 1 or H * W * bands > 2 ** 31:
        raise FormatError(f"implausible dimensions {H}x{W}x{bands}",
                          offset=4)
    start = r.pos
    raw = r.take(H * W * bands * dt.itemsize, "raster payload")
    r.expect_end()
    cube = np.frombuffer(raw, dtype=dt).reshape(bands, H, W)
    cube = np.ascontiguousarray(np.moveaxis(cube, 0, 2))
    if not np.all(np.isfinite(cube)):
        raise FormatError("payload contains non-finite values", offset=start)
    return cube


def write_mask(path, mask):
    write_cube(path, np.asarray(mask))


def read_mask(path):
    cube = read_cube(path)
    if cube.shape[2] != 1:
        raise FormatError(f"mask file holds {cube.shape[2]} bands, expected 1")
    return cube[:, :, 0]


def write_measurement(path, y):
    write_cube(path, np.asarray(y))


def read_measurement(path):
    cube = read_cube(path)
    if cube.shape[2] != 1:
        raise FormatError(
            f"measurement file holds {cube.shape[2]} bands, expected 1")
    return cube[:, :, 0]


# ---------------------------------------------------------------------------
# checkpoints


def _pack_config(cfg):
    variant = cfg.variant.encode("ascii")
    return struct.pack("<10I", cfg.channels, cfg.groups, *cfg.repeats,
                       cfg.dw_kernel, cfg.fusion_kernel, cfg.expansion,
                       cfg.bands, cfg.step) \
        + struct.pack("<d", cfg.alpha) \
        + struct.pack("<B", len(variant)) + variant


def _unpack_config(r):
    vals = struct.unpack("<10I", r.take(40, "config block"))
    alpha = r.f64("alpha")
    vlen = r.u8("variant length")
    variant = r.take(vlen, "variant tag")
    try:
        variant = variant.decode("ascii")
    except UnicodeDecodeError:
        raise FormatError("variant tag is not ascii", offset=r.pos - vlen)
    try:
        return ModelConfig(channels=vals[0], groups=vals[1],
                           repeats=tuple(vals[2:5]), dw_kernel=vals[5],
                           fusion_kernel=vals[6], expansion=vals[7],
                           bands=vals[8], step=vals[9], alpha=alpha,
                           variant=variant)
    except ConfigError as e:
        raise FormatError(f"checkpoint config invalid: {e}") from e


def save_checkpoint(path, store, config):
    arrays = store.state_arrays()
    if not arrays:
        raise ConfigError("empty parameter store")
    dtypes = {a.dtype for a in arrays.values()}
    if len(dtypes) != 1:
        raise ConfigError("mixed parameter dtypes")
    tag = _dtype_tag(next(iter(arrays.values())))
    parts = [CKPT_MAGIC, _pack_config(config), struct.pack("<B", tag),
             struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr,
                                          dtype=_DTYPE_TAGS[tag]).tobytes())
    _atomic_write(path, b"".join(parts))


def read_checkpoint(path):
    """Parse a checkpoint into (config, {name: ndarray})."""
    with open(path, "rb") as f:
        r = _Reader(f.read())
    magic = r.take(8, "magic")
    if magic != CKPT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CKPT_MAGIC!r}",
                          offset=0)
    cfg = _unpack_config(r)
    tag = r.u8("dtype tag")
    if tag not in _DTYPE_TAGS:
        raise FormatError(f"unknown dtype tag {tag}", offset=r.pos - 1)
    dt = _DTYPE_TAGS[tag]
    count = r.u32("entry count")
    if count > 1_000_000:
        raise FormatError(f"implausible entry count {count}", offset=r.pos - 4)
    arrays = {}
    for _ in range(count):
        nlen = r.u32("name length")
        if nlen > 4096:
            raise FormatError(f"implausible name length {nlen}",
                              offset=r.pos - 4)
        try:
            name = r.take(nlen, "parameter name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("parameter name is not utf-8",
                              offset=r.pos - nlen)
        ndim = r.u32("rank")
        if ndim > 8:
            raise FormatError(f"implausible rank {ndim}", offset=r.pos - 4)
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim, "shape"))
        n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        if n < 1 or n > 2 ** 28:
            raise FormatError(f"implausible entry size {n}", offset=r.pos)
        start = r.pos
        raw = r.take(n * dt.itemsize, f"data of '{name}'")
        arr = np.frombuffer(raw, dtype=dt).reshape(shape).copy()
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"non-finite values in '{name}'", offset=start)
        if name in arrays:
            raise FormatError(f"duplicate parameter '{name}'", offset=start)
        arrays[name] = arr
    r.expect_end()
    return cfg, arrays


def load_checkpoint(path, store, config):
    """Load a checkpoint into an existing store; the stored configuration
    must match exactly and the parameter names must agree."""
    cfg, arrays = read_checkpoint(path)
    if cfg != config:
        raise ConfigError(f"checkpoint config {cfg} does not match the "
                          f"requested config {config}")
    store.load_state(arrays)


# ---------------------------------------------------------------------------
# CSV


def write_csv(path, header, rows):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            writer.writerows(rows)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
