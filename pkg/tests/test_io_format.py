import csv
import os

import numpy as np
import numpy.testing as npt
import pytest

from lsst.blocks import ModelConfig, build_model
from lsst.errors import ConfigError, FormatError
from lsst.io_format import (load_checkpoint, read_checkpoint, read_cube,
                            read_mask, read_measurement, save_checkpoint,
                            write_csv, write_cube, write_mask,
                            write_measurement)
from lsst.optics import SensingOperator, forward_sense, random_mask, synth_scene

TOY = ModelConfig(channels=8, groups=4, repeats=(1, 1, 1), bands=8, step=2)


def test_cube_round_trip_f64(tmp_path):
    rng = np.random.default_rng(0)
    cube = rng.standard_normal((4, 4, 3))
    p = tmp_path / "x.hsc"
    write_cube(p, cube)
    back = read_cube(p)
    npt.assert_array_equal(back, cube)
    assert back.dtype == np.float64


def test_cube_round_trip_f32(tmp_path):
    rng = np.random.default_rng(1)
    cube = rng.standard_normal((5, 3, 2)).astype(np.float32)
    p = tmp_path / "x.hsc"
    write_cube(p, cube)
    back = read_cube(p)
    npt.assert_array_equal(back, cube)
    assert back.dtype == np.float32


def test_mask_and_measurement_round_trip(tmp_path):
    mask = random_mask(6, 7, 0.5, 0)
    write_mask(tmp_path / "m.hsc", mask)
    npt.assert_array_equal(read_mask(tmp_path / "m.hsc"), mask)

    op = SensingOperator(mask, 2, 3)
    y = forward_sense(synth_scene(6, 7, 3, 0), op)
    write_measurement(tmp_path / "y.hsc", y)
    npt.assert_array_equal(read_measurement(tmp_path / "y.hsc"), y)


def test_truncated_file_reports_lengths(tmp_path):
    p = tmp_path / "x.hsc"
    write_cube(p, np.ones((4, 4, 3)))
    blob = p.read_bytes()
    p.write_bytes(blob[:len(blob) - 10])
    with pytest.raises(FormatError) as exc:
        read_cube(p)
    assert "expected" in str(exc.value) and "offset" in str(exc.value)


def test_corrupted_magic(tmp_path):
    p = tmp_path / "x.hsc"
    write_cube(p, np.ones((2, 2, 1)))
    blob = bytearray(p.read_bytes())
    blob[0] ^= 0xFF
    p.write_bytes(bytes(blob))
    with pytest.raises(FormatError) as exc:
        read_cube(p)
    assert "magic" in str(exc.value)


def test_non_finite_payload_rejected(tmp_path):
    p = tmp_path / "x.hsc"
    write_cube(p, np.ones((2, 2, 1)))
    blob = bytearray(p.read_bytes())
    blob[-8:] = np.array([np.nan]).tobytes()
    p.write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        read_cube(p)


def test_write_rejects_non_finite(tmp_path):
    with pytest.raises(ConfigError):
        write_cube(tmp_path / "x.hsc", np.array([[[np.inf]]]))


def test_reader_fuzz_truncations_and_bitflips(tmp_path):
    rng = np.random.default_rng(2)
    p = tmp_path / "x.hsc"
    write_cube(p, rng.random((4, 5, 3)))
    blob = p.read_bytes()
    for cut in range(0, len(blob), 7):
        p.write_bytes(blob[:cut])
        try:
            read_cube(p)
        except FormatError:
            pass
    for _ in range(200):
        corrupted = bytearray(blob)
        i = rng.integers(0, len(blob))
        corrupted[i] ^= 1 << rng.integers(0, 8)
        p.write_bytes(bytes(corrupted))
        try:
            read_cube(p)
        except FormatError:
            pass


def test_checkpoint_round_trip_bitwise_forward(tmp_path):
    model = build_model(TOY, 3)
    mask = random_mask(16, 16, 0.5, 3)
    op = SensingOperator(mask, TOY.step, TOY.bands)
    y = forward_sense(synth_scene(16, 16, TOY.bands, 3), op)
    before = model.reconstruct(y, op)
    state = model.store.state_arrays()

    p = tmp_path / "m.ckpt"
    save_checkpoint(p, model.store, TOY)
    other = build_model(TOY, 99)  # different init, then overwritten
    load_checkpoint(p, other.store, TOY)
    for n, arr in state.items():
        npt.assert_array_equal(other.store[n].data, arr)
    npt.assert_array_equal(other.reconstruct(y, op), before)


def test_checkpoint_config_mismatch_rejected(tmp_path):
    model = build_model(TOY, 0)
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, model.store, TOY)
    wrong = ModelConfig(channels=8, groups=2, repeats=(1, 1, 1), bands=8,
                        step=2)
    other = build_model(wrong, 0)
    with pytest.raises(ConfigError):
        load_checkpoint(p, other.store, wrong)


def test_checkpoint_unknown_parameter_rejected(tmp_path):
    model = build_model(TOY, 0)
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, model.store, TOY)
    cfg, arrays = read_checkpoint(p)
    assert cfg == TOY
    arrays["bogus.w"] = np.zeros(3)
    with pytest.raises(ConfigError) as exc:
        model.store.load_state(arrays)
    assert "bogus.w" in str(exc.value)


def test_checkpoint_fuzz(tmp_path):
    rng = np.random.default_rng(4)
    model = build_model(TOY, 1)
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, model.store, TOY)
    blob = p.read_bytes()
    for cut in range(0, min(len(blob), 4000), 13):
        p.write_bytes(blob[:cut])
        try:
            read_checkpoint(p)
        except FormatError:
            pass
    for _ in range(150):
        corrupted = bytearray(blob)
        i = rng.integers(0, min(len(blob), 5000))
        corrupted[i] ^= 1 << rng.integers(0, 8)
        p.write_bytes(bytes(corrupted))
        try:
            read_checkpoint(p)
        except FormatError:
            pass


def test_no_temp_files_left_behind(tmp_path):
    write_cube(tmp_path / "x.hsc", np.ones((3, 3, 2)))
    model = build_model(TOY, 0)
    save_checkpoint(tmp_path / "m.ckpt", model.store, TOY)
    leftovers = [f for f in os.listdir(tmp_path) if f.endswith(".tmp")]
    assert leftovers == []


def test_csv_rfc4180_quoting(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(p, ["a", "b"], [["x,y", 'quo"te'], ["plain", 1.5]])
    with open(p, newline="") as f:
        rows = list(csv.reader(f))
    assert rows == [["a", "b"], ["x,y", 'quo"te'], ["plain", "1.5"]]
