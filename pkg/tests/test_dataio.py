import numpy as np
import pytest

from rgb2raw.bayer import RawImage, RgbImage
from rgb2raw.dataio import (
    DataError,
    load_manifest,
    make_synthetic_dataset,
    read_raw,
    read_rgb_png,
    write_raw,
    write_rgb_png,
)
from rgb2raw.isp import default_isp_params, scale_to_linear


def test_raw_container_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    raw = RawImage(np.round(rng.uniform(64, 1023, (4, 8, 12))), 64, 1023)
    path = tmp_path / "x.rawd"
    write_raw(path, raw)
    back = read_raw(path)
    assert np.array_equal(back.planes, raw.planes)
    assert back.black_level == 64 and back.white_level == 1023


def test_raw_container_header_layout(tmp_path):
    raw = RawImage(np.full((4, 2, 3), 100.0), 0, 255)
    path = tmp_path / "x.rawd"
    write_raw(path, raw)
    blob = path.read_bytes()
    assert blob[:4] == b"RAWD"
    assert int.from_bytes(blob[4:6], "little") == 1  # version
    assert int.from_bytes(blob[6:8], "little") == 4  # channels
    assert int.from_bytes(blob[8:12], "little") == 2  # h
    assert int.from_bytes(blob[12:16], "little") == 3  # w
    assert len(blob) == 24 + 2 * 3 * 4 * 2  # packed header + u16 samples


def test_read_raw_rejects_garbage(tmp_path):
    path = tmp_path / "bad.rawd"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(DataError):
        read_raw(path)


def test_png_roundtrip_is_lossless_for_8bit(tmp_path):
    rng = np.random.default_rng(1)
    levels = rng.integers(0, 256, size=(3, 10, 14))
    rgb = RgbImage((levels / 255.0).astype(np.float32))
    path = tmp_path / "x.png"
    write_rgb_png(path, rgb)
    back = read_rgb_png(path)
    assert np.array_equal(np.round(back.planes * 255), levels)


def test_make_synthetic_dataset_deterministic(tmp_path):
    p = default_isp_params()
    m1 = make_synthetic_dataset(8, (128, 128), p, seed=7, out_dir=tmp_path / "a")
    m2 = make_synthetic_dataset(8, (128, 128), p, seed=7, out_dir=tmp_path / "b")
    man1, man2 = load_manifest(m1), load_manifest(m2)
    assert len(man1) == 8
    for i in range(8):
        assert man1.raw_file(i).read_bytes() == man2.raw_file(i).read_bytes()
        assert man1.rgb_file(i).read_bytes() == man2.rgb_file(i).read_bytes()


def test_synthetic_scene_mean_intensity_band(tmp_path):
    # regression band frozen from a 100-seed calibration scan
    p = default_isp_params()
    manifest = load_manifest(make_synthetic_dataset(6, (64, 64), p, seed=123, out_dir=tmp_path))
    for i in range(len(manifest)):
        mean = scale_to_linear(read_raw(manifest.raw_file(i))).mean()
        assert 0.15 <= mean <= 0.6


def test_synthetic_pairs_are_isp_consistent(tmp_path):
    from rgb2raw.isp import IspParams, isp_forward

    p = default_isp_params()
    manifest = load_manifest(make_synthetic_dataset(2, (32, 32), p, seed=5, out_dir=tmp_path))
    params = IspParams.from_dict(manifest.isp_params)
    for i in range(len(manifest)):
        raw = read_raw(manifest.raw_file(i))
        rgb = read_rgb_png(manifest.rgb_file(i))
        rendered = isp_forward(raw, params, rng_seed=manifest.seed + i)
        assert np.allclose(rendered.planes, rgb.planes, atol=1e-6)


def test_make_synthetic_dataset_validation(tmp_path):
    p = default_isp_params()
    with pytest.raises(DataError):
        make_synthetic_dataset(0, (64, 64), p, 0, tmp_path)
    with pytest.raises(DataError):
        make_synthetic_dataset(1, (63, 64), p, 0, tmp_path)
    with pytest.raises(DataError):
        make_synthetic_dataset(1, (8, 8), p, 0, tmp_path)


def test_manifest_missing_file_rejected(tmp_path):
    p = default_isp_params()
    path = make_synthetic_dataset(1, (32, 32), p, 0, tmp_path)
    load_manifest(path)  # fine
    next(tmp_path.glob("*.rawd")).unlink()
    with pytest.raises(DataError):
        load_manifest(path)


def test_make_synthetic_dataset_unwritable_target(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("a file, not a directory")
    with pytest.raises(DataError):
        make_synthetic_dataset(1, (32, 32), default_isp_params(), 0, blocker / "sub")
