import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectralmae.errors import DataError, FormatError, TruncatedFileError
from spectralmae.manifest import load_manifest, split
from spectralmae.raster import (normalize_bands, read_raster, resample_bilinear,
                                resample_nearest, write_raster)
from spectralmae.rng import CounterRng
from spectralmae.synthetic import SyntheticSpec, generate_synthetic
from spectralmae.tokenizer import SpectralImage


def _image(h, w, d, seed=0):
    vals = CounterRng(seed).normal_array((h, w, d)).astype(np.float32)
    return SpectralImage(vals, [f"B{i+1}" for i in range(d)])


# ---------------------------------------------------------------- raster

def test_raster_roundtrip_bitwise(tmp_path):
    img = _image(16, 16, 6, seed=1)
    path = tmp_path / "x.spgr"
    write_raster(img, path)
    back = read_raster(path)
    assert np.array_equal(back.values, img.values)
    assert back.band_names == img.band_names


@settings(max_examples=25, deadline=None)
@given(h=st.integers(1, 12), w=st.integers(1, 12), d=st.integers(1, 8),
       seed=st.integers(0, 10_000))
def test_raster_roundtrip_property(tmp_path_factory, h, w, d, seed):
    img = _image(h, w, d, seed=seed)
    path = tmp_path_factory.mktemp("r") / "x.spgr"
    write_raster(img, path)
    assert np.array_equal(read_raster(path).values, img.values)


def test_raster_truncation_is_io_error(tmp_path):
    img = _image(8, 8, 3)
    path = tmp_path / "x.spgr"
    write_raster(img, path)
    data = path.read_bytes()
    (tmp_path / "cut.spgr").write_bytes(data[:-10])
    with pytest.raises(TruncatedFileError):
        read_raster(tmp_path / "cut.spgr")


def test_raster_bad_magic(tmp_path):
    (tmp_path / "bad.spgr").write_bytes(b"JUNKJUNKJUNK")
    with pytest.raises(FormatError):
        read_raster(tmp_path / "bad.spgr")


def test_raster_trailing_bytes_is_format_error(tmp_path):
    img = _image(4, 4, 2)
    path = tmp_path / "x.spgr"
    write_raster(img, path)
    path.write_bytes(path.read_bytes() + b"\x00\x00")
    with pytest.raises(FormatError):
        read_raster(path)


# ---------------------------------------------------------------- normalize / resize

def test_normalize_midpoint():
    img = SpectralImage(np.full((2, 2, 1), 1.0, np.float32), ["B1"])
    out = normalize_bands(img, [0.0], [2.0])
    assert np.allclose(out.values, 0.5)


def test_normalize_clips_below_min():
    img = SpectralImage(np.full((2, 2, 1), -5.0, np.float32), ["B1"])
    out = normalize_bands(img, [0.0], [2.0])
    assert np.allclose(out.values, 0.0)


def test_normalize_constant_band_warns(caplog):
    img = SpectralImage(np.full((2, 2, 1), 3.0, np.float32), ["B1"])
    with caplog.at_level("WARNING"):
        out = normalize_bands(img, [3.0], [3.0])
    assert np.allclose(out.values, 0.0)
    assert any("min == max" in rec.message for rec in caplog.records)


def test_normalize_idempotent_on_unit_range():
    img = SpectralImage(CounterRng(2).uniform_array((8, 8, 3)).astype(np.float32),
                        ["B1", "B2", "B3"])
    out = normalize_bands(img, [0.0] * 3, [1.0] * 3)
    assert np.allclose(out.values, img.values, atol=1e-7)


def test_resample_bilinear_constant_and_ramp():
    const = np.full((4, 4, 2), 7.0)
    assert np.allclose(resample_bilinear(const, 8, 8), 7.0)
    ramp = np.arange(4, dtype=np.float64)[:, None, None] * np.ones((1, 4, 1))
    up = resample_bilinear(ramp, 7, 4)
    assert np.allclose(up[:, 0, 0], np.linspace(0, 3, 7))


def test_resample_nearest_labels_preserved():
    labels = np.array([[0, 1], [2, 3]], dtype=np.int64)[:, :, None]
    up = resample_nearest(labels, 4, 4)
    assert set(np.unique(up)) == {0, 1, 2, 3}
    assert up[0, 0, 0] == 0 and up[3, 3, 0] == 3


# ---------------------------------------------------------------- manifest

def _tiny_manifest(tmp_path, n=10):
    spec = SyntheticSpec(height=16, width=16, bands=3, classes=2, n_images=n, seed=5)
    return generate_synthetic(spec, "classify", tmp_path / "ds")


def test_manifest_roundtrip_and_existence_check(tmp_path):
    path = _tiny_manifest(tmp_path)
    manifest = load_manifest(path)
    assert manifest.task == "classify"
    assert len(manifest.samples) == 10
    assert all(os.path.exists(s["raster"]) for s in manifest.samples)


def test_manifest_unknown_keys_rejected(tmp_path):
    path = _tiny_manifest(tmp_path)
    doc = json.loads(open(path).read())
    doc["surprise"] = 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    with pytest.raises(FormatError):
        load_manifest(bad)


def test_manifest_missing_file_rejected(tmp_path):
    path = _tiny_manifest(tmp_path)
    doc = json.loads(open(path).read())
    doc["samples"][0]["raster"] = "does_not_exist.spgr"
    bad = tmp_path / "ds" / "bad.json"
    bad.write_text(json.dumps(doc))
    with pytest.raises(DataError):
        load_manifest(bad)


def test_split_disjoint_union_and_determinism(tmp_path):
    manifest = load_manifest(_tiny_manifest(tmp_path))
    train, val = split(manifest, (0.8, 0.2), seed=3)
    assert len(train.samples) == 8 and len(val.samples) == 2
    paths = lambda m: {s["raster"] for s in m.samples}
    assert not paths(train) & paths(val)
    assert paths(train) | paths(val) == paths(manifest)
    train2, val2 = split(manifest, (0.8, 0.2), seed=3)
    assert paths(train2) == paths(train)


def test_split_empty_side_rejected(tmp_path):
    manifest = load_manifest(_tiny_manifest(tmp_path, n=3))
    with pytest.raises(DataError):
        split(manifest, (1.0, 0.0), seed=0)


# ---------------------------------------------------------------- synthetic

def test_synthetic_deterministic_bytes(tmp_path):
    spec = SyntheticSpec(height=16, width=16, bands=4, classes=2, n_images=4, seed=9)
    p1 = generate_synthetic(spec, "classify", tmp_path / "a")
    p2 = generate_synthetic(spec, "classify", tmp_path / "b")
    for name in sorted(os.listdir(tmp_path / "a")):
        b1 = (tmp_path / "a" / name).read_bytes()
        b2 = (tmp_path / "b" / name).read_bytes()
        assert b1 == b2, name


@pytest.mark.parametrize("rho", [0.0, 0.5, 0.9])
def test_synthetic_interband_correlation(tmp_path, rho):
    spec = SyntheticSpec(height=64, width=64, bands=6, classes=1, n_images=8,
                         rho=rho, noise_std=0.0, seed=11)
    manifest = load_manifest(generate_synthetic(spec, "pretrain", tmp_path / f"r{rho}"))
    rs = []
    for sample in manifest.samples:
        vals = read_raster(sample["raster"]).values.reshape(-1, 6)
        corr = np.corrcoef(vals.T)
        rs.extend(corr[i, j] for i in range(6) for j in range(i + 1, 6))
    assert abs(float(np.mean(rs)) - rho) <= 0.05


def test_synthetic_rho_one_perfect_correlation(tmp_path):
    spec = SyntheticSpec(height=32, width=32, bands=4, classes=1, n_images=2,
                         rho=1.0, noise_std=0.0, seed=13)
    manifest = load_manifest(generate_synthetic(spec, "pretrain", tmp_path / "r1"))
    vals = read_raster(manifest.samples[0]["raster"]).values.reshape(-1, 4)
    corr = np.corrcoef(vals.T)
    assert np.allclose(corr, 1.0, atol=1e-4)


def test_synthetic_classify_nearest_centroid_oracle(tmp_path):
    spec = SyntheticSpec(height=32, width=32, bands=6, classes=3, n_images=30,
                         noise_std=0.0, seed=17)
    manifest = load_manifest(generate_synthetic(spec, "classify", tmp_path / "c"))
    sig = np.asarray(spec.signatures)
    correct = 0
    for sample in manifest.samples:
        means = read_raster(sample["raster"]).values.reshape(-1, 6).mean(axis=0)
        pred = int(np.argmin(((sig - means) ** 2).sum(axis=1)))
        correct += pred == sample["label"]
    assert correct == len(manifest.samples)


def test_synthetic_multilabel_labels_valid(tmp_path):
    spec = SyntheticSpec(height=16, width=16, bands=4, classes=4, n_images=12, seed=19)
    manifest = load_manifest(generate_synthetic(spec, "multilabel", tmp_path / "m"))
    for sample in manifest.samples:
        labels = sample["labels"]
        assert len(labels) == 4 and set(labels) <= {0, 1} and sum(labels) >= 1


def test_synthetic_segment_masks_match_classes(tmp_path):
    spec = SyntheticSpec(height=16, width=16, bands=4, classes=3, n_images=4, seed=21)
    manifest = load_manifest(generate_synthetic(spec, "segment", tmp_path / "s"))
    for sample in manifest.samples:
        mask = read_raster(sample["mask"]).values[:, :, 0]
        assert mask.shape == (16, 16)
        assert set(np.unique(mask)) <= {0.0, 1.0, 2.0}


def test_synthetic_change_pairs_differ_only_in_mask(tmp_path):
    spec = SyntheticSpec(height=32, width=32, bands=4, classes=3, n_images=4,
                         noise_std=0.0, seed=23)
    manifest = load_manifest(generate_synthetic(spec, "change", tmp_path / "ch"))
    for sample in manifest.samples:
        a = read_raster(sample["raster_a"]).values
        b = read_raster(sample["raster_b"]).values
        mask = read_raster(sample["mask"]).values[:, :, 0]
        changed = np.any(a != b, axis=2)
        assert not np.any(changed & (mask == 0.0))
        assert changed[mask == 1.0].mean() > 0.9  # rectangles genuinely changed
