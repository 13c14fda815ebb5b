import numpy as np
import pytest

from cubeqa.backbone import (
    BackboneSpec,
    NativeCNN,
    extract_feature_map,
    feature_filename,
    read_feature_file,
    write_feature_file,
)
from cubeqa.errors import FeatureFileMissing, ShapeMismatch
from oracles import constant_response, conv_forward

# first four channels for flat color (0.2, 0.4, 0.6), seed 0, raw Gaussian
# first layer; produced once by the loop oracle in oracles.conv_forward
GOLDEN_FLAT = [0.0, 1.093694828196353, 0.8256535385267151, 0.3075096595994806]


def test_output_shape_default():
    fm = extract_feature_map(BackboneSpec(), np.zeros((384, 384, 3)))
    assert fm.shape == (48, 48, 64)


def test_zero_image_gives_zero_activations():
    fm = extract_feature_map(BackboneSpec(dc_free=False), np.zeros((64, 64, 3)))
    assert (fm == 0).all()


def test_matches_loop_oracle(rng):
    spec = BackboneSpec(seed=3, widths=(4, 6, 5))
    img = rng.random((17, 22, 3))
    ref = conv_forward(img, NativeCNN(spec).weights)
    assert np.abs(extract_feature_map(spec, img) - ref).max() < 1e-12


def test_flat_color_golden():
    spec = BackboneSpec(seed=0, dc_free=False)
    img = np.ones((32, 32, 3)) * [0.2, 0.4, 0.6]
    fm = extract_feature_map(spec, img)
    assert np.ptp(fm, axis=(0, 1)).max() == 0
    assert np.allclose(fm[0, 0, :4], GOLDEN_FLAT, rtol=0, atol=1e-12)
    assert np.allclose(fm[0, 0], constant_response([0.2, 0.4, 0.6], NativeCNN(spec).weights), atol=1e-12)


def test_dc_free_ignores_flat_color():
    fm = extract_feature_map(BackboneSpec(seed=0), np.ones((32, 32, 3)) * [0.2, 0.4, 0.6])
    assert np.abs(fm).max() < 1e-12


def test_deterministic(rng):
    img = rng.random((64, 64, 3))
    spec = BackboneSpec(seed=9)
    assert np.array_equal(extract_feature_map(spec, img), NativeCNN(spec)(img))
    assert np.array_equal(extract_feature_map(spec, img), extract_feature_map(spec, img))


def test_translation_covariance(rng):
    spec = BackboneSpec(seed=2, widths=(4, 4, 4))
    img = rng.random((128, 128, 3))
    shifted = np.roll(img, 8, axis=1)
    a = extract_feature_map(spec, img)
    b = extract_feature_map(spec, shifted)
    # interior cells only: receptive fields must avoid the wrapped column band and padding
    assert np.abs(b[2:-2, 3:-2] - a[2:-2, 2:-3]).max() < 1e-12


def test_feature_file_round_trip(tmp_path, rng):
    fm = rng.random((5, 4, 3)).astype(np.float32).astype(np.float64)
    p = tmp_path / feature_filename("x", 2, "s")
    assert p.name == "x_f2_s.feat"
    write_feature_file(p, fm)
    assert np.array_equal(read_feature_file(p, channels=3), fm)
    with pytest.raises(ShapeMismatch):
        read_feature_file(p, channels=4)
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(ShapeMismatch):
        read_feature_file(p)
    with pytest.raises(FeatureFileMissing):
        read_feature_file(tmp_path / "nope.feat")


def test_external_backend(tmp_path, rng):
    fm = rng.random((3, 3, 2)).astype(np.float32)
    write_feature_file(tmp_path / feature_filename("cloud", 4, "c"), fm)
    spec = BackboneSpec(kind="external", role="c", feature_dir=str(tmp_path), channels=2)
    assert np.array_equal(extract_feature_map(spec, pcid="cloud", face=4), fm.astype(np.float64))
    with pytest.raises(FeatureFileMissing):
        extract_feature_map(spec, pcid="cloud", face=0)


def test_spec_validation_and_dict_round_trip():
    with pytest.raises(ValueError):
        BackboneSpec(role="x")
    with pytest.raises(ValueError):
        BackboneSpec(kernel_size=2)
    with pytest.raises(ValueError):
        BackboneSpec(kind="external")
    spec = BackboneSpec(role="s", seed=4, widths=(3, 5))
    assert BackboneSpec.from_dict(spec.to_dict()) == spec
    assert spec.out_channels == 5
