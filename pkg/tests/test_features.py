import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cubeqa.errors import ShapeMismatch
from cubeqa.features import (
    QualityFeatureVector,
    SimilarityConstants,
    channel_statistics,
    fr_quality_vector,
    nr_quality_vector,
    structure_similarity,
    texture_similarity,
)
from oracles import alpha_beta, avg_pool, channel_stats


def test_channel_statistics_examples():
    mu, var = channel_statistics(np.full((3, 5, 2), 3.0))
    assert mu.tolist() == [3.0, 3.0] and var.tolist() == [0.0, 0.0]
    mu, var = channel_statistics(np.array([[[0.0], [2.0]]]))
    assert mu.tolist() == [1.0] and var.tolist() == [1.0]


def test_statistics_and_similarity_match_oracle(rng):
    for _ in range(5):
        a = rng.normal(size=(4, 6, 3))
        b = rng.normal(size=(4, 6, 3)) + a
        mu, var = channel_statistics(a)
        omu, ovar = channel_stats(a.tolist())
        assert np.allclose(mu, omu, atol=1e-12) and np.allclose(var, ovar, atol=1e-12)
        oa, ob = alpha_beta(a.tolist(), b.tolist())
        assert np.allclose(texture_similarity(a, b), oa, atol=1e-12)
        assert np.allclose(structure_similarity(a, b), ob, atol=1e-12)
        assert np.allclose(nr_quality_vector(a).values, avg_pool(a.tolist()), atol=1e-12)


def test_texture_examples(rng):
    a = rng.random((4, 4, 3))
    b = rng.random((4, 4, 3))
    assert (texture_similarity(a, a) == 1.0).all()
    one, zero = np.ones((2, 2, 1)), np.zeros((2, 2, 1))
    assert texture_similarity(one, zero)[0] == pytest.approx(1e-6 / (1 + 1e-6), rel=1e-12)
    assert np.array_equal(texture_similarity(a, b), texture_similarity(b, a))


def test_structure_examples(rng):
    a = rng.normal(size=(6, 6, 4))
    assert (structure_similarity(a, a) == 1.0).all()
    assert (structure_similarity(np.ones((3, 3, 2)), np.full((3, 3, 2), 5.0)) == 1.0).all()
    centered = a - a.mean(axis=(0, 1))
    var = centered.var(axis=(0, 1))
    beta = structure_similarity(centered, -centered)
    expect = (-2 * var + 1e-6) / (2 * var + 1e-6)
    assert np.allclose(beta, expect, atol=1e-12) and (beta < 0).all()


def test_fr_vector_layout(rng):
    ref = rng.random((3, 3, 2))
    dist = rng.random((3, 3, 2))
    q = fr_quality_vector(ref, dist)
    oa, ob = alpha_beta(ref.tolist(), dist.tolist())
    assert np.allclose(q.values, oa + ob, atol=1e-12)
    assert q.mode == "FR" and len(q) == 4 and q.channels == 2
    assert (fr_quality_vector(ref, ref).values == 1.0).all()


def test_nr_examples():
    assert np.allclose(nr_quality_vector(np.full((4, 2, 3), 0.7)).values, 0.7, rtol=0, atol=1e-15)
    fm = np.array([[[1.0], [2.0]], [[3.0], [4.0]]])
    q = nr_quality_vector(fm)
    assert q.values.tolist() == [2.5] and q.mode == "NR"
    assert np.array_equal(q.values, channel_statistics(fm)[0])


def test_errors():
    with pytest.raises(ShapeMismatch):
        texture_similarity(np.ones((2, 2, 1)), np.ones((2, 3, 1)))
    with pytest.raises(ValueError):
        SimilarityConstants(0.0, 1e-6)
    with pytest.raises(ValueError):
        QualityFeatureVector([1, 2, 3], "FR")


maps = arrays(np.float64, (3, 4, 2), elements=st.floats(-1e3, 1e3, allow_nan=False))


@settings(max_examples=100, deadline=None)
@given(a=maps, b=maps)
def test_similarities_bounded(a, b):
    q = fr_quality_vector(a, b).values
    assert (q >= -1 - 1e-12).all() and (q <= 1 + 1e-12).all()
    assert len(q) == 2 * a.shape[2]


def test_scaling_limit(rng):
    a = rng.random((5, 5, 3)) + 0.1
    b = rng.random((5, 5, 3)) + 0.1
    sign = np.sign(structure_similarity(a, b))
    ma, mb = a.mean(axis=(0, 1)), b.mean(axis=(0, 1))
    gamma_free = 2 * ma * mb / (ma**2 + mb**2)
    errs = []
    for s in (1.0, 10.0, 1e3):
        assert np.array_equal(np.sign(structure_similarity(s * a, s * b)), sign)
        errs.append(np.abs(texture_similarity(s * a, s * b) - gamma_free).max())
    assert errs[0] >= errs[1] >= errs[2]
    assert errs[2] < 1e-11
