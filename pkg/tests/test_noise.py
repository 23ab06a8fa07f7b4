import math

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st
from scipy.special import ndtri

from ergodic_torus.noise import (U64, NoiseModel, RngStream, derive_stream_id, draw_many,
                                 inverse_normal_cdf, philox4x64, raw_word, sample_increment,
                                 validate_moments, word_to_noise)

u64s = st.integers(0, 2**64 - 1)
# numpy routes Philox keys through float conversion above 2^63, so compare below it
keys = st.integers(0, 2**63 - 1)


@settings(max_examples=40, deadline=None)
@given(keys, keys, st.integers(1, 2**40))
def test_philox_matches_numpy(k0, k1, block):
    bg = np.random.Philox(key=np.array([k0, k1], dtype=np.uint64),
                          counter=np.array([block - 1, 0, 0, 0], dtype=np.uint64))
    ref = bg.random_raw(4)
    ours = philox4x64(U64(block), U64(0), U64(0), U64(0), U64(k0), U64(k1))
    assert [int(v) for v in ours] == [int(v) for v in ref]


def test_raw_word_lane_layout():
    seed, stream = U64(11), U64(22)
    block = philox4x64(U64(3), U64(0), U64(0), U64(0), seed, stream)
    for lane in range(4):
        assert raw_word(seed, stream, U64(12 + lane)) == block[lane]


def test_inverse_normal_cdf_accuracy():
    u = np.concatenate([np.linspace(1e-12, 1 - 1e-12, 20001), [1e-300, 0.5, 1 - 2**-53]])
    ours = np.array([inverse_normal_cdf(v) for v in u])
    ref = ndtri(u)
    rel = np.abs(ours - ref) / np.maximum(np.abs(ref), 1e-300)
    assert np.max(rel[np.abs(ref) > 1e-8]) < 1.2e-9
    assert inverse_normal_cdf(0.5) == 0.0


def test_gaussian_extreme_words_are_symmetric():
    lo, hi = word_to_noise(U64(0), 0), word_to_noise(U64(2**64 - 1), 0)
    assert lo == -hi
    assert lo == pytest.approx(ndtri(0.5 * 2.0**-53), rel=1e-8)


@settings(deadline=None)
@given(u64s)
@example(0)
@example(2**64 - 1)
@example(2**64 - 2048)
def test_noise_supports(w):
    w = U64(w)
    assert word_to_noise(w, 1) in (-1.0, 1.0)
    assert word_to_noise(w, 2) in (-math.sqrt(3.0), 0.0, math.sqrt(3.0))
    assert math.isfinite(word_to_noise(w, 0))


def test_sample_increment_examples():
    s = RngStream(5, 9)
    r, _ = sample_increment(NoiseModel("rademacher"), s, 1000)
    assert set(np.unique(r)) <= {-1.0, 1.0}
    t, _ = sample_increment(NoiseModel("three_point"), s, 1000)
    assert set(np.unique(t)) <= {-math.sqrt(3.0), 0.0, math.sqrt(3.0)}
    a, s2 = sample_increment(NoiseModel("gaussian"), s, 3)
    b, _ = sample_increment(NoiseModel("gaussian"), s, 3)
    assert np.array_equal(a, b)
    assert s2.counter == 3
    with pytest.raises(ValueError):
        sample_increment(NoiseModel("gaussian"), s, 0)


@given(u64s, u64s, st.integers(0, 2**40), st.integers(1, 9), st.integers(1, 9))
@settings(max_examples=50, deadline=None)
def test_counter_contract(seed, stream, start, m1, m2):
    """Consecutive draws equal one long draw: output depends only on the counter."""
    model = NoiseModel("gaussian")
    s = RngStream(seed, stream, start)
    a, s1 = sample_increment(model, s, m1)
    b, _ = sample_increment(model, s1, m2)
    whole = draw_many(model, s, m1 + m2)
    assert np.array_equal(np.concatenate([a, b]), whole)


def test_stream_validation():
    with pytest.raises(ValueError):
        RngStream(-1, 0)
    with pytest.raises(ValueError):
        RngStream(0, 2**64)
    assert RngStream(0, 0, 2**64 - 1).advanced(2).counter == 1
    with pytest.raises(ValueError):
        NoiseModel("cauchy")


def test_derive_stream_id_stable_and_distinct():
    a = derive_stream_id("grad1d", "explicit_em", 0.1, 3)
    assert a == derive_stream_id("grad1d", "explicit_em", 0.1, 3)
    assert 0 <= a < 2**64
    ids = {derive_stream_id("grad1d", "explicit_em", 0.1, r) for r in range(1000)}
    assert len(ids) == 1000


@pytest.mark.parametrize("kind", ["gaussian", "rademacher", "three_point"])
def test_exact_moment_table(kind):
    mom = NoiseModel(kind).exact_moments
    assert sorted(mom) == list(range(1, 9))
    assert mom[1] == mom[3] == mom[5] == mom[7] == 0.0
    assert mom[2] == 1.0


def test_exact_moment_values():
    assert NoiseModel("rademacher").exact_moments[8] == 1.0
    assert NoiseModel("three_point").exact_moment(4) == pytest.approx(3.0)
    assert NoiseModel("gaussian").exact_moment(8) == 105.0
    # three-point matches Gaussian through order 5 only
    assert NoiseModel("three_point").exact_moment(6) == pytest.approx(9.0)


@pytest.mark.parametrize("kind", ["gaussian", "rademacher", "three_point"])
def test_validate_moments_to_order_eight(kind):
    rows = validate_moments(NoiseModel(kind), 8, 10**6)
    assert [r.order for r in rows] == list(range(1, 9))
    assert all(r.passed for r in rows), [(r.order, r.z) for r in rows]


def test_validate_moments_examples():
    rad = validate_moments(NoiseModel("rademacher"), 2, 10**4)
    assert rad[1].sample == 1.0 and rad[1].z == 0.0
    g = validate_moments(NoiseModel("gaussian"), 4, 10**6)
    assert g[3].sample == pytest.approx(3.0, abs=0.05) and abs(g[3].z) <= 5
    t = validate_moments(NoiseModel("three_point"), 3, 10**6)
    assert abs(t[2].sample) < 0.02 and abs(t[2].z) <= 5
    with pytest.raises(ValueError):
        validate_moments(NoiseModel("gaussian"), 2, 100)


def test_validate_moments_z_scores_recomputed():
    model, stream, n = NoiseModel("three_point"), RngStream(2, 8), 10**5
    rows = validate_moments(model, 6, n, stream)
    x = draw_many(model, stream, n)
    for r in rows:
        k = r.order
        se = math.sqrt((model.exact_moment(2 * k) - model.exact_moment(k) ** 2) / n)
        assert r.sample == pytest.approx(np.mean(x**k), rel=1e-12, abs=1e-15)
        assert r.z == pytest.approx((np.mean(x**k) - model.exact_moment(k)) / se, abs=1e-9)
        assert r.passed == (abs(r.z) <= 5)


def test_stream_independence_proxy():
    n = 10**6
    a = draw_many(NoiseModel("gaussian"), RngStream(7, derive_stream_id("a")), n)
    b = draw_many(NoiseModel("gaussian"), RngStream(7, derive_stream_id("b")), n)
    assert abs(np.corrcoef(a, b)[0, 1]) <= 5 / math.sqrt(n)


def test_three_point_frequencies():
    x = draw_many(NoiseModel("three_point"), RngStream(3, 4), 6 * 10**5)
    root3 = math.sqrt(3.0)
    n = x.size
    for value, p in ((-root3, 1 / 6), (root3, 1 / 6), (0.0, 2 / 3)):
        freq = np.mean(x == value)
        assert abs(freq - p) <= 5 * math.sqrt(p * (1 - p) / n)
