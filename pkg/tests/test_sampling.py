from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from streetsynth.index_model.sampling import next_token_probs, sample_next

logit_arrays = arrays(np.float64, st.integers(1, 12), elements=st.floats(-20, 20))


@given(logit_arrays, st.floats(0.1, 5.0))
def test_probabilities_are_a_distribution(logits, temperature):
    p = next_token_probs(logits, temperature, None)
    assert p.sum() == pytest.approx(1.0)
    assert (p >= 0).all()


def test_temperature_matches_scaled_softmax():
    z = np.array([1.0, 2.0, 0.5])
    for t in (0.5, 1.0, 3.0):
        e = np.exp(z / t)
        assert np.allclose(next_token_probs(z, t, None), e / e.sum())


@given(logit_arrays, st.integers(1, 12))
def test_top_k_keeps_k_largest(logits, k):
    k = min(k, len(logits))
    p = next_token_probs(logits, 1.0, k)
    assert np.count_nonzero(p) <= k
    kept = np.flatnonzero(p)
    dropped = np.setdiff1d(np.arange(len(logits)), kept)
    if len(dropped) and len(kept):
        assert logits[kept].min() >= logits[dropped].max()


def test_top_k_ties_prefer_lower_index():
    p = next_token_probs(np.array([1.0, 3.0, 3.0, 3.0]), 1.0, 2)
    assert np.flatnonzero(p).tolist() == [1, 2]


def test_argmax_does_not_touch_rng():
    rng = np.random.default_rng(0)
    state = rng.bit_generator.state
    assert sample_next(np.array([0.1, 0.7, 0.7]), top_k=1, rng=rng) == 1
    assert rng.bit_generator.state == state


def test_sampling_frequencies():
    z = np.log(np.array([0.2, 0.5, 0.3]))
    rng = np.random.default_rng(5)
    draws = np.array([sample_next(z, rng=rng) for _ in range(20000)])
    freq = np.bincount(draws, minlength=3) / len(draws)
    assert np.allclose(freq, [0.2, 0.5, 0.3], atol=0.015)


def test_bad_arguments():
    with pytest.raises(ValueError):
        next_token_probs(np.zeros(3), 0.0, None)
    with pytest.raises(ValueError):
        next_token_probs(np.zeros(3), 1.0, 0)
