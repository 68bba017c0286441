import numpy as np
import pytest

from hybrid_aenr.time_align import (AlignmentError, StreamingTimeAlign, TaWeights, identity_ta_weights, softmax,
                                    ta_backward, ta_forward)


def _numeric_grad(f, arr, h=1e-6):
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + h
        fp = f()
        arr[idx] = old - h
        fm = f()
        arr[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def test_softmax_rows_sum_to_one(rng):
    p = softmax(rng.standard_normal((5, 9)) * 50, axis=1)
    np.testing.assert_allclose(p.sum(axis=1), 1.0)


@pytest.mark.parametrize("d_star", [0, 3, 7])
def test_identity_weights_find_delay(d_star, rng):
    T, P, L = 40, 6, 4
    fe = rng.standard_normal((L, T, P))
    ne = np.zeros_like(fe)
    ne[:, d_star:] = fe[:, :T - d_star]
    w = identity_ta_weights(L, L)
    aligned, dist = ta_forward(ne, fe, w, d_max=8)
    assert np.argmax(dist[10:].mean(axis=0)) == d_star
    np.testing.assert_allclose(dist.sum(axis=1), 1.0, atol=1e-12)
    assert aligned.shape == (L, T, P)


@pytest.mark.parametrize("d_star", [0, 16, 63])
def test_identity_weights_per_frame(d_star, rng):
    T, P, L = 100, 26, 32
    fe = rng.standard_normal((L, T, P))
    ne = np.zeros_like(fe)
    ne[:, d_star:] = fe[:, :T - d_star]
    _, dist = ta_forward(ne, fe, identity_ta_weights(L, L), d_max=64)
    assert np.all(np.argmax(dist[d_star:], axis=1) == d_star)


def test_aligned_within_envelope(rng):
    w = TaWeights.random(rng, in_channels=3, hidden=3)
    ne, fe = rng.standard_normal((2, 3, 12, 4))
    aligned, _ = ta_forward(ne, fe, w, d_max=4)
    F = np.einsum("hl,ltp->htp", w.fe_weight, fe) + w.fe_bias[:, None, None]
    for t in range(3, 12):
        cand = F[:, t - 3:t + 1]
        assert np.all(aligned[:, t] <= cand.max(axis=1) + 1e-12)
        assert np.all(aligned[:, t] >= cand.min(axis=1) - 1e-12)


def test_aligned_is_convex_combination_of_delayed_far_end(rng):
    w = identity_ta_weights(2, 2)
    ne, fe = rng.standard_normal((2, 2, 6, 3))
    aligned, dist = ta_forward(ne, fe, w, d_max=3)
    t = 4
    ref = sum(dist[t, d] * fe[:, t - d] for d in range(3))
    np.testing.assert_allclose(aligned[:, t], ref)


def test_weight_gradients_match_finite_differences(rng):
    w = TaWeights.random(rng, in_channels=3, hidden=2)
    ne, fe = rng.standard_normal((2, 3, 6, 4))
    gA = rng.standard_normal((2, 6, 4))
    gD = rng.standard_normal((6, 4))

    def loss():
        a, d = ta_forward(ne, fe, w, 4)
        return np.sum(a * gA) + np.sum(d * gD)

    _, _, cache = ta_forward(ne, fe, w, 4, return_cache=True)
    _, _, grads = ta_backward(cache, w, gA, gD)
    for name, arr in w.as_dict().items():
        num = _numeric_grad(loss, arr)
        ana = grads.as_dict()[name]
        np.testing.assert_allclose(ana, num, rtol=1e-5, atol=1e-7, err_msg=name)


def test_streaming_matches_batch(rng):
    w = TaWeights.random(rng, in_channels=4, hidden=4)
    ne, fe = rng.standard_normal((2, 4, 30, 5))
    a_ref, d_ref = ta_forward(ne, fe, w, d_max=6)
    st = StreamingTimeAlign(w, d_max=6)
    for t in range(30):
        a, d = st.step(ne[:, t], fe[:, t])
        np.testing.assert_allclose(a, a_ref[:, t], atol=1e-12)
        np.testing.assert_allclose(d, d_ref[t], atol=1e-12)


def test_causality(rng):
    w = TaWeights.random(rng, in_channels=3, hidden=3)
    ne, fe = rng.standard_normal((2, 3, 20, 4))
    a1, d1 = ta_forward(ne, fe, w, d_max=5)
    ne[:, 12:] = 0.0
    fe[:, 12:] = 7.0
    a2, d2 = ta_forward(ne, fe, w, d_max=5)
    np.testing.assert_array_equal(a1[:, :12], a2[:, :12])
    np.testing.assert_array_equal(d1[:12], d2[:12])


def test_snapshot_restore(rng):
    w = TaWeights.random(rng, in_channels=2, hidden=2)
    st = StreamingTimeAlign(w, d_max=4)
    frames = rng.standard_normal((10, 2, 2, 3))
    for ne, fe in frames[:5]:
        st.step(ne, fe)
    snap = st.snapshot()
    first = [st.step(ne, fe)[1] for ne, fe in frames[5:]]
    st.restore(snap)
    again = [st.step(ne, fe)[1] for ne, fe in frames[5:]]
    np.testing.assert_array_equal(first, again)


def test_input_validation(rng):
    w = identity_ta_weights(3, 3)
    with pytest.raises(AlignmentError):
        ta_forward(np.zeros((3, 5, 2)), np.zeros((3, 6, 2)), w)
    with pytest.raises(AlignmentError):
        ta_forward(np.zeros((2, 5, 2)), np.zeros((2, 5, 2)), w)
    with pytest.raises(AlignmentError):
        ta_forward(np.zeros((3, 5, 2)), np.zeros((3, 5, 2)), w, d_max=0)
    with pytest.raises(AlignmentError):
        ta_backward(None, w, None, None)
