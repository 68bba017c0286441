import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybrid_aenr.stft import (StftConfig, StreamingAnalyzer, StreamingSynthesizer, analyze,
                              cola_deviation, synthesize)

CFG = StftConfig()


def test_defaults():
    assert CFG.num_bins == 257
    assert CFG.frame_rate == 62.5
    assert CFG.num_frames(16000) == (16000 - 512) // 256 + 1


def test_windows_satisfy_overlap_add():
    assert cola_deviation(CFG) < 1e-12
    w = CFG.analysis_window
    assert w[0] == 0.0 and np.isclose(w[256], 1.0)


def test_frame_content_matches_manual_rfft(rng):
    x = rng.standard_normal(2000)
    X = analyze(x, CFG)
    t = 3
    ref = np.fft.rfft(x[t * 256:t * 256 + 512] * CFG.analysis_window)
    np.testing.assert_array_equal(X[t], ref)


def test_sine_lands_in_its_bin():
    n = np.arange(16000)
    X = analyze(np.sin(2 * np.pi * 1000 * n / 16000), CFG)
    assert np.all(np.argmax(np.abs(X), axis=1) == 32)


def test_short_input_gives_no_frames():
    assert analyze(np.zeros(100), CFG).shape == (0, 257)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=1024, max_value=6000), st.integers(0, 2**32 - 1))
def test_round_trip_interior(n, seed):
    x = np.random.default_rng(seed).standard_normal(n)
    y = synthesize(analyze(x, CFG), CFG)
    lo, hi = 512, len(y) - 512
    np.testing.assert_allclose(y[lo:hi], x[lo:hi], atol=1e-9)


def test_streaming_matches_batch(rng):
    x = rng.standard_normal(256 * 40)
    X = analyze(x, CFG)
    an, syn = StreamingAnalyzer(CFG), StreamingSynthesizer(CFG)
    frames, out = [], []
    for i in range(0, len(x), 256):
        f = an.push(x[i:i + 256])
        if f is not None:
            frames.append(f)
            out.append(syn.push(f))
    out.append(syn.flush())
    np.testing.assert_array_equal(np.array(frames), X)
    np.testing.assert_array_equal(np.concatenate(out), synthesize(X, CFG))


def test_streaming_rejects_wrong_block():
    with pytest.raises(ValueError):
        StreamingAnalyzer(CFG).push(np.zeros(100))
