"""Acceptance criteria A1-A11, one PASS/FAIL line each."""
import time

import numpy as np
import pytest

from hybrid_aenr import features, model, scene, stft, time_align
from hybrid_aenr.bench import REFERENCE_GMACS, REFERENCE_PARAMS_M, format_report, run_bench
from hybrid_aenr.features import SAMPLED, SUBBAND, ReorientLayout, reorient_forward, reorient_inverse
from hybrid_aenr.kalman import KalmanConfig, erle_trace, kf_process
from hybrid_aenr.model import ModelConfig, apply_mask, macs_per_frame, macs_per_second, param_count
from hybrid_aenr.pipeline import Pipeline, PipelineConfig
from hybrid_aenr.probe import probe_delay

from conftest import make_scene


def test_a1_stft_round_trip(criterion):
    cfg = stft.StftConfig()
    x = np.random.default_rng(1).standard_normal(3 * cfg.sample_rate)
    t0 = time.perf_counter()
    y = stft.synthesize(stft.analyze(x, cfg), cfg)
    dt = time.perf_counter() - t0
    lo, hi = cfg.window_len, len(y) - cfg.window_len
    err = float(np.max(np.abs(y[lo:hi] - x[lo:hi])))
    criterion("A1", err < 1e-6 and dt < 1.0, f"max_abs_err={err:.2e} runtime={dt:.3f}s")


def test_a2_reorientation_bijection(criterion):
    rng = np.random.default_rng(2)
    vecs = rng.standard_normal((10000, 260))
    ok = True
    for mode in (SAMPLED, SUBBAND):
        lay = ReorientLayout(num_bins=260, mode=mode)
        fw = reorient_forward(vecs, lay)            # (gamma, T, P)
        back = reorient_inverse(fw, lay)
        ok &= np.array_equal(back, vecs)
        flat = np.moveaxis(fw, 1, 0).reshape(len(vecs), -1)
        ok &= np.array_equal(np.sort(flat, axis=1), np.sort(vecs, axis=1))
    criterion("A2", bool(ok), "10000 vectors, both modes")


@pytest.mark.parametrize("A", [0.8, 0.95])
def test_a3_kalman_convergence(criterion, A):
    out = make_scene(seconds=10.0, seed=0, scenario="fst", snr_db=None, t60_ms=100.0)
    t0 = time.perf_counter()
    _, z = kf_process(out.x, out.y, KalmanConfig(transition_factor=A))
    dt = time.perf_counter() - t0
    fs = scene.SAMPLE_RATE
    e, r = out.e[5 * fs:], z[5 * fs:]
    erle = 10 * np.log10(np.sum(e ** 2) / np.sum(r ** 2))
    criterion(f"A3[A={A}]", erle >= 20.0 and dt < 10.0, f"ERLE(5-10s)={erle:.1f} dB runtime={dt:.2f}s")


def test_a4_bandlimit_zero_channels(criterion):
    mag = np.ones(257)
    mag[129:] = 0.0
    counts = {}
    for mode in (SAMPLED, SUBBAND):
        lay = ReorientLayout(mode=mode)
        feat = reorient_forward(mag, lay)
        counts[mode] = int(np.sum(features.zero_channel_report(feat)))
    ok = counts[SUBBAND] >= 2 and counts[SAMPLED] == 0
    criterion("A4", ok, f"zero channels: C-SubFR={counts[SUBBAND]} C-SamFR={counts[SAMPLED]}")


def test_a5_delay_recovery(criterion):
    fs = scene.SAMPLE_RATE
    rng = np.random.default_rng(5)
    far = 0.1 * rng.standard_normal(8 * fs)
    rows_ok, found = True, {}
    expect = {0: 1, 128: 9, 512: 33, 1008: 64}
    for ms, want in expect.items():
        lag = ms * fs // 1000
        mic = np.concatenate([np.zeros(lag), far])[:len(far)]
        pr = probe_delay(far, mic)
        rows_ok &= bool(np.all(np.abs(pr.dist.sum(axis=1) - 1.0) < 1e-6))
        found[ms] = pr.peak_index
    ok = rows_ok and all(abs(found[ms] - want) <= 1 for ms, want in expect.items())
    criterion("A5", ok, f"peak bins {found} expected {expect} rows_sum_to_1={rows_ok}")


def test_a6_gradient_check(criterion):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(20):
        L, H, T, P, D = 3, 2, 7, 4, 4
        w = time_align.TaWeights.random(rng, in_channels=L, hidden=H)
        ne, fe = rng.standard_normal((2, L, T, P))
        gA = rng.standard_normal((H, T, P))
        gD = rng.standard_normal((T, D))

        def loss(ne_, fe_):
            a, d = time_align.ta_forward(ne_, fe_, w, D)
            return np.sum(a * gA) + np.sum(d * gD)

        _, _, cache = time_align.ta_forward(ne, fe, w, D, return_cache=True)
        g_ne, g_fe, _ = time_align.ta_backward(cache, w, gA, gD)
        h = 1e-6
        for arr, g in ((ne, g_ne), (fe, g_fe)):
            num = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                fp = loss(ne, fe)
                arr[idx] = old - h
                fm = loss(ne, fe)
                arr[idx] = old
                num[idx] = (fp - fm) / (2 * h)
            rel = np.max(np.abs(num - g)) / max(np.max(np.abs(num)), 1e-12)
            worst = max(worst, rel)
    criterion("A6", worst < 1e-4, f"max relative error={worst:.2e} over 20 instances")


def test_a7_streaming_equivalence(criterion):
    out = make_scene(seconds=3.0, seed=7, scenario="dt", ser_db=0.0, snr_db=10.0, delay_ms=40.0)
    pipe = Pipeline(PipelineConfig(seed=7))
    batch = pipe.process(out.x, out.y).output
    streamed = pipe.process_streaming(out.x, out.y)
    same = np.array_equal(batch, streamed)

    cut = 2 * scene.SAMPLE_RATE
    x2, y2 = out.x.copy(), out.y.copy()
    rng = np.random.default_rng(77)
    x2[cut:] = rng.standard_normal(len(x2) - cut)
    y2[cut:] = rng.standard_normal(len(y2) - cut)
    mutated = pipe.process_streaming(x2, y2)
    # frames touching samples >= cut start at cut - window_len + hop
    safe = cut - pipe.cfg.stft.window_len + pipe.cfg.stft.hop
    causal = np.array_equal(mutated[:safe], batch[:safe]) and not np.array_equal(mutated, batch)
    criterion("A7", same and causal, f"bit_identical={same} causal={causal}")


def _hand_counts():
    # per-frame features: 5 channels x 52 positions, 32 filters, 26 positions after pooling
    stream_params = (5 * 5 + 5) + (32 * 5 + 32) + (32 * 3 + 32) + (32 * 32 + 32)
    stream_macs = 5 * 5 * 52 + 32 * 5 * 52 + 32 * 3 * 52 + 32 * 32 * 52
    ta_params = 2 * (32 * 32 + 32) + (32 * 5 * 3 + 1)
    ta_macs = 2 * 32 * 32 * 26 + 32 * 64 * 26 + 32 * 5 * 3 * 64 + 32 * 64 * 26
    # joint convs: 26 -> 13 -> 7 positions
    joint_params = (64 * 64 * 3 + 64) + (96 * 64 * 3 + 96)
    joint_macs = 64 * 64 * 3 * 13 + 96 * 64 * 3 * 7
    fgru_params = 3 * 64 * (96 + 64) + 2 * 3 * 64
    fgru_macs = 7 * 3 * 64 * (96 + 64)
    # subband GRUs over 4 and 3 positions of 64 features
    sgru_params = sum(3 * 128 * (n + 128) + 2 * 3 * 128 for n in (4 * 64, 3 * 64))
    sgru_macs = sum(3 * 128 * (n + 128) for n in (4 * 64, 3 * 64))
    fc_params = (257 * 256 + 257) + (257 * 257 + 257)
    fc_macs = 257 * 256 + 257 * 257
    head_params = (32 * 2 * 3 + 32) + (32 * 32 * 3 + 32) + (3 * 32 + 3)
    head_macs = (32 * 2 * 3 + 32 * 32 * 3 + 3 * 32) * 257
    params = 2 * stream_params + ta_params + joint_params + fgru_params + sgru_params + fc_params + head_params
    macs = 2 * stream_macs + ta_macs + joint_macs + fgru_macs + sgru_macs + fc_macs + head_macs
    return params, macs


def test_a8_complexity(criterion):
    cfg = ModelConfig()
    params, macs = _hand_counts()
    got_p, got_m = param_count(cfg), macs_per_frame(cfg)
    gmacs = macs_per_second(cfg) / 1e9
    ok = got_p == params and got_m == macs and gmacs == macs * 62.5 / 1e9
    dev_p = (got_p / 1e6 - REFERENCE_PARAMS_M) / REFERENCE_PARAMS_M
    dev_g = (gmacs - REFERENCE_GMACS) / REFERENCE_GMACS
    criterion("A8", ok, f"params={got_p} (hand {params}, ref {REFERENCE_PARAMS_M} M, dev {dev_p:+.1%}) "
                        f"GMACS={gmacs:.4f} (hand {macs * 62.5 / 1e9:.4f}, ref {REFERENCE_GMACS}, dev {dev_g:+.1%})")


def test_a9_mask_identity(criterion):
    cfg = stft.StftConfig()
    z = np.random.default_rng(9).standard_normal(3 * cfg.sample_rate)
    Z = stft.analyze(z, cfg)
    ones, zeros = np.ones(cfg.num_bins), np.zeros(cfg.num_bins)
    S = np.stack([apply_mask(Z[t], ones, zeros) for t in range(len(Z))])
    out = stft.synthesize(S, cfg)
    lo, hi = cfg.window_len, len(out) - cfg.window_len
    rel = np.max(np.abs(out[lo:hi] - z[lo:hi])) / np.max(np.abs(z[lo:hi]))
    criterion("A9", rel < 1e-9, f"max relative error={rel:.2e}")


def test_a10_ser_snr_fidelity(criterion):
    rng = np.random.default_rng(10)
    near = scene.synthetic_speech(100, 3.0, voice=0)
    far = scene.synthetic_speech(100, 3.0, voice=1)
    worst, exact = 0.0, True
    for i in range(100):
        spec = scene.SceneSpec(scenario=str(rng.choice(["dt", "fst", "nst"])),
                               ser_db=float(rng.uniform(-20, 20)), snr_db=float(rng.uniform(-5, 30)),
                               delay_ms=float(rng.uniform(0, 300)), seed=i)
        out = scene.generate(spec, near, far)
        got = scene.measure_ratios(out)
        if "ser_db" in got:
            worst = max(worst, abs(got["ser_db"] - spec.ser_db))
        worst = max(worst, abs(got["snr_db"] - spec.snr_db))
        exact &= np.array_equal(out.x, out.s + out.e + out.v)
    criterion("A10", worst < 0.01 and exact, f"max ratio error={worst:.2e} dB exact_sum={exact}")


@pytest.mark.slow
def test_a11_end_to_end_smoke(criterion):
    out = make_scene(seconds=5.0, seed=11, scenario="dt", ser_db=0.0, snr_db=10.0)
    res = Pipeline(PipelineConfig(seed=11)).process(out.x, out.y)
    finite = bool(np.all(np.isfinite(res.output)))
    rms = float(np.sqrt(np.mean(res.output ** 2)))
    in_range = bool(np.all((res.mask_magnitude >= 0) & (res.mask_magnitude <= 1)))
    bench = run_bench(PipelineConfig(seed=11), seconds=60.0)
    with_rtf = np.isfinite(bench["rtf_median"]) and bench["output_finite"]
    ok = finite and np.isfinite(rms) and in_range and with_rtf
    criterion("A11", ok, f"finite={finite} rms={rms:.4f} masks_in_[0,1]={in_range} "
                         f"rtf={bench['rtf_median']:.3f} on {bench['cpu']}")
