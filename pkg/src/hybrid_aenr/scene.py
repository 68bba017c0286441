"""Synthetic near-end / far-end scenes for echo and noise experiments.

The microphone mixture is ``x = s + e + v``. Every component is snapped
to a 2**-30 grid before mixing, which makes the sum and the difference
``x - s - e - v`` exact in float64 for full-scale audio.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .stft import StftConfig, analyze, synthesize

SAMPLE_RATE = 16000
SCENARIOS = ("nst", "fst", "dt")
NONLINEARITIES = ("none", "hard-clip", "sigmoid")
_GRID = 2.0 ** -30
ACTIVE_DBFS = -40.0


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    scenario: str = "dt"
    ser_db: float = 0.0
    snr_db: float | None = 10.0
    delay_ms: float = 0.0
    t60_ms: float = 100.0
    nonlinearity: str = "none"
    nonlinearity_param: float = 0.5
    bandlimit_hz: float | None = None
    seed: int = 0
    rir: np.ndarray | None = field(default=None, compare=False, repr=False)

    def validate(self) -> "SceneSpec":
        if self.scenario not in SCENARIOS:
            raise SceneError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if not -20.0 <= self.ser_db <= 20.0:
            raise SceneError(f"ser_db={self.ser_db} outside [-20, 20] dB")
        if self.snr_db is not None and not -5.0 <= self.snr_db <= 30.0:
            raise SceneError(f"snr_db={self.snr_db} outside [-5, 30] dB")
        if not 0.0 <= self.delay_ms <= 1500.0:
            raise SceneError(f"delay_ms={self.delay_ms} outside [0, 1500] ms")
        if not 50.0 <= self.t60_ms <= 300.0:
            raise SceneError(f"t60_ms={self.t60_ms} outside [50, 300] ms")
        if self.nonlinearity not in NONLINEARITIES:
            raise SceneError(f"nonlinearity must be one of {NONLINEARITIES}")
        if self.nonlinearity != "none" and self.nonlinearity_param <= 0:
            raise SceneError("nonlinearity_param must be > 0")
        if self.bandlimit_hz is not None and not 0 < self.bandlimit_hz < SAMPLE_RATE / 2:
            raise SceneError(f"bandlimit_hz={self.bandlimit_hz} outside (0, {SAMPLE_RATE // 2})")
        if self.rir is not None and not 1 <= len(self.rir) <= 4096:
            raise SceneError("rir length must be in [1, 4096]")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise SceneError("seed must be an unsigned 64-bit integer")
        return self

    def metadata(self) -> str:
        d = asdict(self)
        d.pop("rir")
        d["rir"] = "custom" if self.rir is not None else f"exp-decay(t60_ms={self.t60_ms}, seed={self.seed})"
        return "".join(f"{k} = {v}\n" for k, v in d.items())


@dataclass
class SceneOutput:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    e: np.ndarray
    v: np.ndarray
    spec: SceneSpec
    rir: np.ndarray

    def components(self) -> dict[str, np.ndarray]:
        return {"x": self.x, "y": self.y, "s": self.s, "e": self.e, "v": self.v}


def _rng(seed, *stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *stream])


def synthetic_rir(t60_ms: float = 100.0, seed: int = 0, max_len: int = 4096) -> np.ndarray:
    """Exponentially decaying noise tail behind a unit direct path at lag 0."""
    n = min(max_len, max(2, int(round(t60_ms * SAMPLE_RATE / 1000.0))))
    t = np.arange(n) / SAMPLE_RATE
    h = 0.3 * _rng(seed, 1).standard_normal(n) * np.exp(-3.0 * np.log(10.0) * t / (t60_ms / 1000.0))
    h[0] = 1.0
    return h


def synthetic_speech(seed: int, duration: float, sample_rate: int = SAMPLE_RATE, voice: int = 0) -> np.ndarray:
    """Speech-like test signal: formant-filtered noise with syllabic modulation and pauses.

    Talk spurts last 0.8-2.0 s and pauses 0.25-0.6 s, so every 3 s window
    contains at least 200 ms of silence.
    """
    if duration < 1.0:
        raise SceneError("synthetic_speech needs duration >= 1 s")
    rng = _rng(seed, 2, voice)
    n = int(round(duration * sample_rate))
    src = rng.standard_normal(n)
    a = np.array([1.0])
    for fc in rng.uniform([300, 1000, 2200], [800, 1800, 3200]):
        r = 0.93
        a = np.convolve(a, [1.0, -2 * r * np.cos(2 * np.pi * fc / sample_rate), r * r])
    sig = lfilter([1.0, -0.9], a, src)
    sig /= np.std(sig)

    t = np.arange(n) / sample_rate
    syl = 0.35 + 0.65 * np.abs(np.sin(np.pi * rng.uniform(3.0, 5.0) * t + rng.uniform(0, np.pi)))

    gate = np.zeros(n)
    ramp = int(0.01 * sample_rate)
    pos = 0
    while pos < n:
        talk = int(rng.uniform(0.8, 2.0) * sample_rate)
        end = min(n, pos + talk)
        seg = np.ones(end - pos)
        r = min(ramp, len(seg) // 2)
        if r:
            w = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
            seg[:r] *= w
            seg[len(seg) - r:] *= w[::-1]
        gate[pos:end] = seg
        pos = end + int(rng.uniform(0.25, 0.6) * sample_rate)

    out = sig * syl * gate
    out *= rng.uniform(0.05, 0.2) / np.sqrt(np.mean(out ** 2))
    return np.clip(out, -0.99, 0.99)


def bandlimit(signal, cutoff_hz: float, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Zero every STFT bin above the cutoff and resynthesize (same length)."""
    x = np.asarray(signal, dtype=np.float64)
    pad = cfg.window_len
    xp = np.concatenate([np.zeros(pad), x, np.zeros(pad + cfg.hop)])
    X = analyze(xp, cfg)
    X[:, int(np.floor(cutoff_hz * cfg.fft_size / cfg.sample_rate)) + 1:] = 0.0
    return synthesize(X, cfg)[pad:pad + len(x)]


def apply_nonlinearity(sig, kind: str, param: float) -> np.ndarray:
    if kind == "none":
        return sig
    if kind == "hard-clip":
        return np.clip(sig, -param, param)
    if kind == "sigmoid":
        # odd sigmoid with unit small-signal gain, saturating at +-2/param
        return (2.0 / (1.0 + np.exp(-param * sig)) - 1.0) * (2.0 / param)
    raise SceneError(f"unknown nonlinearity {kind!r}")


def active_frames(ref, frame: int = 256, threshold_dbfs: float = ACTIVE_DBFS) -> np.ndarray:
    """Per-sample mask of frames whose RMS exceeds the threshold (all True if none do)."""
    ref = np.asarray(ref, dtype=np.float64)
    n_frames = -(-len(ref) // frame)
    padded = np.concatenate([ref, np.zeros(n_frames * frame - len(ref))])
    rms = np.sqrt(np.mean(padded.reshape(n_frames, frame) ** 2, axis=1))
    act = rms > 10.0 ** (threshold_dbfs / 20.0)
    if not act.any():
        act[:] = True
    return np.repeat(act, frame)[:len(ref)]


def _power(sig, mask):
    return float(np.mean(sig[mask] ** 2))


def _snap(sig):
    return np.round(sig / _GRID) * _GRID


def generate(spec: SceneSpec, src_near, src_far) -> SceneOutput:
    spec.validate()
    near = np.asarray(src_near, dtype=np.float64)
    far = np.asarray(src_far, dtype=np.float64)
    if min(len(near), len(far)) < 3 * SAMPLE_RATE:
        raise SceneError("sources must be at least 3 s long at 16 kHz")
    n = min(len(near), len(far))
    near, far = near[:n], far[:n]
    rir = synthetic_rir(spec.t60_ms, spec.seed) if spec.rir is None else np.asarray(spec.rir, dtype=np.float64)

    lag = int(round(spec.delay_ms * SAMPLE_RATE / 1000.0))
    delayed = np.concatenate([np.zeros(lag), far])[:n]
    echo = fftconvolve(apply_nonlinearity(delayed, spec.nonlinearity, spec.nonlinearity_param), rir)[:n]
    noise = _rng(spec.seed, 3).standard_normal(n)

    s = near if spec.scenario != "fst" else np.zeros(n)
    e = echo if spec.scenario != "nst" else np.zeros(n)
    v = noise if spec.snr_db is not None else np.zeros(n)
    if spec.bandlimit_hz is not None:
        s, e, v = (bandlimit(c, spec.bandlimit_hz) for c in (s, e, v))

    if spec.scenario == "dt":
        mask = active_frames(s)
        e = e * np.sqrt(_power(s, mask) / max(_power(e, mask), 1e-30) / 10.0 ** (spec.ser_db / 10.0))
    if spec.snr_db is not None:
        ref = e if spec.scenario == "fst" else s
        mask = active_frames(ref)
        v = v * np.sqrt(_power(ref, mask) / max(_power(v, mask), 1e-30) / 10.0 ** (spec.snr_db / 10.0))

    s, e, v = _snap(s), _snap(e), _snap(v)
    return SceneOutput(x=s + e + v, y=far.copy(), s=s, e=e, v=v, spec=spec, rir=rir)


def measure_ratios(out: SceneOutput) -> dict[str, float]:
    """Realized SER (DT only) and SNR, with the same active-frame convention as :func:`generate`."""
    res = {}
    sc = out.spec.scenario
    if sc == "dt":
        m = active_frames(out.s)
        res["ser_db"] = 10 * np.log10(_power(out.s, m) / _power(out.e, m))
    if out.spec.snr_db is not None:
        ref = out.e if sc == "fst" else out.s
        m = active_frames(ref)
        res["snr_db"] = 10 * np.log10(_power(ref, m) / _power(out.v, m))
    return res


def segment_labels(out: SceneOutput, frame: int = 256) -> np.ndarray:
    """Per-sample labels: 'dt', 'fst', 'nst' or 'silence' from near-end / echo activity."""
    n = len(out.x)
    s_act = active_frames(out.s, frame) if np.any(out.s) else np.zeros(n, bool)
    e_act = active_frames(out.e, frame) if np.any(out.e) else np.zeros(n, bool)
    labels = np.full(n, "silence", dtype="<U7")
    labels[s_act & e_act] = "dt"
    labels[~s_act & e_act] = "fst"
    labels[s_act & ~e_act] = "nst"
    return labels
