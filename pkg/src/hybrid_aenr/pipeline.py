"""Kalman echo canceller followed by the mask-estimating post-filter.

Batch and streaming processing run the same per-hop/per-frame code, so
their outputs are bit-identical. Output samples are time-aligned with the
input (index ``n`` of the output corresponds to index ``n`` of the mic).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import compress
from .kalman import KalmanConfig, kf_init, kf_process_frame
from .model import Model, ModelConfig, apply_mask
from .stft import StftConfig, StreamingAnalyzer, StreamingSynthesizer, analyze, synthesize
from .weights import WeightStore

STAGES = ("full", "kf-only")


class PipelineConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    kalman: KalmanConfig = field(default_factory=KalmanConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    weights_path: str | None = None
    seed: int = 0
    stage: str = "full"

    @property
    def layout(self):
        return self.model.layout

    @property
    def input_routing(self) -> str:
        return self.model.routing

    def validate(self) -> "PipelineConfig":
        if self.kalman.block_size != self.stft.hop:
            raise PipelineConfigError(
                f"kalman.block_size={self.kalman.block_size} must equal stft.hop={self.stft.hop}")
        if self.stft.fft_size != 2 * self.stft.hop:
            raise PipelineConfigError(
                f"stft.fft_size={self.stft.fft_size} must be twice stft.hop={self.stft.hop}")
        if self.model.layout.num_bins != self.stft.num_bins:
            raise PipelineConfigError(
                f"layout.num_bins={self.model.layout.num_bins} does not match stft bins {self.stft.num_bins}")
        if self.stage not in STAGES:
            raise PipelineConfigError(f"stage={self.stage!r} must be one of {STAGES}")
        return self


@dataclass
class PipelineResult:
    output: np.ndarray
    error_signal: np.ndarray
    echo_estimate: np.ndarray
    mask_magnitude: np.ndarray | None = None
    mask_phase: np.ndarray | None = None
    delay_dist: np.ndarray | None = None


def load_model(cfg: PipelineConfig) -> Model:
    weights = WeightStore.load(cfg.weights_path) if cfg.weights_path else None
    return Model.build(cfg.model, weights, seed=cfg.seed)


class _FrameProcessor:
    """Per-frame post-filter step shared by both processing modes."""

    def __init__(self, cfg: PipelineConfig, model: Model):
        self.cfg = cfg
        self.model = model
        self.state = model.new_state()
        self.needs_echo = "e" in model.cfg.ne_inputs + model.cfg.fe_inputs

    def __call__(self, Z, Y, E):
        a = self.model.cfg.alpha
        z_mag, z_phase = compress(Z, a)
        y_mag, _ = compress(Y, a)
        e_mag = compress(E, a)[0] if self.needs_echo else None
        out = self.model.step(self.state, z_mag, z_phase, y_mag, e_mag)
        return apply_mask(Z, out.mask_magnitude, out.mask_phase, a), out


def _pad_to_hop(sig, hop):
    sig = np.asarray(sig, dtype=np.float64)
    n = -(-len(sig) // hop) * hop
    return np.concatenate([sig, np.zeros(n - len(sig))])


def _fit(sig, n):
    out = np.zeros(n)
    m = min(n, len(sig))
    out[:m] = sig[:m]
    return out


class Pipeline:
    def __init__(self, cfg: PipelineConfig = PipelineConfig(), model: Model | None = None):
        self.cfg = cfg.validate()
        self.model = model if model is not None else (load_model(cfg) if cfg.stage == "full" else None)
        if self.model is not None and self.model.cfg != cfg.model:
            raise PipelineConfigError("model config differs from pipeline model config")

    def _check(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.ndim != 1 or y.ndim != 1:
            raise ValueError("mic and far-end must be mono 1-D signals")
        if len(x) == 0:
            raise ValueError("empty microphone signal")
        if len(x) != len(y):
            raise ValueError(f"mic and far-end lengths differ: {len(x)} vs {len(y)}")
        return x, y

    def process(self, x, y) -> PipelineResult:
        x, y = self._check(x, y)
        cfg = self.cfg
        R = cfg.stft.hop
        xp, yp = _pad_to_hop(x, R), _pad_to_hop(y, R)
        state = kf_init(cfg.kalman)
        e_hat = np.zeros(len(xp))
        z = np.zeros(len(xp))
        for b in range(len(xp) // R):
            sl = slice(b * R, (b + 1) * R)
            e_hat[sl], z[sl] = kf_process_frame(state, xp[sl], yp[sl])
        n = len(x)
        if cfg.stage == "kf-only":
            return PipelineResult(z[:n].copy(), z[:n], e_hat[:n])

        Z, Y, E = analyze(z, cfg.stft), analyze(yp, cfg.stft), analyze(e_hat, cfg.stft)
        step = _FrameProcessor(cfg, self.model)
        T, K = Z.shape
        S = np.empty_like(Z)
        mm = np.empty((T, K))
        mp = np.empty((T, K))
        dists = [] if self.model.cfg.use_alignment else None
        for t in range(T):
            S[t], out = step(Z[t], Y[t], E[t])
            mm[t], mp[t] = out.mask_magnitude, out.mask_phase
            if dists is not None:
                dists.append(out.delay_dist)
        s = synthesize(S, cfg.stft) if T else np.zeros(0)
        return PipelineResult(_fit(s, n), z[:n], e_hat[:n], mm, mp,
                              None if dists is None else np.asarray(dists).reshape(T, -1))

    def stream(self) -> "StreamProcessor":
        return StreamProcessor(self)

    def process_streaming(self, x, y) -> np.ndarray:
        """Feed the signals hop by hop through :meth:`stream`; returns the output only."""
        x, y = self._check(x, y)
        R = self.cfg.stft.hop
        xp, yp = _pad_to_hop(x, R), _pad_to_hop(y, R)
        proc = self.stream()
        chunks = [proc.push(xp[i:i + R], yp[i:i + R]) for i in range(0, len(xp), R)]
        chunks.append(proc.finish())
        return _fit(np.concatenate(chunks), len(x))


class StreamProcessor:
    """Hop-by-hop processing. ``push`` returns finalized output samples (possibly none)."""

    def __init__(self, pipeline: Pipeline):
        cfg = pipeline.cfg
        self.cfg = cfg
        self.kf = kf_init(cfg.kalman)
        self.kf_only = cfg.stage == "kf-only"
        if not self.kf_only:
            self.frames = _FrameProcessor(cfg, pipeline.model)
            self.an_z = StreamingAnalyzer(cfg.stft)
            self.an_y = StreamingAnalyzer(cfg.stft)
            self.an_e = StreamingAnalyzer(cfg.stft)
            self.synth = StreamingSynthesizer(cfg.stft)
            self._started = False

    def push(self, x_block, y_block) -> np.ndarray:
        e_hat, z = kf_process_frame(self.kf, x_block, y_block)
        if self.kf_only:
            return z
        Z = self.an_z.push(z)
        Y = self.an_y.push(y_block)
        E = self.an_e.push(e_hat)
        if Z is None:
            return np.zeros(0)
        self._started = True
        S, _ = self.frames(Z, Y, E)
        return self.synth.push(S)

    def finish(self) -> np.ndarray:
        if self.kf_only or not self._started:
            return np.zeros(0)
        return self.synth.flush()
