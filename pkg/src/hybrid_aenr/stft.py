"""Streaming STFT analysis/synthesis with periodic Hann windows.

Frame ``t`` covers samples ``[t*hop, t*hop + window_len)``; there is no
centre padding, so frame 0 starts at sample 0. Spectra are complex128
arrays of shape ``(frames, num_bins)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 512
    window_len: int = 512
    hop: int = 256
    sample_rate: int = 16000

    def __post_init__(self):
        if self.fft_size & (self.fft_size - 1):
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.window_len > self.fft_size:
            raise ValueError("window_len must not exceed fft_size")
        if self.window_len % self.hop:
            raise ValueError(f"hop {self.hop} must divide window_len {self.window_len}")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop

    @cached_property
    def analysis_window(self) -> np.ndarray:
        n = np.arange(self.window_len)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.window_len)

    @cached_property
    def synthesis_window(self) -> np.ndarray:
        # least-squares synthesis window: w / sum_k w^2(n + k*hop)
        w = self.analysis_window
        env = np.zeros(self.hop)
        for k in range(self.window_len // self.hop):
            env += w[k * self.hop:(k + 1) * self.hop] ** 2
        return w / np.tile(env, self.window_len // self.hop)

    def num_frames(self, num_samples: int) -> int:
        if num_samples < self.window_len:
            return 0
        return (num_samples - self.window_len) // self.hop + 1


def cola_deviation(cfg: StftConfig) -> float:
    """Max deviation from 1 of the overlap-added analysis*synthesis product."""
    prod = cfg.analysis_window * cfg.synthesis_window
    acc = prod.reshape(-1, cfg.hop).sum(axis=0)
    return float(np.max(np.abs(acc - 1.0)))


def analyze(signal, cfg: StftConfig = StftConfig()) -> np.ndarray:
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("analyze expects a mono 1-D signal")
    n_frames = cfg.num_frames(len(x))
    if n_frames == 0:
        return np.zeros((0, cfg.num_bins), dtype=np.complex128)
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.window_len)[::cfg.hop][:n_frames]
    return np.fft.rfft(frames * cfg.analysis_window, n=cfg.fft_size, axis=1)


def _frames_to_time(spec: np.ndarray, cfg: StftConfig) -> np.ndarray:
    return np.fft.irfft(spec, n=cfg.fft_size, axis=-1)[..., :cfg.window_len] * cfg.synthesis_window


def synthesize(frames, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Weighted overlap-add. Output length is ``(T-1)*hop + window_len``."""
    X = np.asarray(frames, dtype=np.complex128)
    if X.size == 0:
        return np.zeros(0)
    if X.ndim != 2 or X.shape[1] != cfg.num_bins:
        raise ValueError(f"expected (frames, {cfg.num_bins}) spectra, got {X.shape}")
    chunks = _frames_to_time(X, cfg)
    out = np.zeros((len(X) - 1) * cfg.hop + cfg.window_len)
    for t, chunk in enumerate(chunks):
        out[t * cfg.hop:t * cfg.hop + cfg.window_len] += chunk
    return out


class StreamingAnalyzer:
    """Feeds hop-sized blocks and yields a spectrum whenever a frame completes.

    Produces the same frames (bit-for-bit) as :func:`analyze` on the
    concatenated input.
    """

    def __init__(self, cfg: StftConfig = StftConfig()):
        self.cfg = cfg
        self._buf = np.zeros(cfg.window_len)
        self._filled = 0
        self.frame_index = 0

    def push(self, block) -> np.ndarray | None:
        block = np.asarray(block, dtype=np.float64)
        if len(block) != self.cfg.hop:
            raise ValueError(f"expected a block of {self.cfg.hop} samples, got {len(block)}")
        self._buf[:-self.cfg.hop] = self._buf[self.cfg.hop:]
        self._buf[-self.cfg.hop:] = block
        self._filled = min(self._filled + self.cfg.hop, self.cfg.window_len)
        if self._filled < self.cfg.window_len:
            return None
        self.frame_index += 1
        return np.fft.rfft(self._buf * self.cfg.analysis_window, n=self.cfg.fft_size)


class StreamingSynthesizer:
    """Overlap-add one frame at a time; each push finalizes ``hop`` samples."""

    def __init__(self, cfg: StftConfig = StftConfig()):
        self.cfg = cfg
        self._acc = np.zeros(cfg.window_len)

    def push(self, spectrum) -> np.ndarray:
        chunk = _frames_to_time(np.asarray(spectrum, dtype=np.complex128), self.cfg)
        # same addition order as synthesize(): 0.0 + frame t-1 + frame t
        self._acc += chunk
        done = self._acc[:self.cfg.hop].copy()
        self._acc[:-self.cfg.hop] = self._acc[self.cfg.hop:]
        self._acc[-self.cfg.hop:] = 0.0
        return done

    def flush(self) -> np.ndarray:
        tail = self._acc[:self.cfg.window_len - self.cfg.hop].copy()
        self._acc[:] = 0.0
        return tail
