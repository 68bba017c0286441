"""Delay-distribution probe: encoder streams plus alignment block on a mic/far-end pair."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .features import compress
from .model import Model, identity_weights
from .pipeline import PipelineConfig
from .stft import analyze

# a peak is stable when this fraction of ~1 s segments (after d_max warm-up
# frames) put their own averaged argmax within one bin of the global peak
STABLE_AGREEMENT = 0.5
SEGMENT_SECONDS = 1.0


class ProbeError(ValueError):
    pass


@dataclass
class DelayProbe:
    dist: np.ndarray          # (T, d_max), column d is a lag of d frames
    frame_ms: float

    @property
    def mean(self) -> np.ndarray:
        return self.dist.mean(axis=0)

    @property
    def peak_index(self) -> int:
        """1-based delay bin of the time-averaged peak (bin 1 = zero lag)."""
        return int(np.argmax(self.mean)) + 1

    @property
    def peak_lag_ms(self) -> float:
        return (self.peak_index - 1) * self.frame_ms

    def segment_agreement(self) -> float | None:
        D = self.dist.shape[1]
        body = self.dist[D:]
        seg = max(1, int(round(SEGMENT_SECONDS * 1000.0 / self.frame_ms)))
        n_seg = len(body) // seg
        if n_seg < 2:
            return None
        k = self.peak_index - 1
        hits = [abs(int(np.argmax(chunk.mean(axis=0))) - k) <= 1 for chunk in np.array_split(body, n_seg)]
        return float(np.mean(hits))

    @property
    def in_span(self) -> bool:
        agree = self.segment_agreement()
        return agree is not None and agree >= STABLE_AGREEMENT

    def to_csv(self) -> str:
        D = self.dist.shape[1]
        buf = io.StringIO()
        agree = self.segment_agreement()
        status = "too short" if agree is None else ("in_span" if agree >= STABLE_AGREEMENT else "out of span")
        buf.write(f"# lag_offset=1,frame_ms={self.frame_ms:g},span_ms={D * self.frame_ms:g},"
                  f"peak_index={self.peak_index},peak_lag_ms={self.peak_lag_ms:g},status={status}\n")
        buf.write("frame," + ",".join(f"d{i}" for i in range(1, D + 1)) + "\n")
        for t, row in enumerate(self.dist):
            buf.write(f"{t}," + ",".join(f"{v:.6g}" for v in row) + "\n")
        return buf.getvalue()


def probe_delay(far_end, near_mix, cfg: PipelineConfig = PipelineConfig(), model: Model | None = None) -> DelayProbe:
    """Delay distribution of ``near_mix`` (NE stream) against ``far_end`` (FE stream).

    Without a model, the encoder streams and alignment block are identity-configured.
    """
    y = np.asarray(far_end, dtype=np.float64)
    x = np.asarray(near_mix, dtype=np.float64)
    n = min(len(x), len(y))
    if n < cfg.stft.window_len:
        raise ProbeError(f"signals need at least {cfg.stft.window_len} samples")
    if model is None:
        model = Model(cfg.model, identity_weights(cfg.model, cfg.seed))
    a = cfg.model.alpha
    X = analyze(x[:n], cfg.stft)
    Y = analyze(y[:n], cfg.stft)
    dist = model.delay_distribution(compress(X, a)[0], compress(Y, a)[0])
    return DelayProbe(dist, 1000.0 * cfg.stft.hop / cfg.stft.sample_rate)
