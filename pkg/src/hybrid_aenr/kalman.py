"""Partitioned-block frequency-domain Kalman filter for linear echo cancellation.

Runs on the STFT hop clock: every call consumes one hop of microphone and
far-end samples, and the filter works on rectangular overlap-save frames
of ``2*hop`` samples. With the default 256-sample hop that is the shared
512-point transform with 257 bins per partition.

Diagonalized recursion per bin and partition::

    P+   = A^2 P + (1 - A^2) |W|^2 + q_floor
    E    = F[0, x - last_hop(F^-1 sum_p W_p X_p)]
    phi  = lam phi + (1 - lam) |E|^2
    mu_p = P+_p / (r sum_q P+_q |X_q|^2 + phi)
    W_p += r mu_p X_p^* E          (then gradient-constrained)
    P    = P+ (1 - r mu |X|^2)

with ``r = hop / (2*hop)``. The state mean is carried forward without
scaling by ``A``; ``A`` only enters the covariance recursion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .stft import StftConfig


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class KalmanConfig:
    num_partitions: int = 10
    transition_factor: float = 0.8
    process_noise_floor: float = 1e-2
    observation_noise_smoothing: float = 0.5
    initial_covariance: float = 1e-2
    block_size: int = 256

    def __post_init__(self):
        if self.num_partitions < 1:
            raise ConfigurationError("num_partitions must be >= 1")
        if not 0.0 < self.transition_factor <= 1.0:
            raise ConfigurationError("transition_factor must lie in (0, 1]")
        if self.process_noise_floor < 0:
            raise ConfigurationError("process_noise_floor must be >= 0")
        if not 0.0 <= self.observation_noise_smoothing < 1.0:
            raise ConfigurationError("observation_noise_smoothing must lie in [0, 1)")
        if self.initial_covariance <= 0:
            raise ConfigurationError("initial_covariance must be > 0")
        if self.block_size < 1:
            raise ConfigurationError("block_size must be >= 1")

    @property
    def num_bins(self) -> int:
        return self.block_size + 1

    @classmethod
    def for_stft(cls, stft_cfg: StftConfig, **kw) -> "KalmanConfig":
        return cls(block_size=stft_cfg.hop, **kw)


@dataclass
class KalmanState:
    cfg: KalmanConfig
    weights: np.ndarray
    state_covariance: np.ndarray
    far_end_history: np.ndarray
    noise_psd_estimate: np.ndarray
    far_end_buffer: np.ndarray = field(repr=False)
    blocks_processed: int = 0


def kf_init(cfg: KalmanConfig = KalmanConfig()) -> KalmanState:
    shape = (cfg.num_partitions, cfg.num_bins)
    return KalmanState(
        cfg=cfg,
        weights=np.zeros(shape, dtype=np.complex128),
        state_covariance=np.full(shape, cfg.initial_covariance),
        far_end_history=np.zeros(shape, dtype=np.complex128),
        noise_psd_estimate=np.zeros(cfg.num_bins),
        far_end_buffer=np.zeros(2 * cfg.block_size),
    )


def kf_process_frame(state: KalmanState, x_block, y_block):
    """Advance the filter by one hop; returns ``(e_hat, z)`` for that hop.

    ``state`` is updated in place.
    """
    cfg = state.cfg
    R = cfg.block_size
    x_block = np.asarray(x_block, dtype=np.float64)
    y_block = np.asarray(y_block, dtype=np.float64)
    if x_block.shape != (R,) or y_block.shape != (R,):
        raise ConfigurationError(
            f"expected blocks of {R} samples, got mic {x_block.shape} and far-end {y_block.shape}")
    if state.weights.shape != (cfg.num_partitions, cfg.num_bins):
        raise ConfigurationError(f"state weights {state.weights.shape} do not match config")

    buf = state.far_end_buffer
    buf[:R] = buf[R:]
    buf[R:] = y_block
    hist = state.far_end_history
    hist[1:] = hist[:-1]
    hist[0] = np.fft.rfft(buf)

    A2 = cfg.transition_factor ** 2
    W = state.weights
    P = A2 * state.state_covariance + (1.0 - A2) * (W.real ** 2 + W.imag ** 2) + cfg.process_noise_floor

    e_hat = np.fft.irfft(np.sum(W * hist, axis=0), n=2 * R)[R:]
    z = x_block - e_hat

    E = np.fft.rfft(np.concatenate([np.zeros(R), z]))
    lam = cfg.observation_noise_smoothing
    state.noise_psd_estimate = lam * state.noise_psd_estimate + (1.0 - lam) * (E.real ** 2 + E.imag ** 2)

    r = 0.5
    X2 = hist.real ** 2 + hist.imag ** 2
    denom = r * np.sum(P * X2, axis=0) + state.noise_psd_estimate + 1e-12
    mu = P / denom
    W = W + r * mu * np.conj(hist) * E
    w = np.fft.irfft(W, n=2 * R, axis=1)
    w[:, R:] = 0.0
    state.weights = np.fft.rfft(w, axis=1)
    state.state_covariance = P * (1.0 - r * mu * X2)
    state.blocks_processed += 1
    return e_hat, z


def kf_process(x, y, cfg: KalmanConfig = KalmanConfig()):
    """Run the filter over whole signals. Returns ``(e_hat, z)`` trimmed to ``len(x)``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y):
        raise ConfigurationError(f"mic and far-end lengths differ: {len(x)} vs {len(y)}")
    R = cfg.block_size
    n_blocks = -(-len(x) // R)
    pad = n_blocks * R - len(x)
    xp = np.concatenate([x, np.zeros(pad)])
    yp = np.concatenate([y, np.zeros(pad)])
    state = kf_init(cfg)
    e_hat = np.zeros(len(xp))
    z = np.zeros(len(xp))
    for b in range(n_blocks):
        sl = slice(b * R, (b + 1) * R)
        e_hat[sl], z[sl] = kf_process_frame(state, xp[sl], yp[sl])
    return e_hat[:len(x)], z[:len(x)]


def erle_trace(mic_echo, residual, window: float, sample_rate: int = 16000) -> np.ndarray:
    """ERLE in dB over consecutive non-overlapping windows of ``window`` seconds."""
    d = np.asarray(mic_echo, dtype=np.float64)
    e = np.asarray(residual, dtype=np.float64)
    if len(d) == 0 or len(e) == 0:
        raise ValueError("erle_trace needs non-empty signals")
    if len(d) != len(e):
        raise ValueError(f"length mismatch: {len(d)} vs {len(e)}")
    n = min(len(d), max(1, int(round(window * sample_rate))))
    out = []
    for start in range(0, len(d) - n + 1, n):
        p_d = np.sum(d[start:start + n] ** 2)
        p_e = max(np.sum(e[start:start + n] ** 2), 1e-12 * p_d, np.finfo(float).tiny)
        out.append(10.0 * np.log10(max(p_d, np.finfo(float).tiny) / p_e))
    return np.asarray(out)
