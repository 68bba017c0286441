"""Mono 16 kHz WAV reading and writing (16-bit PCM or 32-bit float)."""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 16000


class WavError(ValueError):
    pass


def wav_read(path, expected_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Return float64 samples; 16-bit PCM is scaled by 1/32768 into [-1, 1)."""
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise WavError(f"cannot read {path}: {exc}") from None
    if rate != expected_rate:
        raise WavError(f"{path}: unsupported sample rate {rate} Hz (expected {expected_rate})")
    if data.ndim != 1:
        raise WavError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.float32:
        return data.astype(np.float64)
    raise WavError(f"{path}: unsupported sample format {data.dtype}")


def wav_write(path, audio, fmt: str = "float32", rate: int = SAMPLE_RATE) -> None:
    a = np.asarray(audio, dtype=np.float64)
    if a.ndim != 1:
        raise WavError("only mono audio can be written")
    if fmt == "float32":
        data = a.astype(np.float32)
    elif fmt == "pcm16":
        data = np.clip(np.round(a * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise WavError(f"unknown WAV format {fmt!r} (use float32 or pcm16)")
    wavfile.write(path, rate, data)
