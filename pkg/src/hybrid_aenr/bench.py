"""Complexity accounting and wall-clock real-time factor."""

from __future__ import annotations

import platform
import statistics
import time

import numpy as np

from .model import macs_per_second, param_count
from .pipeline import Pipeline, PipelineConfig
from .scene import SceneSpec, generate, synthetic_speech

REFERENCE_PARAMS_M = 0.69
REFERENCE_GMACS = 0.10


def cpu_name() -> str:
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return platform.processor() or platform.machine() or "unknown"


def complexity(cfg: PipelineConfig) -> dict:
    params = param_count(cfg.model)
    gmacs = macs_per_second(cfg.model, cfg.stft.frame_rate) / 1e9
    return {
        "params": params,
        "params_m": params / 1e6,
        "gmacs": gmacs,
        "params_rel_dev": params / 1e6 / REFERENCE_PARAMS_M - 1.0,
        "gmacs_rel_dev": gmacs / REFERENCE_GMACS - 1.0,
    }


def run_bench(cfg: PipelineConfig = PipelineConfig(), seconds: float = 60.0, repeat: int = 1,
              seed: int = 0, streaming: bool = True) -> dict:
    """Process a synthetic double-talk stream and time it."""
    near = synthetic_speech(seed, seconds, voice=0)
    far = synthetic_speech(seed, seconds, voice=1)
    scene = generate(SceneSpec(scenario="dt", ser_db=0.0, snr_db=10.0, delay_ms=40.0, seed=seed), near, far)
    pipe = Pipeline(cfg)
    rtfs = []
    out = None
    for _ in range(max(1, repeat)):
        t0 = time.perf_counter()
        out = pipe.process_streaming(scene.x, scene.y) if streaming else pipe.process(scene.x, scene.y).output
        rtfs.append((time.perf_counter() - t0) / seconds)
    res = complexity(cfg)
    res.update(
        seconds=seconds, repeat=len(rtfs), rtfs=rtfs,
        rtf_median=statistics.median(rtfs),
        rtf_spread=(max(rtfs) - min(rtfs)) if len(rtfs) > 1 else 0.0,
        cpu=cpu_name(),
        output_finite=bool(np.all(np.isfinite(out))),
        output_rms=float(np.sqrt(np.mean(out ** 2))),
    )
    return res


def format_report(res: dict) -> str:
    lines = [
        f"params      {res['params']:>10d}  ({res['params_m']:.3f} M; reference {REFERENCE_PARAMS_M} M, "
        f"deviation {100 * res['params_rel_dev']:+.1f}%)",
        f"GMACS       {res['gmacs']:>10.4f}  (reference {REFERENCE_GMACS}, deviation {100 * res['gmacs_rel_dev']:+.1f}%)",
    ]
    if "rtf_median" in res:
        lines.append(f"RTF         {res['rtf_median']:>10.4f}  (median of {res['repeat']}, spread "
                     f"{res['rtf_spread']:.4f}, {res['seconds']:g} s stream)")
        lines.append(f"cpu         {res['cpu']}")
    return "\n".join(lines) + "\n"
