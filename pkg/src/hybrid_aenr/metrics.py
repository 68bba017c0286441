"""Objective metrics: SI-SDR, ERLE and per-segment reports."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import welch

SI_SDR_CAP_DB = 100.0


class MetricError(ValueError):
    pass


def _pair(reference, estimate):
    s = np.asarray(reference, dtype=np.float64)
    e = np.asarray(estimate, dtype=np.float64)
    if s.shape != e.shape:
        raise MetricError(f"length mismatch: {s.shape} vs {e.shape}")
    return s, e


def si_sdr(reference, estimate) -> float:
    """Scale-invariant SDR in dB, capped at +100 dB."""
    s, e = _pair(reference, estimate)
    ref_energy = np.dot(s, s)
    if ref_energy == 0:
        raise MetricError("SI-SDR is undefined for an all-zero reference")
    target = np.dot(e, s) / ref_energy * s
    resid = e - target
    t_pow = np.dot(target, target)
    r_pow = np.dot(resid, resid)
    if r_pow <= t_pow * 10.0 ** (-SI_SDR_CAP_DB / 10.0):
        return SI_SDR_CAP_DB
    return float(10.0 * np.log10(t_pow / r_pow))


def erle(mic, processed, fst_mask) -> float:
    """10*log10(P_mic / P_processed) over samples flagged as far-end single talk.

    ``fst_mask`` is a boolean array or an array of segment labels where
    ``"fst"`` marks far-end single talk.
    """
    d, y = _pair(mic, processed)
    mask = np.asarray(fst_mask)
    if mask.dtype != bool:
        mask = np.char.lower(mask.astype(str)) == "fst"
    if mask.shape != d.shape:
        raise MetricError("segment mask must match the signal length")
    if not mask.any():
        raise MetricError("ERLE is undefined without far-end single-talk segments")
    p_d = np.sum(d[mask] ** 2)
    p_y = max(np.sum(y[mask] ** 2), 1e-12 * p_d, np.finfo(float).tiny)
    return float(10.0 * np.log10(max(p_d, np.finfo(float).tiny) / p_y))


def band_energy_ratio_db(signal, above_hz: float, sample_rate: int = 16000) -> float:
    """Welch-PSD energy above ``above_hz`` relative to total, in dB."""
    f, p = welch(np.asarray(signal, dtype=np.float64), sample_rate, nperseg=1024)
    return float(10.0 * np.log10(max(p[f > above_hz].sum(), 1e-300) / p.sum()))


@dataclass
class MetricReport:
    si_sdr_db: float | None = None
    erle_db: float | None = None
    segments: list = field(default_factory=list)
    capped: bool = False

    def rows(self):
        rows = []
        if self.si_sdr_db is not None:
            rows.append(("si_sdr_db", "all", self.si_sdr_db))
        if self.erle_db is not None:
            rows.append(("erle_db", "fst", self.erle_db))
        rows.extend((name, label, val) for label, name, val in self.segments)
        return rows

    def to_text(self) -> str:
        lines = [f"{'metric':<12}{'segment':<10}{'value':>10}"]
        for name, label, val in self.rows():
            lines.append(f"{name:<12}{label:<10}{val:>10.2f}")
        if self.capped:
            lines.append("(si_sdr capped at +100 dB)")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        return "metric,segment,value\n" + "".join(f"{n},{l},{v:.6f}\n" for n, l, v in self.rows())


def evaluate(processed, mic=None, near_ref=None, labels=None) -> MetricReport:
    """SI-SDR against the near-end reference and ERLE on FST segments, where available."""
    rep = MetricReport()
    processed = np.asarray(processed, dtype=np.float64)
    if near_ref is not None and np.any(near_ref):
        rep.si_sdr_db = si_sdr(near_ref, processed)
        rep.capped = rep.si_sdr_db >= SI_SDR_CAP_DB
    if mic is not None and labels is not None:
        labels = np.asarray(labels)
        if np.any(labels == "fst"):
            rep.erle_db = erle(mic, processed, labels)
        if near_ref is not None:
            for lab in ("nst", "dt"):
                m = labels == lab
                if m.sum() > 0 and np.any(np.asarray(near_ref)[m]):
                    rep.segments.append((lab, "si_sdr_db", si_sdr(np.asarray(near_ref)[m], processed[m])))
    return rep
