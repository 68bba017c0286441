"""Power-law compression and channel-wise feature reorientation.

A reorientation splits a (zero-padded) magnitude spectrum into ``B``
subbands of ``K_B`` bins and distributes them over ``gamma`` channels:

* ``"c-samfr"`` (sampled): subband ``b`` goes to channel ``b % gamma`` at
  slot ``b // gamma``, so every channel spans the whole spectrum.
* ``"c-subfr"`` (subband): subband ``b`` goes to channel ``b // (B/gamma)``
  at slot ``b % (B/gamma)``, so each channel holds one contiguous region.

Reoriented data has shape ``(gamma, P)`` for one frame or
``(gamma, T, P)`` for a frame sequence, with ``P = (B/gamma) * K_B``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

SAMPLED = "c-samfr"
SUBBAND = "c-subfr"
_MODE_ALIASES = {
    "c-samfr": SAMPLED, "samfr": SAMPLED, "sampled": SAMPLED,
    "c-subfr": SUBBAND, "subfr": SUBBAND, "subband": SUBBAND,
}


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class ReorientLayout:
    num_bins: int = 257
    bins_per_subband: int = 2
    overlap: float = 0.0
    sampling_factor: int = 5
    mode: str = SAMPLED

    def __post_init__(self):
        mode = _MODE_ALIASES.get(str(self.mode).lower())
        if mode is None:
            raise LayoutError(f"unknown reorientation mode {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        if self.bins_per_subband < 1 or self.sampling_factor < 1:
            raise LayoutError("bins_per_subband and sampling_factor must be >= 1")
        if not 0.0 <= self.overlap < 1.0:
            raise LayoutError(f"overlap must lie in [0, 1), got {self.overlap}")
        if self.num_bins < 1:
            raise LayoutError("num_bins must be >= 1")

    @property
    def step(self) -> int:
        return max(1, int(round(self.bins_per_subband * (1.0 - self.overlap))))

    @property
    def num_subbands(self) -> int:
        kb, g = self.bins_per_subband, self.sampling_factor
        needed = 1 + max(0, math.ceil((self.num_bins - kb) / self.step))
        return g * math.ceil(needed / g)

    @property
    def padded_len(self) -> int:
        return (self.num_subbands - 1) * self.step + self.bins_per_subband

    @property
    def subbands_per_channel(self) -> int:
        return self.num_subbands // self.sampling_factor

    @property
    def features_per_channel(self) -> int:
        return self.subbands_per_channel * self.bins_per_subband

    @property
    def shape(self) -> tuple[int, int]:
        return self.sampling_factor, self.features_per_channel

    def placement(self, b: int) -> tuple[int, int]:
        """(channel, slot) of subband ``b``."""
        if self.mode == SAMPLED:
            return b % self.sampling_factor, b // self.sampling_factor
        return b // self.subbands_per_channel, b % self.subbands_per_channel

    @cached_property
    def gather_index(self) -> np.ndarray:
        """``(gamma, P)`` array of padded-input indices feeding each output cell."""
        kb = self.bins_per_subband
        idx = np.empty(self.shape, dtype=np.intp)
        for b in range(self.num_subbands):
            c, slot = self.placement(b)
            idx[c, slot * kb:(slot + 1) * kb] = b * self.step + np.arange(kb)
        idx.setflags(write=False)
        return idx

    @property
    def permutation(self) -> np.ndarray:
        return self.gather_index.reshape(-1)

    @property
    def is_bijection(self) -> bool:
        perm = self.permutation
        return len(perm) == self.padded_len and np.array_equal(np.sort(perm), np.arange(self.padded_len))

    @cached_property
    def _multiplicity(self) -> np.ndarray:
        return np.bincount(self.permutation, minlength=self.padded_len).astype(np.float64)


def compress(spectrum, alpha: float = 0.3):
    """Return ``(|X|**alpha, angle(X))``."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    spec = np.asarray(spectrum)
    return np.abs(spec) ** alpha, np.angle(spec)


def decompress(magnitude, phase, alpha: float = 0.3) -> np.ndarray:
    return np.asarray(magnitude) ** (1.0 / alpha) * np.exp(1j * np.asarray(phase))


def pad_spectrum(mag, layout: ReorientLayout) -> np.ndarray:
    mag = np.asarray(mag)
    k = mag.shape[-1]
    if k > layout.padded_len:
        raise LayoutError(f"input has {k} bins but the layout holds only {layout.padded_len}")
    pad = [(0, 0)] * (mag.ndim - 1) + [(0, layout.padded_len - k)]
    return np.pad(mag, pad)


def reorient_forward(mag, layout: ReorientLayout = ReorientLayout()) -> np.ndarray:
    """``(K,) -> (gamma, P)`` or ``(T, K) -> (gamma, T, P)``; padding bins sit above the spectrum."""
    padded = pad_spectrum(mag, layout)
    out = padded[..., layout.gather_index]
    if out.ndim == 3:
        out = np.moveaxis(out, 0, 1)
    return out


def _check_shape(feat: np.ndarray, layout: ReorientLayout) -> None:
    g, p = layout.shape
    if feat.ndim not in (2, 3) or feat.shape[0] != g or feat.shape[-1] != p:
        raise LayoutError(f"features of shape {feat.shape} do not match layout ({g}, [T,] {p})")


def _scatter_add(feat: np.ndarray, layout: ReorientLayout) -> np.ndarray:
    flat = np.moveaxis(feat, 0, -2) if feat.ndim == 3 else feat
    lead = flat.shape[:-2]
    out = np.zeros(lead + (layout.padded_len,), dtype=feat.dtype)
    vals = flat.reshape(lead + (-1,))
    if layout.is_bijection:
        out[..., layout.permutation] = vals
    else:
        for j, i in enumerate(layout.permutation):
            out[..., i] += vals[..., j]
    return out


def reorient_inverse(feat, layout: ReorientLayout = ReorientLayout()) -> np.ndarray:
    """Exact inverse of :func:`reorient_forward` (overlapping copies are averaged)."""
    feat = np.asarray(feat)
    _check_shape(feat, layout)
    out = _scatter_add(feat, layout)
    if not layout.is_bijection:
        out = out / layout._multiplicity
    return out


def reorient_backward(grad_out, layout: ReorientLayout = ReorientLayout()) -> np.ndarray:
    """Adjoint of :func:`reorient_forward` w.r.t. the padded input."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    _check_shape(grad_out, layout)
    return _scatter_add(grad_out, layout)


def zero_channel_report(feat) -> np.ndarray:
    """Boolean per channel: True iff the channel is zero in every frame."""
    feat = np.asarray(feat)
    return ~np.any(feat.reshape(feat.shape[0], -1) != 0, axis=1)


def permutation_table_csv(layout: ReorientLayout) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["subband", "channel", "position", "first_bin", "last_bin"])
    for b in range(layout.num_subbands):
        c, slot = layout.placement(b)
        first = b * layout.step
        w.writerow([b, c, slot, first, first + layout.bins_per_subband - 1])
    return buf.getvalue()
