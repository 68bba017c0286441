"""Cross-attention time alignment in the latent space.

Shapes follow ``(channels, frames, features)``. Delay index ``d`` (0-based
here) is a lag of ``d`` frames, so column ``d`` of a distribution is the
1-based delay bin ``d + 1`` reported in CSV output.

    N   = pointwise_ne(ne)                      (H, T, P)
    F   = pointwise_fe(fe)                      (H, T, P)
    C   = sum_p N[h,t,p] * F[h,t-d,p]           (H, T, D)   zero for t-d < 0
    S   = causal 5x3 conv over (t, d), H -> 1   (T, D)
    D   = softmax_d(S)
    A   = sum_d D[t,d] * F[h,t-d,p]             (H, T, P)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class AlignmentError(ValueError):
    pass


@dataclass
class TaWeights:
    ne_weight: np.ndarray   # (H, L)
    ne_bias: np.ndarray     # (H,)
    fe_weight: np.ndarray   # (H, L)
    fe_bias: np.ndarray     # (H,)
    score_kernel: np.ndarray  # (H, kt, kd); kernel[:, i] looks back i frames
    score_bias: np.ndarray  # (1,)

    @property
    def in_channels(self) -> int:
        return self.ne_weight.shape[1]

    @property
    def similarity_channels(self) -> int:
        return self.ne_weight.shape[0]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {
            "ne_weight": self.ne_weight, "ne_bias": self.ne_bias,
            "fe_weight": self.fe_weight, "fe_bias": self.fe_bias,
            "score_kernel": self.score_kernel, "score_bias": self.score_bias,
        }

    @classmethod
    def random(cls, rng: np.random.Generator, in_channels=32, hidden=32, kernel=(5, 3), scale=None):
        s = scale if scale is not None else 1.0 / np.sqrt(in_channels)
        return cls(
            ne_weight=rng.uniform(-s, s, (hidden, in_channels)),
            ne_bias=rng.uniform(-s, s, hidden),
            fe_weight=rng.uniform(-s, s, (hidden, in_channels)),
            fe_bias=rng.uniform(-s, s, hidden),
            score_kernel=rng.uniform(-s, s, (hidden,) + tuple(kernel)),
            score_bias=rng.uniform(-s, s, 1),
        )


def identity_ta_weights(in_channels=32, hidden=32, kernel=(5, 3)) -> TaWeights:
    """Pointwise layers copy the first channels; the score averages C over H at the current frame."""
    k = np.zeros((hidden,) + tuple(kernel))
    k[:, 0, kernel[1] // 2] = 1.0 / hidden
    return TaWeights(
        ne_weight=np.eye(hidden, in_channels), ne_bias=np.zeros(hidden),
        fe_weight=np.eye(hidden, in_channels), fe_bias=np.zeros(hidden),
        score_kernel=k, score_bias=np.zeros(1),
    )


def softmax(x, axis=-1):
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def _pointwise(w, b, x):
    return np.einsum("hl,ltp->htp", w, x) + b[:, None, None]


def _correlate(N, F, d_max):
    H, T, _ = N.shape
    C = np.zeros((H, T, d_max))
    for d in range(min(d_max, T)):
        C[:, d:, d] = np.sum(N[:, d:] * F[:, :T - d], axis=-1)
    return C


def _pad_scores(C, kernel_shape):
    kt, kd = kernel_shape
    return np.pad(C, ((0, 0), (kt - 1, 0), (kd // 2, kd - 1 - kd // 2)))


def _score(C, kernel, bias):
    H, T, D = C.shape
    kt, kd = kernel.shape[1:]
    Cp = _pad_scores(C, (kt, kd))
    S = np.full((T, D), bias[0], dtype=np.float64)
    for i in range(kt):
        for j in range(kd):
            S += np.einsum("h,htd->td", kernel[:, i, j], Cp[:, kt - 1 - i:kt - 1 - i + T, j:j + D])
    return S


def _check_inputs(ne, fe, w: TaWeights, d_max):
    if d_max < 1:
        raise AlignmentError(f"d_max must be >= 1, got {d_max}")
    if ne.shape != fe.shape or ne.ndim != 3:
        raise AlignmentError(f"near-end {ne.shape} and far-end {fe.shape} must share an (L, T, P) shape")
    if ne.shape[0] != w.in_channels:
        raise AlignmentError(f"inputs have {ne.shape[0]} channels, weights expect {w.in_channels}")


def ta_forward(ne, fe, w: TaWeights, d_max: int = 64, return_cache: bool = False):
    """Returns ``(aligned (H,T,P), dist (T,d_max))`` [, cache]."""
    ne = np.asarray(ne, dtype=np.float64)
    fe = np.asarray(fe, dtype=np.float64)
    _check_inputs(ne, fe, w, d_max)
    N = _pointwise(w.ne_weight, w.ne_bias, ne)
    F = _pointwise(w.fe_weight, w.fe_bias, fe)
    C = _correlate(N, F, d_max)
    S = _score(C, w.score_kernel, w.score_bias)
    dist = softmax(S, axis=1)
    T = ne.shape[1]
    aligned = np.zeros_like(F)
    for d in range(min(d_max, T)):
        aligned[:, d:] += dist[d:, d][None, :, None] * F[:, :T - d]
    if return_cache:
        cache = dict(ne=ne, fe=fe, N=N, F=F, C=C, dist=dist, d_max=d_max)
        return aligned, dist, cache
    return aligned, dist


def ta_backward(cache, w: TaWeights, grad_aligned, grad_dist):
    """Gradients of a scalar loss given upstream gradients of both outputs.

    Returns ``(grad_ne, grad_fe, grad_weights)`` where ``grad_weights`` is a
    :class:`TaWeights` holding parameter gradients.
    """
    if cache is None:
        raise AlignmentError("ta_backward needs the cache from ta_forward(..., return_cache=True)")
    ne, fe, N, F, C, dist, D = (cache[k] for k in ("ne", "fe", "N", "F", "C", "dist", "d_max"))
    H, T, P = F.shape
    gA = np.asarray(grad_aligned, dtype=np.float64)
    gD = np.array(grad_dist, dtype=np.float64)
    if gA.shape != F.shape or gD.shape != dist.shape:
        raise AlignmentError("upstream gradient shapes do not match the forward outputs")

    gF = np.zeros_like(F)
    gN = np.zeros_like(N)
    for d in range(min(D, T)):
        gD[d:, d] += np.einsum("htp,htp->t", gA[:, d:], F[:, :T - d])
        gF[:, :T - d] += dist[d:, d][None, :, None] * gA[:, d:]

    gS = dist * (gD - np.sum(dist * gD, axis=1, keepdims=True))

    kernel = w.score_kernel
    kt, kd = kernel.shape[1:]
    Cp = _pad_scores(C, (kt, kd))
    gCp = np.zeros_like(Cp)
    gk = np.zeros_like(kernel)
    for i in range(kt):
        for j in range(kd):
            ts = slice(kt - 1 - i, kt - 1 - i + T)
            gk[:, i, j] = np.einsum("td,htd->h", gS, Cp[:, ts, j:j + D])
            gCp[:, ts, j:j + D] += kernel[:, i, j][:, None, None] * gS[None]
    gC = gCp[:, kt - 1:, kd // 2:kd // 2 + D]
    gb = np.array([gS.sum()])

    for d in range(min(D, T)):
        gN[:, d:] += gC[:, d:, d][..., None] * F[:, :T - d]
        gF[:, :T - d] += gC[:, d:, d][..., None] * N[:, d:]

    grads = TaWeights(
        ne_weight=np.einsum("htp,ltp->hl", gN, ne), ne_bias=gN.sum(axis=(1, 2)),
        fe_weight=np.einsum("htp,ltp->hl", gF, fe), fe_bias=gF.sum(axis=(1, 2)),
        score_kernel=gk, score_bias=gb,
    )
    g_ne = np.einsum("hl,htp->ltp", w.ne_weight, gN)
    g_fe = np.einsum("hl,htp->ltp", w.fe_weight, gF)
    return g_ne, g_fe, grads


class StreamingTimeAlign:
    """Frame-by-frame alignment holding the far-end delay buffer.

    Keeps the last ``d_max`` projected far-end frames and the last ``kt - 1``
    similarity maps needed by the causal score convolution.
    """

    def __init__(self, w: TaWeights, d_max: int = 64, feature_len: int | None = None):
        if d_max < 1:
            raise AlignmentError(f"d_max must be >= 1, got {d_max}")
        self.w = w
        self.d_max = d_max
        self.feature_len = feature_len
        self.reset()

    def reset(self):
        H = self.w.similarity_channels
        kt, kd = self.w.score_kernel.shape[1:]
        self._fe_buf = None if self.feature_len is None else np.zeros((self.d_max, H, self.feature_len))
        self._c_hist = np.zeros((kt, H, self.d_max + kd - 1))

    def snapshot(self):
        return (None if self._fe_buf is None else self._fe_buf.copy(), self._c_hist.copy())

    def restore(self, snap):
        fe_buf, c_hist = snap
        self._fe_buf = None if fe_buf is None else fe_buf.copy()
        self._c_hist = c_hist.copy()

    def step(self, ne_frame, fe_frame):
        """``(L, P)`` inputs -> ``(aligned (H, P), dist (d_max,))``."""
        w = self.w
        N = w.ne_weight @ ne_frame + w.ne_bias[:, None]
        F = w.fe_weight @ fe_frame + w.fe_bias[:, None]
        if self._fe_buf is None:
            self._fe_buf = np.zeros((self.d_max,) + F.shape)
        buf = self._fe_buf
        buf[1:] = buf[:-1]
        buf[0] = F

        kt, kd = w.score_kernel.shape[1:]
        lo = kd // 2
        hist = self._c_hist
        hist[1:] = hist[:-1]
        hist[0] = 0.0
        hist[0, :, lo:lo + self.d_max] = np.einsum("hp,dhp->hd", N, buf)

        score = np.full(self.d_max, w.score_bias[0], dtype=np.float64)
        for i in range(kt):
            for j in range(kd):
                score += w.score_kernel[:, i, j] @ hist[i, :, j:j + self.d_max]
        dist = softmax(score)
        aligned = np.einsum("d,dhp->hp", dist, buf)
        return aligned, dist
