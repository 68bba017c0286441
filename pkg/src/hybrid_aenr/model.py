"""Post-filter network: two encoder streams, latent time alignment, joint
convolutions, frequency GRU, subband GRUs, FC stage and a convolutional
complex-mask head.

Everything runs frame by frame in float64, so the offline and streaming
paths execute identical arithmetic. Per-frame tensors are ``(channels,
frequency)``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .features import ReorientLayout, reorient_forward
from .time_align import StreamingTimeAlign, TaWeights, identity_ta_weights
from .weights import WeightStore


class ModelError(ValueError):
    pass


ROUTINGS = {
    "z,y": (("z",), ("y",)),
    "z+e,y": (("z", "e"), ("y",)),
    "z,y+e": (("z",), ("y", "e")),
}


@dataclass(frozen=True)
class ModelConfig:
    layout: ReorientLayout = field(default_factory=ReorientLayout)
    alpha: float = 0.3
    stream_filters: int = 32
    stream_kernels: tuple = (5, 3)
    pool: int = 2
    use_alignment: bool = True
    ta_hidden: int = 32
    ta_kernel: tuple = (5, 3)
    d_max: int = 64
    joint_filters: tuple = (64, 96)
    joint_kernel: int = 3
    joint_stride: int = 2
    fgru_hidden: int = 64
    subband_groups: int = 2
    subband_hidden: int = 128
    fc_units: int | None = None
    head_filters: int = 32
    head_kernel: int = 3
    routing: str = "z,y"

    def __post_init__(self):
        if self.routing not in ROUTINGS:
            raise ModelError(f"unknown input routing {self.routing!r}; choose from {sorted(ROUTINGS)}")
        if self.use_alignment and self.ta_hidden != self.stream_filters:
            raise ModelError("ta_hidden must equal stream_filters so aligned and near-end features concatenate")
        if self.d_max < 1:
            raise ModelError("d_max must be >= 1")

    @property
    def num_bins(self) -> int:
        return self.layout.num_bins

    @property
    def mask_units(self) -> int:
        return self.fc_units or self.num_bins

    @property
    def ne_inputs(self):
        return ROUTINGS[self.routing][0]

    @property
    def fe_inputs(self):
        return ROUTINGS[self.routing][1]


@dataclass
class Layer:
    path: str
    kind: str
    in_shape: tuple
    out_shape: tuple
    params: dict
    macs: int


def _conv_out(n, k, stride):
    return (n + 2 * (k // 2) - k) // stride + 1


def layer_plan(cfg: ModelConfig) -> list[Layer]:
    """Static per-frame graph: shapes, parameter tensors and MAC counts."""
    g, P = cfg.layout.shape
    L = cfg.stream_filters
    plan = []

    def stream(prefix, n_inputs):
        c_in = g * n_inputs
        width = P
        for i, k in enumerate(cfg.stream_kernels, 1):
            plan.append(Layer(f"{prefix}.dw{i}", "depthwise", (c_in, width), (c_in, width),
                              {f"{prefix}.dw{i}.weight": (c_in, k), f"{prefix}.dw{i}.bias": (c_in,)},
                              c_in * k * width))
            plan.append(Layer(f"{prefix}.pw{i}", "pointwise", (c_in, width), (L, width),
                              {f"{prefix}.pw{i}.weight": (L, c_in), f"{prefix}.pw{i}.bias": (L,)},
                              L * c_in * width))
            c_in = L
        plan.append(Layer(f"{prefix}.pool", "maxpool", (L, width), (L, width // cfg.pool), {}, 0))

    stream("ne", len(cfg.ne_inputs))
    stream("fe", len(cfg.fe_inputs))
    P2 = P // cfg.pool
    H = cfg.ta_hidden
    D = cfg.d_max
    if cfg.use_alignment:
        kt, kd = cfg.ta_kernel
        plan.append(Layer("ta.ne_pointwise", "pointwise", (L, P2), (H, P2),
                          {"ta.ne_pointwise.weight": (H, L), "ta.ne_pointwise.bias": (H,)}, H * L * P2))
        plan.append(Layer("ta.fe_pointwise", "pointwise", (L, P2), (H, P2),
                          {"ta.fe_pointwise.weight": (H, L), "ta.fe_pointwise.bias": (H,)}, H * L * P2))
        plan.append(Layer("ta.similarity", "dot", (H, P2), (H, D), {}, H * D * P2))
        plan.append(Layer("ta.score", "conv2d", (H, D), (D,),
                          {"ta.score.weight": (H, kt, kd), "ta.score.bias": (1,)}, H * kt * kd * D))
        plan.append(Layer("ta.aggregate", "weighted_sum", (H, D), (H, P2), {}, H * D * P2))
        fe_out = H
    else:
        fe_out = L

    c, width = L + fe_out, P2
    for i, f in enumerate(cfg.joint_filters, 1):
        w_out = _conv_out(width, cfg.joint_kernel, cfg.joint_stride)
        plan.append(Layer(f"joint.conv{i}", "conv", (c, width), (f, w_out),
                          {f"joint.conv{i}.weight": (f, c, cfg.joint_kernel), f"joint.conv{i}.bias": (f,)},
                          f * c * cfg.joint_kernel * w_out))
        c, width = f, w_out

    def gru(path, n_in, n_hidden, steps):
        return Layer(path, "gru", (steps, n_in), (steps, n_hidden),
                     {f"{path}.weight_ih": (3 * n_hidden, n_in), f"{path}.weight_hh": (3 * n_hidden, n_hidden),
                      f"{path}.bias_ih": (3 * n_hidden,), f"{path}.bias_hh": (3 * n_hidden,)},
                     steps * 3 * n_hidden * (n_in + n_hidden))

    Hf = cfg.fgru_hidden
    plan.append(gru("fgru", c, Hf, width))
    groups = np.array_split(np.arange(width), cfg.subband_groups)
    for i, grp in enumerate(groups):
        plan.append(gru(f"sgru{i}", len(grp) * Hf, cfg.subband_hidden, 1))
    n = cfg.subband_groups * cfg.subband_hidden
    U = cfg.mask_units
    plan.append(Layer("fc1", "dense", (n,), (U,), {"fc1.weight": (U, n), "fc1.bias": (U,)}, U * n))
    plan.append(Layer("fc2", "dense", (U,), (cfg.num_bins,),
                      {"fc2.weight": (cfg.num_bins, U), "fc2.bias": (cfg.num_bins,)}, cfg.num_bins * U))
    K, Fh, kh = cfg.num_bins, cfg.head_filters, cfg.head_kernel
    plan.append(Layer("head.conv1", "conv", (2, K), (Fh, K),
                      {"head.conv1.weight": (Fh, 2, kh), "head.conv1.bias": (Fh,)}, Fh * 2 * kh * K))
    plan.append(Layer("head.conv2", "conv", (Fh, K), (Fh, K),
                      {"head.conv2.weight": (Fh, Fh, kh), "head.conv2.bias": (Fh,)}, Fh * Fh * kh * K))
    plan.append(Layer("head.out", "conv", (Fh, K), (3, K),
                      {"head.out.weight": (3, Fh, 1), "head.out.bias": (3,)}, 3 * Fh * K))
    return plan


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    out = {}
    for layer in layer_plan(cfg):
        out.update(layer.params)
    return out


def param_count(cfg: ModelConfig = ModelConfig()) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def macs_per_frame(cfg: ModelConfig = ModelConfig()) -> int:
    return sum(layer.macs for layer in layer_plan(cfg))


def macs_per_second(cfg: ModelConfig = ModelConfig(), frame_rate: float = 62.5) -> float:
    return macs_per_frame(cfg) * frame_rate


def random_weights(cfg: ModelConfig, seed: int = 0) -> WeightStore:
    """Uniform(+-1/sqrt(fan_in)) init, rounded to float32 so it survives a save/load."""
    rng = np.random.default_rng(np.uint64(seed))
    store = WeightStore()
    for path, shape in param_shapes(cfg).items():
        if path.endswith("bias") or path.endswith(("bias_ih", "bias_hh")):
            fan_in = max(1, shape[0])
        else:
            fan_in = int(np.prod(shape[1:]))
        bound = 1.0 / np.sqrt(fan_in)
        store[path] = rng.uniform(-bound, bound, shape)
    return store


def identity_weights(cfg: ModelConfig, seed: int = 0) -> WeightStore:
    """Encoder streams pass features through and the alignment block is identity-configured.

    Layers after the alignment block keep seeded random values.
    """
    store = random_weights(cfg, seed)
    shapes = param_shapes(cfg)
    for prefix in ("ne", "fe"):
        for i, k in enumerate(cfg.stream_kernels, 1):
            c_in = shapes[f"{prefix}.dw{i}.weight"][0]
            dw = np.zeros((c_in, k))
            dw[:, k // 2] = 1.0
            store[f"{prefix}.dw{i}.weight"] = dw
            store[f"{prefix}.dw{i}.bias"] = np.zeros(c_in)
            L, c = shapes[f"{prefix}.pw{i}.weight"]
            store[f"{prefix}.pw{i}.weight"] = np.eye(L, c)
            store[f"{prefix}.pw{i}.bias"] = np.zeros(L)
    if cfg.use_alignment:
        ta = identity_ta_weights(cfg.stream_filters, cfg.ta_hidden, cfg.ta_kernel)
        store["ta.ne_pointwise.weight"] = ta.ne_weight
        store["ta.ne_pointwise.bias"] = ta.ne_bias
        store["ta.fe_pointwise.weight"] = ta.fe_weight
        store["ta.fe_pointwise.bias"] = ta.fe_bias
        store["ta.score.weight"] = ta.score_kernel
        store["ta.score.bias"] = ta.score_bias
    return store


def _relu(x):
    return np.maximum(x, 0.0)


def _pad_freq(x, k):
    lo = k // 2
    out = np.zeros((x.shape[0], x.shape[1] + k - 1))
    out[:, lo:lo + x.shape[1]] = x
    return out


def _depthwise(x, w, b):
    k = w.shape[1]
    xp = _pad_freq(x, k)
    n = x.shape[1]
    out = b[:, None] + w[:, :1] * xp[:, :n]
    for i in range(1, k):
        out = out + w[:, i:i + 1] * xp[:, i:i + n]
    return out


def _conv(x, w, b, stride=1):
    """(1 x k) convolution along frequency, zero 'same' padding, optional stride."""
    k = w.shape[2]
    xp = _pad_freq(x, k)
    n_out = (x.shape[1] - 1) // stride + 1
    span = stride * (n_out - 1) + 1
    out = b[:, None] + w[:, :, 0] @ xp[:, 0:span:stride]
    for i in range(1, k):
        out = out + w[:, :, i] @ xp[:, i:i + span:stride]
    return out


def _maxpool(x, factor):
    n = x.shape[1] // factor * factor
    return x[:, :n].reshape(x.shape[0], -1, factor).max(axis=2)


def _gru_cell(x, h, w_ih, w_hh, b_ih, b_hh):
    n = h.shape[0]
    gi = w_ih @ x + b_ih
    gh = w_hh @ h + b_hh
    r = expit(gi[:n] + gh[:n])
    u = expit(gi[n:2 * n] + gh[n:2 * n])
    c = np.tanh(gi[2 * n:] + r * gh[2 * n:])
    return (1.0 - u) * c + u * h


@dataclass
class FrameOutput:
    mask_magnitude: np.ndarray
    mask_phase: np.ndarray
    delay_dist: np.ndarray | None


class ModelState:
    """Per-stream recurrent state: subband GRU hiddens and the alignment buffers."""

    def __init__(self, model: "Model"):
        self.subband_hidden = [np.zeros(model.cfg.subband_hidden) for _ in range(model.cfg.subband_groups)]
        self.align = StreamingTimeAlign(model.ta_weights, model.cfg.d_max) if model.cfg.use_alignment else None
        self.frames = 0

    def copy(self) -> "ModelState":
        return copy.deepcopy(self)


class Model:
    def __init__(self, cfg: ModelConfig, weights: WeightStore):
        self.cfg = cfg
        self.plan = layer_plan(cfg)
        expected = param_shapes(cfg)
        for path, shape in expected.items():
            if path not in weights:
                raise ModelError(f"weight store is missing tensor {path!r}")
            if tuple(weights[path].shape) != tuple(shape):
                raise ModelError(f"tensor {path!r} has shape {tuple(weights[path].shape)}, expected {shape}")
        extra = sorted(set(weights) - set(expected))
        if extra:
            raise ModelError(f"weight store has unexpected tensors: {', '.join(extra)}")
        self.weights = weights
        self.p = {k: np.asarray(weights[k], dtype=np.float64) for k in expected}
        self.ta_weights = None
        if cfg.use_alignment:
            p = self.p
            self.ta_weights = TaWeights(
                p["ta.ne_pointwise.weight"], p["ta.ne_pointwise.bias"],
                p["ta.fe_pointwise.weight"], p["ta.fe_pointwise.bias"],
                p["ta.score.weight"], p["ta.score.bias"])
        self._groups = np.array_split(np.arange(self._joint_width()), cfg.subband_groups)

    @classmethod
    def build(cls, cfg: ModelConfig = ModelConfig(), weights: WeightStore | None = None, seed: int = 0):
        return cls(cfg, weights if weights is not None else random_weights(cfg, seed))

    def _joint_width(self):
        return next(l for l in self.plan if l.path == "fgru").in_shape[0]

    def declared_shapes(self) -> dict[str, tuple]:
        return {l.path: l.out_shape for l in self.plan}

    def new_state(self) -> ModelState:
        return ModelState(self)

    def _stream(self, prefix, x, audit):
        p = self.p
        for i in range(1, len(self.cfg.stream_kernels) + 1):
            x = _depthwise(x, p[f"{prefix}.dw{i}.weight"], p[f"{prefix}.dw{i}.bias"])
            self._record(audit, f"{prefix}.dw{i}", x)
            x = _relu(p[f"{prefix}.pw{i}.weight"] @ x + p[f"{prefix}.pw{i}.bias"][:, None])
            self._record(audit, f"{prefix}.pw{i}", x)
        x = _maxpool(x, self.cfg.pool)
        self._record(audit, f"{prefix}.pool", x)
        return x

    @staticmethod
    def _record(audit, path, x):
        if audit is not None:
            audit[path] = tuple(np.shape(x))

    def encode(self, inputs: dict, names) -> np.ndarray:
        return np.concatenate([reorient_forward(inputs[n], self.cfg.layout) for n in names], axis=0)

    def step(self, state: ModelState, z_mag, z_phase, y_mag, e_mag=None, audit=None) -> FrameOutput:
        """One frame. Magnitudes are power-law compressed, raw bin order, length K."""
        cfg, p = self.cfg, self.p
        inputs = {"z": z_mag, "y": y_mag, "e": e_mag}
        for name in cfg.ne_inputs + cfg.fe_inputs:
            v = inputs[name]
            if v is None or np.shape(v) != (cfg.num_bins,):
                raise ModelError(f"input {name!r} must have shape ({cfg.num_bins},), got {np.shape(v)}")
        ne = self._stream("ne", self.encode(inputs, cfg.ne_inputs), audit)
        fe = self._stream("fe", self.encode(inputs, cfg.fe_inputs), audit)

        dist = None
        if cfg.use_alignment:
            aligned, dist = state.align.step(ne, fe)
            self._record(audit, "ta.aggregate", aligned)
            self._record(audit, "ta.score", dist)
        else:
            aligned = fe
        x = np.concatenate([ne, aligned], axis=0)
        for i in range(1, len(cfg.joint_filters) + 1):
            x = _relu(_conv(x, p[f"joint.conv{i}.weight"], p[f"joint.conv{i}.bias"], cfg.joint_stride))
            self._record(audit, f"joint.conv{i}", x)

        h = np.zeros(cfg.fgru_hidden)
        seq = np.empty((x.shape[1], cfg.fgru_hidden))
        for f in range(x.shape[1]):
            h = _gru_cell(x[:, f], h, p["fgru.weight_ih"], p["fgru.weight_hh"], p["fgru.bias_ih"], p["fgru.bias_hh"])
            seq[f] = h
        self._record(audit, "fgru", seq)

        outs = []
        for i, grp in enumerate(self._groups):
            pre = f"sgru{i}"
            hid = _gru_cell(seq[grp].reshape(-1), state.subband_hidden[i], p[f"{pre}.weight_ih"],
                            p[f"{pre}.weight_hh"], p[f"{pre}.bias_ih"], p[f"{pre}.bias_hh"])
            state.subband_hidden[i] = hid
            self._record(audit, pre, hid[None, :])
            outs.append(hid)
        v = _relu(p["fc1.weight"] @ np.concatenate(outs) + p["fc1.bias"])
        self._record(audit, "fc1", v)
        stage1 = expit(p["fc2.weight"] @ v + p["fc2.bias"])
        self._record(audit, "fc2", stage1)

        est = stage1 * np.asarray(z_mag, dtype=np.float64)
        x = np.stack([est * np.cos(z_phase), est * np.sin(z_phase)])
        x = _relu(_conv(x, p["head.conv1.weight"], p["head.conv1.bias"]))
        self._record(audit, "head.conv1", x)
        x = _relu(_conv(x, p["head.conv2.weight"], p["head.conv2.bias"]))
        self._record(audit, "head.conv2", x)
        out = _conv(x, p["head.out.weight"], p["head.out.bias"])
        self._record(audit, "head.out", out)

        mag = expit(out[0])
        phase = np.arctan2(out[2], out[1])
        phase[phase == -np.pi] = np.pi
        state.frames += 1
        return FrameOutput(mag, phase, dist)

    def forward(self, z_mag, z_phase, y_mag, e_mag=None, state: ModelState | None = None):
        """Whole utterance, ``(T, K)`` inputs; returns ``(mask_mag, mask_phase, dists)``."""
        state = state or self.new_state()
        T = len(z_mag)
        mm = np.empty((T, self.cfg.num_bins))
        mp = np.empty((T, self.cfg.num_bins))
        dists = np.empty((T, self.cfg.d_max)) if self.cfg.use_alignment else None
        for t in range(T):
            out = self.step(state, z_mag[t], z_phase[t], y_mag[t], None if e_mag is None else e_mag[t])
            mm[t], mp[t] = out.mask_magnitude, out.mask_phase
            if dists is not None:
                dists[t] = out.delay_dist
        return mm, mp, dists

    def delay_distribution(self, z_mag, y_mag, e_mag=None) -> np.ndarray:
        """Run only the encoder streams and the alignment block; ``(T, d_max)``."""
        if not self.cfg.use_alignment:
            raise ModelError("model was built without the alignment block")
        align = StreamingTimeAlign(self.ta_weights, self.cfg.d_max)
        out = np.empty((len(z_mag), self.cfg.d_max))
        for t in range(len(z_mag)):
            inputs = {"z": z_mag[t], "y": y_mag[t], "e": None if e_mag is None else e_mag[t]}
            ne = self._stream("ne", self.encode(inputs, self.cfg.ne_inputs), None)
            fe = self._stream("fe", self.encode(inputs, self.cfg.fe_inputs), None)
            out[t] = align.step(ne, fe)[1]
        return out


def apply_mask(z_frame, mask_magnitude, mask_phase, alpha: float = 0.3, decompress: bool = True):
    """Scale the compressed magnitude, rotate the phase, then undo the compression.

    With ``decompress=False`` the compressed-domain estimate is returned.
    """
    z = np.asarray(z_frame, dtype=np.complex128)
    mag = np.abs(z) ** alpha * mask_magnitude
    phase = np.angle(z) + mask_phase
    if decompress:
        mag = mag ** (1.0 / alpha)
    return mag * np.exp(1j * phase)
