"""Flat ``key = value`` configuration files.

Keys are ``section.field`` for the ``stft``, ``kalman``, ``layout`` and
``model`` sections, plus the top-level ``weights_path``, ``seed``,
``stage`` and ``input_routing``. Lines starting with ``#`` are comments.
Unset ``kalman.block_size`` and ``layout.num_bins`` follow the STFT.
"""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path

from .features import ReorientLayout
from .kalman import KalmanConfig
from .model import ModelConfig
from .pipeline import PipelineConfig
from .stft import StftConfig


class ConfigError(ValueError):
    pass


SECTIONS = {"stft": StftConfig, "kalman": KalmanConfig, "layout": ReorientLayout, "model": ModelConfig}
TOP_LEVEL = {"weights_path": str, "seed": int, "stage": str, "input_routing": str}


def parse_lines(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = val
    return out


def _coerce(key, text, default):
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(v) for v in text.replace("x", ",").split(",") if v.strip())
        if text.lower() == "none":
            return None
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r}") from None


def _section_defaults(cls):
    inst = cls() if cls is not ModelConfig else ModelConfig()
    return {f.name: getattr(inst, f.name) for f in dataclasses.fields(cls)}


def _fill(cls, values: dict, section: str):
    defaults = _section_defaults(cls)
    kwargs = {}
    for name, text in values.items():
        if name not in defaults:
            raise ConfigError(f"unknown config key {section}.{name}")
        default = defaults[name]
        if default is None and text.lower() in ("none", ""):
            kwargs[name] = None
            continue
        if default is None:
            hint = typing.get_type_hints(cls).get(name)
            default = 0 if hint is not None and int in typing.get_args(hint) else ""
        kwargs[name] = _coerce(f"{section}.{name}", text, default)
    return kwargs


def build_config(values: dict[str, str]) -> PipelineConfig:
    grouped = {s: {} for s in SECTIONS}
    top = {}
    for key, val in values.items():
        if key in TOP_LEVEL:
            top[key] = val
            continue
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ConfigError(f"unknown config key {key}")
        grouped[section][name] = val
    try:
        stft = StftConfig(**_fill(StftConfig, grouped["stft"], "stft"))
        kal_kw = _fill(KalmanConfig, grouped["kalman"], "kalman")
        kal_kw.setdefault("block_size", stft.hop)
        kalman = KalmanConfig(**kal_kw)
        lay_kw = _fill(ReorientLayout, grouped["layout"], "layout")
        lay_kw.setdefault("num_bins", stft.num_bins)
        layout = ReorientLayout(**lay_kw)
        mod_kw = _fill(ModelConfig, {k: v for k, v in grouped["model"].items() if k != "layout"}, "model")
        if "input_routing" in top:
            mod_kw["routing"] = top["input_routing"]
        model = ModelConfig(layout=layout, **mod_kw)
        cfg = PipelineConfig(
            stft=stft, kalman=kalman, model=model,
            weights_path=(top.get("weights_path") or None),
            seed=int(top.get("seed", 0)),
            stage=top.get("stage", "full"),
        )
        return cfg.validate()
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, overrides: dict[str, str] | None = None) -> PipelineConfig:
    values = parse_lines(Path(path).read_text()) if path else {}
    values.update(overrides or {})
    return build_config(values)


def dump_config(cfg: PipelineConfig) -> str:
    lines = []
    for section, obj in (("stft", cfg.stft), ("kalman", cfg.kalman), ("layout", cfg.layout), ("model", cfg.model)):
        for f in dataclasses.fields(obj):
            if f.name == "layout":
                continue
            v = getattr(obj, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(i) for i in v)
            lines.append(f"{section}.{f.name} = {v}")
    lines.append(f"weights_path = {cfg.weights_path or ''}")
    lines.append(f"seed = {cfg.seed}")
    lines.append(f"stage = {cfg.stage}")
    return "\n".join(lines) + "\n"
