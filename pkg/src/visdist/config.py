"""Flat ``key=value`` config files mapped onto the dataclass configs.

Blank lines and ``#`` comments are ignored. Tuples are comma-separated
(``decay_epochs=15,25``). In denoise configs, training keys apply to the
first fit and ``finetune_``-prefixed keys to the fine-tune fit.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .denoise import EmConfig
from .scorer import FitParams
from .synth import SynthConfig

# Short names accepted in denoise configs.
ALIASES = {"discard": "discard_fraction"}
TRUE = {"1", "true", "yes", "on"}
FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    pass


def read_config(path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        out[key.strip()] = value.strip()
    return out


def _coerce(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in TRUE | FALSE:
                raise ValueError(raw)
            return low in TRUE
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else int
            return tuple(kind(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def apply(obj, values: dict[str, str]):
    """Copy of dataclass ``obj`` with ``values`` coerced to the field types."""
    names = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for key, raw in values.items():
        if key not in names:
            raise ConfigError(f"unknown config key {key!r}")
        changes[key] = _coerce(raw, getattr(obj, key), key)
    return dataclasses.replace(obj, **changes)


def fit_params(values: dict[str, str], base: FitParams | None = None) -> FitParams:
    return apply(base or FitParams(), values)


def synth_config(values: dict[str, str], seed: int) -> SynthConfig:
    return apply(SynthConfig(seed=seed), values)


def em_config(mode: str, values: dict[str, str], seed: int, has_signal: bool) -> EmConfig:
    """EmConfig for ``mode`` (distant or semi) with config overrides.

    Without an external signal, omega is forced to 1.
    """
    base = EmConfig(seed=seed) if mode == "distant" else EmConfig.semi(seed=seed)
    fit_names = {f.name for f in dataclasses.fields(FitParams)}
    top, fit_kv, ft_kv = {}, {}, {}
    for key, raw in values.items():
        key = ALIASES.get(key, key)
        if key.startswith("finetune_") and key[len("finetune_"):] in fit_names:
            ft_kv[key[len("finetune_"):]] = raw
        elif key in fit_names and key != "seed":
            fit_kv[key] = raw
        elif key in ("fit", "finetune", "seed", "use_external_signal"):
            raise ConfigError(f"config key {key!r} cannot be set from a file")
        else:
            top[key] = raw
    names = {f.name for f in dataclasses.fields(EmConfig)}
    for key in top:
        if key not in names:
            raise ConfigError(f"unknown config key {key!r}")
    changes = {k: _coerce(v, getattr(base, k), k) for k, v in top.items()}
    changes["fit"] = fit_params(fit_kv, base.fit)
    changes["finetune"] = fit_params(ft_kv, base.finetune)
    changes["use_external_signal"] = has_signal
    if not has_signal:
        changes["omega"] = 1.0
    try:
        return dataclasses.replace(base, **changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
