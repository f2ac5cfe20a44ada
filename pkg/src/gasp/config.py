"""Run configuration files: ``[section]`` headers, ``key = value`` lines, ``#`` comments."""

from __future__ import annotations

import configparser
from dataclasses import replace
from typing import Dict, Optional, Tuple

from .errors import ConfigError
from .presets import DATA_KINDS, ModelSpec
from .training import TrainingConfig


def _ints(v: str) -> Tuple[int, ...]:
    return tuple(int(t) for t in v.replace(" ", "").split(",") if t)


def _opt_float(v: str) -> Optional[float]:
    return None if v.strip().lower() in ("none", "") else float(v)


def _opt_int(v: str) -> Optional[int]:
    return None if v.strip().lower() in ("none", "") else int(v)


def _kind(v: str) -> str:
    if v not in DATA_KINDS:
        raise ValueError(f"expected one of {', '.join(DATA_KINDS)}")
    return v


# section -> key -> (target, field, parser)
SCHEMA = {
    "generator": {
        "fourier_m": ("model", "fourier_m", int),
        "sigma": ("model", "sigma", _opt_float),
        "hidden_dims": ("model", "hidden_dims", _ints),
        "latent_dim": ("model", "latent_dim", int),
        "hyper_hidden": ("model", "hyper_hidden", _ints),
        "output_scale": ("model", "output_scale", float),
    },
    "discriminator": {
        "channels": ("model", "channels", _ints),
        "k_neighbors": ("model", "k_neighbors", _opt_int),
        "pool_factor": ("model", "pool_factor", _opt_int),
        "norm_p": ("model", "norm_p", float),
        "weight_hidden": ("model", "weight_hidden", _ints),
        "intrinsic_dim": ("model", "intrinsic_dim", _opt_int),
    },
    "training": {
        "lr_generator": ("training", "lr_generator", float),
        "lr_discriminator": ("training", "lr_discriminator", float),
        "beta1": ("training", "beta1", float),
        "beta2": ("training", "beta2", float),
        "batch_size": ("training", "batch_size", int),
        "epochs": ("training", "epochs", int),
        "k_subsample": ("training", "K_subsample", _opt_int),
        "r1_weight": ("training", "r1_weight", float),
        "seed": ("training", "seed", int),
        "max_steps": ("training", "max_steps", _opt_int),
        "checkpoint_every": ("run", "checkpoint_every", int),
    },
    "data": {
        "kind": ("run", "kind", _kind),
        "feature_min": ("run", "feature_min", float),
        "feature_max": ("run", "feature_max", float),
    },
}


def read_config(path) -> Dict[str, Dict[str, object]]:
    """Parse a config file into {"model": {...}, "training": {...}, "run": {...}} overrides.

    Unknown sections or keys and unparsable values raise ConfigError.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    out: Dict[str, Dict[str, object]] = {"model": {}, "training": {}, "run": {}}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            target, name, parse = SCHEMA[section][key]
            try:
                out[target][name] = parse(raw)
            except ValueError as exc:
                raise ConfigError(f"{path}: bad value for {key} in [{section}]: {exc}") from None
    return out


def apply_overrides(spec: ModelSpec, training: TrainingConfig, overrides: Dict[str, Dict[str, object]]):
    try:
        spec = replace(spec, **overrides.get("model", {}))
        training = replace(training, **overrides.get("training", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return spec, training
