"""Experiment configuration: one JSON document with fixed sections.

Every key has a default except ``output_dir``.  Unknown keys anywhere are an
error, as is a missing ``output_dir``; both are checked before any work runs.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math

from .training import ALPHA_GRID, DESK_LAMBDA_GRID
from .windowed_linear import WINDOW_CANDIDATES


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "output_dir": None,
    "seed": 0,
    "generator": {
        "n_patients": 2000,
        "vocab_size": 40,
        "mean_visits": 12.0,
        "history_span_days": 365,
        "planted_windows": [30, None],
        "planted_weights": {"30": {"c005": 2.0, "c011": 1.5, "c017": 1.5},
                            "inf": {"c002": 1.0, "c008": -1.0, "c023": 1.2}},
        "intercept": -2.5,
        "mean_codes_per_visit": 3.0,
        "zipf_exponent": 0.6,
        "drift_day": None,
        "drift_strength": 0.5,
        "n_subgroups": 5,
        "prediction_day": 1000,
    },
    "split": {"fractions": [0.5, 0.25, 0.25], "seed": 0},
    "windows": {"candidates": [None if o == math.inf else o for o in WINDOW_CANDIDATES if o == math.inf or o < 365],
                "n_windows": 2},
    "lambda_grid": list(DESK_LAMBDA_GRID),
    "alpha_grid": list(ALPHA_GRID),
    "tune_alpha": False,
    "alpha": 0.0,
    "init": "normal",
    "model": {"d_e": 32, "n_v": 16, "L": 2, "H": 2, "K": 10, "dropout_p": 0.05,
              "encoder_variant": "self_attention", "head_variant": "conv", "omega": None, "clip_days": 365},
    "train": {"batch_size": 100, "micro_batch": 100, "max_epochs": 50, "patience": 5, "lr": 5e-3,
              "beta1": 0.9, "beta2": 0.98, "eps": 1e-9},
    "cluster": {"K": 200, "gamma": 0.5, "rho": 0.05, "beta": 0.02, "N": 2000},
    "mlp": {"width": 64, "lr": 1e-3, "batch_size": 200, "max_epochs": 200, "patience": 10,
            "alpha_grid": [0.0, 0.1, 0.3, 1.0, 3.0], "lambda_grid": list(DESK_LAMBDA_GRID),
            "n_val": 2000, "n_test": 10000},
    "sweep": {"seeds": list(range(5))},
    "lemma": {"n_patients": 200, "vocab_size": 20, "n_freqs": [16, 32, 64], "sharpness": [20.0],
              "gain": 100.0, "seed": 0},
    "report": {"min_positives": 10, "ppv_sensitivity": 0.5, "dissect_threshold": "0.5", "top_k": 5},
}

# sections whose content is a free-form mapping rather than a fixed key set
_OPEN = {("generator", "planted_weights")}


def _merge(defaults, given, path=()):
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        here = path + (key,)
        if key not in defaults:
            raise ConfigError(f"unknown config key {'.'.join(here)!r}")
        if isinstance(defaults[key], dict) and here not in _OPEN:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {'.'.join(here)!r} must be an object")
            out[key] = _merge(defaults[key], value, here)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None, overrides=None):
    given = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                given = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(given, dict):
            raise ConfigError(f"{path}: top level must be an object")
    cfg = _merge(DEFAULTS, given)
    for dotted, value in (overrides or {}).items():
        set_key(cfg, dotted, value)
    if not cfg.get("output_dir"):
        raise ConfigError("missing required config key 'output_dir'")
    return cfg


def set_key(cfg, dotted, value):
    keys = dotted.split(".")
    node, ref = cfg, DEFAULTS
    for k in keys[:-1]:
        if k not in ref or not isinstance(ref[k], dict):
            raise ConfigError(f"unknown config key {dotted!r}")
        node, ref = node[k], ref[k]
    if keys[-1] not in ref:
        raise ConfigError(f"unknown config key {dotted!r}")
    node[keys[-1]] = value


def manifest_hash(cfg):
    """SHA-256 of the canonical JSON form of the config."""
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def parse_value(text):
    """Command-line values: JSON when it parses, otherwise the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text
