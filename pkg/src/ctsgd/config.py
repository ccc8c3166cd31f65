"""Experiment configuration: YAML ingestion, validation, hashing.

A single YAML document fully determines a run.  Unknown keys are rejected
(typos must fail loudly), missing keys fall back to the experiment's
defaults, and a sha256 hash of the canonical form is embedded in every
output file.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math

import yaml

from .errors import ConfigurationError

# Defaults double as the schema: a key is legal iff it appears here.
_SCHEDULE_KEYS_BENES = {"label": "s", "g0_mu": 1.0, "eta_mu": 0.55,
                        "g0_o": 0.05, "eta_o": 0.6}

DEFAULTS = {
    "benes-joint": {
        "experiment": "benes-joint",
        "output_dir": "out/benes-joint",
        "dt": 0.01,
        "horizon": 10000.0,
        "record_every": 1000,
        "seeds": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9],
        "workers": 1,
        "model": {"mu_star": 3.0, "sigma2": 4.0, "c": 0.7, "tau2": 2.0,
                  "o_star": 4.0},
        "inits": {"mu0": [1.0, 7.0], "o0": [2.0, 6.0]},
        "schedules": [
            {"label": "a", "g0_mu": 5.0, "eta_mu": 0.55, "g0_o": 0.05,
             "eta_o": 0.6},
            {"label": "b", "g0_mu": 5.0, "eta_mu": 0.55, "g0_o": 0.2,
             "eta_o": 0.9},
            {"label": "c", "g0_mu": 12.0, "eta_mu": 0.75, "g0_o": 0.2,
             "eta_o": 0.9},
        ],
        "projection": {"mu": [0.1, 8.0], "o": [0.0, 8.0]},
        "tolerances": {"mu_err": 0.3, "o_err": 0.3},
    },
    "benes-averaged": {
        "experiment": "benes-averaged",
        "output_dir": "out/benes-averaged",
        "dt": 0.01,
        "horizon": 10000.0,
        "record_every": 100,
        "seeds": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9],
        "workers": 1,
        "model": {"mu_star": 3.0, "sigma2": 4.0, "c": 0.7, "tau2": 2.0,
                  "o_star": 4.0},
        "inits": {"mu0": [1.0], "o0": [2.0]},
        "schedules": [
            {"label": "a", "g0_mu": 5.0, "eta_mu": 0.55, "g0_o": 0.05,
             "eta_o": 0.6},
            {"label": "b", "g0_mu": 5.0, "eta_mu": 0.55, "g0_o": 0.5,
             "eta_o": 0.9},
        ],
        "projection": {"mu": [0.1, 8.0], "o": [0.0, 8.0]},
        "tolerances": {"averaged_slope_gap": 0.15},
    },
    "benes-tracking": {
        "experiment": "benes-tracking",
        "output_dir": "out/benes-tracking",
        "dt": 0.01,
        "horizon": 2000.0,
        "record_every": 100,
        "seeds": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9],
        "workers": 1,
        "model": {"mu_star": 3.0, "sigma2": 4.0, "c": 0.7, "tau2": 2.0,
                  "o_star": 4.0},
        "inits": {"mu0": [3.0], "o0": [4.0]},
        "rates": {"g_mu": 0.5, "g_o": 0.05},
        "jumps": [{"time": 1000.0, "mu_star": 1.5, "o_star": 4.0}],
        "projection": {"mu": [0.1, 8.0], "o": [0.0, 8.0]},
        "tolerances": {"tail_err": 0.3, "tail_fraction": 0.2},
    },
    "linear-scalar": {
        "experiment": "linear-scalar",
        "output_dir": "out/linear-scalar",
        "dt": 0.01,
        "horizon": 10000.0,
        "record_every": 1000,
        "seeds": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9],
        "workers": 1,
        "model": {"theta_star": 1.0, "q": 1.0, "tau2": 0.5, "o0": 0.0},
        "inits": {"theta0": 0.5, "o_init": 2.0},
        "rates": {"g0_theta": 2.0, "eta_theta": 0.75, "g0_o": 1.0,
                  "eta_o": 0.6},
        "projection": {"theta": [0.1, 5.0], "o": [-3.0, 3.0]},
        "readout": {"horizon": 10000.0, "seed": 123},
        "tolerances": {"theta_rel_err": 0.1, "o_err": 0.15},
    },
    "advdiff-joint": {
        "experiment": "advdiff-joint",
        "output_dir": "out/advdiff-joint",
        "dt": 0.02,
        "horizon": 2000.0,
        "record_every": 500,
        "seeds": [0, 1, 2],
        "workers": 3,
        "k_max": 3,
        "radius": 0.05,
        "theta_star": [0.50, 0.20, 0.50, 0.10, 2.00, 0.7853981633974483,
                       0.30, -0.30, 0.01],
        "theta0": [0.50, 0.20, 0.50, 0.10, 2.00, 0.7853981633974483,
                   0.30, -0.30, 0.01],
        "targets": [[0.0, 7.0], [6.0, 8.0], [4.0, 4.0], [9.0, 6.0],
                    [1.0, 1.0], [7.0, 10.0], [10.0, 11.0], [3.0, 10.0]],
        "sensors0": [[10.1, 7.8], [4.1, 6.01], [5.2, 3.75], [7.2, 4.02],
                     [3.2, 3.1], [6.1, 2.1], [1.01, 2.8], [3.0, 1.0]],
        "locations_scale": 0.08333333333333333,
        "rates": {
            "g0_theta": [5e-5, 5e-5, 1e-4, 5e-6, 1e-4, 1e-4, 5e-5, 5e-5, 0.0],
            "eta_theta": [0.85, 0.85, 0.85, 0.85, 0.85, 0.85, 0.85, 0.85, 0.85],
            "g0_o": 150.0, "eta_o": 0.65},
        "projection": {
            "theta_lower": [0.1, 0.05, 0.05, 0.02, 0.5, 0.2, -0.8, -0.8, 0.005],
            "theta_upper": [0.8, 0.6, 1.0, 0.22, 2.5, 1.45, 0.8, 0.8, 0.12]},
        "tolerances": {"spearman": -0.8, "target_distance": 0.1,
                       "min_assigned": 6},
    },
    "gradient-check": {
        "experiment": "gradient-check",
        "output_dir": "out/gradient-check",
        "horizon": 10.0,
        "dt": 0.001,
        "h": 1e-4,
        "seeds": [0],
        "workers": 1,
        "tolerances": {"filter_rel_err": 1e-2, "assembly_rel_err": 1e-6},
    },
}


def _check_keys(cfg, schema, path=""):
    if isinstance(schema, dict):
        if not isinstance(cfg, dict):
            raise ConfigurationError(f"{path or 'config'}: expected a mapping")
        for key in cfg:
            if key not in schema:
                raise ConfigurationError(
                    f"unknown key {path + key!r} (valid: {sorted(schema)})")
            _check_keys(cfg[key], schema[key], f"{path}{key}.")
    elif isinstance(schema, list) and schema and isinstance(schema[0], dict):
        if not isinstance(cfg, list):
            raise ConfigurationError(f"{path[:-1]}: expected a list")
        for item in cfg:
            _check_keys(item, schema[0], path)


def _merge(defaults, cfg):
    if isinstance(defaults, dict) and isinstance(cfg, dict):
        out = {}
        for key, dval in defaults.items():
            out[key] = _merge(dval, cfg[key]) if key in cfg else copy.deepcopy(dval)
        return out
    if isinstance(defaults, list) and defaults and isinstance(defaults[0], dict) \
            and isinstance(cfg, list):
        # Lists of tables replace wholesale, each item completed from the
        # first default item.
        return [_merge(defaults[0], item) for item in cfg]
    return copy.deepcopy(cfg)


def parse_config(doc: dict) -> dict:
    if not isinstance(doc, dict):
        raise ConfigurationError("config document must be a mapping")
    exp = doc.get("experiment")
    if exp not in DEFAULTS:
        raise ConfigurationError(
            f"experiment must be one of {sorted(DEFAULTS)}, got {exp!r}")
    _check_keys(doc, DEFAULTS[exp])
    cfg = _merge(DEFAULTS[exp], doc)
    if not cfg["seeds"]:
        raise ConfigurationError("at least one seed is required")
    if "dt" in cfg and not cfg["dt"] > 0:
        raise ConfigurationError("dt must be positive")
    if "horizon" in cfg and not cfg["horizon"] > 0:
        raise ConfigurationError("horizon must be positive")
    return cfg


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: invalid YAML: {exc}") from None
    return parse_config(doc if doc is not None else {})


def _canonical(obj):
    if isinstance(obj, float) and math.isfinite(obj):
        return float(repr(obj)) if obj == obj else obj
    return obj


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"),
                       default=_canonical)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]
