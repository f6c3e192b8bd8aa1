"""Experiment configuration: JSON schema, validation, hashing."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .coefficients import LQParams
from .simulate import InitSpec
from .verify import MonteCarloSettings, Perturbation


class ConfigError(ValueError):
    """Malformed or schema-violating experiment configuration."""


_DEFAULT_VERIFY = {
    "riccati_steps": 4096,
    "tolerances": {"smp": 1e-8, "bsde": 1e-6, "hjb": None},
    "u_grid": {"lo": -4.0, "hi": 4.0, "points": 321},
    "smp_samples": 200,
    "hjb_samples": 100,
    "hjb_max_atoms": 16,
    "perturbations": [
        {"kind": "gain", "amount": 0.5},
        {"kind": "gain", "amount": 1.5},
        {"kind": "offset", "amount": 0.5},
        {"kind": "offset", "amount": -0.5},
    ],
    "fp_ratio_band": [0.3, 0.7],
    "noise_ratio_min": 5.0,
    "chattering": {
        "support": [0.2, 0.8],
        "weights": [0.5, 0.5],
        "levels": [2, 4, 8, 16, 32],
        "sigma_factor": 5.0,
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description plus the hash of its raw JSON."""

    params: LQParams
    mc: MonteCarloSettings
    verify: dict
    output: dict
    raw: dict
    config_hash: str

    @property
    def u_grid(self) -> np.ndarray:
        g = self.verify["u_grid"]
        return np.linspace(float(g["lo"]), float(g["hi"]), int(g["points"]))

    @property
    def perturbations(self) -> list:
        return [
            Perturbation(p["kind"], float(p["amount"]))
            for p in self.verify["perturbations"]
        ]

    def tolerance(self, name: str):
        return self.verify["tolerances"].get(name)


def config_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _require(section: dict, name: str, keys) -> None:
    missing = [k for k in keys if k not in section]
    if missing:
        raise ConfigError(f"section '{name}' lacks field(s): {', '.join(missing)}")


def _merge_defaults(user: dict, defaults: dict) -> dict:
    out = {}
    for key, val in defaults.items():
        if key in user and isinstance(val, dict) and isinstance(user[key], dict):
            out[key] = _merge_defaults(user[key], val)
        elif key in user:
            out[key] = user[key]
        else:
            out[key] = val
    for key in user:
        if key not in out:
            out[key] = user[key]
    return out


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a raw config dictionary and build the typed pieces."""
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object")
    _require(raw, "<root>", ["model", "sim"])
    model = raw["model"]
    _require(model, "model", ["b1", "b2", "b3", "sigma", "c", "T"])
    sim = raw["sim"]
    _require(sim, "sim", ["particles", "scenarios", "dt", "seed"])

    try:
        params = LQParams.from_config(model, raw.get("jumps"))
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"model/jumps section: {err}") from err

    if sim["particles"] < 2:
        raise ConfigError("sim.particles must be at least 2")
    if sim["scenarios"] < 1:
        raise ConfigError("sim.scenarios must be at least 1")
    if not sim["dt"] > 0:
        raise ConfigError("sim.dt must be positive")
    mode = sim.get("mode", "common")
    if mode not in ("common", "idiosyncratic"):
        raise ConfigError(f"sim.mode must be common|idiosyncratic, got {mode!r}")

    verify = _merge_defaults(raw.get("verify", {}), _DEFAULT_VERIFY)
    for name, tol in verify["tolerances"].items():
        if tol is not None and not tol > 0:
            raise ConfigError(f"verify.tolerances.{name} must be positive")
    if verify["u_grid"]["points"] < 3:
        raise ConfigError("verify.u_grid.points must be at least 3")

    try:
        init = InitSpec.from_config(sim.get("init", {"kind": "gaussian", "mean": 1.0, "std": 0.5}))
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"sim.init section: {err}") from err

    mc = MonteCarloSettings(
        particles=int(sim["particles"]),
        scenarios=int(sim["scenarios"]),
        dt=float(sim["dt"]),
        seed=int(sim["seed"]),
        mode=mode,
        init=init,
        riccati_steps=int(verify["riccati_steps"]),
    )
    return ExperimentConfig(
        params=params,
        mc=mc,
        verify=verify,
        output=raw.get("output", {}),
        raw=raw,
        config_hash=config_hash(raw),
    )


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON config file; parse errors carry line numbers."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(
            f"{p}:{err.lineno}:{err.colno}: malformed JSON: {err.msg}"
        ) from err
    return parse_config(raw)


def default_config(seed: int = 20240901) -> dict:
    """A complete runnable configuration for the built-in model."""
    return {
        "model": {"b1": 0.5, "b2": 0.4, "b3": 1.0, "sigma": 0.4, "c": 1.0, "T": 1.0},
        "jumps": {"marks": [{"z": 1.0, "lambda": 1.0, "gamma": 0.3}]},
        "sim": {
            "particles": 500,
            "scenarios": 16,
            "dt": 1e-3,
            "seed": seed,
            "mode": "common",
            "init": {"kind": "gaussian", "mean": 1.0, "std": 0.5},
        },
        "verify": {},
        "output": {},
    }
