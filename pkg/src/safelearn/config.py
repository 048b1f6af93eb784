"""YAML experiment files.

Schema (all sections required unless marked optional)::

    system:
      bounds: [[0, 5], [0, 5]]        # one [low, high] per axis
      divisions: [5, 5]
      initial: [0, 2]                 # grid coordinates of the start cell
      labels:                         # optional; unlisted cells observe "none"
        - {cell: [4, 2], obs: Goal}
      boundary: wall                  # optional: wall | sink
      include_stay: true              # optional
      dynamics: identity              # optional; known part f, only identity
    spec:
      formula: "!Haz U Goal"
      p_sat: 1.0
    noise: {sigma: 0.1, support: 0.2}
    kernel: {sigma_g: 0.45, length_scale: 1.75}
    gp: {eta: 250}                    # optional; eta: null means exact GP
    beta: {mode: fixed, value: 2.0}   # or {mode: formula, b_i, gamma_k_m, delta}
    exploration:                      # optional
      steps_per_iteration: 250
      max_iterations: 40
      samples_per_axis: 10
      eps: 1.0e-6
    truth: {support: 0.4, grid: 50}   # optional; may override sigma_g, length_scale
    seeds: {truth: 0, noise: 1, explore: 2}
"""
from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Any

import yaml

from .explorer import ExperimentConfig


class ConfigError(ValueError):
    """Unreadable file or schema violation; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


_MISSING = object()


def _get(section: dict, name: str, path: str, default: Any = _MISSING):
    if name not in section or section[name] is None and default is _MISSING:
        if default is _MISSING:
            raise ConfigError(f"{path}.{name}", "required field is missing")
        return default
    return section[name]


def _section(doc: dict, name: str, required: bool = True) -> dict:
    if name not in doc:
        if required:
            raise ConfigError(name, "required section is missing")
        return {}
    sec = doc[name]
    if not isinstance(sec, dict):
        raise ConfigError(name, "must be a mapping")
    return sec


def _num(value, path: str, kind=float, positive=False, nonneg=False):
    try:
        if isinstance(value, bool):
            raise TypeError
        out = kind(value)
        if kind is int and out != value:
            raise TypeError
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected {kind.__name__}, got {value!r}") from None
    if positive and not out > 0:
        raise ConfigError(path, "must be positive")
    if nonneg and out < 0:
        raise ConfigError(path, "must be non-negative")
    return out


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("", "top level must be a mapping")
    system = _section(doc, "system")
    bounds = _get(system, "bounds", "system")
    try:
        bounds = [(float(lo), float(hi)) for lo, hi in bounds]
    except (TypeError, ValueError):
        raise ConfigError("system.bounds", "expected a list of [low, high] pairs") from None
    divisions = [_num(d, "system.divisions", int, positive=True) for d in _get(system, "divisions", "system")]
    if len(divisions) != len(bounds):
        raise ConfigError("system.divisions", "needs one entry per axis of system.bounds")
    initial = tuple(_num(c, "system.initial", int, nonneg=True) for c in _get(system, "initial", "system"))
    if len(initial) != len(divisions) or any(c >= d for c, d in zip(initial, divisions)):
        raise ConfigError("system.initial", "must be grid coordinates inside the partition")
    labels = {}
    for k, entry in enumerate(system.get("labels") or []):
        path = f"system.labels[{k}]"
        if not isinstance(entry, dict) or "cell" not in entry or "obs" not in entry:
            raise ConfigError(path, "expected a mapping with 'cell' and 'obs'")
        cell = tuple(_num(c, path + ".cell", int, nonneg=True) for c in entry["cell"])
        if len(cell) != len(divisions) or any(c >= d for c, d in zip(cell, divisions)):
            raise ConfigError(path + ".cell", "outside the grid")
        labels[cell] = str(entry["obs"])
    if system.get("dynamics", "identity") != "identity":
        raise ConfigError("system.dynamics", "only 'identity' is supported")
    boundary = system.get("boundary", "wall")
    if boundary not in ("wall", "sink"):
        raise ConfigError("system.boundary", "must be 'wall' or 'sink'")

    spec = _section(doc, "spec")
    formula = str(_get(spec, "formula", "spec"))
    p_sat = _num(_get(spec, "p_sat", "spec", 1.0), "spec.p_sat")
    if not 0 < p_sat <= 1:
        raise ConfigError("spec.p_sat", "must lie in (0, 1]")

    noise = _section(doc, "noise")
    sigma = _num(_get(noise, "sigma", "noise"), "noise.sigma", positive=True)
    support = _num(_get(noise, "support", "noise"), "noise.support", nonneg=True)

    kernel = _section(doc, "kernel")
    sigma_g = _num(_get(kernel, "sigma_g", "kernel"), "kernel.sigma_g", positive=True)
    length = _num(_get(kernel, "length_scale", "kernel"), "kernel.length_scale", positive=True)

    gp = _section(doc, "gp", required=False)
    eta = gp.get("eta", 250)
    eta = None if eta is None else _num(eta, "gp.eta", int, positive=True)
    gp_noise = gp.get("noise_var")
    gp_noise = None if gp_noise is None else _num(gp_noise, "gp.noise_var", positive=True)

    beta_sec = _section(doc, "beta")
    mode = _get(beta_sec, "mode", "beta")
    if mode == "fixed":
        beta, beta_params = _num(_get(beta_sec, "value", "beta"), "beta.value", nonneg=True), None
    elif mode == "formula":
        beta = None
        beta_params = {
            "b_i": _num(_get(beta_sec, "b_i", "beta"), "beta.b_i", nonneg=True),
            "gamma_k_m": _num(_get(beta_sec, "gamma_k_m", "beta"), "beta.gamma_k_m", nonneg=True),
            "delta": _num(_get(beta_sec, "delta", "beta"), "beta.delta", positive=True),
        }
        if not beta_params["delta"] < 1:
            raise ConfigError("beta.delta", "must lie in (0, 1)")
    else:
        raise ConfigError("beta.mode", "must be 'fixed' or 'formula'")

    ex = _section(doc, "exploration", required=False)
    truth = _section(doc, "truth", required=False)
    seeds = _section(doc, "seeds")
    try:
        return ExperimentConfig(
            bounds=bounds, divisions=divisions, labels=labels, initial=initial,
            formula=formula, p_sat=p_sat, noise_sigma=sigma, noise_support=support,
            sigma_g=sigma_g, length_scale=length, gp_noise_var=gp_noise,
            beta=beta, beta_params=beta_params, eta=eta,
            steps_per_iteration=_num(ex.get("steps_per_iteration", 250), "exploration.steps_per_iteration",
                                     int, positive=True),
            max_iterations=_num(ex.get("max_iterations", 40), "exploration.max_iterations", int, nonneg=True),
            samples_per_axis=_num(ex.get("samples_per_axis", 10), "exploration.samples_per_axis",
                                  int, positive=True),
            eps=_num(ex.get("eps", 1e-6), "exploration.eps", positive=True),
            boundary=boundary, include_stay=bool(system.get("include_stay", True)),
            truth_support=_num(truth.get("support", 0.4), "truth.support", nonneg=True),
            truth_grid=_num(truth.get("grid", 50), "truth.grid", int, positive=True),
            truth_sigma_g=truth.get("sigma_g"), truth_length_scale=truth.get("length_scale"),
            seed_truth=_num(_get(seeds, "truth", "seeds"), "seeds.truth", int, nonneg=True),
            seed_noise=_num(_get(seeds, "noise", "seeds"), "seeds.noise", int, nonneg=True),
            seed_explore=_num(_get(seeds, "explore", "seeds"), "seeds.explore", int, nonneg=True),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("", str(exc)) from None


def load_config(path) -> tuple[ExperimentConfig, str]:
    """Parse and validate ``path``; also returns the SHA-256 of the raw file."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError("", f"not valid YAML: {exc}") from None
    return config_from_dict(doc), hashlib.sha256(raw).hexdigest()
