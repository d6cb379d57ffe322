"""Experiment configuration: flat key-value text with sections.

Every knob has a default; `pacer config --print-defaults` emits the full
file.  Seeds follow the pairing convention: run i of a batch derives its
instance stream from (seed, i, 0) and its arrival/learner streams from
(seed, i, 1), so different learners see identical arrivals.
"""

from __future__ import annotations

import configparser
import io
import math
import os
from dataclasses import dataclass, field, fields

from .errors import ConfigError

BENCHMARKS = ("bandits", "bidding", "fixture")


@dataclass
class ExperimentConfig:
    # [experiment]
    benchmark: str = "bandits"
    horizon: int = 1000
    n_sims: int = 20
    seed: int = 1
    out: str = "pacer-out"
    workers: int = 1
    # [bandits]
    d: int = 5
    n: int = 10
    rho: float = 4.0
    noise_pairs: tuple = ((0.0, 0.0),)  # (reward, context) pairs
    learners: tuple = ("known",)
    moving_average: bool = False
    window: int = 250
    # [learner]
    nu: float | None = None
    ridge_penalty: float = 0.001
    perturb_scale: float = 0.3
    warm_actions: float | None = None
    # [dual]
    geometry: str = "euclidean"
    q_diag: tuple | None = None
    step_scale: float = 1.0
    # [bidding]
    k_clients: int = 20
    t_logs: int = 20000
    batch: int = 128
    alpha: float = 0.95
    budget_frac: float = 0.4
    conv_a: float = 2.0
    conv_b: float = 6.0
    conv_const: float | None = None
    q_low: float = 0.5
    q_high: float = 1.5
    mp_mu: float = math.log(0.35)
    mp_sigma: float = 0.5
    budget_spread: float = 0.5
    bid_step_scale: float = 8.0
    bid_lam_init: float = 0.5
    gammas: tuple = (1.0,)
    seeds: int = 20
    logs_path: str | None = None
    # [fixture]
    fixture_name: str = "gamma-half"
    fixture_file: str | None = None
    gamma_grid: int = 1001
    n_lambdas: int = 50

    def validate(self) -> "ExperimentConfig":
        if self.benchmark not in BENCHMARKS:
            raise ConfigError(f"benchmark must be one of {BENCHMARKS}")
        if self.horizon < 1:
            raise ConfigError("T must be >= 1")
        if self.n_sims < 1 or self.seeds < 1:
            raise ConfigError("n_sims and seeds must be >= 1")
        if self.logs_path and not os.path.exists(self.logs_path):
            raise ConfigError(f"logs file not found: {self.logs_path}")
        if self.fixture_file and not os.path.exists(self.fixture_file):
            raise ConfigError(f"fixture file not found: {self.fixture_file}")
        for kind in self.learners:
            if kind not in ("known", "lsq", "ridge", "ridge_perturb", "thompson"):
                raise ConfigError(f"unknown learner kind {kind!r}")
        return self


_SECTIONS = {
    "experiment": ("benchmark", "horizon", "n_sims", "seed", "out", "workers"),
    "bandits": ("d", "n", "rho", "noise_pairs", "learners", "moving_average", "window"),
    "learner": ("nu", "ridge_penalty", "perturb_scale", "warm_actions"),
    "dual": ("geometry", "q_diag", "step_scale"),
    "bidding": (
        "k_clients",
        "t_logs",
        "batch",
        "alpha",
        "budget_frac",
        "budget_spread",
        "conv_a",
        "conv_b",
        "conv_const",
        "q_low",
        "q_high",
        "mp_mu",
        "mp_sigma",
        "bid_step_scale",
        "bid_lam_init",
        "gammas",
        "seeds",
        "logs_path",
    ),
    "fixture": ("fixture_name", "fixture_file", "gamma_grid", "n_lambdas"),
}

_INI_NAMES = {"horizon": "T", "fixture_name": "name", "fixture_file": "file"}


def _render_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join("/".join(format(x, "g") for x in pair) for pair in value)
        return ", ".join(
            v if isinstance(v, str) else format(v, "g") for v in value
        )
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_ini(cfg: ExperimentConfig) -> str:
    out = io.StringIO()
    for section, keys in _SECTIONS.items():
        out.write(f"[{section}]\n")
        for key in keys:
            out.write(f"{_INI_NAMES.get(key, key)} = {_render_value(getattr(cfg, key))}\n")
        out.write("\n")
    return out.getvalue()


def _parse_noise_pairs(text: str) -> tuple:
    pairs = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split("/")
        if len(parts) != 2:
            raise ConfigError(f"noise pair {chunk!r} must look like reward/context")
        pairs.append((float(parts[0]), float(parts[1])))
    if not pairs:
        raise ConfigError("noise_pairs must contain at least one pair")
    return tuple(pairs)


def _parse_tuple(text: str, conv) -> tuple:
    items = [chunk.strip() for chunk in text.split(",") if chunk.strip()]
    return tuple(conv(v) for v in items)


def _assign(cfg: ExperimentConfig, key: str, raw: str) -> None:
    raw = raw.strip()
    spec = {f.name: f for f in fields(ExperimentConfig)}[key]
    if raw == "":
        if key in ("nu", "warm_actions", "conv_const", "q_diag", "logs_path", "fixture_file"):
            setattr(cfg, key, None)
            return
        return  # keep default
    try:
        if key == "noise_pairs":
            setattr(cfg, key, _parse_noise_pairs(raw))
        elif key == "learners":
            setattr(cfg, key, _parse_tuple(raw, str))
        elif key in ("gammas", "q_diag"):
            setattr(cfg, key, _parse_tuple(raw, float))
        elif key == "moving_average":
            setattr(cfg, key, raw.lower() in ("1", "true", "yes", "on"))
        elif spec.type in ("int",):
            setattr(cfg, key, int(raw))
        elif spec.type in ("float", "float | None"):
            setattr(cfg, key, float(raw))
        else:
            setattr(cfg, key, raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def load_config(path: str | None = None) -> ExperimentConfig:
    """Defaults overlaid with the file's sections, then validated."""
    cfg = ExperimentConfig()
    if path is None:
        return cfg.validate()
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    ini_to_field = {}
    for section, keys in _SECTIONS.items():
        for key in keys:
            ini_to_field[(section, _INI_NAMES.get(key, key))] = key
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for option, raw in parser[section].items():
            field_name = ini_to_field.get((section, option))
            if field_name is None:
                raise ConfigError(f"{path}: unknown key {option!r} in [{section}]")
            _assign(cfg, field_name, raw)
    return cfg.validate()
