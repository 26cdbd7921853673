"""Run configuration for the command-line front end.

A run is described by an INI-style file with the sections ``model``,
``train``, ``curvature``, ``pnml``, ``task``, ``paths`` and ``run``. Values
are resolved in four layers, later layers winning::

    built-in defaults < per-task defaults < config file < command-line flags

Every key is typed and validated before any computation starts; unknown
sections or keys are errors.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

from .errors import ConfigurationError
from .pnml import PnmlConfig
from .train import BpboConfig, TrainConfig


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(" ", "").split(",") if v)


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(v for v in text.replace(" ", "").split(",") if v)


def _opt_float(text: str) -> Optional[float]:
    return None if text.strip() in ("", "none", "None") else float(text)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _path(text: str) -> Optional[Path]:
    return Path(text) if text.strip() else None


# section -> key -> (parser, default text)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], str]]] = {
    "model": {
        "hidden": (_int_list, "64,64"),
    },
    "train": {
        "lr": (float, "0.02"),
        "momentum": (float, "0.9"),
        "epochs": (int, "30"),
        "batch_size": (int, "32"),
        "weight_decay": (float, "0.0"),
        "early_stopping": (_bool, "no"),
    },
    "curvature": {
        "beta": (float, "1.0"),
        "delta": (float, "1e-8"),
        "labels": (str, "exact"),
    },
    "pnml": {
        "alpha": (float, "0.0"),
        "beta": (_opt_float, ""),  # empty: follow curvature.beta
    },
    "task": {
        "classes": (int, "4"),
        "dim": (int, "8"),
        "spread": (float, "2.0"),
        "n_per_class": (int, "250"),
        "val_per_class": (int, "50"),
        "test_per_class": (int, "250"),
        "noise_rate": (float, "0.4"),
        "noise_kind": (str, "symmetric"),
        "trace_every": (int, "10"),
        "trace_epochs": (int, "100"),
        "trace_beta": (float, "1.0"),
        "ood_kinds": (_str_list, "disjoint_classes,uniform_noise"),
        "ood_separation": (float, "6.0"),
        "beta_grid": (_float_list, ""),
        "corruption": (str, "gaussian_noise"),
        "severities": (_int_list, "1,2,3,4,5"),
        "corruption_seeds": (int, "5"),
        "alpha_grid": (_float_list, "0,0.01,0.0316,0.1,0.316,1,3.16,10,31.6,100,316,1000"),
        "prune_fractions": (_float_list, "0.1,0.2,0.3,0.4,0.5,0.6,0.7"),
        "prune_seeds": (int, "5"),
        "probes": (int, "40"),
        "probe_separation": (float, "3.0"),
        "oracle_steps": (int, "50"),
        "oracle_lr": (float, "0.01"),
        "oracle_lambda": (_opt_float, ""),
        "bench_examples": (int, "5"),
        "bench_reps": (int, "3"),
    },
    "paths": {
        "train_data": (_path, ""),
        "train_labels": (_path, ""),
        "input": (_path, ""),
        "input_labels": (_path, ""),
        "checkpoint": (_path, ""),
        "curvature": (_path, ""),
        "out_dir": (_path, "runs"),
    },
    "run": {
        "seed": (int, "0"),
        "workers": (int, "1"),
    },
}

# Per-task defaults applied on top of the built-in ones.
TASK_DEFAULTS: dict[str, dict[str, dict[str, str]]] = {
    "calibrate": {
        "train": {"epochs": "100"},
        "curvature": {"beta": "1.0", "delta": "1e-3"},
        "task": {"val_per_class": "250"},
    },
    "mislabel": {
        "train": {"epochs": "60", "early_stopping": "yes"},
        "curvature": {"beta": "0.001", "delta": "1e-3"},
    },
    "ood": {
        "curvature": {"beta": "0.001", "delta": "1e-8"},
    },
    "prune": {
        "train": {"epochs": "50"},
        "curvature": {"beta": "1.0", "delta": "1e-3"},
        "task": {"n_per_class": "100", "test_per_class": "500"},
    },
    "validate-oracle": {
        "curvature": {"beta": "0.5", "delta": "1e-3"},
        "task": {"n_per_class": "200"},
    },
    "bench": {
        "curvature": {"beta": "1.0", "delta": "1e-3"},
        "task": {"n_per_class": "200"},
    },
}

OOD_KINDS = ("disjoint_classes", "uniform_noise", "shifted_blobs")
CORRUPTIONS = ("gaussian_noise", "pixel_blur", "mask")


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved, validated settings; ``values[section][key]`` is typed."""

    values: dict
    task: Optional[str] = None

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def beta(self) -> float:
        return self.values["curvature"]["beta"]

    @property
    def delta(self) -> float:
        return self.values["curvature"]["delta"]

    @property
    def out_dir(self) -> Path:
        return self.values["paths"]["out_dir"]

    def train_config(self, seed: Optional[int] = None, epochs: Optional[int] = None) -> TrainConfig:
        t = self.values["train"]
        return TrainConfig(
            lr=t["lr"], momentum=t["momentum"], batch_size=t["batch_size"], weight_decay=t["weight_decay"],
            epochs=t["epochs"] if epochs is None else epochs,
            seed=self.seed if seed is None else seed,
            hidden=self.values["model"]["hidden"],
        )

    def pnml_config(self, n: int, alpha: Optional[float] = None) -> PnmlConfig:
        p = self.values["pnml"]
        return PnmlConfig(alpha=p["alpha"] if alpha is None else alpha, beta=p["beta"], n=n)

    def bpbo_config(self) -> BpboConfig:
        t = self.values["task"]
        return BpboConfig(beta=self.beta, lam=t["oracle_lambda"], steps=t["oracle_steps"], lr=t["oracle_lr"])

    def as_text_dict(self) -> dict:
        """JSON-friendly copy (paths and tuples become strings and lists)."""
        out = {}
        for section, keys in self.values.items():
            out[section] = {}
            for k, v in keys.items():
                if isinstance(v, Path):
                    v = str(v)
                elif isinstance(v, tuple):
                    v = list(v)
                out[section][k] = v
        return out


def _raw_defaults(task: Optional[str]) -> dict[str, dict[str, str]]:
    raw = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    for section, keys in TASK_DEFAULTS.get(task or "", {}).items():
        raw[section].update(keys)
    return raw


def _merge(raw: dict, section: str, key: str, value: str, origin: str) -> None:
    if section not in SCHEMA:
        raise ConfigurationError(f"{origin}: unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigurationError(f"{origin}: unknown key {key!r} in [{section}]")
    raw[section][key] = value


def read_config_file(path) -> dict[str, dict[str, str]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return {s: dict(parser[s]) for s in parser.sections()}


def parse_override(text: str) -> tuple[str, str, str]:
    """``section.key=value`` into its three parts."""
    name, sep, value = text.partition("=")
    section, dot, key = name.strip().partition(".")
    if not sep or not dot:
        raise ConfigurationError(f"override must look like section.key=value, got {text!r}")
    return section, key, value.strip()


def resolve(
    task: Optional[str] = None,
    file: Optional[dict] = None,
    overrides: Optional[list[tuple[str, str, str]]] = None,
) -> RunConfig:
    raw = _raw_defaults(task)
    for section, keys in (file or {}).items():
        for key, value in keys.items():
            _merge(raw, section, key, value, "config file")
    for section, key, value in overrides or []:
        _merge(raw, section, key, value, "command line")
    values: dict = {}
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (parse, _) in keys.items():
            try:
                values[section][key] = parse(raw[section][key])
            except ValueError as exc:
                raise ConfigurationError(f"[{section}] {key} = {raw[section][key]!r}: {exc}") from exc
    if values["pnml"]["beta"] is None:
        values["pnml"]["beta"] = values["curvature"]["beta"]
    cfg = RunConfig(values, task)
    validate(cfg)
    return cfg


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigurationError(message)


def validate(cfg: RunConfig) -> None:
    v = cfg.values
    _require(v["curvature"]["beta"] > 0, "curvature.beta must be > 0")
    _require(v["pnml"]["beta"] > 0, "pnml.beta must be > 0")
    _require(v["curvature"]["delta"] > 0, "curvature.delta must be > 0")
    _require(v["pnml"]["beta"] == v["curvature"]["beta"],
             f"pnml.beta={v['pnml']['beta']} differs from curvature.beta={v['curvature']['beta']}")
    _require(v["pnml"]["alpha"] >= 0, "pnml.alpha must be >= 0")
    _require(v["curvature"]["labels"] in ("exact", "sample"), "curvature.labels must be 'exact' or 'sample'")
    _require(len(v["model"]["hidden"]) > 0 and min(v["model"]["hidden"]) > 0, "model.hidden needs positive widths")
    _require(v["run"]["workers"] >= 1, "run.workers must be >= 1")
    t = v["task"]
    _require(t["classes"] >= 2 and t["dim"] >= 2, "task.classes and task.dim must be >= 2")
    _require(t["spread"] > 0, "task.spread must be > 0")
    _require(min(t["n_per_class"], t["val_per_class"], t["test_per_class"]) >= 1, "split sizes must be >= 1")
    _require(0 <= t["noise_rate"] < 1, "task.noise_rate must be in [0, 1)")
    _require(t["noise_kind"] in ("symmetric", "asymmetric"), "task.noise_kind must be symmetric or asymmetric")
    _require(all(k in OOD_KINDS for k in t["ood_kinds"]) and t["ood_kinds"], f"task.ood_kinds must be from {OOD_KINDS}")
    _require(all(b > 0 for b in t["beta_grid"]), "task.beta_grid entries must be > 0")
    _require(t["corruption"] in CORRUPTIONS, f"task.corruption must be one of {CORRUPTIONS}")
    _require(all(1 <= s <= 5 for s in t["severities"]) and t["severities"], "task.severities must lie in 1..5")
    _require(all(a >= 0 for a in t["alpha_grid"]) and t["alpha_grid"], "task.alpha_grid needs values >= 0")
    _require(all(0 < f < 1 for f in t["prune_fractions"]) and t["prune_fractions"], "prune fractions must lie in (0, 1)")
    _require(t["probes"] >= 2, "task.probes must be >= 2")
    _require(t["trace_every"] >= 0 and t["trace_beta"] > 0, "invalid trace settings")
    for key in ("corruption_seeds", "prune_seeds", "bench_examples", "bench_reps"):
        _require(t[key] >= 1, f"task.{key} must be >= 1")
    cfg.train_config()
    cfg.bpbo_config()
