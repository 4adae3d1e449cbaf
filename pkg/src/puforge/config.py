"""Flat ``key = value`` configuration files.

Lines starting with ``#`` are comments; an inline ``#`` also starts a comment.
List values are comma separated. Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from .errors import ConfigError
from .harness import DatasetSpec, ExperimentSpec
from .selection import SelectionConfig
from .trainers import TrainerConfig


def _bool(v):
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _floats(v):
    return [float(x) for x in v.split(",") if x.strip()]


def _ints(v):
    return [int(x) for x in v.split(",") if x.strip()]


def _strs(v):
    return [x.strip() for x in v.split(",") if x.strip()]


def _ratio(v):
    # accepts 0.1 or 10 (percent)
    x = float(v)
    return x / 100 if x > 1 else x


def _ratios(v):
    return [_ratio(x) for x in v.split(",") if x.strip()]


DATASET_KEYS = {"generator": str, "n": int, "d": int, "mu_sep": float, "prior": float, "noise_sd": float,
                "data_file": str}
TRAINER_KEYS = {"method": str, "r": _ratio, "alpha": float, "beta": float, "lr": float, "momentum": float,
                "batch_size": int, "epochs": int, "hidden": _ints, "gamma": float, "use_selection": _bool,
                "use_student": _bool, "use_teacher": _bool}
SELECTION_KEYS = {"strategy": str, "max_trust_frac": float, "bootstrap_frac": float, "warmup_epochs": int}
EXPERIMENT_KEYS = {"methods": _strs, "r_values": _ratios, "alpha_grid": _floats, "beta_grid": _floats,
                   "n_runs": int, "base_seed": int, "seed": int, "out": str, "workers": int}
ALL_KEYS = {**DATASET_KEYS, **TRAINER_KEYS, **SELECTION_KEYS, **EXPERIMENT_KEYS}


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key not in ALL_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = ALL_KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    return values


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, str(path))


def build_spec(values, seed=None, out=None):
    """ExperimentSpec from parsed config values; ``seed``/``out`` override the file."""
    ds = DatasetSpec(**{k: v for k, v in values.items() if k in DATASET_KEYS})
    sel = SelectionConfig(**{k: v for k, v in values.items() if k in SELECTION_KEYS})
    tkw = {k: v for k, v in values.items() if k in TRAINER_KEYS}
    if "hidden" in tkw:
        tkw["hidden"] = tuple(tkw["hidden"])
    trainer = TrainerConfig(selection=sel, **tkw)
    base_seed = values.get("base_seed", values.get("seed", 0))
    if seed is not None:
        base_seed = seed
    methods = values.get("methods", [trainer.method])
    r_values = values.get("r_values", [trainer.r])
    spec = ExperimentSpec(dataset=ds, methods=methods, r_values=r_values,
                          alpha_grid=values.get("alpha_grid"), beta_grid=values.get("beta_grid"),
                          n_runs=values.get("n_runs", 5), out=out or values.get("out"), base_seed=base_seed,
                          trainer=replace(trainer, seed=base_seed), workers=values.get("workers", 1))
    return spec
