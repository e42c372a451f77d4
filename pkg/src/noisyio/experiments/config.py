"""Declarative experiment configuration (YAML documents with per-experiment defaults)."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..errors import ConfigError

EXPERIMENTS = (
    "E1-regression",
    "E2-poisson-forward",
    "E3-poisson-inverse",
    "E4-rd-constant-operator",
    "E5-rd-hetero-operator",
)

MODE_ORDER = ("ignore", "model", "recast")

_HMC = {"n_leapfrog": 50, "n_samples": 1000, "n_burnin": 1000, "step_size": 0.01, "step_jitter": 0.1,
        "target_accept": 0.6}

_COMMON = {
    "seed": 0,
    "modes": ["ignore", "model", "recast"],
    "baselines": [],
    "priors": {"theta_std": 1.0, "latent_std": 100.0, "flat_latent": False},
    "hmc": _HMC,
    "map": {"iterations": 5000, "lr": 3e-3},
    "eval_points": 256,
    "output": "runs",
}

DEFAULTS = {
    "E1-regression": {
        "network": {"hidden": [50, 50], "activation": "tanh"},
        "data": {"n": 64, "domain": [-1.0, 1.0]},
        "noise": {"y": {"sigma_in": 0.03, "sigma_out": 0.05}},
        "baselines": ["map", "dropout(0.02)", "dropout(0.5)"],
        "dropout": {"iterations": 5000, "lr": 3e-3, "passes": 1000},
    },
    "E2-poisson-forward": {
        "network": {"hidden": [50, 50], "activation": "tanh"},
        "data": {"n_f": 51, "n_u": 0},
        "noise": {"f": {"sigma_in": 0.01, "sigma_out": 0.05}},
        "physics": {"kappa": 0.01, "lambda": 0.1},
    },
    "E3-poisson-inverse": {
        "network": {"hidden": [50, 50], "activation": "tanh"},
        "data": {"n_f": 51, "n_u": 10},
        "noise": {"f": {"sigma_in": None, "sigma_out": 0.05}, "u": {"sigma_in": 0.02, "sigma_out": 0.05}},
        "physics": {"kappa": 0.01, "lambda": 0.15},
        "priors": {"log_lambda_mean": 0.0, "log_lambda_std": 1.0},
    },
    "E4-rd-constant-operator": {
        "modes": ["model"],
        "baselines": ["map", "misspecified(0.01)", "non-synergistic"],
        "data": {"n_f": 6, "n_u": 3, "test_index": 0},
        "noise": {"f": {"sigma_in": 0.2}, "u": {"sigma_out": 0.05}},
        "map": {"iterations": 3000, "lr": 1e-2},
        "operator": {
            "checkpoint": "checkpoints/rd_constant.json",
            "train_first": False,
            "network": {"hidden": [128, 128], "p": 100, "activation": "tanh"},
            "corpus": {"n_train": 1000, "n_test": 200, "seed": 1234, "length": 0.2},
            "training": {"iterations": 10000, "batch": 64, "lr": 1e-3, "lr_decay": 0.1, "seed": 0,
                         "points_per_batch": None},
        },
    },
    "E5-rd-hetero-operator": {
        "modes": ["model"],
        "baselines": ["map", "non-synergistic"],
        "data": {"n_k": 2, "n_f": 5, "n_u": 30, "test_index": 0},
        "noise": {"k": {"sigma_in": 0.05}, "f": {"sigma_in": 0.05}, "u": {"sigma_out": 0.05}},
        "map": {"iterations": 3000, "lr": 1e-2},
        "operator": {
            "checkpoint": "checkpoints/rd_hetero.json",
            "train_first": False,
            "network": {"hidden": [200], "p": 200, "activation": "relu"},
            "corpus": {"n_train": 1000, "n_test": 100, "seed": 4321, "length": 0.2},
            "training": {"iterations": 10000, "batch": 32, "lr": 1e-3, "lr_decay": 0.1, "seed": 0,
                         "points_per_batch": 400},
        },
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def default_settings(experiment: str) -> dict:
    if experiment not in DEFAULTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose one of {', '.join(EXPERIMENTS)}")
    return _merge(_COMMON, DEFAULTS[experiment])


@dataclass
class ExperimentConfig:
    """One experiment: id plus a nested settings tree.

    Every setting has a default for its experiment; a YAML document only
    needs ``experiment:`` and whatever it overrides.
    """

    experiment: str
    settings: dict = field(default_factory=dict)
    source: Path | None = None

    def __post_init__(self):
        self.settings = _merge(default_settings(self.experiment), self.settings)
        self._validate()

    def _validate(self):
        s = self.settings
        bad = [m for m in s["modes"] if m not in MODE_ORDER]
        if bad:
            raise ConfigError(f"unknown inference modes {bad}")
        if not isinstance(s["seed"], int):
            raise ConfigError("seed must be an integer")
        for b in s["baselines"]:
            parse_baseline(b)
        theta_std = s["priors"]["theta_std"]
        if not (isinstance(theta_std, (int, float)) and theta_std > 0):
            raise ConfigError("theta prior std must be positive")
        if s["eval_points"] < 2:
            raise ConfigError("need at least two evaluation points")

    @classmethod
    def default(cls, experiment: str, **overrides) -> "ExperimentConfig":
        return cls(experiment, overrides)

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = yaml.safe_load(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        if not isinstance(doc, dict) or "experiment" not in doc:
            raise ConfigError(f"config {path} must be a mapping with an 'experiment' key")
        doc = dict(doc)
        exp = doc.pop("experiment")
        cfg = cls(exp, doc, source=path)
        return cfg

    def with_overrides(self, **over) -> "ExperimentConfig":
        return ExperimentConfig(self.experiment, _merge(self.settings, over), self.source)

    def resolve_path(self, p) -> Path:
        """Relative paths inside a config file are taken relative to that file."""
        p = Path(p)
        if p.is_absolute() or self.source is None:
            return p
        return self.source.parent / p

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, **copy.deepcopy(self.settings)}

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def __getitem__(self, key):
        return self.settings[key]


def parse_baseline(text: str) -> tuple:
    """``"dropout(0.5)" -> ("dropout", 0.5)``; ``"map" -> ("map", None)``."""
    text = str(text).strip()
    name, arg = text, None
    if "(" in text:
        if not text.endswith(")"):
            raise ConfigError(f"malformed baseline {text!r}")
        name, rest = text[:-1].split("(", 1)
        try:
            arg = float(rest)
        except ValueError:
            raise ConfigError(f"baseline {text!r} needs a numeric argument") from None
    if name not in ("map", "dropout", "non-synergistic", "misspecified"):
        raise ConfigError(f"unknown baseline {name!r}")
    if name in ("dropout", "misspecified") and arg is None:
        raise ConfigError(f"baseline {name!r} needs an argument")
    if name == "dropout" and not 0.0 < arg < 1.0:
        raise ConfigError("dropout rate must lie in (0, 1)")
    return name, arg
