"""Run configuration: TOML/JSON files, dotted ``key=value`` overrides, resolved snapshots.

The file is the source of truth; command-line flags only override it.  Every
key must already exist in :data:`DEFAULTS`, so typos fail loudly.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .networks import NetConfig
from .objective import LossWeights
from .training import TrainConfig, TrainingError

SNAPSHOT_NAME = "resolved_config.json"


class ConfigError(ValueError):
    pass


def _train_defaults() -> dict:
    d = TrainConfig().to_dict()
    for key in ("net", "weights", "ablation"):
        d.pop(key)
    return d


DEFAULTS = {
    "data": {
        "synthetic": 0,
        "source_dir": "",
        "impressions": 4,
        "image_size": 128,
        "period_range": [12.0, 16.0],
        "synth_seed": 0,
        "sigmas": [3.0, 5.0, 7.0],
        "crop_size": 64,
        "splits": [0.6, 0.2, 0.2],
        "split_seed": 0,
        "block_size": 16,
        "manifest": "",
    },
    "net": NetConfig().to_dict(),
    "train": _train_defaults(),
    "weights": {"lambda_rec": 100.0, "lambda_ridge": 5.0, "lambda_verif": 0.01},
    "ablation": {"flags": []},
    "eval": {"split": "test", "sigma": 5.0, "seed": 0, "quality_tool": ""},
    "paths": {"ridge": "", "verifier": "", "generator": "", "resume": "", "input": "",
              "output": "", "preprocess": True, "reports": []},
    "report": {"title": ""},
}


def _merge(base: dict, update: dict, prefix: str = "") -> None:
    for key, value in update.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be a table")
            _merge(base[key], value, path + ".")
        else:
            if isinstance(value, dict):
                raise ConfigError(f"config key {path!r} is not a table")
            base[key] = value


def read_file(path) -> dict:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            return json.loads(raw.decode("utf-8"))
        return tomllib.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


def parse_value(text: str):
    """TOML literal if it parses (numbers, booleans, arrays, quoted strings), else a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def parse_override(item: str) -> tuple[list[str], object]:
    key, sep, value = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {item!r} is not of the form key=value")
    return key.strip().split("."), parse_value(value.strip())


def set_key(cfg: dict, dotted: str, value) -> None:
    nested = value
    for k in reversed(dotted.split(".")):
        nested = {k: nested}
    _merge(cfg, nested)


def resolve(path=None, overrides=(), flags: dict | None = None) -> dict:
    """Defaults, then the file, then ``flags`` (dotted key -> value), then each
    ``a.b=value`` override in order."""
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        doc = read_file(path)
        if set(doc) == {"command", "config"}:  # a resolved snapshot
            doc = doc["config"]
        _merge(cfg, doc)
    for key, value in (flags or {}).items():
        if value is not None:
            set_key(cfg, key, value)
    for item in overrides:
        keys, value = parse_override(item)
        set_key(cfg, ".".join(keys), value)
    train_config(cfg)  # validate eagerly
    return cfg


def train_config(cfg: dict) -> TrainConfig:
    try:
        d = dict(cfg["train"])
        d["net"] = dict(cfg["net"])
        d["weights"] = dict(cfg["weights"])
        d["ablation"] = list(cfg["ablation"]["flags"])
        if d.get("sigma") is not None:
            d["sigma"] = float(d["sigma"])
        return TrainConfig.from_dict(d)
    except (TypeError, ValueError, TrainingError) as exc:
        raise ConfigError(f"invalid training configuration: {exc}") from exc


def weights(cfg: dict) -> LossWeights:
    try:
        return LossWeights(**cfg["weights"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid weights: {exc}") from exc


def write_snapshot(cfg: dict, out_dir, command: str) -> Path:
    """Write the fully resolved config (plus the subcommand) as JSON."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, "config": cfg}
    path = out / SNAPSHOT_NAME
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def read_snapshot(path) -> tuple[str, dict]:
    doc = read_file(path)
    cfg = copy.deepcopy(DEFAULTS)
    _merge(cfg, doc["config"])
    return doc["command"], cfg
