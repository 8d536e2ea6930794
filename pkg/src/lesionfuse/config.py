"""Flat key = value configuration for training runs.

Syntax: one ``key = value`` pair per line, ``#`` starts a comment, blank
lines ignored.  Keys are dotted (``forest.n_trees``); values are typed per
the schema below.  CLI ``--set key=value`` flags override file values.
"""

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import DataError


@dataclass
class TrainSettings:
    labels_csv: str = ""
    images_dir: str = ""
    output_dir: str = ""
    seed: int = 0
    validation_fraction: float = 0.2
    threads: int = 0  # 0 = one worker per cpu, capped by LESIONFUSE_THREADS
    roi_margin_frac: float = 0.1
    roi_invert_foreground: bool = False
    roi_median_filter: bool = True
    forest_n_trees: int = 200
    forest_mtry: int = 0  # 0 = floor(sqrt(n_features))
    forest_max_depth: int = 0  # 0 = unlimited
    forest_min_samples_leaf: int = 1
    forest_hard_vote: bool = False
    cnn_input_side: int = 256
    cnn_learning_rate: float = 0.01
    cnn_momentum: float = 0.9
    cnn_batch_size: int = 16
    cnn_epochs: int = 10
    cnn_patch_aggregate: str = "mean"
    fusion_weight: float = 0.5  # used when validation_fraction = 0
    metadata_timestamp: str = ""  # recorded verbatim in the bundle


# dotted config key -> TrainSettings field
_SECTION_PREFIXES = ("roi", "forest", "cnn", "fusion", "metadata")
_KEY_TO_FIELD = {}
for _f in fields(TrainSettings):
    _head = _f.name.split("_", 1)[0]
    _key = _f.name.replace("_", ".", 1) if _head in _SECTION_PREFIXES else _f.name
    _KEY_TO_FIELD[_key] = _f.name
_FIELD_TYPES = {f.name: f.type for f in fields(TrainSettings)}


def _convert(key: str, raw: str):
    ftype = _FIELD_TYPES[_KEY_TO_FIELD[key]]
    raw = raw.strip()
    try:
        if ftype is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError("expected true/false")
        if ftype is int:
            return int(raw)
        if ftype is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise DataError(f"config key {key!r}: bad value {raw!r} ({exc})") from exc


def _assign(settings: TrainSettings, key: str, raw: str) -> None:
    if key not in _KEY_TO_FIELD:
        raise DataError(f"unknown config key {key!r}")
    setattr(settings, _KEY_TO_FIELD[key], _convert(key, raw))


def parse_config(path) -> TrainSettings:
    """Parse a config file into TrainSettings."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"config file not found: {path}")
    settings = TrainSettings()
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        _assign(settings, key.strip(), raw)
    return settings


def apply_overrides(settings: TrainSettings, overrides) -> TrainSettings:
    """Apply CLI ``key=value`` overrides on top of file settings."""
    for item in overrides or ():
        if "=" not in item:
            raise DataError(f"override {item!r}: expected key=value")
        key, raw = item.split("=", 1)
        _assign(settings, key.strip(), raw)
    return settings
