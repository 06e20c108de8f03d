"""Pipeline configuration.

A config file is flat ``key = value`` text, one ``PipelineConfig`` field per
line; ``#`` starts a comment. Path fields left empty resolve to the standard
file names inside ``out_dir``, so a bare ``--out`` is enough to chain
``synth``, ``encode``, ``infer``, ``render`` and ``compare``.
"""
import hashlib
import logging
import os
import typing
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

from ._classes import Activation, PartitionKind
from .errors import ConfigError

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV = "AGGVAE_LOG_LEVEL"

# standard locations inside out_dir
DEFAULT_FILES = {
    "boundaries_old": "boundaries_old.geojson",
    "boundaries_new": "boundaries_new.geojson",
    "data_old": "data_old.csv",
    "data_new": "data_new.csv",
    "truth": "truth.csv",
    "training_set": "training_set.bin",
    "decoder": "decoder.bin",
}


@dataclass(frozen=True)
class PipelineConfig:
    seed: Optional[int] = None
    out_dir: str = "aggvae-out"

    boundaries_old: str = ""
    boundaries_new: str = ""
    data_old: str = ""
    data_new: str = ""
    truth: str = ""
    training_set: str = ""
    decoder: str = ""

    resolution: int = 12

    lengthscale_shape: float = 3.0
    lengthscale_scale: float = 3.0
    sigma_scale: float = 0.05

    training_size: int = 20000
    hidden_layers: str = ""
    latent_dim: int = 0
    activation: str = Activation.TANH
    epochs: int = 200
    batch_size: int = 100
    learning_rate: float = 1e-3
    noise_sigma: float = 0.0
    encode_scaled: bool = False

    chains: int = 4
    warmup: int = 200
    samples: int = 1000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    intercept_scale: float = 5.0
    s_scale: float = 1.0

    rows_old: int = 2
    cols_old: int = 2
    rows_new: int = 3
    cols_new: int = 3
    extent: str = "0,0,1,1"
    partition_kind: str = PartitionKind.RECT
    voronoi_count: int = 9
    tests_per_unit: int = 1000
    skew: float = 0.0
    b0_true: float = -1.0
    lengthscale_true: float = 0.8
    sigma_true: float = 0.08

    threads: int = 0
    log_every: int = 10

    def __post_init__(self) -> None:
        if self.activation not in Activation.TYPES:
            raise ConfigError(f"activation must be one of {Activation.TYPES}, got {self.activation!r}.")
        if self.partition_kind not in PartitionKind.TYPES:
            raise ConfigError(f"partition_kind must be one of {PartitionKind.TYPES}, got {self.partition_kind!r}.")
        if not 0.0 < self.target_accept < 1.0:
            raise ConfigError(f"target_accept must lie in (0, 1), got {self.target_accept}.")
        for name in ("resolution", "training_size", "epochs", "batch_size", "chains", "warmup", "samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}.")
        for name in ("latent_dim", "threads", "log_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}.")
        self.extent_tuple()
        self.hidden()

    def path(self, name: str) -> Path:
        """Configured path, or the standard file name inside ``out_dir``."""
        value = getattr(self, name)
        return Path(value) if value else Path(self.out_dir) / DEFAULT_FILES[name]

    def extent_tuple(self) -> Tuple[float, float, float, float]:
        try:
            values = tuple(float(v) for v in self.extent.split(","))
        except ValueError as exc:
            raise ConfigError(f"extent must be four comma-separated numbers, got {self.extent!r}.") from exc
        if len(values) != 4 or not (values[2] > values[0] and values[3] > values[1]):
            raise ConfigError(f"extent must be x0,y0,x1,y1 with positive area, got {self.extent!r}.")
        return values

    def hidden(self) -> Optional[Tuple[int, ...]]:
        if not self.hidden_layers.strip():
            return None
        try:
            widths = tuple(int(v) for v in self.hidden_layers.split(","))
        except ValueError as exc:
            raise ConfigError(f"hidden_layers must be comma-separated integers, got {self.hidden_layers!r}.") from exc
        if any(w < 1 for w in widths):
            raise ConfigError("hidden layer widths must be positive.")
        return widths

    @property
    def worker_count(self) -> Optional[int]:
        return self.threads or None


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _field_types() -> Dict[str, type]:
    hints = typing.get_type_hints(PipelineConfig)
    return {f.name: hints[f.name] for f in fields(PipelineConfig)}


def _coerce(key: str, raw: str, kind) -> object:
    optional = typing.get_origin(kind) is Union and type(None) in typing.get_args(kind)
    if optional:
        if raw.lower() in ("", "none"):
            return None
        kind = next(arg for arg in typing.get_args(kind) if arg is not type(None))
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot read {raw!r} as {kind.__name__}.") from exc


def parse_config(text: str, source: str = "<config>") -> PipelineConfig:
    types = _field_types()
    values = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected 'key = value', got {line!r}.")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{source}:{number}: unknown key {key!r}.")
        if key in values:
            raise ConfigError(f"{source}:{number}: {key!r} given twice.")
        values[key] = _coerce(key, raw, types[key])
    return PipelineConfig(**values)


def load_config(path: Union[str, Path, None] = None, **overrides) -> PipelineConfig:
    """Read ``path`` (defaults when None), then apply non-None ``overrides``."""
    if path is None:
        config = PipelineConfig()
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"Cannot read config {path}: {exc}") from exc
        config = parse_config(text, str(path))

    changes = {key: value for key, value in overrides.items() if value is not None}
    unknown = set(changes) - set(_field_types())
    if unknown:
        raise ConfigError(f"Unknown override(s): {sorted(unknown)}.")
    return replace(config, **changes) if changes else config


def dump(config: PipelineConfig) -> str:
    lines = []
    for key, value in asdict(config).items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {'' if value is None else value}")
    return "\n".join(lines) + "\n"


def config_hash(config: PipelineConfig) -> str:
    return hashlib.sha256(dump(config).encode("utf-8")).hexdigest()


def provenance(config: PipelineConfig, **extra) -> Dict:
    info = {"config_hash": config_hash(config), "seed": config.seed}
    info.update(extra)
    return info


def log_level(default: str = "INFO") -> str:
    return os.getenv(LOG_LEVEL_ENV, default).upper()
