"""
Configuration Module for amsskit.

Handles environment variables, the JSON tool configuration (sample rate, STFT,
level table, MFCC recipe, model dimensions) and the config hash that is stamped
into every artifact.
"""

import os
import copy
import json
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple

from dotenv import load_dotenv

from errors import ConfigError

logger = logging.getLogger(__name__)

# Calculate the path to the root directory to ensure file access works from any location.
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

dotenv_path = os.path.join(BASE_DIR, '.env')
if os.path.exists(dotenv_path):
    load_dotenv(dotenv_path)
else:
    logger.warning(f".env file not found at {dotenv_path}. Using system environment variables.")

# --- ENVIRONMENT FLAGS ---
DEFAULT_CONFIG_PATH: str = os.path.join(BASE_DIR, 'config', 'amss.json')
AMSS_CONFIG_PATH: str = os.getenv("AMSS_CONFIG", DEFAULT_CONFIG_PATH)

LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")

# Print full tracebacks for domain errors instead of a one-line message.
DEBUG: bool = os.getenv("AMSS_DEBUG", "false").lower() in ("true", "1", "yes")

# Accept WAV input at any sample rate (no resampling is ever performed).
ALLOW_ANY_RATE: bool = os.getenv("AMSS_ALLOW_ANY_RATE", "false").lower() in ("true", "1", "yes")

TASK_IDS: Tuple[str, ...] = (
    "separate", "mute", "increase_volume", "decrease_volume",
    "pan_left", "pan_right", "lowpass", "highpass", "dereverb",
)

# --- DEFAULTS ---
DEFAULTS: Dict[str, Any] = {
    "sample_rate": 44100,
    "fft_size": 2048,
    "hop": 1024,
    "seed": 0,
    "sources": ["vocals", "drums", "bass"],
    "level_table": {
        "lowpass": {"light": 6000.0, "medium": 3000.0, "heavy": 1500.0},
        "highpass": {"light": 200.0, "medium": 500.0, "heavy": 1000.0},
        "increase_volume": {"light": 1.25, "medium": 1.5, "heavy": 2.0},
        "decrease_volume": {"light": 0.8, "medium": 0.6666666666666666, "heavy": 0.5},
        "pan_left": {"light": 0.25, "medium": 0.5, "heavy": 0.75},
        "pan_right": {"light": 0.25, "medium": 0.5, "heavy": 0.75},
        "dereverb": {"light": 0.3, "medium": 0.6, "heavy": 1.0},
    },
    "mfcc": {"n_mels": 40, "n_mfcc": 20, "fft_size": 2048, "hop": 1024},
    "reverb": {
        "comb_delays_ms": [29.7, 37.1, 41.1, 43.7],
        "allpass_delays_ms": [5.0, 1.7],
        "allpass_gains": [0.7, 0.7],
        "dry": 0.7,
        "wet": 0.3,
    },
    "augment": {"segment_s": 6.0, "gain_low": 0.25, "gain_high": 1.25, "swap_prob": 0.5},
    "model": {
        "channels": 24, "latent": 8, "heads": 6, "word_dim": 32, "emb_dim": 32,
        "key_dim": 32, "growth": 12, "bottleneck": 4,
        "fft_size": 2048, "hop": 1024, "decoder": "amss",
    },
    "micro_model": {
        "channels": 8, "latent": 4, "heads": 2, "word_dim": 8, "emb_dim": 8,
        "key_dim": 8, "growth": 4, "bottleneck": 4,
        "fft_size": 256, "hop": 128, "decoder": "amss",
    },
    "training": {
        "lr": 1e-3, "steps": 200, "batch_size": 4,
        "beta1": 0.9, "beta2": 0.999, "eps": 1e-8,
    },
}

DECODER_VARIANTS = ("amss", "no_smpocm", "no_csa")

# Adam learning rates the training schedule is tuned for.
LR_RANGE: Tuple[float, float] = (1e-4, 1e-3)


@dataclass(frozen=True)
class ModelDims:
    """Shape hyperparameters of the network (C, M, H, E, d_k, ...)."""
    channels: int
    latent: int
    heads: int
    word_dim: int
    emb_dim: int
    key_dim: int
    growth: int
    bottleneck: int
    fft_size: int
    hop: int
    decoder: str = "amss"

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


@dataclass(frozen=True)
class MfccSettings:
    n_mels: int
    n_mfcc: int
    fft_size: int
    hop: int


@dataclass(frozen=True)
class ReverbSettings:
    comb_delays_ms: Tuple[float, ...]
    allpass_delays_ms: Tuple[float, ...]
    allpass_gains: Tuple[float, ...]
    dry: float
    wet: float


@dataclass(frozen=True)
class AugmentSettings:
    segment_s: float
    gain_low: float
    gain_high: float
    swap_prob: float


@dataclass(frozen=True)
class TrainSettings:
    lr: float
    steps: int
    batch_size: int
    beta1: float
    beta2: float
    eps: float


@dataclass(frozen=True)
class ToolConfig:
    sample_rate: int
    fft_size: int
    hop: int
    seed: int
    sources: Tuple[str, ...]
    level_table: Dict[str, Dict[str, float]]
    mfcc: MfccSettings
    reverb: ReverbSettings
    augment: AugmentSettings
    model: ModelDims
    micro_model: ModelDims
    training: TrainSettings
    raw: Dict[str, Any] = field(repr=False, compare=False, default_factory=dict)
    path: Optional[str] = field(default=None, compare=False)

    @property
    def config_hash(self) -> str:
        """First 16 hex digits of SHA-256 over the canonical JSON of the settings (seed excluded)."""
        settings = {k: v for k, v in self.raw.items() if k != "seed"}
        canonical = json.dumps(settings, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def with_seed(self, seed: int) -> "ToolConfig":
        raw = copy.deepcopy(self.raw)
        raw["seed"] = int(seed)
        return config_from_dict(raw, path=self.path)


def _deep_merge(base: Dict[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _dims(section: Mapping[str, Any], name: str) -> ModelDims:
    try:
        dims = ModelDims(**section)
    except TypeError as e:
        raise ConfigError(f"invalid '{name}' section: {e}") from e
    positive = ("channels", "latent", "heads", "word_dim", "emb_dim", "key_dim", "growth", "bottleneck", "hop")
    for key in positive:
        if int(getattr(dims, key)) <= 0:
            raise ConfigError(f"{name}.{key} must be positive")
    if dims.channels % dims.heads != 0:
        raise ConfigError(f"{name}.channels ({dims.channels}) must be divisible by heads ({dims.heads})")
    if dims.word_dim % 2 != 0:
        raise ConfigError(f"{name}.word_dim must be even (two recurrent directions)")
    if dims.hop > dims.fft_size:
        raise ConfigError(f"{name}.hop must not exceed fft_size")
    if dims.decoder not in DECODER_VARIANTS:
        raise ConfigError(f"{name}.decoder must be one of {DECODER_VARIANTS}")
    return dims


def validate_config(raw: Mapping[str, Any]) -> None:
    """
    Validates a merged configuration dictionary.
    Raises ConfigError describing the first invalid entry.
    """
    if int(raw["sample_rate"]) <= 0:
        raise ConfigError("sample_rate must be positive")
    if not 0 < int(raw["hop"]) <= int(raw["fft_size"]):
        raise ConfigError("hop must be in (0, fft_size]")
    sources = list(raw["sources"])
    if not sources or len(set(sources)) != len(sources):
        raise ConfigError("sources must be a non-empty list without duplicates")
    if "other" in sources:
        raise ConfigError("'other' is not a single instrument and cannot be a target source")

    nyquist = int(raw["sample_rate"]) / 2.0
    for task, levels in raw["level_table"].items():
        if task not in TASK_IDS:
            raise ConfigError(f"level_table has unknown task '{task}'")
        for level, value in levels.items():
            if level not in ("light", "medium", "heavy"):
                raise ConfigError(f"level_table.{task} has unknown level '{level}'")
            value = float(value)
            if value <= 0:
                raise ConfigError(f"level_table.{task}.{level} must be positive")
            if task in ("lowpass", "highpass") and value >= nyquist:
                raise ConfigError(f"level_table.{task}.{level} cutoff must be below Nyquist")
            if task.startswith("pan_") and not value < 1.0:
                raise ConfigError(f"level_table.{task}.{level} pan amount must lie in (0, 1)")

    augment = raw["augment"]
    if not 0 < float(augment["gain_low"]) <= float(augment["gain_high"]):
        raise ConfigError("augment gain range must satisfy 0 < gain_low <= gain_high")
    if not 0.0 <= float(augment["swap_prob"]) <= 1.0:
        raise ConfigError("augment.swap_prob must lie in [0, 1]")
    if float(augment["segment_s"]) <= 0:
        raise ConfigError("augment.segment_s must be positive")

    mfcc = raw["mfcc"]
    if int(mfcc["n_mfcc"]) > int(mfcc["n_mels"]):
        raise ConfigError("mfcc.n_mfcc cannot exceed mfcc.n_mels")

    reverb = raw["reverb"]
    if len(reverb["allpass_delays_ms"]) != len(reverb["allpass_gains"]):
        raise ConfigError("reverb allpass delays and gains must have equal length")
    if float(reverb["dry"]) < 0 or float(reverb["wet"]) < 0:
        raise ConfigError("reverb dry and wet levels must be non-negative")

    training = raw["training"]
    low, high = LR_RANGE
    if not low <= float(training["lr"]) <= high:
        raise ConfigError(f"training.lr must lie in [{low:g}, {high:g}], got {training['lr']}")
    if int(training["steps"]) <= 0 or int(training["batch_size"]) <= 0:
        raise ConfigError("training.steps and training.batch_size must be positive")


def config_from_dict(raw_override: Mapping[str, Any], path: Optional[str] = None) -> ToolConfig:
    """
    Merges an override over DEFAULTS and builds the validated ToolConfig.

    Raises:
        ConfigError: If a value is invalid or has the wrong type
    """
    if not isinstance(raw_override, Mapping):
        raise ConfigError(f"configuration must be a JSON object, got {type(raw_override).__name__}")
    raw = _deep_merge(DEFAULTS, raw_override)
    try:
        validate_config(raw)
        return _build_config(raw, path)
    except (TypeError, ValueError, KeyError, AttributeError) as e:
        raise ConfigError(f"invalid configuration value: {e}") from e


def _build_config(raw: Dict[str, Any], path: Optional[str]) -> ToolConfig:
    reverb = raw["reverb"]
    return ToolConfig(
        sample_rate=int(raw["sample_rate"]),
        fft_size=int(raw["fft_size"]),
        hop=int(raw["hop"]),
        seed=int(raw["seed"]),
        sources=tuple(raw["sources"]),
        level_table={t: {lv: float(v) for lv, v in levels.items()} for t, levels in raw["level_table"].items()},
        mfcc=MfccSettings(**{k: int(v) for k, v in raw["mfcc"].items()}),
        reverb=ReverbSettings(
            comb_delays_ms=tuple(float(d) for d in reverb["comb_delays_ms"]),
            allpass_delays_ms=tuple(float(d) for d in reverb["allpass_delays_ms"]),
            allpass_gains=tuple(float(g) for g in reverb["allpass_gains"]),
            dry=float(reverb["dry"]),
            wet=float(reverb["wet"]),
        ),
        augment=AugmentSettings(**{k: float(v) for k, v in raw["augment"].items()}),
        model=_dims(raw["model"], "model"),
        micro_model=_dims(raw["micro_model"], "micro_model"),
        training=TrainSettings(
            lr=float(raw["training"]["lr"]),
            steps=int(raw["training"]["steps"]),
            batch_size=int(raw["training"]["batch_size"]),
            beta1=float(raw["training"]["beta1"]),
            beta2=float(raw["training"]["beta2"]),
            eps=float(raw["training"]["eps"]),
        ),
        raw=raw,
        path=path,
    )


def load_config(path: Optional[str] = None) -> ToolConfig:
    """
    Loads the JSON tool configuration.

    Args:
        path: Explicit file path. Falls back to AMSS_CONFIG, then config/amss.json.

    Returns:
        Validated ToolConfig

    Raises:
        ConfigError: If the file is unreadable or a value is invalid
    """
    path = path or AMSS_CONFIG_PATH
    if not os.path.isabs(path) and not os.path.exists(path):
        path = os.path.join(BASE_DIR, path)
    if not os.path.exists(path):
        if path != DEFAULT_CONFIG_PATH:
            raise ConfigError(f"config file not found: {path}")
        logger.warning(f"Config file not found at {path}. Using built-in defaults.")
        return config_from_dict({}, path=None)

    try:
        with open(path, 'r', encoding='utf-8') as f:
            override = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e

    cfg = config_from_dict(override, path=path)
    logger.debug(f"amsskit config loaded | {path} | hash {cfg.config_hash}")
    return cfg


_active: Optional[ToolConfig] = None


def get_config() -> ToolConfig:
    """Process-wide configuration: the one installed by use_config, else AMSS_CONFIG or config/amss.json."""
    global _active
    if _active is None:
        _active = load_config()
    return _active


def active_config() -> Optional[ToolConfig]:
    """The installed configuration, or None while it has not been loaded yet."""
    return _active


def use_config(cfg: Optional[ToolConfig]) -> None:
    """Installs cfg as the process-wide configuration; None reverts to lazy loading."""
    global _active
    _active = cfg
