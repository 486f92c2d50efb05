"""
Configuration management for the CAPE-KG engine.
Built-in defaults, an optional key=value config file, environment variables
(.env supported) and command-line overrides, in that order of precedence.
"""
import configparser
import logging
import os
from dataclasses import dataclass, field, replace

import psutil
from dotenv import load_dotenv

from .errors import ConfigError

# Load environment variables from .env if present
load_dotenv()

# Config-file key -> dataclass field, per section
_FILE_KEYS = {
    "retrieval": {"tau": "tau", "lambda": "lam", "suppression_alpha": "suppression_alpha"},
    "reasoner": {"demos_k": "demos_k", "max_hops": "max_hops"},
    "eval": {"batch": "batch", "jobs": "jobs", "shuffle_seed": "shuffle_seed"},
}


def default_jobs():
    """Worker count for evaluation: logical cores, at least one."""
    return psutil.cpu_count(logical=True) or 1


@dataclass(frozen=True)
class RetrievalConfig:
    """Progressive retrieval knobs: threshold tau, outlier width lambda, suppression alpha."""
    tau: float = 0.6
    lam: float = 1.0
    suppression_alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must be in (0, 1], got {self.tau}")
        if not self.lam > 0.0:
            raise ConfigError(f"lambda must be > 0, got {self.lam}")
        if not 0.0 <= self.suppression_alpha <= 1.0:
            raise ConfigError(f"suppression_alpha must be in [0, 1], got {self.suppression_alpha}")


@dataclass(frozen=True)
class ReasonerConfig:
    demos_k: int = 4
    max_hops: int = 8

    def __post_init__(self):
        if self.demos_k < 1:
            raise ConfigError(f"demos_k must be >= 1, got {self.demos_k}")
        if self.max_hops < 1:
            raise ConfigError(f"max_hops must be >= 1, got {self.max_hops}")


@dataclass(frozen=True)
class EvalConfig:
    batch: str = "1"
    jobs: int = field(default_factory=default_jobs)
    shuffle_seed: int | None = None

    def __post_init__(self):
        parse_batch(self.batch)
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")


@dataclass(frozen=True)
class OracleSettings:
    """Live-endpoint settings, read from the environment."""
    provider: str = "openai"
    base_url: str | None = None
    model: str | None = None
    api_key: str | None = None
    gemini_api_key: str | None = None
    live: bool = False
    max_inflight: int = 4
    timeout: float = 60.0

    @classmethod
    def from_env(cls):
        try:
            max_inflight = int(os.getenv("CAPEKG_LLM_MAX_INFLIGHT", "4"))
            timeout = float(os.getenv("CAPEKG_LLM_TIMEOUT", "60"))
        except ValueError as e:
            raise ConfigError(f"bad oracle environment value: {e}") from e
        return cls(
            provider=os.getenv("CAPEKG_LLM_PROVIDER", "openai").strip().lower(),
            base_url=os.getenv("CAPEKG_LLM_BASE_URL"),
            model=os.getenv("CAPEKG_LLM_MODEL"),
            api_key=os.getenv("CAPEKG_LLM_API_KEY"),
            gemini_api_key=os.getenv("GEMINI_API_KEY"),
            live=os.getenv("CAPEKG_LIVE", "").strip().lower() in ("1", "true", "yes"),
            max_inflight=max_inflight,
            timeout=timeout,
        )


@dataclass(frozen=True)
class AppConfig:
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    reasoner: ReasonerConfig = field(default_factory=ReasonerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    oracles: OracleSettings = field(default_factory=OracleSettings.from_env)


def parse_batch(value):
    """'all' -> None, otherwise a positive batch size."""
    text = str(value).strip().lower()
    if text == "all":
        return None
    try:
        size = int(text)
    except ValueError:
        raise ConfigError(f"batch must be a positive integer or 'all', got {value!r}") from None
    if size < 1:
        raise ConfigError(f"batch must be a positive integer or 'all', got {value!r}")
    return size


def _optional_int(raw):
    return None if raw.strip().lower() in ("", "none") else int(raw)


# Converters for config-file strings, by dataclass field
_CONVERTERS = {
    "tau": float,
    "lam": float,
    "suppression_alpha": float,
    "demos_k": int,
    "max_hops": int,
    "batch": str.strip,
    "jobs": int,
    "shuffle_seed": _optional_int,
}


def _coerce(name, raw):
    try:
        return _CONVERTERS[name](raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def read_config_file(path):
    """
    Parse a key=value config file into {section: {field: value}}.
    Unknown sections or keys are rejected.
    """
    parser = configparser.ConfigParser()
    try:
        with open(path, "r", encoding="utf-8") as handle:
            parser.read_file(handle)
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e.strerror}") from e
    except configparser.Error as e:
        raise ConfigError(f"malformed config file {path}: {e}") from e

    values = {}
    for section in parser.sections():
        if section not in _FILE_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in _FILE_KEYS[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]")
            name = _FILE_KEYS[section][key]
            values[section][name] = _coerce(name, raw)
    return values


def load_config(path=None, overrides=None):
    """
    Build the effective AppConfig.
    `overrides` maps section -> {field: value}; None values are ignored so
    unset command-line flags fall through to the file and the defaults.
    """
    config = AppConfig()
    layers = []
    if path:
        layers.append(read_config_file(path))
        logging.info(f"⚙️ Loaded config file {path}")
    if overrides:
        layers.append(overrides)

    for layer in layers:
        for section, values in layer.items():
            values = {k: v for k, v in values.items() if v is not None}
            if values:
                config = replace(config, **{section: replace(getattr(config, section), **values)})
    return config
