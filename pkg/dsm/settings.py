"""
Run settings for the CLI and the experiment harness.

Defaults live in the dataclasses below. A key=value config file
(config/dsm.conf by default) overrides them, DSM_* environment variables
override the file, and command-line flags override everything.

Keys are <SECTION>_<FIELD> in upper case, e.g. RETRIEVAL_MU=1000 or
SYNTHETIC_NUM_DOCS=500; the environment form is DSM_RETRIEVAL_MU.
"""
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from dotenv import dotenv_values

from .errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = "config/dsm.conf"
ENV_PREFIX = "DSM_"
ENV_IGNORED = {"DSM_LOG_LEVEL", "DSM_CONFIG"}


@dataclass
class RetrievalSettings:
    """Dirichlet-smoothed query likelihood and reranking depth"""
    mu: float = 1000.0
    depth: int = 1000


@dataclass
class FeedbackSettings:
    """Pseudo-relevance feedback used inside experiments"""
    top_k: int = 10
    fb_terms: int = 10  # 0 keeps every term of the feedback documents
    alpha: float = 0.5
    em_tol: float = 1e-8
    em_max_iter: int = 2000


@dataclass
class EmSettings:
    """Standalone EM runs (the mmf command)"""
    tol: float = 1e-10
    max_iter: int = 10000


@dataclass
class ProfileSettings:
    points: int = 64


@dataclass
class ExperimentSettings:
    seed: int = 7
    resamples: int = 10000
    methods: str = "mmf:0.5,dsm-fixed:0.5,dsm-,dsm"


@dataclass
class SyntheticSettings:
    num_docs: int = 1000
    doc_length: int = 1000
    num_queries: int = 20
    relevant_fraction: float = 0.02
    topic_sharpness: float = 3.0
    vocab_size: int = 500
    lambda_gen: float = 0.5
    noise_spread: float = 0.0
    query_length: int = 3


@dataclass
class Settings:
    retrieval: RetrievalSettings = field(default_factory=RetrievalSettings)
    feedback: FeedbackSettings = field(default_factory=FeedbackSettings)
    em: EmSettings = field(default_factory=EmSettings)
    profile: ProfileSettings = field(default_factory=ProfileSettings)
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)
    synthetic: SyntheticSettings = field(default_factory=SyntheticSettings)


class SettingsManager:
    """Loads Settings from defaults, a key=value file and the environment."""

    def __init__(self, config_path: Optional[str] = None, environ: Optional[Mapping[str, str]] = None):
        if config_path is None and Path(DEFAULT_CONFIG_PATH).exists():
            config_path = DEFAULT_CONFIG_PATH
        self.config_path = Path(config_path) if config_path else None
        self.settings = Settings()
        self.load_settings(os.environ if environ is None else environ)

    def load_settings(self, environ: Mapping[str, str]):
        """Apply the config file (if any), then DSM_* environment variables"""
        if self.config_path is not None:
            if not self.config_path.is_file():
                raise ConfigError(f"config file not found: {self.config_path}")
            self._apply(dotenv_values(self.config_path), source=str(self.config_path), strict=True)
        overrides = {
            key[len(ENV_PREFIX):]: value
            for key, value in environ.items()
            if key.startswith(ENV_PREFIX) and key not in ENV_IGNORED
        }
        self._apply(overrides, source="environment", strict=False)

    def _lookup(self, key: str) -> Optional[Tuple[Any, str]]:
        for section_field in fields(self.settings):
            prefix = section_field.name.upper() + "_"
            if key.upper().startswith(prefix):
                section = getattr(self.settings, section_field.name)
                name = key[len(prefix):].lower()
                if name in {f.name for f in fields(section)}:
                    return section, name
        return None

    def _apply(self, values: Mapping[str, Optional[str]], source: str, strict: bool):
        for key, raw in values.items():
            target = self._lookup(key)
            if target is None:
                if strict:
                    raise ConfigError(f"{source}: unknown setting {key!r}")
                logger.debug("ignoring unknown setting %s from %s", key, source)
                continue
            if raw is None:
                raise ConfigError(f"{source}: setting {key!r} has no value")
            section, name = target
            kind = type(getattr(section, name))
            try:
                value = kind(raw.strip())
            except ValueError:
                raise ConfigError(f"{source}: setting {key!r} expects {kind.__name__}, got {raw!r}") from None
            setattr(section, name, value)
            logger.debug("%s: %s=%r", source, key, value)

    def as_dict(self) -> Dict[str, Dict[str, Any]]:
        return asdict(self.settings)
