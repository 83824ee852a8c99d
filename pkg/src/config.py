"""
Run configuration files and process settings.

Config files are flat dotted key/value text::

    # toy DPN without SE
    model.preset = toy
    model.se_enabled = false
    model.stages[2].k = 8
    train.seed = 7
    augment.scale_range = [0.9, 1.1]

Values are read as JSON scalars or lists where possible and as strings otherwise.
"""
import json
import logging
import os
import re
from io import StringIO
from pathlib import Path
from typing import Any, Dict, Optional, Union

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, Field, ValidationError

from .exceptions import ConfigError
from .models import RunConfig
from .network import load_preset

logger = logging.getLogger(__name__)

SECTIONS = ("model", "augment", "train", "lime")
DEFAULT_PRESET = "toy"
STAGE_ALIASES = {
    "k": "dense_increment",
    "c_r": "residual_width",
    "n": "num_substages",
    "bottleneck": "bottleneck_width",
}
_STAGE_KEY = re.compile(r"^stages\[(\d+)\]\.(\w+)$")


class Settings(BaseModel):
    """Process-level settings taken from the environment (and a .env file)."""
    log_level: str = Field(default="INFO")
    database_url: Optional[str] = None
    jobs: int = Field(default=1, ge=1)


def load_settings() -> Settings:
    load_dotenv()
    try:
        return Settings(
            log_level=os.getenv("XRAYDPN_LOG_LEVEL", "INFO").upper(),
            database_url=os.getenv("XRAYDPN_DATABASE_URL") or None,
            jobs=int(os.getenv("XRAYDPN_JOBS", "1")),
        )
    except (ValueError, ValidationError) as exc:
        raise ConfigError(f"invalid XRAYDPN_* environment setting: {exc}") from exc


def _coerce(raw: Optional[str]) -> Any:
    if raw is None:
        return None
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, Any]:
    """Flat {dotted key: value} mapping from config text."""
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped and not stripped.startswith("#") and "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
    values = dotenv_values(stream=StringIO(text), interpolate=False)
    return {key: _coerce(value) for key, value in values.items()}


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FileNotFoundError(f"Config file not found at {path}")
    return parse_config_text(text, source=str(path))


def _apply_model_key(model: Dict[str, Any], key: str, value: Any) -> None:
    match = _STAGE_KEY.match(key)
    if match:
        index, field = int(match.group(1)), match.group(2)
        if index >= len(model["stages"]):
            raise ConfigError(f"model.stages[{index}] is out of range (4 stages)")
        model["stages"][index][STAGE_ALIASES.get(field, field)] = value
    elif key.startswith("stem."):
        model["stem"][key[len("stem."):]] = value
    else:
        model[key] = value


def build_run_config(flat: Dict[str, Any], seed: Optional[int] = None) -> RunConfig:
    """Assemble and validate a RunConfig from flat keys.

    ``seed`` (the --seed flag) overrides train.seed; augment and lime seeds
    default to the training seed unless set explicitly.
    """
    sections: Dict[str, Dict[str, Any]] = {name: {} for name in SECTIONS}
    for key, value in flat.items():
        section, _, rest = key.partition(".")
        if section not in sections or not rest:
            raise ConfigError(f"unknown config key {key!r}; sections are {', '.join(SECTIONS)}")
        sections[section][rest] = value

    model_keys = sections["model"]
    preset = str(model_keys.pop("preset", DEFAULT_PRESET))
    model = load_preset(preset).model_dump()
    for key, value in model_keys.items():
        _apply_model_key(model, key, value)

    train = sections["train"]
    if seed is not None:
        train["seed"] = seed
    if "seed" not in train:
        raise ConfigError("train.seed is required (set it in the config file or pass --seed)")
    for name in ("augment", "lime"):
        sections[name].setdefault("seed", train["seed"])

    try:
        return RunConfig(model=model, augment=sections["augment"], train=train, lime=sections["lime"])
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration:\n{exc}") from exc


def load_run_config(path: Optional[Union[str, Path]] = None, seed: Optional[int] = None) -> RunConfig:
    flat = read_config_file(path) if path is not None else {}
    cfg = build_run_config(flat, seed=seed)
    logger.debug("loaded run config from %s", path or "defaults")
    return cfg
