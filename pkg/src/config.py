"""Configuration files for AutoCycle-VC.

Config files are JSON objects whose keys are exactly the fields of one of
the pydantic models below; unknown keys are errors. String values may
reference environment variables as ``${VAR}`` or ``${VAR:-default}``,
which is how data-root paths are kept out of shared files.

The speaker-encoder perturbation chunk length lives at
``model.chunk_len`` in ``train_se.json``; ``perturb.chunk_len`` is read as
the same setting.
"""

import json
import logging
import os
import re
from pathlib import Path
from typing import Any, Mapping, Optional, TypeVar

from pydantic import BaseModel, ValidationError

from .corpus import SyntheticCorpusConfig
from .evaluation import AblationPlan
from .speaker_encoder import SpeakerTrainConfig
from .trainer import VcTrainConfig


logger = logging.getLogger(__name__)

CONFIG_ENV_VAR = "AUTOCYCLE_CONFIG"

# Which model a config file is validated against, by command
CONFIG_MODELS: dict[str, type[BaseModel]] = {
    "make-corpus": SyntheticCorpusConfig,
    "train-se": SpeakerTrainConfig,
    "train-vc": VcTrainConfig,
    "ablate": AblationPlan,
}

ModelT = TypeVar("ModelT", bound=BaseModel)


def _format_validation_error(error: ValidationError) -> str:
    """One line per problem, with the dotted location of the offending key."""
    parts = []
    for item in error.errors():
        location = ".".join(str(p) for p in item["loc"]) or "<root>"
        parts.append(f'"{location}": {item["msg"]}')
    return "; ".join(parts)


def validate_config(data: Any, model: type[BaseModel]) -> tuple[bool, Optional[str]]:
    """Validate configuration data against a config model.

    Args:
        data: Parsed JSON content
        model: Config model class

    Returns:
        Tuple of (is_valid, error_message). Returns (True, None) if valid,
        (False, error_message) if invalid.
    """
    if not isinstance(data, dict):
        return False, f"{model.__name__} configuration must be a JSON object, got {type(data).__name__}"
    try:
        model.model_validate(data)
    except ValidationError as e:
        return False, _format_validation_error(e)
    return True, None


_ENV_REF = re.compile(r"\$\{(?P<name>[A-Za-z_][A-Za-z0-9_]*)(?::-(?P<default>[^}]*))?\}")


def expand_env_refs(value: Any) -> Any:
    """Expand ``${VAR}`` and ``${VAR:-default}`` in every string of a parsed config.

    Lets a shared config point at a machine-specific data root, e.g.
    ``"corpus": "${AUTOCYCLE_DATA:-runs}/corpus"`` in an ablation plan.

    Raises:
        ValueError: If a variable without a default is not set
    """
    if isinstance(value, dict):
        return {key: expand_env_refs(item) for key, item in value.items()}
    if isinstance(value, list):
        return [expand_env_refs(item) for item in value]
    if not isinstance(value, str):
        return value

    def lookup(match: re.Match) -> str:
        name, default = match.group("name"), match.group("default")
        if name in os.environ:
            return os.environ[name]
        if default is not None:
            return default
        raise ValueError(f'Environment variable "{name}" referenced in configuration but not set')

    return _ENV_REF.sub(lookup, value)


def read_config_file(path: str | Path) -> dict:
    """Read a JSON config file into a dict with environment references expanded.

    Raises:
        FileNotFoundError: If the file doesn't exist
        json.JSONDecodeError: If the file is not valid JSON
        ValueError: If the top level is not an object
    """
    config_path = Path(path).expanduser().resolve()
    if not config_path.exists():
        raise FileNotFoundError(f"Configuration file not found: {config_path}")

    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise json.JSONDecodeError(
            f"Invalid JSON in configuration file {config_path}: {e.msg}",
            e.doc,
            e.pos
        )

    if not isinstance(data, dict):
        raise ValueError(f"Configuration in {config_path} must be a JSON object, got {type(data).__name__}")
    return expand_env_refs(data)


def load_config(path: str | Path, model: type[ModelT]) -> ModelT:
    """Load and validate a configuration file.

    Args:
        path: JSON file
        model: Config model class the file must match

    Returns:
        Validated model instance

    Raises:
        FileNotFoundError: If the file doesn't exist
        json.JSONDecodeError: If the file is not valid JSON
        ValueError: If the content does not match the model
    """
    data = read_config_file(path)
    is_valid, error = validate_config(data, model)
    if not is_valid:
        raise ValueError(f"Invalid {model.__name__} configuration in {path}: {error}")
    logger.debug(f"Loaded {model.__name__} from {path}")
    return model.model_validate(data)


def apply_overrides(config: ModelT, overrides: Mapping[str, Any]) -> ModelT:
    """Return a copy of ``config`` with command-line values applied.

    Keys are dotted field paths (``"weights.lambda_mfcc"``); a ``None`` value
    means the flag was not given and leaves the field alone.

    Raises:
        ValueError: If a key names no field, or the result does not validate
    """
    data = config.model_dump()
    for key, value in overrides.items():
        if value is None:
            continue
        target = data
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(target.get(part), dict):
                raise ValueError(f'Unknown configuration key "{key}"')
            target = target[part]
        if parts[-1] not in target:
            raise ValueError(f'Unknown configuration key "{key}"')
        target[parts[-1]] = value

    try:
        return type(config).model_validate(data)
    except ValidationError as e:
        raise ValueError(f"Invalid {type(config).__name__} after overrides: {_format_validation_error(e)}")


def dump_config(config: BaseModel) -> dict:
    """JSON-ready snapshot of an effective config."""
    return config.model_dump(mode="json")


def get_config_path(explicit: Optional[str] = None, env_var: str = CONFIG_ENV_VAR) -> Optional[str]:
    """Config file path from the command line, else from the environment.

    Args:
        explicit: Value of ``--config`` (takes precedence)
        env_var: Environment variable checked when no flag is given

    Returns:
        Resolved path, or None when neither is set (built-in defaults apply)
    """
    path = explicit or os.environ.get(env_var)
    if not path:
        return None
    return str(Path(path).expanduser().resolve())


def resolve_config(
    model: type[ModelT],
    config_path: Optional[str],
    overrides: Mapping[str, Any],
) -> ModelT:
    """Effective config: model defaults < config file < command-line overrides."""
    config = load_config(config_path, model) if config_path else model()
    return apply_overrides(config, overrides)
