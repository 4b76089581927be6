"""
טעינת קובץ ההגדרות (key = value) ולוולידציה
"""
import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from dotenv import dotenv_values
from pydantic import ValidationError

from src.data_schemas import ArchitectureSpec, ExperimentConfig

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """מפתח לא מוכר, ערך לא חוקי או קלט חסר; ההודעה מציינת את המפתח"""


def _describe(error: ValidationError) -> str:
    first = error.errors()[0]
    key = ".".join(str(part) for part in first["loc"]) or "<config>"
    return f"{key}: {first['msg']}"


def _read_values(path: Union[str, Path]) -> Dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config: file not found: {path}")
    return {key: value for key, value in dotenv_values(path).items() if value is not None}


def load_config(path: Optional[Union[str, Path]] = None, **overrides) -> ExperimentConfig:
    """dotenv_values ואז ExperimentConfig; דריסות (למשל seed מהשורה) גוברות על הקובץ"""
    values: Dict[str, object] = _read_values(path) if path is not None else {}
    values.update({key: value for key, value in overrides.items() if value is not None})
    try:
        config = ExperimentConfig(**values)
    except ValidationError as e:
        raise ConfigError(_describe(e)) from None
    logger.debug(f"Loaded config from {path or '<defaults>'} (hash {config_hash(config)[:12]})")
    return config


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_spec_file(path: Union[str, Path]) -> List[Tuple[str, ArchitectureSpec]]:
    """קובץ מפרטים: שורות `name.field = value`, בסדר ההופעה הראשונה של כל שם"""
    grouped: Dict[str, Dict[str, str]] = {}
    for key, value in _read_values(path).items():
        name, sep, field_name = key.partition(".")
        if not sep or not name or not field_name:
            raise ConfigError(f"{key}: spec keys must look like name.field")
        grouped.setdefault(name, {})[field_name] = value

    entries = []
    for name, fields in grouped.items():
        try:
            entries.append((name, ArchitectureSpec(**fields)))
        except ValidationError as e:
            raise ConfigError(f"{name}.{_describe(e)}") from None
    if not entries:
        raise ConfigError(f"specs: no architecture specs in {path}")
    return entries
