import os
import sys
from typing import Any, Callable, Dict, Iterable, Optional

from errors import ConfigError

CONFIG_FILE = "cpcscan.conf"


def _to_bool(text: str) -> bool:
    s = text.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _to_list(text: str) -> list:
    return [s.strip() for s in text.split(",") if s.strip()]


def _to_int(text: str) -> int:
    return int(text.strip())


# key -> (converter, default)
SCHEMA: Dict[str, tuple] = {
    "n": (_to_int, 1000),
    "p": (_to_int, 100),
    "sparsity": (_to_int, 20),
    "sigma": (float, 1.0),
    "scenario": (_to_list, ["independent"]),
    "ar_rho": (float, 0.5),
    "structured_tau": (float, 0.1),
    "k_min": (_to_int, 1),
    "k_max": (_to_int, 30),
    "replicates": (_to_int, 100),
    "seed": (_to_int, 0),
    "fixed_design": (_to_bool, False),
    "dof_convention": (str.strip, "sample"),
    "column_scale": (str.strip, "unit_norm"),
}


def _set(config: Dict[str, Any], key: str, raw: str, where: str) -> None:
    key = key.strip()
    if key not in SCHEMA:
        raise ConfigError(key, f"unknown key ({where})")
    convert: Callable[[str], Any] = SCHEMA[key][0]
    try:
        config[key] = convert(raw)
    except ValueError:
        raise ConfigError(key, f"invalid value {raw.strip()!r} ({where})") from None


def parse_config_text(text: str, source: str = CONFIG_FILE) -> Dict[str, Any]:
    """Parse flat `key = value` lines; blank lines and '#' comments are ignored."""
    config: Dict[str, Any] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"line {line_no}", f"expected 'key = value' in {source}, got {s!r}")
        key, raw = s.split("=", 1)
        _set(config, key, raw, f"{source}:{line_no}")
    return config


def apply_overrides(config: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """Apply `key=value` strings from the command line (--set)."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, raw = item.split("=", 1)
        _set(config, key, raw, "--set")
    return config


def load_config(path: Optional[str] = None, overrides: Optional[Iterable[str]] = None) -> Dict[str, Any]:
    """Load a run config; without a path only defaults and overrides apply."""
    config: Dict[str, Any] = {}

    if path is not None:
        if not os.path.exists(path):
            print(f"CRITICAL: Config file not found at {path}")
            sys.exit(1)
        with open(path, "r", encoding="utf-8") as f:
            config = parse_config_text(f.read(), os.path.basename(path))

    apply_overrides(config, overrides or ())

    for key, (_, default) in SCHEMA.items():
        config.setdefault(key, list(default) if isinstance(default, list) else default)

    return config
