import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict

from gpmap_mcp.architect.config import config_from_dict, write_config
from gpmap_mcp.errors import ConfigInvalid

LOGGER = logging.getLogger(__name__)


def update_config_field(config_path: str, section: str, key: str, new_value: Any) -> Dict[str, Any]:
    """
    Updates one key of a scenario TOML file.

    The file is parsed, the key is set (added if absent), and the result is
    validated as a whole scenario before anything is written. On success the
    file is rewritten in normalized form: every default explicit, agents in
    id order. On failure the file is left untouched.

    Args:
        config_path: Path to the scenario TOML file.
        section: Section name (e.g. 'protocol') or agent table (e.g. 'agents.3').
        key: Key inside the section (e.g. 'budget').
        new_value: The new value; lists for vectors, nested lists for centers.

    Returns:
        Dict with success status, old_value and new_value, or error and diagnostics.
    """
    path = Path(config_path).expanduser()
    if not path.is_file():
        return {"success": False, "error": f"File not found: {config_path}"}

    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as e:
        return {"success": False, "error": f"Syntax error in config file: {e}"}

    parts = section.split(".")
    if parts[0] == "agents":
        if len(parts) != 2:
            return {"success": False, "error": f"Agent section must look like 'agents.<id>', got '{section}'"}
        table = data.setdefault("agents", {}).get(parts[1])
        if table is None:
            return {"success": False, "error": f"Agent '{parts[1]}' not found in {config_path}"}
    elif len(parts) == 1:
        table = data.setdefault(section, {})
    else:
        return {"success": False, "error": f"Unknown section '{section}'"}

    old_value = table.get(key)
    table[key] = new_value

    try:
        cfg = config_from_dict(data)
    except ConfigInvalid as e:
        return {
            "success": False,
            "error": f"Patched config is invalid: {e}",
            "diagnostics": e.diagnostics,
            "old_value": old_value,
        }

    try:
        write_config(cfg, path)
    except OSError as e:
        return {"success": False, "error": f"Could not write config file: {e}"}

    LOGGER.info("patched %s: [%s] %s = %r (was %r)", path, section, key, new_value, old_value)
    return {
        "success": True,
        "message": f"Set [{section}] {key} in {path}",
        "old_value": old_value,
        "new_value": new_value,
    }
