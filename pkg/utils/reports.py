"""
Key/value report files.

Reports are plain `key=value` lines (dotenv syntax, so they load back with
python-dotenv), preceded by `#` comment lines naming the schema. Keys are
dotted paths such as `block.3.stop_iter`; lists are comma-joined; floats
are written with repr() so a rerun reproduces the file byte for byte.
"""
import math
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Union

from dotenv import dotenv_values

from engine.errors import SequenceIOError


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else str(value)
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def flatten(mapping: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in mapping.items():
        full = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten(value, f"{full}."))
        else:
            flat[full] = value
    return flat


def write_key_values(path: Union[str, Path], mapping: Mapping[str, Any],
                     header: Iterable[str] = ()) -> Path:
    path = Path(path)
    lines = [f"# {h}" for h in header]
    lines += [f"{key}={format_value(value)}" for key, value in flatten(mapping).items()]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")
    except OSError as e:
        raise SequenceIOError(f"could not write report ({e})", str(path)) from e
    return path


def read_key_values(path: Union[str, Path]) -> Dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise SequenceIOError("report not found", str(path))
    return {k: v if v is not None else "" for k, v in dotenv_values(path).items()}
