# utils.py: shared helpers (dirs, hashing, json, flat configs, zip checkpoints)
import io, os, re, json, hashlib, zipfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from .errors import ConfigError

# fixed zip timestamp so checkpoint bytes only depend on their content
ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def ensure_dir(p: str) -> None:
    os.makedirs(p, exist_ok=True)


def sha256_bytes(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def load_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def load_json_safe(path: Path, default: Any) -> Any:
    """
    Load JSON file if it exists, otherwise return default.
    Any parse error also returns default.
    """
    if not path.exists():
        return default
    try:
        with path.open("r", encoding="utf-8") as f:
            return json.load(f)
    except Exception:
        return default


def save_json(path: str, data: Any, pretty: bool = False, compact: bool = False) -> None:
    ensure_dir(os.path.dirname(path) or ".")
    if compact:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, ensure_ascii=False, separators=(",", ":"), sort_keys=True)
    elif pretty:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, ensure_ascii=False, indent=2, sort_keys=True)
    else:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, ensure_ascii=False)


# ---------------- flat key=value configs ---------------- #
def parse_kv_lines(lines: Iterable[str], source: str = "<config>") -> Dict[str, str]:
    out: Dict[str, str] = {}
    for no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if not key:
            raise ConfigError(f"{source}:{no}: empty key")
        out[key] = value.strip()
    return out


def load_kv_config(path: str) -> Dict[str, Any]:
    """
    Read a flat config file. Two shapes are accepted:

    1) key=value lines (recommended), `#` starts a comment line
    2) a flat JSON object, when the file ends with .json
    """
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    if path.lower().endswith(".json"):
        raw = load_json(path)
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a flat JSON object")
        return dict(raw)
    with open(path, "r", encoding="utf-8") as f:
        return parse_kv_lines(f, source=path)


def dump_kv(data: Mapping[str, Any]) -> str:
    return "".join(f"{k}={format_value(data[k])}\n" for k in sorted(data))


def format_value(v: Any) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(format_value(x) for x in v)
    if v is None:
        return ""
    return str(v)


def as_bool(v: Any) -> bool:
    if isinstance(v, bool):
        return v
    if isinstance(v, (int, float)):
        return bool(v)
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def as_list(v: Any, cast=str) -> List[Any]:
    if v is None:
        return []
    if isinstance(v, (list, tuple)):
        items = list(v)
    else:
        items = [p for p in re.split(r"[,\s]+", str(v)) if p]
    try:
        return [cast(x) for x in items]
    except (TypeError, ValueError) as e:
        raise ConfigError(f"cannot parse list {v!r}: {e}") from e


# ---------------- deterministic array containers ---------------- #
def write_array_zip(path: str, arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any]) -> None:
    """
    Write `meta.json` plus one `.npy` member per array. Member order and
    timestamps are fixed, so equal content gives equal bytes.
    """
    ensure_dir(os.path.dirname(path) or ".")
    tmp = f"{path}.tmp"
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("meta.json", date_time=ZIP_EPOCH)
        zf.writestr(info, json.dumps(meta, sort_keys=True, ensure_ascii=False, indent=1))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=ZIP_EPOCH), buf.getvalue())
    os.replace(tmp, path)


def read_array_zip(path: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    arrays: Dict[str, np.ndarray] = {}
    with zipfile.ZipFile(path, "r") as zf:
        meta = json.loads(zf.read("meta.json").decode("utf-8"))
        for name in zf.namelist():
            if not name.endswith(".npy"):
                continue
            with zf.open(name) as f:
                arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(f.read()), allow_pickle=False)
    return arrays, meta


def write_text(path: str, text: str) -> None:
    ensure_dir(os.path.dirname(path) or ".")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def dtype_from_name(name: Optional[str]) -> np.dtype:
    name = (name or "float64").lower()
    if name not in ("float64", "float32"):
        raise ConfigError(f"unsupported dtype {name!r} (float64 | float32)")
    return np.dtype(name)
