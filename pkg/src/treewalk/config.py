"""Flat key-value configuration files (INI sections).

A config carries at most three sections::

    [law]
    family = two_point_extinction   # or two_point_binary
    a = 1.0
    q0 = 0.44

    [run]
    seed = 7
    out_dir = runs
    format = csv                    # csv | jsonl (jsonl mirrors are always written)
    workers = 1

    [experiment]
    name = yr-asymptotics
    environments = 120
    grid = 6,25,100
    depth_cap = 72
    node_budget = 400000
    replicas = 128

Unknown keys are rejected so typos fail loudly; every value is a scalar
or a comma-separated list.  ``law`` resolves to a solved
:class:`~treewalk.marks.MarkLaw` at load time.
"""

from __future__ import annotations

import configparser
import io
from pathlib import Path

from .errors import ConfigError
from .marks import MarkLaw, solve_two_point_marks

_LAW_KEYS = {"family", "a", "q0"}
_RUN_KEYS = {"seed", "out_dir", "format", "workers"}
_EXPERIMENT_KEYS = {
    "name",
    "environments",
    "grid",
    "depth_cap",
    "node_budget",
    "replicas",
    "excursion_cap",
    "survival_proxy_depth",
    "dhat_depth",
    "samples",
    "grid_steps",
    "state_cap",
    "lambda_grid",
}

DEFAULT_LAW = {"family": "two_point_extinction", "a": "1.0", "q0": "0.44"}
DEFAULT_BINARY_LAW = {"family": "two_point_binary", "a": "1.0"}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, dict[str, str]]:
    """Parse INI text into {section: {key: value}} with strict validation."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {source}: {exc}") from exc
    out: dict[str, dict[str, str]] = {}
    allowed = {"law": _LAW_KEYS, "run": _RUN_KEYS, "experiment": _EXPERIMENT_KEYS}
    for section in cp.sections():
        if section not in allowed:
            raise ConfigError(f"{source}: unknown section [{section}]")
        out[section] = {}
        for key, value in cp.items(section):
            if key not in allowed[section]:
                raise ConfigError(f"{source}: unknown key '{key}' in section [{section}]")
            out[section][key] = value.strip()
    return out


def load_config(path: str | Path) -> dict[str, dict[str, str]]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))


def law_from_config(cfg: dict[str, dict[str, str]]) -> MarkLaw:
    """Solve the mark law described by the [law] section (or the default)."""
    section = dict(DEFAULT_LAW)
    section.update(cfg.get("law", {}))
    family = section["family"]
    try:
        a = float(section["a"])
    except ValueError as exc:
        raise ConfigError(f"[law] a: not a number ({section['a']!r})") from exc
    if family == "two_point_binary":
        return solve_two_point_marks(a)
    if family == "two_point_extinction":
        try:
            q0 = float(section.get("q0", "0.44"))
        except ValueError as exc:
            raise ConfigError(f"[law] q0: not a number ({section.get('q0')!r})") from exc
        return solve_two_point_marks(a, q0)
    raise ConfigError(f"[law] family: unknown family {family!r}")


def get_int(section: dict[str, str], key: str, default: int) -> int:
    raw = section.get(key)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"key '{key}': not an integer ({raw!r})") from exc


def get_float(section: dict[str, str], key: str, default: float) -> float:
    raw = section.get(key)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"key '{key}': not a number ({raw!r})") from exc


def get_floats(section: dict[str, str], key: str, default: tuple[float, ...]) -> tuple[float, ...]:
    raw = section.get(key)
    if raw is None:
        return default
    try:
        return tuple(float(tok) for tok in raw.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"key '{key}': not a number list ({raw!r})") from exc


def dump_config(cfg: dict[str, dict[str, str]]) -> str:
    """Canonical text form (sorted keys) used for hashing and manifests."""
    buf = io.StringIO()
    for section in sorted(cfg):
        buf.write(f"[{section}]\n")
        for key in sorted(cfg[section]):
            buf.write(f"{key} = {cfg[section][key]}\n")
        buf.write("\n")
    return buf.getvalue()
