"""
Scenario files: flat ``key = value`` lines.

* Values are Python literals (numbers, strings, lists, dicts, ``None``,
  ``True``/``False``), parsed with ``ast.literal_eval``.
* ``key = @relative/path.txt`` loads a matrix with ``numpy.loadtxt``.
* ``include relative/path.cfg`` merges another file in place; later keys win.
* ``#`` starts a comment; a trailing backslash continues a line.

Example::

    include vehicle_base.cfg
    name = "vehicle_case3"
    A_o = @vehicle_A.txt
    reference = {"kind": "sine", "amplitude": 130.0, "period": 3.0, "start": 0.5}
"""

from __future__ import annotations

import ast
import dataclasses
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidInputError
from .scheduler_sim import Scenario

MAX_INCLUDE_DEPTH = 8


def _strip_comment(raw):
    quote = None
    for i, ch in enumerate(raw):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            return raw[:i]
    return raw


def _logical_lines(text):
    buf = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw).rstrip()
        if line.endswith("\\"):
            buf += line[:-1] + " "
            continue
        line = (buf + line).strip()
        buf = ""
        if line:
            yield lineno, line
    if buf.strip():
        raise ConfigError("file ends inside a continued line")


def parse_file(path, _depth=0) -> dict:
    path = Path(path)
    if _depth > MAX_INCLUDE_DEPTH:
        raise ConfigError(f"{path}: include nesting deeper than {MAX_INCLUDE_DEPTH}")
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc.strerror}") from None
    out = {}
    for lineno, line in _logical_lines(text):
        where = f"{path}:{lineno}"
        if line.startswith("include ") or line == "include":
            target = line[len("include"):].strip().strip("\"'")
            if not target:
                raise ConfigError(f"{where}: include needs a path")
            out.update(parse_file(path.parent / target, _depth + 1))
            continue
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key.isidentifier():
            raise ConfigError(f"{where}: invalid key {key!r}")
        if value.startswith("@"):
            mpath = path.parent / value[1:].strip()
            try:
                out[key] = np.atleast_2d(np.loadtxt(mpath, ndmin=2))
            except (OSError, ValueError) as exc:
                raise ConfigError(f"{where}: cannot load matrix {mpath}: {exc}") from None
            continue
        try:
            out[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            raise ConfigError(f"{where}: cannot parse value for {key!r}: {value!r}") from None
    return out


def parse_seeds(spec):
    """``"A..B"`` (inclusive), a single integer, or a two-element list."""
    if isinstance(spec, str):
        if ".." in spec:
            a, b = spec.split("..", 1)
            try:
                lo, hi = int(a), int(b)
            except ValueError:
                raise ConfigError(f"bad seed range {spec!r}") from None
        else:
            try:
                lo = hi = int(spec)
            except ValueError:
                raise ConfigError(f"bad seed range {spec!r}") from None
    elif isinstance(spec, int):
        lo = hi = spec
    else:
        try:
            lo, hi = (int(x) for x in spec)
        except (TypeError, ValueError):
            raise ConfigError(f"bad seed range {spec!r}") from None
    if hi < lo or lo < 0:
        raise ConfigError(f"seed range {spec!r} is empty or negative")
    return lo, hi


_FIELDS = {f.name for f in dataclasses.fields(Scenario)}


def scenario_from_dict(d: dict) -> Scenario:
    unknown = sorted(set(d) - _FIELDS)
    if unknown:
        raise ConfigError(f"unknown scenario keys: {', '.join(unknown)}")
    missing = [k for k in ("name", "delta_t", "n_samples", "C_y", "ybar", "reference") if k not in d]
    if missing:
        raise ConfigError(f"missing scenario keys: {', '.join(missing)}")
    d = dict(d)
    if "seeds" in d:
        d["seeds"] = parse_seeds(d["seeds"])
    try:
        return Scenario(**d)
    except ConfigError:
        raise
    except (InvalidInputError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_scenario(path) -> Scenario:
    return scenario_from_dict(parse_file(path))
