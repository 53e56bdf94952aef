"""Plain-text parameter sets: one ``name v1 v2 ...`` line per flat array.

Blank lines and ``#`` comments are ignored.  Shapes are implied by the
consumer, which checks lengths when it unpacks a set.
"""
from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np

ParamSet = dict  # name -> 1-D float64 array


class ParamError(ValueError):
    pass


def parse_params(text: str) -> ParamSet:
    out: ParamSet = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, *vals = line.split()
        if name in out:
            raise ParamError(f"line {lineno}: duplicate parameter {name!r}")
        try:
            arr = np.array([float(v) for v in vals], dtype=np.float64)
        except ValueError as exc:
            raise ParamError(f"line {lineno}: {exc}") from exc
        if not np.all(np.isfinite(arr)):
            raise ParamError(f"line {lineno}: non-finite value in {name!r}")
        out[name] = arr
    return out


def format_params(params: Mapping[str, np.ndarray]) -> str:
    lines = []
    for name in params:
        vals = " ".join(repr(float(v)) for v in np.ravel(params[name]))
        lines.append(f"{name} {vals}")
    return "\n".join(lines) + "\n"


def load_params(path) -> ParamSet:
    return parse_params(Path(path).read_text())


def save_params(params: Mapping[str, np.ndarray], path) -> None:
    Path(path).write_text(format_params(params))


def take(params: Mapping[str, np.ndarray], name: str, shape) -> np.ndarray:
    if name not in params:
        raise ParamError(f"missing parameter {name!r}")
    arr = np.asarray(params[name], dtype=np.float64)
    need = int(np.prod(shape))
    if arr.size != need:
        raise ParamError(f"{name!r} has {arr.size} values, expected {need} for shape {shape}")
    return arr.reshape(shape)
