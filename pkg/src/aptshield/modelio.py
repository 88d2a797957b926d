"""Plain-text model container shared by the autoencoder and graph autoencoder.

Layout::

    APTSHIELD-AE
    version 1
    field d_in 5
    ...
    array W_enc 5 3
    <one matrix row per line, space-separated decimals>
    end

Floats are written with ``repr``, which round-trips float64 exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError

FORMAT_VERSION = 1


def write_container(path, magic: str, fields: dict[str, object], arrays: dict[str, np.ndarray]) -> None:
    lines = [magic, f"version {FORMAT_VERSION}"]
    for key, value in fields.items():
        lines.append(f"field {key} {value}")
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        rows, cols = arr.shape
        lines.append(f"array {name} {rows} {cols}")
        lines.extend(" ".join(repr(float(x)) for x in row) for row in arr)
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_container(path, magic: str) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from exc
    if not lines or lines[0].strip() != magic:
        raise DataError(f"{path} is not a {magic} model file")
    if len(lines) < 2 or lines[1].split() != ["version", str(FORMAT_VERSION)]:
        raise DataError(f"{path}: unsupported format version line {lines[1:2]}")
    fields: dict[str, str] = {}
    arrays: dict[str, np.ndarray] = {}
    i = 2
    try:
        while lines[i].strip() != "end":
            parts = lines[i].split(" ", 2)
            if parts[0] == "field":
                fields[parts[1]] = parts[2] if len(parts) > 2 else ""
                i += 1
            elif parts[0] == "array":
                name = parts[1]
                rows, cols = (int(x) for x in parts[2].split())
                body = lines[i + 1 : i + 1 + rows]
                data = [[float(x) for x in ln.split()] for ln in body]
                if len(data) != rows or any(len(r) != cols for r in data):
                    raise DataError(f"{path}: array {name} does not have shape {rows}x{cols}")
                arrays[name] = np.array(data, dtype=np.float64).reshape(rows, cols)
                i += 1 + rows
            else:
                raise DataError(f"{path}:{i + 1}: unexpected line {lines[i]!r}")
    except DataError:
        raise
    except IndexError:
        raise DataError(f"{path}: truncated model file") from None
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    return fields, arrays
