"""``.gowdy`` snapshot files.

Layout: one line of UTF-8 JSON (the header), a newline, then little-endian
float64 arrays in the order listed under ``"arrays"``, each of shape
``(n_y, N, N)`` in row-major (point, i, j) order.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..circlefield import CircleGrid
from .state import GowdyState

FORMAT = "gowdy-snapshot/1"


def write_snapshot(path, state: GowdyState, tolerances: dict | None = None) -> Path:
    path = Path(path)
    header = {
        "format": FORMAT,
        "N": state.N,
        "n_y": state.grid.n,
        "L_c": state.grid.length,
        "s": state.s,
        "scheme": state.grid.scheme,
        "tolerances": tolerances or {},
        "dtype": "<f8",
        "arrays": ["G", "Atilde"],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for arr in (state.G, state.Atilde):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return path


def read_snapshot(path) -> tuple[GowdyState, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("format") != FORMAT:
            raise ValueError(f"{path}: not a {FORMAT} file")
        n, N = int(header["n_y"]), int(header["N"])
        grid = CircleGrid(n, float(header["L_c"]), header["scheme"])
        arrays = {}
        for name in header["arrays"]:
            buf = fh.read(8 * n * N * N)
            if len(buf) != 8 * n * N * N:
                raise ValueError(f"{path}: truncated array {name!r}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(n, N, N).copy()
    G = arrays["G"]
    if "Atilde" in arrays:
        A = arrays["Atilde"]
    else:
        A = np.broadcast_to(-(2.0 / N) * np.eye(N), G.shape).copy()
    return GowdyState(grid, G, A, float(header["s"])), header
