"""Verdict records shared by every analysis routine."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


@dataclass
class Certificate:
    """A monotonicity / decay / integrability verdict.

    ``passed`` is the boolean summary used by the CLI; ``verdict`` is the
    human label (e.g. ``"convergent-so-far"``, ``"growing"``, ``"vacuous"``).
    ``values`` holds sampled arrays, ``metrics`` scalar diagnostics such as
    residuals and fitted exponents, ``tolerances`` the thresholds applied.
    """

    name: str
    verdict: str
    passed: bool
    metrics: dict[str, float] = field(default_factory=dict)
    values: dict[str, np.ndarray] = field(default_factory=dict)
    tolerances: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.passed)

    def to_dict(self, include_values: bool = False) -> dict[str, Any]:
        out: dict[str, Any] = {
            "name": self.name,
            "verdict": self.verdict,
            "passed": bool(self.passed),
            "metrics": {k: _jsonable(v) for k, v in self.metrics.items()},
            "tolerances": {k: _jsonable(v) for k, v in self.tolerances.items()},
            "notes": list(self.notes),
        }
        if include_values:
            out["values"] = {k: np.asarray(v).tolist() for k, v in self.values.items()}
        return out


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        if np.isnan(v) or np.isinf(v):
            return repr(v)
        return v
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v
