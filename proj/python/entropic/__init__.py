"""Maximum entropy, maximum likelihood and minimax entropy estimation on finite supports.

Models are described with the same dicts as the "model" block of a run
manifest, e.g. {"catalog": "dnorm_general", "grid": {"lo": -5, "hi": 5, "m": 11}}
or {"support": {"points": [0, 1]}, "potentials": ["x"]}.
"""

from __future__ import annotations

import json
import os
from typing import Any, NamedTuple, Sequence

import numpy as np

from . import _core
from ._core import (
    ConfigError,
    DomainError,
    EntropicError,
    InfeasibleMoments,
    NonConvergence,
    ValidationError,
)

__version__ = _core.__version__

__all__ = [
    "ConfigError",
    "DomainError",
    "EntropicError",
    "InfeasibleMoments",
    "NonConvergence",
    "RunResult",
    "ValidationError",
    "canonical_potential",
    "canonical_report",
    "evaluate_potential",
    "hessian",
    "probabilities",
    "run",
    "solve",
    "support",
    "sweep",
]


def _dump(obj: Any) -> str:
    return json.dumps(obj) if obj is not None else ""


def _floats(values: Sequence[float]) -> list[float]:
    return [float(v) for v in np.asarray(values, dtype=float).ravel()]


def canonical_potential(source: str, num_params: int = 0) -> str:
    """Canonical text of a potential; parsing it again gives the same tree."""
    return _core.canonical_potential(source, num_params)


def evaluate_potential(source: str, x: float, alpha: Sequence[float] = (), num_params: int | None = None):
    """Value, alpha-gradient and alpha-Hessian of a potential at x."""
    alpha = _floats(alpha)
    value, first, second = _core.evaluate_potential(source, len(alpha) if num_params is None else num_params, float(x), alpha)
    return value, np.asarray(first), np.asarray(second)


def support(model: dict) -> tuple[np.ndarray, np.ndarray]:
    """Support points and weights of a model."""
    return _core.support(_dump(model))


class Distribution(NamedTuple):
    p: np.ndarray
    log_norm: float
    entropy: float


def probabilities(model: dict, lam: Sequence[float], alpha: Sequence[float] = ()) -> Distribution:
    p, log_norm, h = _core.probabilities(_dump(model), _floats(lam), _floats(alpha))
    return Distribution(np.asarray(p), log_norm, h)


def solve(model: dict, frequencies: Sequence[float], task: str = "ml", config: dict | None = None) -> dict:
    """Solve the me, ml or minimaxent task; returns the report's solve block."""
    return json.loads(_core.solve(_dump(model), _floats(frequencies), task, _dump(config)))


def hessian(model: dict, frequencies: Sequence[float], lam: Sequence[float], alpha: Sequence[float] = (),
            kind: str = "ml") -> dict:
    """ML or ME Hessian report (adopted matrix, closed-form blocks, FD comparison)."""
    return json.loads(_core.hessian(_dump(model), _floats(frequencies), _floats(lam), _floats(alpha), kind))


def sweep(model: dict, frequencies: Sequence[float], alphas: Sequence[Sequence[float]],
          config: dict | None = None) -> list[dict]:
    """Inner-optimal entropy and likelihood at each alpha on the grid."""
    grid = [_floats(np.atleast_1d(a)) for a in alphas]
    return json.loads(_core.sweep(_dump(model), _floats(frequencies), grid, _dump(config)))


class RunResult(NamedTuple):
    report: dict
    exit_code: int
    sweep_csv: str | None


def run(manifest: dict | str | os.PathLike, seed: int | None = None, tol: float | None = None,
        timestamp: str = "") -> RunResult:
    """Run a manifest given as a dict or a path to a JSON file."""
    if isinstance(manifest, dict):
        text, code, csv = _core.run_json(json.dumps(manifest), os.getcwd(), seed, tol, timestamp)
    else:
        text, code, csv = _core.run_file(os.fspath(manifest), seed, tol, timestamp)
    return RunResult(json.loads(text), code, csv)


def canonical_report(report: dict) -> str:
    """Report serialized without its timestamp, for byte comparison."""
    return _core.canonical_report(json.dumps(report))
