# grid/shared.py
import os
import sys
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np
from scipy.linalg import eigvalsh

# ---------------- BASIC CONFIG ----------------


def _env_float(name: str, default: float) -> float:
    try:
        return float(os.getenv(name, str(default)))
    except Exception:
        return default


def _env_int(name: str, default: int) -> int:
    try:
        return int(os.getenv(name, str(default)))
    except Exception:
        return default


# GRID_DEBUG: if true, modules print extra diagnostics via debug().
# Example: GRID_DEBUG=true
GRID_DEBUG = os.getenv("GRID_DEBUG", "false").lower() == "true"

# Numerical knobs. Scenario JSON values take precedence over these.
FD_STEP = _env_float("GRID_FD_STEP", 1e-6)
PSD_TOL = _env_float("GRID_PSD_TOL", 1e-12)
RK45_RTOL = _env_float("GRID_RK45_RTOL", 1e-8)
RK45_ATOL = _env_float("GRID_RK45_ATOL", 1e-10)
NEWTON_TOL = _env_float("GRID_NEWTON_TOL", 1e-10)
NEWTON_MAX_ITER = max(1, _env_int("GRID_NEWTON_MAX_ITER", 50))
VERIFY_TOL = _env_float("GRID_VERIFY_TOL", 1e-5)

# Batch runner limits (see grid.simulation.run_batch)
MAX_CONCURRENCY = max(1, _env_int("GRID_MAX_CONCURRENCY", 4))
SCENARIO_TIMEOUT_SECONDS = max(5.0, _env_float("GRID_SCENARIO_TIMEOUT_SECONDS", 600.0))


# ---------------- LOGGING ----------------


def log(tag: str, message: str) -> None:
    """One-line `[tag] key=value` log on stderr; stdout carries command output."""
    print(f"[{tag}] {message}", file=sys.stderr, flush=True)


def debug(tag: str, message: str) -> None:
    if not GRID_DEBUG:
        return
    print(f"🐞 DEBUG — [{tag}] {message}", file=sys.stderr, flush=True)


# ---------------- ERRORS ----------------


class GridError(Exception):
    """Base class for every error raised by the grid package."""


class DimensionError(GridError, ValueError):
    pass


class TopologyError(GridError, ValueError):
    pass


class ParameterError(GridError, ValueError):
    pass


@dataclass(frozen=True)
class Violation:
    """A single named validation failure, e.g. path='machines[2].xdp'."""

    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


class ScenarioParseError(GridError):
    def __init__(self, source: str, line: int, column: int, message: str):
        self.source = source
        self.line = line
        self.column = column
        super().__init__(f"{source}:{line}:{column}: {message}")


class ScenarioValidationError(GridError):
    def __init__(self, violations: Sequence[Violation]):
        self.violations: List[Violation] = list(violations)
        joined = "; ".join(str(v) for v in self.violations)
        super().__init__(f"{len(self.violations)} violation(s): {joined}")


class StructuralCheckError(GridError):
    """Raised before integration when a structural condition fails."""

    def __init__(self, violations: Sequence[Violation]):
        self.violations: List[Violation] = list(violations)
        joined = "; ".join(str(v) for v in self.violations)
        super().__init__(f"structural check failed: {joined}")


class IntegrationError(GridError):
    def __init__(self, message: str, t: float):
        self.t = float(t)
        super().__init__(f"{message} (t={self.t:.6g}s)")


class SteadyStateError(GridError):
    pass


# ---------------- ARRAY HELPERS ----------------


def as_vector(value: Iterable[float], size: Optional[int], name: str) -> np.ndarray:
    """Return a float64 1-D array, checking the length when `size` is given."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise DimensionError(f"{name}: expected a vector, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise DimensionError(f"{name}: expected length {size}, got {arr.shape[0]}")
    return arr


def min_eigenvalue(matrix: np.ndarray) -> float:
    """Smallest eigenvalue of the symmetric part of `matrix`."""
    sym = 0.5 * (matrix + matrix.T)
    if sym.size == 0:
        return float("inf")
    return float(eigvalsh(sym)[0])
