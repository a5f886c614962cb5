"""Input checks shared by the public functions."""
from __future__ import annotations

import numpy as np

from .exceptions import DomainError, InputError


def masses_of(mu, n_cells: int | None = None) -> np.ndarray:
    """Accept a DiscreteMeasure or a raw array of cell masses."""
    m = getattr(mu, "masses", mu)
    m = np.asarray(m, dtype=float).reshape(-1)
    if n_cells is not None and m.size != n_cells:
        raise InputError(f"measure has {m.size} cells, expected {n_cells}")
    if not np.isfinite(m).all() or (m < 0).any():
        raise DomainError("cell masses must be finite and nonnegative")
    return m


def check_function(f, n_cells: int, name: str = "f") -> np.ndarray:
    f = np.asarray(f, dtype=float).reshape(-1)
    if f.size != n_cells:
        raise InputError(f"{name} has {f.size} values, expected {n_cells}")
    if not np.isfinite(f).all():
        raise InputError(f"{name} has non-finite values")
    return f


def check_mean_zero(f: np.ndarray, mass: np.ndarray, name: str = "f", rtol: float = 1e-12) -> None:
    integral = float(np.dot(f, mass))
    scale = float(np.dot(np.abs(f), mass)) or 1.0
    if abs(integral) > rtol * scale:
        raise InputError(f"integral of {name} d(mu) = {integral:.3e} is not zero; "
                         "project with project_mean_zero first")


def project_mean_zero(f, mu) -> np.ndarray:
    """Subtract the mu-average so that the integral of f vanishes."""
    mass = masses_of(mu)
    f = check_function(f, mass.size)
    total = mass.sum()
    if total == 0:
        return np.zeros_like(f)
    return f - np.dot(f, mass) / total
