"""Discrete measures on the cells of K1."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DomainError, InputError
from .grid import DyadicSystem, GridConfig


@dataclass(eq=False)
class DiscreteMeasure:
    """Nonnegative cell masses; ``order`` is the growth exponent n in mu(B(x,r)) <= C r^n."""

    config: GridConfig
    masses: np.ndarray
    order: float | None = None
    growth_constant: float | None = None

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float).reshape(-1)
        if m.shape != (self.config.n_cells,):
            raise InputError(f"expected {self.config.n_cells} cell masses, got {m.size}")
        if not np.isfinite(m).all() or (m < 0).any():
            raise DomainError("cell masses must be finite and nonnegative")
        self.masses = m
        self.masses.setflags(write=False)
        if self.order is None:
            self.order = float(self.config.d)

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    @property
    def support(self) -> np.ndarray:
        return self.masses > 0

    def grid_view(self) -> np.ndarray:
        return self.masses.reshape((self.config.cells_per_side,) * self.config.d)

    def growth_audit(self) -> float:
        """max mu(B) / r^n over lattice-aligned sup-metric balls of dyadic radius.

        Balls are cubes of side ``2r = h * 2**a``; restricting to this family
        underestimates the true supremum by at most a factor ``2**n``.
        """
        grid = self.grid_view()
        sat = grid
        for ax in range(grid.ndim):
            sat = np.cumsum(sat, axis=ax)
        sat = np.pad(sat, [(1, 0)] * grid.ndim)
        m = self.config.cells_per_side
        best = 0.0
        for a in range(self.config.N + 1):
            w = 2**a
            total = np.zeros((m - w + 1,) * grid.ndim)
            # inclusion-exclusion over the 2^d corners of the window
            for corner in np.ndindex(*(2,) * grid.ndim):
                sl = tuple(slice(w, m + 1) if c else slice(0, m - w + 1) for c in corner)
                sign = (-1) ** (grid.ndim - sum(corner))
                total = total + sign * sat[sl]
            radius = w * self.config.h / 2
            best = max(best, float(total.max()) / radius**self.order)
        if self.growth_constant is not None and best > self.growth_constant * (1 + 1e-12):
            raise DomainError(f"growth audit {best:.6g} exceeds declared constant {self.growth_constant}")
        return best

    def doubling_constant(self, system: DyadicSystem | None = None) -> float:
        """max mu(parent)/mu(child) over dyadic cubes with a massive parent (inf if a child is null)."""
        system = system or DyadicSystem(self.config)
        best = 1.0
        for level in range(1, self.config.finest_level + 1):
            _, child = system.level_cubes(level)
            _, parent = system.level_cubes(level - 1)
            cm = np.bincount(child, weights=self.masses)
            pm = np.bincount(parent, weights=self.masses)
            pid = np.zeros(len(cm), dtype=int)
            pid[child] = parent
            ratio_parent = pm[pid]
            massive = ratio_parent > 0
            if (cm[massive] == 0).any():
                return float("inf")
            if massive.any():
                best = max(best, float((ratio_parent[massive] / cm[massive]).max()))
        return best


def uniform(config: GridConfig) -> DiscreteMeasure:
    """Lebesgue measure restricted to K1."""
    return DiscreteMeasure(config, np.full(config.n_cells, config.h**config.d))


def power_law(config: GridConfig, a: float, center=None) -> DiscreteMeasure:
    """Density ``|x - center|^a`` sampled at cell centres (Euclidean norm)."""
    center = np.zeros(config.d) if center is None else np.asarray(center, dtype=float)
    dist = np.linalg.norm(config.cell_centers() - center, axis=1)
    return DiscreteMeasure(config, dist**a * config.h**config.d)


def point_mass_mixture(config: GridConfig, cells, weights, background: float = 0.0) -> DiscreteMeasure:
    """Point masses at the given cell coordinates plus an optional uniform background.

    Non-doubling as soon as ``background`` is small compared to the atoms.
    """
    masses = np.full(config.n_cells, background * config.h**config.d)
    m = config.cells_per_side
    for cell, w in zip(cells, weights):
        idx = np.ravel_multi_index(tuple(np.atleast_1d(cell)), (m,) * config.d)
        masses[idx] += w
    return DiscreteMeasure(config, masses)


def random_measure(config: GridConfig, rng: np.random.Generator, max_ratio: float = 1e6,
                   zero_fraction: float = 0.2) -> DiscreteMeasure:
    """Log-uniform masses spanning ``max_ratio`` with a fraction of empty cells."""
    logs = rng.uniform(0, np.log10(max_ratio), size=config.n_cells)
    masses = 10.0**logs * config.h**config.d
    masses[rng.random(config.n_cells) < zero_fraction] = 0.0
    if not masses.any():
        masses[rng.integers(config.n_cells)] = 1.0
    return DiscreteMeasure(config, masses)


def read_measure_csv(path, config: GridConfig) -> DiscreteMeasure:
    """Read ``cell_index_0..cell_index_{d-1},mass`` rows; missing cells have mass 0."""
    path = Path(path)
    expected = [f"cell_index_{i}" for i in range(config.d)] + ["mass"]
    masses = np.zeros(config.n_cells)
    m = config.cells_per_side
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise InputError(f"{path}: cannot open measure file ({exc})") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != expected:
            raise InputError(f"{path}:1: header must be {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(expected):
                raise InputError(f"{path}:{lineno}: expected {len(expected)} columns, got {len(row)}")
            try:
                idx = [int(c) for c in row[:-1]]
                mass = float(row[-1])
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-numeric entry") from None
            if any(i < 0 or i >= m for i in idx):
                raise InputError(f"{path}:{lineno}: cell index out of range [0, {m})")
            if not np.isfinite(mass) or mass < 0:
                raise InputError(f"{path}:{lineno}: mass must be finite and nonnegative")
            masses[np.ravel_multi_index(tuple(idx), (m,) * config.d)] += mass
    return DiscreteMeasure(config, masses)


def write_measure_csv(measure: DiscreteMeasure, path) -> None:
    cfg = measure.config
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"cell_index_{i}" for i in range(cfg.d)] + ["mass"])
        for coord, mass in zip(cfg.cell_coords(), measure.masses):
            if mass:
                w.writerow([*map(int, coord), repr(float(mass))])
