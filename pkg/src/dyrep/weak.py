"""Calderón–Zygmund decomposition, weak-(1,1) estimates, A2 weights and weighted norms."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_function, masses_of
from .exceptions import DomainError, InputError
from .grid import CubeId, DyadicSystem, GridConfig, ancestor
from .haar import haar_basis, haar_matrix
from .operators import NormEstimate, Operator, _power_norm


# ---------------------------------------------------------------- CZ decomposition

@dataclass
class CZDecomposition:
    level: float
    cubes: list[CubeId]
    good: np.ndarray = field(repr=False)
    bad: list[np.ndarray] = field(repr=False)
    omega: np.ndarray = field(repr=False)

    def reconstruct(self) -> np.ndarray:
        return self.good + sum(self.bad, np.zeros_like(self.good))


def cz_decompose(f, lam: float, mu, system: DyadicSystem | None = None, config: GridConfig | None = None
                 ) -> CZDecomposition:
    """Maximal cubes with ``<|f|>_J > lam``, scanned from K0 down to the finest cells."""
    if not lam > 0:
        raise DomainError(f"level must be positive, got {lam}")
    if system is None:
        if config is None:
            raise InputError("pass a DyadicSystem or a GridConfig")
        system = DyadicSystem(config)
    mass = masses_of(mu, system.config.n_cells)
    f = check_function(f, mass.size)
    af = np.abs(f) * mass
    covered = np.zeros(mass.size, dtype=bool)
    cubes, bad = [], []
    good = f.copy()
    for level in range(0, system.config.finest_level + 1):
        coords, lab = system.level_cubes(level)
        num = np.bincount(lab, weights=af, minlength=len(coords))
        den = np.bincount(lab, weights=mass, minlength=len(coords))
        hit = np.zeros(len(coords), dtype=bool)
        np.greater(num, lam * den, out=hit, where=den > 0)
        blocked = np.bincount(lab, weights=covered, minlength=len(coords)) > 0
        for i in np.flatnonzero(hit & ~blocked):
            J = CubeId(level, tuple(int(v) for v in coords[i]), system)
            sel = lab == i
            avg = float(np.dot(f[sel], mass[sel]) / den[i])
            b = np.where(sel, f - avg, 0.0)
            good[sel] = avg
            cubes.append(J)
            bad.append(b)
            covered |= sel
    return CZDecomposition(lam, cubes, good, bad, covered)


# ------------------------------------------------------------------- weak (1,1)

def _default_tests(system: DyadicSystem, mass: np.ndarray) -> np.ndarray:
    """L1-normalised cell atoms, Haar atoms, and CZ bad parts of atoms."""
    n = mass.size
    massive = np.flatnonzero(mass > 0)
    atoms = np.zeros((massive.size, n))
    atoms[np.arange(massive.size), massive] = 1.0 / mass[massive]
    rows = [atoms]
    H = haar_matrix(haar_basis(system, mass))
    if H.size:
        rows.append(H)
    # bad part of an atom at the level where its ancestor A is selected: 1_c/mu(c) - 1_A/mu(A)
    bads = []
    for level in range(0, system.config.finest_level):
        _, lab = system.level_cubes(level)
        den = np.bincount(lab, weights=mass)
        for c in massive:
            A = lab == lab[c]
            b = -A.astype(float) / den[lab[c]]
            b[c] += 1.0 / mass[c]
            bads.append(b)
    if bads:
        rows.append(np.array(bads))
    tests = np.vstack(rows)
    l1 = np.abs(tests) @ mass
    return tests[l1 > 0]


@dataclass(frozen=True)
class WeakEstimate:
    value: float
    witness: int
    level: float


def weak11_estimate(U: Operator, mu=None, tests=None, system: DyadicSystem | None = None) -> WeakEstimate:
    """``sup_f sup_lam lam mu{|Uf| > lam} / ||f||_1`` over the test family, with the exact distribution function."""
    mass = U.mass if mu is None else masses_of(mu, U.n)
    if tests is None:
        if system is None:
            raise InputError("default test family needs the dyadic system")
        tests = _default_tests(system, mass)
    tests = np.atleast_2d(np.asarray(tests, dtype=float))
    if tests.shape[0] == 0:
        raise InputError("test family is empty")
    l1 = np.abs(tests) @ mass
    keep = l1 > 0
    tests, l1 = tests[keep], l1[keep]
    # sup over lam of lam mu{|u| > lam} is max_t t mu{|u| >= t} over attained values t
    vals = np.abs((tests * mass) @ U.kernel.T)
    vals[:, mass == 0] = 0.0
    order = np.argsort(-vals, axis=1, kind="stable")
    sv = np.take_along_axis(vals, order, axis=1)
    cm = np.cumsum(mass[order], axis=1)
    # ties: use the mass of all cells with value >= t, i.e. the last index of each tie run
    last = np.ones_like(sv, dtype=bool)
    last[:, :-1] = sv[:, :-1] != sv[:, 1:]
    prod = np.where(last, sv * cm, 0.0)
    best_j = prod.argmax(axis=1)
    best = prod[np.arange(len(prod)), best_j] / l1
    i = int(best.argmax())
    return WeakEstimate(float(best[i]), int(np.flatnonzero(keep)[i]), float(sv[i, best_j[i]]))


def bad_part_active_blocks(blocks, cz: CZDecomposition, k: int, r: int, tol: float = 1e-12) -> list[dict]:
    """For each block V_K and bad part b_J with ``1_{J^c} V_K b_J != 0``, whether ``J ⊊ K ⊆ J^(k+r)``."""
    out = []
    for blk in blocks:
        K, kern, mass = blk.cube, blk.kernel, blk.mass
        scale = max(1.0, float(np.abs(kern).max()))
        for J, b in zip(cz.cubes, cz.bad):
            outside = ~J.cell_mask()
            val = (kern @ (mass * b))[outside]
            if val.size and np.abs(val).max() > tol * scale * max(1.0, float(np.abs(b) @ mass)):
                ok = K.level < J.level and ancestor(J, J.level - K.level) == K and J.level - K.level <= k + r
                out.append({"J": J, "K": K, "inside_window": bool(ok)})
    return out


# ----------------------------------------------------------------------- weights

def _check_weight(w, n: int) -> np.ndarray:
    w = check_function(w, n, "w")
    if (w <= 0).any():
        raise DomainError("weights must be strictly positive")
    return w


def a2_constant(w, config: GridConfig) -> float:
    """``sup_Q <w>_Q <1/w>_Q`` over the dyadic cubes inside K1 (Lebesgue averages)."""
    w = _check_weight(w, config.n_cells)
    system = DyadicSystem(config)
    best = 1.0
    for level in range(1, config.finest_level + 1):
        _, lab = system.level_cubes(level)
        cnt = np.bincount(lab).astype(float)
        aw = np.bincount(lab, weights=w) / cnt
        ai = np.bincount(lab, weights=1.0 / w) / cnt
        best = max(best, float((aw * ai).max()))
    return best


def weighted_norm(U: Operator, w, tol: float = 1e-8, max_iter: int = 10_000) -> NormEstimate:
    """``||U||`` on ``L^2(w mu)`` via conjugation by ``sqrt(w mu)``."""
    mass = U.mass
    w = _check_weight(w, mass.size)
    sel = mass > 0
    s = np.sqrt(w[sel] * mass[sel])
    action = U.kernel[np.ix_(sel, sel)] * mass[sel][None, :]
    return _power_norm(s[:, None] * action / s[None, :], tol, max_iter)


def power_weight(config: GridConfig, alpha: float, x0=None) -> np.ndarray:
    """``|x - x0|^alpha`` sampled at cell centers (Euclidean distance)."""
    centers = config.cell_centers()
    x0 = np.zeros(config.d) if x0 is None else np.broadcast_to(np.asarray(x0, dtype=float), (config.d,))
    dist = np.linalg.norm(centers - x0, axis=1)
    if alpha < 0 and (dist == 0).any():
        raise DomainError("negative power weight is singular at a cell center")
    w = dist ** alpha
    if (w <= 0).any():
        raise DomainError("power weight vanishes at a cell center; move x0 off the centers")
    return w


def read_weight_csv(path, config: GridConfig) -> np.ndarray:
    """Weights from ``cell_index_0..cell_index_{d-1},value`` rows; every cell must appear once."""
    path = Path(path)
    d, side = config.d, config.cells_per_side
    expected = [f"cell_index_{i}" for i in range(d)] + ["value"]
    w = np.full(config.n_cells, np.nan)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise InputError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != expected:
            raise InputError(f"{path}:1: header must be {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise InputError(f"{path}:{lineno}: expected {d + 1} fields, got {len(row)}")
            try:
                idx = [int(v) for v in row[:d]]
                val = float(row[d])
            except ValueError:
                raise InputError(f"{path}:{lineno}: malformed number") from None
            if any(not 0 <= i < side for i in idx):
                raise InputError(f"{path}:{lineno}: cell index out of range")
            if not np.isfinite(val) or val <= 0:
                raise InputError(f"{path}:{lineno}: weight must be positive and finite")
            flat = int(np.ravel_multi_index(tuple(idx), (side,) * d))
            if not np.isnan(w[flat]):
                raise InputError(f"{path}:{lineno}: duplicate cell")
            w[flat] = val
    if np.isnan(w).any():
        raise InputError(f"{path}: {int(np.isnan(w).sum())} cells have no weight")
    return w
