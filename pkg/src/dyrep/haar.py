"""Conditional expectations, martingale differences and measure-adapted Haar functions.

Functions are arrays of per-cell values on K1; a measure is an array of cell
masses (or a DiscreteMeasure). Operators are returned as kernels ``k`` acting
by ``(Tf)(x) = sum_y k[x, y] f[y] mu[y]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_function, masses_of
from .exceptions import DomainError
from .grid import CubeId, DyadicSystem

VARIANTS = ("D_r", "P_r", "D_r_good", "P_r_good")


def _safe_inv(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x, dtype=float)
    np.divide(1.0, x, out=out, where=x > 0)
    return out


def average(f, cube: CubeId, mu) -> float:
    """mu-average of f over the cube; 0 when the cube carries no mass."""
    mass = masses_of(mu, cube.config.n_cells)
    f = check_function(f, mass.size)
    sel = cube.cell_mask()
    m = mass[sel].sum()
    return float(np.dot(f[sel], mass[sel]) / m) if m > 0 else 0.0


def level_expectation(f, system: DyadicSystem, level: int, mu) -> np.ndarray:
    """E_level f: cellwise average over the level cubes."""
    mass = masses_of(mu, system.config.n_cells)
    f = check_function(f, mass.size)
    _, lab = system.level_cubes(level)
    num = np.bincount(lab, weights=f * mass)
    den = np.bincount(lab, weights=mass)
    return (num * _safe_inv(den))[lab]


def level_difference(f, system: DyadicSystem, level: int, mu) -> np.ndarray:
    """D_level f = E_{level+1} f - E_level f (zero at and below the finest level)."""
    if level >= system.config.finest_level:
        return np.zeros(system.config.n_cells)
    return level_expectation(f, system, level + 1, mu) - level_expectation(f, system, level, mu)


def martingale_difference(f, cube: CubeId, mu) -> np.ndarray:
    """D_I f, supported on I and constant on its children."""
    sel = cube.cell_mask()
    return np.where(sel, level_difference(f, cube.system, cube.level, mu), 0.0)


def _good_cell_weights(system: DyadicSystem, level: int, k: int, normalization: str | None) -> np.ndarray:
    """Per-cell goodness factor of the level cube containing each cell."""
    coords, lab = system.level_cubes(level)
    if normalization is None:
        w = system.good_mask(level, coords, k).astype(float)
    else:
        w = system.weights(level, k, normalization)
    return w[lab]


def block_ops(f, H: CubeId, r: int, variant: str, mu, normalization: str | None = None) -> np.ndarray:
    """D_H^(r), P_H^(r) and their good-descendant restrictions applied to f.

    With ``normalization`` set, the goodness indicator is replaced by the
    corresponding weight ``1_good / P(good)`` (see ``DyadicSystem.weights``).
    """
    if variant not in VARIANTS:
        raise DomainError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    good = variant.endswith("_good")
    if r < (2 if good else 0):
        raise DomainError(f"variant {variant} needs r >= {2 if good else 0}, got {r}")
    system, L = H.system, H.level
    sel = H.cell_mask()

    def gen(j):
        out = level_difference(f, system, L + j, mu)
        if good:
            out = out * _good_cell_weights(system, L + j, j, normalization)
        return out

    if variant.startswith("D"):
        total = gen(r)
    else:
        lo = 2 if good else 0
        total = sum((gen(j) for j in range(lo, r)), np.zeros(system.config.n_cells))
    return np.where(sel, total, 0.0)


# ---------------------------------------------------------------- kernels

def expectation_kernel(system: DyadicSystem, level: int, mu) -> np.ndarray:
    mass = masses_of(mu, system.config.n_cells)
    _, lab = system.level_cubes(level)
    inv = _safe_inv(np.bincount(lab, weights=mass))
    same = lab[:, None] == lab[None, :]
    return same * inv[lab][:, None]


def cube_kernel_projection(system: DyadicSystem, cube: CubeId, lo: int, hi: int, mu) -> np.ndarray:
    """Kernel of ``1_K (E_{L+hi} - E_{L+lo}) 1_K`` for K = cube at level L."""
    L = cube.level
    sel = cube.cell_mask().astype(float)
    diff = expectation_kernel(system, L + hi, mu) - expectation_kernel(system, L + lo, mu)
    return sel[:, None] * diff * sel[None, :]


def D_kernel(cube: CubeId, j: int, mu) -> np.ndarray:
    """Kernel of D_K^(j)."""
    return cube_kernel_projection(cube.system, cube, j, j + 1, mu)


def P_kernel(cube: CubeId, j: int, mu) -> np.ndarray:
    """Kernel of P_K^(j) = sum_{i<j} D_K^(i)."""
    return cube_kernel_projection(cube.system, cube, 0, j, mu)


# ------------------------------------------------------------- Haar basis

@dataclass(frozen=True)
class HaarFunction:
    cube: CubeId
    index: int
    values: np.ndarray

    @property
    def is_zero(self) -> bool:
        return not self.values.any()


def _gray(d: int) -> list[tuple[int, ...]]:
    codes = [i ^ (i >> 1) for i in range(2**d)]
    return [tuple((c >> (d - 1 - b)) & 1 for b in range(d)) for c in codes]


def build_haar(cube: CubeId, mu) -> list[HaarFunction]:
    """The 2^d - 1 Haar functions of a cube (zero entries where a split side is massless).

    Children are listed in binary-reflected Gray order and split recursively
    in halves; each split A|B gives ``a 1_A - b 1_B`` with
    ``a = sqrt(mu(B) / (mu(A) M))``, ``b = sqrt(mu(A) / (mu(B) M))``, ``M = mu(A) + mu(B)``.
    """
    config = cube.config
    if cube.level >= config.finest_level:
        raise DomainError("finest cells carry no Haar functions")
    mass = masses_of(mu, config.n_cells)
    sub = config.side(cube.level + 1)
    pts = cube.system._coords
    rel = (pts - cube.lower) // sub
    inside = cube.cell_mask()
    child_masks = []
    for eps in _gray(config.d):
        child_masks.append(inside & (rel == np.array(eps)).all(axis=1))
    out: list[HaarFunction] = []

    def split(group):
        if len(group) < 2:
            return
        half = len(group) // 2
        A = np.logical_or.reduce([child_masks[i] for i in group[:half]])
        B = np.logical_or.reduce([child_masks[i] for i in group[half:]])
        mA, mB = mass[A].sum(), mass[B].sum()
        vals = np.zeros(config.n_cells)
        if mA > 0 and mB > 0:
            M = mA + mB
            vals[A] = np.sqrt(mB / (mA * M))
            vals[B] = -np.sqrt(mA / (mB * M))
        vals.setflags(write=False)
        out.append(HaarFunction(cube, len(out), vals))
        split(group[:half])
        split(group[half:])

    split(list(range(2**config.d)))
    return out


def haar_basis(system: DyadicSystem, mu, include_zero: bool = False) -> list[HaarFunction]:
    """Haar functions of every cube from K0 down to the parents of the finest cells."""
    out = []
    for level in range(0, system.config.finest_level):
        for cube in system.cubes(level):
            out.extend(h for h in build_haar(cube, mu) if include_zero or not h.is_zero)
    return out


def haar_matrix(basis: list[HaarFunction]) -> np.ndarray:
    return np.array([h.values for h in basis]).reshape(len(basis), -1)


def haar_properties(h: HaarFunction, mu) -> dict:
    """Measured values of the defining Haar properties for one function."""
    mass = masses_of(mu)
    v = h.values
    inside = h.cube.cell_mask()
    child_lab = h.cube.system.level_cubes(h.cube.level + 1)[1]
    const = all(np.ptp(v[(child_lab == c) & (mass > 0)]) == 0 if ((child_lab == c) & (mass > 0)).any() else True
                for c in np.unique(child_lab[inside]))
    norm2 = float(np.sqrt(np.dot(v * v, mass)))
    sup = float(np.abs(v[mass > 0]).max()) if (mass > 0).any() else 0.0
    return {
        "support_ok": bool(not v[~inside].any()),
        "constant_on_children": bool(const),
        "integral": float(np.dot(v, mass)),
        "norm2": norm2,
        "sup_times_l1": sup * float(np.dot(np.abs(v), mass)),
    }


def bessel_check(f, k: int, system: DyadicSystem, mu) -> float:
    """sum over all cubes K of ||D_K^(k) f||_2^2."""
    if k < 1:
        raise DomainError(f"bessel_check needs k >= 1, got {k}")
    mass = masses_of(mu, system.config.n_cells)
    f = check_function(f, mass.size)
    total = 0.0
    # D_K^(k) vanishes unless some level-(L+k) cube has children, i.e. L+k <= N
    for level in range(-k, system.config.finest_level - k):
        for K in system.cubes(level):
            piece = block_ops(f, K, k, "D_r", mass)
            total += float(np.dot(piece * piece, mass))
    return total


class HaarTransformer(TransformerMixin, BaseEstimator):
    """Coefficients of functions in the Haar basis of one dyadic system.

    ``fit`` takes the cell masses; ``transform`` maps an (n_samples, n_cells)
    array of functions to Haar coefficients, ``inverse_transform`` maps back
    (up to the mu-average, which the basis does not see).
    """

    def __init__(self, d: int = 1, N: int = 3, sigma=None):
        self.d = d
        self.N = N
        self.sigma = sigma

    def fit(self, X, y=None):
        from .grid import GridConfig
        config = GridConfig(self.d, self.N)
        self.system_ = DyadicSystem(config, self.sigma)
        self.mass_ = masses_of(X, config.n_cells)
        self.basis_ = haar_basis(self.system_, self.mass_)
        self.matrix_ = haar_matrix(self.basis_)
        return self

    def transform(self, X):
        check_is_fitted(self, "matrix_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return (X * self.mass_) @ self.matrix_.T

    def inverse_transform(self, C):
        check_is_fitted(self, "matrix_")
        return np.atleast_2d(np.asarray(C, dtype=float)) @ self.matrix_
