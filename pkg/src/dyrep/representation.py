"""The dyadic representation: R_k, Q_k, paraproducts and exact verification.

Everything is computed per shifted system and then averaged over the shift
ensemble. Operators are kernels (see ``operators.Operator``); composition is
``kA @ diag(mu) @ kB``.

Goodness enters through per-cube weights ``w = 1_good / P(good)``; in the
default ``measured`` normalisation ``P(good)`` is the exact probability over
the truncated ensemble, which makes the averaged identity exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_function, check_mean_zero, masses_of
from .exceptions import DomainError, InputError
from .grid import CubeId, DyadicSystem, GridConfig, shift_ensemble
from .haar import D_kernel, P_kernel, block_ops, expectation_kernel, level_difference
from .operators import ModulusOfContinuity, Operator, dini_sum, l2_norm


def _compose(a: np.ndarray, b: np.ndarray, mass: np.ndarray) -> np.ndarray:
    return a @ (mass[:, None] * b)


def _m_class(m: np.ndarray) -> np.ndarray:
    """k with 2^(k-3) < |m| <= 2^(k-2); 1 for m = 0."""
    m = np.asarray(m, dtype=np.int64)
    return np.where(m == 0, 1, 2 + np.frexp(np.maximum(m - 1, 0).astype(float))[1])


class SystemGeometry:
    """Measure- and system-dependent pieces shared by every operator T."""

    def __init__(self, system: DyadicSystem, mass: np.ndarray, r: int = 2,
                 normalization: str = "measured"):
        if r < 2:
            raise DomainError(f"r must be at least 2, got {r}")
        self.system = system
        self.config = system.config
        self.mass = masses_of(mass, self.config.n_cells)
        self.r = r
        self.normalization = normalization
        self.total = float(self.mass.sum())
        self._E: dict[int, np.ndarray] = {}
        self._Dw: dict[int, np.ndarray] = {}
        self._cls: dict[int, np.ndarray] = {}
        self._wk: dict[tuple, np.ndarray] = {}

    @property
    def h_levels(self) -> range:
        """Levels of the cubes H = I^(r) with I ranging over K0 .. parents of finest cells."""
        return range(-self.r, self.config.N - self.r + 1)

    @property
    def k_max(self) -> int:
        return self.config.N + 1

    def E(self, level: int) -> np.ndarray:
        level = max(min(level, self.config.finest_level), 0)
        if level not in self._E:
            self._E[level] = expectation_kernel(self.system, level, self.mass)
        return self._E[level]

    def E_inf(self) -> np.ndarray:
        n = self.config.n_cells
        return np.full((n, n), 1.0 / self.total if self.total > 0 else 0.0)

    def weights(self, level: int, k: int) -> np.ndarray:
        """Per-cell goodness weight of the level cube containing the cell."""
        key = (level, k)
        if key not in self._wk:
            _, lab = self.system.level_cubes(level)
            self._wk[key] = self.system.weights(level, k, self.normalization)[lab]
        return self._wk[key]

    def Dw(self, level: int) -> np.ndarray:
        """Weighted level difference ``sum_I w_r(I) D_I`` over level-``level`` cubes I."""
        if level not in self._Dw:
            n = self.config.n_cells
            if level < 0 or level >= self.config.finest_level:
                self._Dw[level] = np.zeros((n, n))
            else:
                diff = self.E(level + 1) - self.E(level)
                self._Dw[level] = self.weights(level, self.r)[:, None] * diff
        return self._Dw[level]

    def m_class(self, level: int) -> np.ndarray:
        if level not in self._cls:
            coords, lab = self.system.level_cubes(level)
            c = coords[lab]
            m = np.abs(c[:, None, :] - c[None, :, :]).max(axis=-1)
            self._cls[level] = _m_class(m)
        return self._cls[level]

    def mask(self, level: int, k: int, insert_goodness: bool = True) -> np.ndarray:
        cls = self.m_class(level) == k
        if k == 1 or not insert_goodness:
            return cls.astype(float)
        return cls * self.weights(level, k)[None, :]

    def same_cube(self, level: int) -> np.ndarray:
        return self.m_class(level) == 1

    def cube_mass(self, level: int) -> np.ndarray:
        _, lab = self.system.level_cubes(level)
        return np.bincount(lab, weights=self.mass)[lab]


_GEOMETRY_CACHE: dict = {}


def geometry_for(system: DyadicSystem, mass, r: int, normalization: str) -> SystemGeometry:
    mass = masses_of(mass, system.config.n_cells)
    key = (system, mass.tobytes(), r, normalization)
    geo = _GEOMETRY_CACHE.get(key)
    if geo is None:
        if len(_GEOMETRY_CACHE) > 4096:
            _GEOMETRY_CACHE.clear()
        geo = _GEOMETRY_CACHE[key] = SystemGeometry(system, mass, r, normalization)
    return geo


@dataclass
class BlockOperator:
    """One block ``B_K^(k)`` (kind ``B``) or ``A_K^(k)`` (kind ``A``) of R_k / Q_k."""

    kind: str
    cube: CubeId
    k: int
    r: int
    kernel: np.ndarray
    mass: np.ndarray = field(repr=False)
    part1: np.ndarray | None = field(default=None, repr=False)
    part2: np.ndarray | None = field(default=None, repr=False)

    def operator(self) -> Operator:
        return Operator(self.kernel, self.mass)


class SystemDecomposition:
    """R_k, Q_k, their negative twins and the paraproducts of T in one shifted system."""

    def __init__(self, T: Operator, geometry: SystemGeometry, omega: ModulusOfContinuity | None = None,
                 insert_k_goodness: bool = True):
        self.T = T
        self.geo = geometry
        self.omega = omega or ModulusOfContinuity.power(1.0)
        self.insert = insert_k_goodness
        self.mass = geometry.mass
        if not np.array_equal(T.mass, self.mass):
            raise DomainError("operator and geometry use different measures")
        self._levels: dict[tuple, dict[int, np.ndarray]] = {}

    @property
    def system(self) -> DyadicSystem:
        return self.geo.system

    @property
    def r(self) -> int:
        return self.geo.r

    def _omega(self, k: int) -> float:
        w = float(self.omega(2.0 ** -abs(k)))
        if w <= 0:
            raise DomainError(f"omega(2^-{abs(k)}) = 0; use the unnormalised raw_* builders")
        return w

    # per-level building blocks ------------------------------------------------

    def _source(self, tilde: bool) -> np.ndarray:
        return self.T.kernel.T if tilde else self.T.kernel

    def _Y(self, L: int, tilde: bool) -> np.ndarray:
        """(E_{L+depth} - E_L) S Dw_{L+r}: depth r+1, or r for the twin."""
        key = ("Y", L, tilde)
        if key not in self._levels:
            geo = self.geo
            depth = self.r if tilde else self.r + 1
            Z = self._Z(L, tilde)
            self._levels[key] = _compose(geo.E(L + depth) - geo.E(L), Z, self.mass)
        return self._levels[key]

    def _Z(self, L: int, tilde: bool) -> np.ndarray:
        key = ("Z", L, tilde)
        if key not in self._levels:
            self._levels[key] = _compose(self._source(tilde), self.geo.Dw(L + self.r), self.mass)
        return self._levels[key]

    def _r_level(self, L: int, k: int, tilde: bool) -> np.ndarray:
        return self._Y(L, tilde) * self.geo.mask(L, k, self.insert)

    def _q_level(self, L: int, k: int, tilde: bool) -> tuple[np.ndarray, np.ndarray]:
        geo = self.geo
        M = geo.mask(L, k, self.insert)
        Z = self._Z(L, tilde)
        a1 = _compose(geo.E(L), Z, self.mass) * M
        col = (M * Z * self.mass[:, None]).sum(axis=0)
        inv = np.zeros_like(self.mass)
        cm = geo.cube_mass(L)
        np.divide(1.0, cm, out=inv, where=cm > 0)
        a2 = geo.same_cube(L) * (inv * col)[None, :]
        return a1, a2

    # operators (unnormalised: omega(2^-|k|) R_k) -------------------------------

    def raw_R(self, k: int) -> np.ndarray:
        if k == 0:
            raise DomainError("k = 0 does not index an operator")
        tilde, kk = k < 0, abs(k)
        out = sum((self._r_level(L, kk, tilde) for L in self.geo.h_levels), np.zeros_like(self.T.kernel))
        return out.T if tilde else out

    def raw_Q(self, k: int) -> np.ndarray:
        if k == 0:
            raise DomainError("k = 0 does not index an operator")
        tilde, kk = k < 0, abs(k)
        out = np.zeros_like(self.T.kernel)
        if kk == 1:
            return out
        for L in self.geo.h_levels:
            a1, a2 = self._q_level(L, kk, tilde)
            out += a1 - a2
        return out.T if tilde else out

    def R(self, k: int) -> Operator:
        return Operator(self.raw_R(k) / self._omega(k), self.mass)

    def Q(self, k: int) -> Operator:
        return Operator(self.raw_Q(k) / self._omega(k), self.mass)

    def paraproduct(self, b) -> Operator:
        """``Pi_b f = sum_H Dw_H b (<f>_H - E_{-inf} f)``."""
        b = check_function(b, self.mass.size, "b")
        geo = self.geo
        out = np.zeros_like(self.T.kernel)
        einf = geo.E_inf()
        for L in geo.h_levels:
            db = geo.Dw(L + self.r) @ (self.mass * b)
            if db.any():
                out += db[:, None] * (geo.E(L) - einf)
        return Operator(out, self.mass)

    def paraproducts(self) -> tuple[Operator, Operator]:
        """(Pi_{T1}, Pi_{T*1})."""
        return self.paraproduct(self.T.one()), self.paraproduct(self.T.adjoint().one())

    # blocks ------------------------------------------------------------------

    def blocks(self, kind: str, k: int) -> list[BlockOperator]:
        """Per-K blocks of R_k (kind ``B``) or Q_k (kind ``A``), normalised by omega."""
        if kind not in ("A", "B"):
            raise DomainError("kind must be 'A' or 'B'")
        tilde, kk = k < 0, abs(k)
        if kind == "A" and kk == 1:
            return []
        w = self._omega(k)
        out = []
        for L in self.geo.h_levels:
            if kind == "B":
                full, p1, p2 = self._r_level(L, kk, tilde), None, None
            else:
                a1, a2 = self._q_level(L, kk, tilde)
                full, p1, p2 = a1 - a2, a1, -a2
            if not full.any() and (p1 is None or not p1.any()):
                continue
            for K in self.system.cubes(L - kk):
                col = K.cell_mask()
                blk = full * col[None, :]
                if not blk.any():
                    continue
                parts = [None if p is None else p * col[None, :] / w for p in (p1, p2)]
                if tilde:
                    blk = blk.T
                    parts = [None if p is None else p.T for p in parts]
                out.append(BlockOperator(kind, K, k, self.r, blk / w, self.mass, *parts))
        return out

    def pairing_terms(self, f, g, k_max: int | None = None) -> dict:
        """All pairings of the right-hand side (each already multiplied by omega)."""
        k_max = self.geo.k_max if k_max is None else k_max
        mf, mg = self.mass * f, self.mass * g
        out = {}
        for k in list(range(-k_max, 0)) + list(range(1, k_max + 1)):
            out[("R", k)] = float(mg @ self.raw_R(k) @ mf)
            out[("Q", k)] = float(mg @ self.raw_Q(k) @ mf)
        p1, p2 = self.paraproducts()
        out[("Pi_T1", 0)] = float(mg @ p1.kernel @ mf)
        out[("Pi_Tstar1", 0)] = float(mf @ p2.kernel @ mg)
        return out


# ---------------------------------------------------------------- reporting

@dataclass
class DecompositionReport:
    lhs: float
    rhs: float
    residual: float
    relative_residual: float
    scale: float
    normalization: str
    mode: str
    r: int
    n_systems: int
    k_max: int
    term_means: dict
    per_system: list
    omega: dict

    def to_dict(self) -> dict:
        return {
            "lhs": self.lhs, "rhs": self.rhs, "residual": self.residual,
            "relative_residual": self.relative_residual, "scale": self.scale,
            "normalization": self.normalization, "mode": self.mode, "r": self.r,
            "n_systems": self.n_systems, "k_max": self.k_max, "omega": self.omega,
            "term_means": {f"{name}[{k}]": v for (name, k), v in sorted(self.term_means.items())},
            "per_system": self.per_system,
        }


def _sigma_label(sigma: np.ndarray) -> str:
    return "".join("".join(map(str, row)) for row in np.asarray(sigma))


def _ordered_keys(k_max: int):
    for k in list(range(-k_max, 0)) + list(range(1, k_max + 1)):
        yield ("R", k)
        yield ("Q", k)
    yield ("Pi_T1", 0)
    yield ("Pi_Tstar1", 0)


def _prepare(T: Operator, f, g):
    f = check_function(f, T.n, "f")
    g = check_function(g, T.n, "g")
    check_mean_zero(f, T.mass, "f")
    check_mean_zero(g, T.mass, "g")
    return f, g


def verify_representation(T: Operator, f, g, config: GridConfig, r: int = 2,
                          omega: ModulusOfContinuity | None = None, mode="exhaustive",
                          seed: int | None = None, normalization: str = "measured",
                          k_max: int | None = None, keep_systems: bool = True) -> DecompositionReport:
    """Compare <Tf, g> with the ensemble average of the representation."""
    f, g = _prepare(T, f, g)
    omega = omega or ModulusOfContinuity.power(1.0)
    k_max = config.N + 1 if k_max is None else k_max
    lhs = T.pair(f, g)
    per_system, totals = [], []
    sums: dict = {key: [] for key in _ordered_keys(k_max)}
    for sigma in shift_ensemble(config, mode, seed):
        geo = geometry_for(DyadicSystem(config, sigma), T.mass, r, normalization)
        terms = SystemDecomposition(T, geo, omega).pairing_terms(f, g, k_max)
        ordered = [terms[key] for key in _ordered_keys(k_max)]
        for key in _ordered_keys(k_max):
            sums[key].append(terms[key])
        total = math.fsum(ordered)
        totals.append(total)
        if keep_systems:
            per_system.append({"sigma": _sigma_label(sigma), "total": total,
                               "terms": {f"{a}[{b}]": terms[(a, b)] for a, b in _ordered_keys(k_max)}})
    count = len(totals)
    rhs = math.fsum(totals) / count
    means = {key: math.fsum(v) / count for key, v in sums.items()}
    nf = math.sqrt(float(np.dot(f * f, T.mass)))
    ng = math.sqrt(float(np.dot(g * g, T.mass)))
    scale = l2_norm(T).value * nf * ng
    residual = abs(lhs - rhs)
    rel = residual / scale if scale > 0 else residual
    return DecompositionReport(lhs, rhs, residual, rel, scale, normalization, str(mode), r, count,
                               k_max, means, per_system, omega.to_config())


def representation_operator(T: Operator, config: GridConfig, r: int = 2,
                            omega: ModulusOfContinuity | None = None, mode="exhaustive",
                            seed: int | None = None, normalization: str = "measured") -> Operator:
    """Ensemble average of the whole right-hand side as one operator."""
    omega = omega or ModulusOfContinuity.power(1.0)
    acc = np.zeros_like(T.kernel)
    count = 0
    k_max = config.N + 1
    for sigma in shift_ensemble(config, mode, seed):
        geo = geometry_for(DyadicSystem(config, sigma), T.mass, r, normalization)
        dec = SystemDecomposition(T, geo, omega)
        for k in list(range(-k_max, 0)) + list(range(1, k_max + 1)):
            acc += dec.raw_R(k) + dec.raw_Q(k)
        p1, p2 = dec.paraproducts()
        acc += p1.kernel + p2.kernel.T
        count += 1
    return Operator(acc / count, T.mass)


# ------------------------------------------------ goodness-inserted expansion

def _cube_differences(f, system: DyadicSystem, mass) -> list[tuple[CubeId, np.ndarray]]:
    out = []
    for level in range(0, system.config.finest_level):
        coords, lab = system.level_cubes(level)
        diff = level_difference(f, system, level, mass)
        for i, c in enumerate(coords):
            piece = np.where(lab == i, diff, 0.0)
            if piece.any():
                out.append((CubeId(level, tuple(int(v) for v in c), system), piece))
    return out


def _phi(system: DyadicSystem, level: int, r: int, normalization: str) -> np.ndarray:
    """Goodness filter of a level (the weights ``1_good / P(good)``), per cell."""
    _, lab = system.level_cubes(level)
    return system.weights(level, r, normalization)[lab]


def goodness_inserted_expansion(T: Operator, f, g, config: GridConfig, r: int = 2,
                                mode="exhaustive", seed: int | None = None,
                                normalization: str = "measured") -> tuple[float, float, float]:
    """(plain, goodness-inserted, chi/psi) ensemble averages of the martingale expansion."""
    f, g = _prepare(T, f, g)
    mass = T.mass
    plain, inserted, chipsi = [], [], []
    for sigma in shift_ensemble(config, mode, seed):
        system = DyadicSystem(config, sigma)
        Fs = _cube_differences(f, system, mass)
        Gs = _cube_differences(g, system, mass)
        TF = [T(v) * mass for _, v in Fs]
        terms_plain, terms_ins = [], []
        wcache: dict = {}

        def w(cube):
            key = (cube.level, cube.coord)
            if key not in wcache:
                coords, _ = system.level_cubes(cube.level)
                idx = np.flatnonzero((coords == np.array(cube.coord)).all(axis=1))[0]
                wcache[key] = system.weights(cube.level, r, normalization)[idx]
            return wcache[key]

        for (I, _), tf in zip(Fs, TF):
            for J, dg in Gs:
                val = float(np.dot(tf, dg))
                terms_plain.append(val)
                smaller = I if I.level >= J.level else J
                terms_ins.append(w(smaller) * val)
        plain.append(math.fsum(terms_plain))
        inserted.append(math.fsum(terms_ins))
        # chi/psi form by levels
        terms = []
        n_levels = config.finest_level
        Df = [level_difference(f, system, i, mass) for i in range(n_levels)]
        Dg = [level_difference(g, system, j, mass) for j in range(n_levels)]
        phis = [_phi(system, i, r, normalization) for i in range(n_levels)]
        for i in range(n_levels):
            for j in range(n_levels):
                chi = phis[i] if i >= j else 1.0
                psi = 1.0 if i >= j else phis[j]
                terms.append(T.pair(chi * Df[i], psi * Dg[j]))
        chipsi.append(math.fsum(terms))
    n = len(plain)
    return math.fsum(plain) / n, math.fsum(inserted) / n, math.fsum(chipsi) / n


# -------------------------------------------------- per-system brute identities

def _weighted_block(f, H: CubeId, r: int, mass, normalization: str) -> np.ndarray:
    return block_ops(f, H, r, "D_r_good", mass, normalization)


def _h_cubes(system: DyadicSystem, r: int):
    for L in range(-r, system.config.N - r + 1):
        yield L, system.cubes(L)


def _level_pair_sum(T: Operator, f, g, system: DyadicSystem, r: int, normalization: str, select) -> float:
    mass = T.mass
    n_levels = system.config.finest_level
    Df = [level_difference(f, system, i, mass) for i in range(n_levels)]
    Dg = [level_difference(g, system, j, mass) for j in range(n_levels)]
    phis = [_phi(system, i, r, normalization) for i in range(n_levels)]
    terms = []
    for i in range(n_levels):
        for j in range(n_levels):
            if select(i, j):
                chi = phis[i] if i >= j else 1.0
                psi = 1.0 if i >= j else phis[j]
                terms.append(T.pair(chi * Df[i], psi * Dg[j]))
    return math.fsum(terms)


def diagonal_band_sides(T: Operator, f, g, system: DyadicSystem, r: int = 2,
                 normalization: str = "measured") -> tuple[float, float]:
    """Diagonal band 0 <= i-j <= r against sum_m sum_H <T D_H^(r,good) f, P^(r+1)_{H+m} g>."""
    f, g = _prepare(T, f, g)
    lhs = _level_pair_sum(T, f, g, system, r, normalization, lambda i, j: 0 <= i - j <= r)
    terms = []
    for L, cubes in _h_cubes(system, r):
        Pg = [block_ops(g, J, r + 1, "P_r", T.mass) for J in cubes]
        for H in cubes:
            tf = T(_weighted_block(f, H, r, T.mass, normalization)) * T.mass
            terms.extend(float(np.dot(tf, pg)) for pg in Pg)
    return lhs, math.fsum(terms)


def upper_band_sides(T: Operator, f, g, system: DyadicSystem, r: int = 2,
                   normalization: str = "measured") -> tuple[float, float]:
    """Band 0 < j-i <= r against sum_m sum_H <T P^(r)_{H+m} f, D_H^(r,good) g>."""
    f, g = _prepare(T, f, g)
    lhs = _level_pair_sum(T, f, g, system, r, normalization, lambda i, j: 0 < j - i <= r)
    terms = []
    for L, cubes in _h_cubes(system, r):
        TPf = [T(block_ops(f, J, r, "P_r", T.mass)) * T.mass for J in cubes]
        for H in cubes:
            dg = _weighted_block(g, H, r, T.mass, normalization)
            terms.extend(float(np.dot(tp, dg)) for tp in TPf)
    return lhs, math.fsum(terms)


def far_band_sides(T: Operator, f, g, system: DyadicSystem, r: int = 2,
                 normalization: str = "measured") -> tuple[float, float]:
    """Far band j < i-r against the average-difference sum plus the paraproduct term."""
    f, g = _prepare(T, f, g)
    mass = T.mass
    lhs = _level_pair_sum(T, f, g, system, r, normalization, lambda i, j: j < i - r)
    total = mass.sum()
    e_inf = float(np.dot(g, mass) / total) if total > 0 else 0.0
    tstar1 = T.adjoint().one()
    terms = []
    for L, cubes in _h_cubes(system, r):
        masks = [J.cell_mask() for J in cubes]
        avg = [float(np.dot(g[m], mass[m]) / mass[m].sum()) if mass[m].sum() > 0 else 0.0 for m in masks]
        for h, H in enumerate(cubes):
            df = _weighted_block(f, H, r, mass, normalization)
            tf = T(df) * mass
            for j in range(len(cubes)):
                if j != h:
                    terms.append(float(tf[masks[j]].sum()) * (avg[j] - avg[h]))
            dt = _weighted_block(tstar1, H, r, mass, normalization)
            terms.append(float(np.dot(f * mass, dt)) * (avg[h] - e_inf))
    return lhs, math.fsum(terms)


# ----------------------------------------------------------- structure checks

def _massive(mass):
    return mass > 0


def _residual(a: np.ndarray, b: np.ndarray, mass: np.ndarray) -> float:
    sel = _massive(mass)
    a, b = a[np.ix_(sel, sel)], b[np.ix_(sel, sel)]
    scale = max(1.0, float(np.abs(a).max()) if a.size else 0.0)
    return float(np.abs(a - b).max()) / scale if a.size else 0.0


def orthogonality_residual(block: BlockOperator) -> float:
    """Relative max-entry residual of the block's orthogonality relation (massive cells)."""
    K, k, r, m = block.cube, abs(block.k), block.r, block.mass
    if block.kind == "B":
        if block.k > 0:
            left, right = P_kernel(K, k + r + 1, m) - P_kernel(K, k, m), D_kernel(K, k + r, m)
        else:
            left, right = D_kernel(K, k + r, m), P_kernel(K, k + r, m) - P_kernel(K, k, m)
    else:
        if block.k > 0:
            left, right = P_kernel(K, k + 1, m), D_kernel(K, k + r, m)
        else:
            left, right = D_kernel(K, k + r, m), P_kernel(K, k + 1, m)
    rebuilt = _compose(_compose(left, block.kernel, m), right, m)
    return _residual(block.kernel, rebuilt, m)


def check_kernel_bounds(block: BlockOperator, n_order: float) -> dict:
    """Support and measured kernel constants of one block.

    ``constant`` is ``max |kernel| * l(K)^n`` (for A blocks over the first part);
    ``local_constant`` is ``max |a_{K,2}(x,y)| * mu(H)`` over the H cubes.
    """
    K = block.cube
    inside = K.cell_mask()
    outside = ~(inside[:, None] & inside[None, :])
    support_ok = not block.kernel[outside].any()
    lk = K.side_length ** n_order
    main = block.part1 if block.kind == "A" else block.kernel
    out = {"support_in_KxK": bool(support_ok),
           "constant": float(np.abs(main).max() * lk) if main.size else 0.0}
    if block.kind == "A":
        L = K.level + abs(block.k)
        _, lab = K.system.level_cubes(L)
        hm = np.bincount(lab, weights=block.mass)[lab]
        same = lab[:, None] == lab[None, :]
        part2 = block.part2
        local_ok = not part2[~same].any()
        out["local_constant"] = float((np.abs(part2) * hm[None, :]).max())
        out["local_support_ok"] = bool(local_ok)
    return out


# ------------------------------------------------------------------- norms

@dataclass(frozen=True)
class NormRow:
    k: int
    norm_R: float
    norm_Q: float

    @property
    def norm_Q_over_sqrt_k(self) -> float:
        return self.norm_Q / math.sqrt(abs(self.k))


def estimate_norms(T: Operator, config: GridConfig, k_values: Iterable[int] | None = None, r: int = 2,
                   omega: ModulusOfContinuity | None = None, mode="exhaustive", seed: int | None = None,
                   normalization: str = "measured", systems=None) -> list[NormRow]:
    """max over the ensemble of ||R_k|| and ||Q_k|| in L2(mu)."""
    omega = omega or ModulusOfContinuity.power(1.0)
    ks = list(range(1, config.N + 2)) if k_values is None else list(k_values)
    best = {k: [0.0, 0.0] for k in ks}
    sigmas = systems if systems is not None else shift_ensemble(config, mode, seed)
    for sigma in sigmas:
        geo = geometry_for(DyadicSystem(config, sigma), T.mass, r, normalization)
        dec = SystemDecomposition(T, geo, omega)
        for k in ks:
            best[k][0] = max(best[k][0], l2_norm(dec.R(k)).value)
            best[k][1] = max(best[k][1], l2_norm(dec.Q(k)).value)
    return [NormRow(k, *best[k]) for k in ks]


def t1_aggregate(omega: ModulusOfContinuity, norms: list[NormRow] | None = None,
                 paraproduct_norm: float = 0.0) -> dict:
    """``C (1 + sum_k omega(2^-k)(1 + sqrt k))`` with C read off a norm table, and the comparison integral."""
    series = dini_sum(omega, 0.0)
    series_half = _sqrt_sum(omega)
    integral, diverges = dini_integral_sqrt(omega)
    if norms:
        C = max([paraproduct_norm] + [max(row.norm_R, row.norm_Q_over_sqrt_k) for row in norms])
    else:
        C = max(1.0, paraproduct_norm)
    diverges = diverges or series.diverges or series_half["diverges"]
    total = series.value + series_half["value"]
    return {"C": C, "bound": math.inf if diverges else C * (1 + total),
            "sum_omega": series.value, "sum_omega_sqrt_k": series_half["value"],
            "tail_bound": series.tail_bound + series_half["tail_bound"],
            "integral": integral, "diverges": bool(diverges)}


def _sqrt_sum(omega: ModulusOfContinuity, tol: float = 1e-10, k_cap: int = 10**6) -> dict:
    """``sum_{k>=1} omega(2^-k) sqrt(k)`` with a tail bound."""
    if omega.kind == "zero":
        return {"value": 0.0, "tail_bound": 0.0, "k_max": 0, "diverges": False}
    res = dini_sum(omega, 0.5, tol=tol, k_cap=k_cap)
    if res.diverges:
        return {"value": math.inf, "tail_bound": math.inf, "k_max": res.k_max, "diverges": True}
    ks = np.arange(1, res.k_max + 1, dtype=float)
    value = math.fsum(omega(2.0**-ks) * np.sqrt(ks))
    # sqrt(k) <= sqrt(1+k): the (1+k)^1/2 tail dominates
    return {"value": value, "tail_bound": res.tail_bound, "k_max": res.k_max, "diverges": False}


def dini_integral_sqrt(omega: ModulusOfContinuity) -> tuple[float, bool]:
    """``int_0^1 omega(t) sqrt(log 1/t) dt/t``."""
    from scipy import integrate
    if omega.kind == "zero":
        return 0.0, False
    if omega.kind == "log_power" and omega.param <= 1.5:
        return math.inf, True
    val, _ = integrate.quad(lambda u: float(omega(math.exp(-u))) * math.sqrt(u), 0, np.inf, limit=500)
    return float(val), False


# --------------------------------------------------------------- estimator

class DyadicRepresentation(BaseEstimator):
    """Estimator-style wrapper: ``fit`` an operator, ``transform`` functions.

    ``fit(T)`` averages the representation over the shift ensemble;
    ``transform(X)`` applies it to the rows of ``X`` (mean-zero projection is
    left to the caller); ``residual(X)`` compares with T on the mean-zero part.
    """

    def __init__(self, d: int = 1, N: int = 3, r: int = 2, omega=None, mode="exhaustive",
                 seed=None, normalization: str = "measured"):
        self.d = d
        self.N = N
        self.r = r
        self.omega = omega
        self.mode = mode
        self.seed = seed
        self.normalization = normalization

    def fit(self, T: Operator, y=None):
        if not isinstance(T, Operator):
            raise InputError("fit expects an Operator")
        self.config_ = GridConfig(self.d, self.N)
        if T.n != self.config_.n_cells:
            raise InputError(f"operator has {T.n} cells, grid has {self.config_.n_cells}")
        omega = self.omega if isinstance(self.omega, ModulusOfContinuity) else (
            ModulusOfContinuity.from_config(self.omega) if self.omega else None)
        self.operator_ = T
        self.representation_ = representation_operator(T, self.config_, self.r, omega, self.mode,
                                                        self.seed, self.normalization)
        return self

    def transform(self, X):
        check_is_fitted(self, "representation_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([self.representation_(x) for x in X])

    def residual(self, X) -> float:
        """max |<(T - representation) f, g>| over mean-zero projections of the rows, per unit norms."""
        check_is_fitted(self, "representation_")
        m = self.operator_.mass
        X = np.atleast_2d(np.asarray(X, dtype=float))
        X = X - (X @ m / m.sum())[:, None]
        diff = self.operator_ - self.representation_
        P = X * m
        vals = P @ diff.kernel @ P.T
        norms = np.sqrt(np.einsum("ij,ij->i", X * X, np.broadcast_to(m, X.shape)))
        scale = np.outer(norms, norms)
        with np.errstate(invalid="ignore", divide="ignore"):
            rel = np.where(scale > 0, np.abs(vals) / scale, 0.0)
        return float(rel.max())
