"""Classical dyadic shifts and the splitting of R_k, Q_k into shifts."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._validation import masses_of
from .exceptions import AuditWarning, DomainError
from .grid import CubeId, DyadicSystem
from .haar import D_kernel
from .measure import DiscreteMeasure
from .operators import Operator, l2_norm
from .representation import BlockOperator, SystemDecomposition, _compose, _residual

DEFAULT_DOUBLING_THRESHOLD = 1e3


@dataclass
class DyadicShift:
    """``S = sum_K C_K`` with ``C_K = D_K^(u) C_K D_K^(v)``; blocks are stored per cube."""

    u: int
    v: int
    blocks: dict = field(repr=False)
    mass: np.ndarray = field(repr=False)

    @property
    def complexity(self) -> int:
        return max(self.u, self.v)

    @property
    def type(self) -> tuple[int, int]:
        return (self.u, self.v)

    def kernel(self) -> np.ndarray:
        n = self.mass.size
        return sum(self.blocks.values(), np.zeros((n, n)))

    def operator(self) -> Operator:
        return Operator(self.kernel(), self.mass)

    def adjoint(self) -> "DyadicShift":
        return DyadicShift(self.v, self.u, {K: b.T for K, b in self.blocks.items()}, self.mass)


@dataclass(frozen=True)
class ShiftValidation:
    residual: float
    kernel_constant: float
    doubling_constant: float
    kernel_bound_asserted: bool


def _doubling(mass: np.ndarray, system: DyadicSystem) -> float:
    return DiscreteMeasure(system.config, mass).doubling_constant(system)


def validate_shift(S: DyadicShift, mu=None, doubling_threshold: float = DEFAULT_DOUBLING_THRESHOLD,
                   system: DyadicSystem | None = None) -> ShiftValidation:
    """Orthogonality residual and ``max |c_K| mu(K)`` over the stored blocks.

    On a non-doubling measure an ``AuditWarning`` is issued and the kernel
    constant is reported but not asserted.
    """
    mass = S.mass if mu is None else masses_of(mu, S.mass.size)
    residual, const = 0.0, 0.0
    for K, blk in S.blocks.items():
        mK = mass[K.cell_mask()].sum()
        if mK == 0:
            continue
        rebuilt = _compose(_compose(D_kernel(K, S.u, mass), blk, mass), D_kernel(K, S.v, mass), mass)
        residual = max(residual, _residual(blk, rebuilt, mass))
        sel = mass > 0
        const = max(const, float(np.abs(blk[np.ix_(sel, sel)]).max()) * mK if sel.any() else 0.0)
    if system is None:
        system = next(iter(S.blocks)).system if S.blocks else None
    dbl = _doubling(mass, system) if system is not None else 1.0
    asserted = bool(np.isfinite(dbl) and dbl <= doubling_threshold)
    if not asserted:
        warnings.warn(f"measure is not doubling (constant {dbl:.3g}); kernel constant is report-only",
                      AuditWarning, stacklevel=2)
    return ShiftValidation(residual, const, dbl, asserted)


def _positive_form(blocks: list[BlockOperator]) -> list[BlockOperator]:
    """Undo the transposition of negative-k blocks."""
    out = []
    for b in blocks:
        if b.k > 0:
            out.append(b)
        else:
            t = lambda a: None if a is None else a.T  # noqa: E731
            out.append(BlockOperator(b.kind, b.cube, -b.k, b.r, b.kernel.T, b.mass, t(b.part1), t(b.part2)))
    return out


def decompose_Rk(dec: SystemDecomposition, k: int) -> list[DyadicShift]:
    """R_k as r+1 shifts ``D_K^(j) B_K`` (types (j, k+r), j = k..k+r); r shifts for k < 0."""
    if k == 0:
        raise DomainError("k must be nonzero")
    r, kk, mass = dec.r, abs(k), dec.mass
    blocks = dec.blocks("B", k)
    if k > 0:
        return [DyadicShift(j, kk + r, {b.cube: _compose(D_kernel(b.cube, j, mass), b.kernel, mass)
                                        for b in blocks}, mass)
                for j in range(kk, kk + r + 1)]
    # B_K^(-k) = D^(k+r) B (P^(k+r) - P^(k)): split on the right
    return [DyadicShift(kk + r, j, {b.cube: _compose(b.kernel, D_kernel(b.cube, j, mass), mass)
                                    for b in blocks}, mass)
            for j in range(kk, kk + r)]


def _sub_cubes(K: CubeId, depth: int) -> list[CubeId]:
    system = K.system
    inside = K.cell_mask()
    coords, lab = system.level_cubes(K.level + depth)
    ids = np.unique(lab[inside])
    return [CubeId(K.level + depth, tuple(int(v) for v in coords[i]), system) for i in ids]


def _reindexed_blocks(blocks: list[BlockOperator], k: int, j: int, r: int, mass) -> dict:
    """``D_J (sum_{H^(k-j)=J} A_H^(k,2)) D_J^(k-j+r)`` for every J at depth j."""
    out = {}
    for b in blocks:
        for J in _sub_cubes(b.cube, j):
            m = J.cell_mask()
            local = b.part2 * (m[:, None] & m[None, :])
            if not local.any():
                continue
            out[J] = _compose(_compose(D_kernel(J, 0, mass), local, mass), D_kernel(J, k - j + r, mass), mass)
    return out


def decompose_Qk(dec: SystemDecomposition, k: int) -> list[DyadicShift]:
    """Q_k as 2(k+1) shifts: types (j, k+r) from A_{K,1} and (0, k-j+r) from the reindexed A_{K,2}."""
    if abs(k) < 2:
        raise DomainError("Q_k is only split for |k| >= 2 (Q_1 = 0)")
    r, kk, mass = dec.r, abs(k), dec.mass
    blocks = _positive_form(dec.blocks("A", k))
    shifts = []
    for j in range(kk + 1):
        first = {b.cube: _compose(_compose(D_kernel(b.cube, j, mass), b.part1, mass),
                                  D_kernel(b.cube, kk + r, mass), mass) for b in blocks}
        shifts.append(DyadicShift(j, kk + r, first, mass))
        shifts.append(DyadicShift(0, kk - j + r, _reindexed_blocks(blocks, kk, j, r, mass), mass))
    if k < 0:
        shifts = [s.adjoint() for s in shifts]
    return shifts


def reconstruction_residual(shifts: list[DyadicShift], target: Operator) -> float:
    n = target.n
    total = sum((s.kernel() for s in shifts), np.zeros((n, n)))
    return _residual(target.kernel, total, target.mass)


def reindex_zero_pattern(dec: SystemDecomposition, k: int, j: int) -> float:
    """Largest relative ``D_J (sum_{H in L} A_H) D_M^(k-j+r)`` with J, L, M at depth j of one K, not all equal."""
    r, mass = dec.r, dec.mass
    worst = 0.0
    for b in _positive_form(dec.blocks("A", abs(k))):
        subs = _sub_cubes(b.cube, j)
        scale = max(1.0, float(np.abs(b.part2).max()))
        for L in subs:
            m = L.cell_mask()
            local = b.part2 * (m[:, None] & m[None, :])
            for J in subs:
                left = _compose(D_kernel(J, 0, mass), local, mass)
                for M in subs:
                    if J == L == M:
                        continue
                    val = _compose(left, D_kernel(M, k - j + r, mass), mass)
                    worst = max(worst, float(np.abs(val).max()) / scale)
    return worst


def shift_inventory(shifts: list[DyadicShift], mu=None) -> list[dict]:
    """JSON-ready summary: type, per-block norms and measured kernel constant."""
    out = []
    for S in shifts:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AuditWarning)
            val = validate_shift(S, mu)
        blocks = []
        for K, blk in sorted(S.blocks.items(), key=lambda kv: (kv[0].level, kv[0].coord)):
            op = Operator(blk, S.mass)
            blocks.append({"K": {"level": K.level, "coord": list(K.coord)}, "norm": l2_norm(op).value})
        out.append({"type": [S.u, S.v], "blocks": blocks, "kernel_constant": val.kernel_constant,
                    "residual": val.residual})
    return out
