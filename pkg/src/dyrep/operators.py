"""Operators on L2(mu) over the cells of K1, CZ kernels, moduli of continuity and audits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from ._validation import check_function, masses_of
from .exceptions import DomainError, InputError
from .grid import DyadicSystem, GridConfig


class Operator:
    """Linear map ``(Tf)(x) = sum_y kernel[x, y] f(y) mu(y)``.

    The kernel representation makes the mu-adjoint the plain transpose.
    """

    __array_priority__ = 100

    def __init__(self, kernel, mass):
        self.mass = masses_of(mass)
        k = np.asarray(kernel, dtype=float)
        n = self.mass.size
        if k.shape != (n, n):
            raise InputError(f"kernel must be {n}x{n}, got {k.shape}")
        self.kernel = k

    @classmethod
    def from_matrix(cls, matrix, mass) -> "Operator":
        """Operator whose action on value vectors is ``matrix @ f`` (massless columns dropped)."""
        mass = masses_of(mass)
        inv = np.zeros_like(mass)
        np.divide(1.0, mass, out=inv, where=mass > 0)
        return cls(np.asarray(matrix, dtype=float) * inv[None, :], mass)

    @classmethod
    def zeros(cls, mass) -> "Operator":
        mass = masses_of(mass)
        return cls(np.zeros((mass.size, mass.size)), mass)

    @classmethod
    def identity(cls, mass) -> "Operator":
        return cls.from_matrix(np.diag((masses_of(mass) > 0).astype(float)), mass)

    @property
    def n(self) -> int:
        return self.mass.size

    def matrix(self) -> np.ndarray:
        return self.kernel * self.mass[None, :]

    def __call__(self, f) -> np.ndarray:
        return self.kernel @ (self.mass * check_function(f, self.n))

    def adjoint(self) -> "Operator":
        return Operator(self.kernel.T, self.mass)

    @property
    def T(self) -> "Operator":
        return self.adjoint()

    def pair(self, f, g) -> float:
        """<Tf, g> in L2(mu)."""
        return float(np.dot(self(f) * self.mass, check_function(g, self.n, "g")))

    def one(self) -> np.ndarray:
        return self.kernel @ self.mass

    def _like(self, other: "Operator"):
        if not isinstance(other, Operator):
            return NotImplemented
        if other.n != self.n or not np.array_equal(other.mass, self.mass):
            raise DomainError("operators act on different measures")
        return other

    def __matmul__(self, other):
        if isinstance(other, Operator):
            self._like(other)
            return Operator(self.kernel @ (self.mass[:, None] * other.kernel), self.mass)
        return self(other)

    def __add__(self, other):
        if self._like(other) is NotImplemented:
            return NotImplemented
        return Operator(self.kernel + other.kernel, self.mass)

    def __sub__(self, other):
        if self._like(other) is NotImplemented:
            return NotImplemented
        return Operator(self.kernel - other.kernel, self.mass)

    def __mul__(self, c):
        return Operator(self.kernel * float(c), self.mass)

    __rmul__ = __mul__

    def __neg__(self):
        return Operator(-self.kernel, self.mass)

    def massive_kernel(self) -> np.ndarray:
        sel = self.mass > 0
        return self.kernel[np.ix_(sel, sel)]

    def __repr__(self):
        return f"Operator(n={self.n})"


# ------------------------------------------------------------------ norms

@dataclass(frozen=True)
class NormEstimate:
    value: float
    lower: float
    upper: float
    iterations: int
    converged: bool

    def __float__(self):
        return self.value


def _power_norm(A: np.ndarray, tol: float, max_iter: int) -> NormEstimate:
    if A.size == 0 or not A.any():
        return NormEstimate(0.0, 0.0, 0.0, 0, True)
    n = A.shape[1]
    v = 1.0 + np.arange(n) / n  # deterministic, not orthogonal to the positive cone
    v /= np.linalg.norm(v)
    est, it = 0.0, 0
    converged = False
    for it in range(1, max_iter + 1):
        w = A.T @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            # start vector fell in the kernel; restart on a coordinate axis
            v = np.zeros(n)
            v[int(np.abs(A).sum(axis=0).argmax())] = 1.0
            continue
        v_new = w / nw
        new = float(np.sqrt(nw))
        if abs(new - est) <= tol * new:
            est, v = new, v_new
            converged = True
            break
        est, v = new, v_new
    lower = float(np.linalg.norm(A @ v))
    B = A.T @ A
    upper = float(min(np.linalg.norm(A, "fro"), np.sqrt(np.abs(B).sum(axis=1).max())))
    return NormEstimate(max(est, lower), lower, max(upper, lower), it, converged)


def l2_norm(op: Operator, tol: float = 1e-8, max_iter: int = 10_000) -> NormEstimate:
    """L2(mu) operator norm via power iteration on ``sqrt(mu) k sqrt(mu)`` (massive cells)."""
    sel = op.mass > 0
    s = np.sqrt(op.mass[sel])
    A = s[:, None] * op.kernel[np.ix_(sel, sel)] * s[None, :]
    return _power_norm(A, tol, max_iter)


# ------------------------------------------------------ moduli of continuity

@dataclass(frozen=True)
class ModulusOfContinuity:
    """``power`` t^delta, ``log_power`` (1 + log 1/t)^-p, piecewise-linear ``table``, or ``zero``."""

    kind: str
    param: float = 1.0
    table: tuple = ()

    def __post_init__(self):
        if self.kind == "power" and not 0 < self.param <= 1:
            raise DomainError(f"power modulus needs delta in (0, 1], got {self.param}")
        if self.kind == "log_power" and self.param <= 0:
            raise DomainError("log_power modulus needs p > 0")
        if self.kind == "table":
            t = np.array([p[0] for p in self.table], dtype=float)
            w = np.array([p[1] for p in self.table], dtype=float)
            if t.size == 0 or (np.diff(t) <= 0).any() or (t <= 0).any():
                raise DomainError("table abscissae must be positive and increasing")
            if (np.diff(w) < 0).any() or (w < 0).any():
                raise DomainError("table values must be nonnegative and nondecreasing")
        if self.kind not in ("power", "log_power", "table", "zero"):
            raise DomainError(f"unknown modulus kind {self.kind!r}")

    @classmethod
    def power(cls, delta: float = 1.0):
        return cls("power", float(delta))

    @classmethod
    def log_power(cls, p: float):
        return cls("log_power", float(p))

    @classmethod
    def from_table(cls, pairs):
        return cls("table", table=tuple((float(a), float(b)) for a, b in pairs))

    @classmethod
    def zero(cls):
        return cls("zero", 0.0)

    @classmethod
    def from_config(cls, spec: dict):
        if "power" in spec:
            return cls.power(spec["power"])
        if "log_power" in spec:
            return cls.log_power(spec["log_power"])
        if "table" in spec:
            return cls.from_table(spec["table"])
        if spec.get("zero"):
            return cls.zero()
        raise InputError(f"cannot parse modulus entry {spec!r}")

    def to_config(self) -> dict:
        if self.kind == "table":
            return {"table": [list(p) for p in self.table]}
        if self.kind == "zero":
            return {"zero": True}
        return {self.kind: self.param}

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if (t < 0).any():
            raise DomainError("modulus evaluated at a negative argument")
        if self.kind == "zero":
            return np.zeros_like(t)
        if self.kind == "power":
            return t**self.param
        if self.kind == "log_power":
            with np.errstate(divide="ignore", over="ignore"):
                out = (1.0 + np.log(1.0 / t)) ** -self.param
            return np.where(t == 0, 0.0, out)
        ts = np.array([0.0] + [p[0] for p in self.table])
        ws = np.array([0.0] + [p[1] for p in self.table])
        return np.interp(t, ts, ws, right=ws[-1])

    def check(self, samples: int = 64) -> dict:
        """Nondecreasing and subadditive on a sample grid of [0, 1]."""
        t = np.linspace(0, 1, samples + 1)
        w = self(t)
        a, b = np.meshgrid(t, t)
        ok = a + b <= 1
        sub = self(np.where(ok, a + b, 0)) <= self(a) + self(b) + 1e-15
        return {"zero_at_zero": float(self(0.0)) == 0.0,
                "nondecreasing": bool((np.diff(w) >= -1e-15).all()),
                "subadditive": bool(sub[ok].all())}


# ------------------------------------------------------------------ kernels

def _hilbert(x, y):
    return 1.0 / (x[..., 0] - y[..., 0])


def _riesz(x, y):
    diff = x - y
    r = np.linalg.norm(diff, axis=-1)
    return diff[..., 0] / r ** (x.shape[-1] + 1)


BUILTIN_KERNELS = {"hilbert": _hilbert, "riesz": _riesz}


@dataclass
class KernelSpec:
    """A CZ kernel with evaluator ``K(x, y)`` on arrays of points (last axis = d)."""

    evaluator: Callable
    n: float
    omega: ModulusOfContinuity = field(default_factory=ModulusOfContinuity.power)
    diagonal: object = "zero"
    C_size: float | None = None
    C_smooth: float | None = None
    name: str = "custom"

    @classmethod
    def builtin(cls, name: str, d: int = 1, omega: ModulusOfContinuity | None = None, n=None):
        if name not in BUILTIN_KERNELS:
            raise InputError(f"unknown builtin kernel {name!r}")
        if name == "hilbert" and d != 1:
            raise DomainError("the Hilbert kernel lives in dimension 1")
        return cls(BUILTIN_KERNELS[name], float(d if n is None else n),
                   omega or ModulusOfContinuity.power(1.0), name=name)

    @classmethod
    def zero(cls, d: int = 1):
        return cls(lambda x, y: np.zeros(np.broadcast_shapes(x.shape, y.shape)[:-1]), float(d), name="zero")

    def __call__(self, x, y):
        return self.evaluator(np.asarray(x, dtype=float), np.asarray(y, dtype=float))


def kernel_matrix(kernel: KernelSpec, config: GridConfig) -> np.ndarray:
    """``K(x_c, x_c')`` at distinct cell centres plus the diagonal convention."""
    pts = config.cell_centers()
    n = len(pts)
    off = ~np.eye(n, dtype=bool)
    vals = np.zeros((n, n))
    with np.errstate(divide="ignore", invalid="ignore"):
        full = kernel(pts[:, None, :], pts[None, :, :])
    full = np.broadcast_to(full, (n, n))
    if not np.isfinite(full[off]).all():
        raise InputError(f"kernel {kernel.name} is not finite at distinct cell centres")
    vals[off] = full[off]
    if isinstance(kernel.diagonal, str):
        if kernel.diagonal != "zero":
            raise InputError(f"unknown diagonal convention {kernel.diagonal!r}")
    else:
        diag = np.asarray(kernel.diagonal, dtype=float).reshape(-1)
        if diag.size != n:
            raise InputError(f"custom diagonal needs {n} entries")
        vals[np.diag_indices(n)] = diag
    return vals


def assemble_operator(kernel: KernelSpec, mu, config: GridConfig) -> Operator:
    """Midpoint discretisation of ``int K(x, y) f(y) dmu(y)``."""
    return Operator(kernel_matrix(kernel, config), masses_of(mu, config.n_cells))


def random_operator(config: GridConfig, mu, rng: np.random.Generator) -> Operator:
    """Abstract dense operator with Gaussian kernel entries (not a CZ kernel)."""
    n = config.n_cells
    return Operator(rng.standard_normal((n, n)), masses_of(mu, n))


def read_kernel_csv(path, config: GridConfig) -> np.ndarray:
    """Kernel samples ``x_0..x_{d-1}, y_0..y_{d-1}, value``; missing pairs are zero."""
    path = Path(path)
    d, m = config.d, config.cells_per_side
    expected = [f"x_{i}" for i in range(d)] + [f"y_{i}" for i in range(d)] + ["value"]
    out = np.zeros((config.n_cells, config.n_cells))
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise InputError(f"{path}: cannot open kernel file ({exc})") from None
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
                val = float(row[-1])
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-numeric entry") from None
            if any(i < 0 or i >= m for i in idx) or not math.isfinite(val):
                raise InputError(f"{path}:{lineno}: index out of range or non-finite value")
            shape = (m,) * d
            out[np.ravel_multi_index(tuple(idx[:d]), shape), np.ravel_multi_index(tuple(idx[d:]), shape)] = val
    return out


# ------------------------------------------------------------ T(1) testing

def _reference_indicators(config: GridConfig):
    system = DyadicSystem(config)
    for level in range(0, config.finest_level + 1):
        coords, lab = system.level_cubes(level)
        for i in range(len(coords)):
            yield level, tuple(int(v) for v in coords[i]), lab == i


def testing_constants(T: Operator, mu, config: GridConfig) -> tuple[float, float]:
    """``sup_Q ||T 1_Q||_2 / mu(Q)^(1/2)`` and the same for the adjoint over reference cubes.

    Level 0 (K0) contains the support, so it also stands in for Q = R^d.
    """
    mass = masses_of(mu, T.n)
    best = [0.0, 0.0]
    for _, _, sel in _reference_indicators(config):
        mq = mass[sel].sum()
        if mq == 0:
            continue
        ind = sel.astype(float)
        for i, op in enumerate((T, T.adjoint())):
            v = op(ind)
            best[i] = max(best[i], float(np.sqrt(np.dot(v * v, mass) / mq)))
    return best[0], best[1]


def haar_image_bound(T: Operator, basis) -> tuple[float, object]:
    """max ||T phi||_2 over a Haar basis, with the witnessing (cube, index)."""
    best, witness = 0.0, None
    for h in basis:
        v = T(h.values)
        val = float(np.sqrt(np.dot(v * v, T.mass)))
        if val > best:
            best, witness = val, (h.cube, h.index)
    return best, witness


# ---------------------------------------------------------------------- BMO

def bmo_norm(b, mu, lam: float, config: GridConfig, p: float = 2.0) -> float:
    """``sup_Q inf_a ((1/mu(lam Q)) int_Q |b - a|^p dmu)^(1/p)`` over reference cubes and R^d.

    ``lam Q`` is the concentric dilate, realised as the cells whose centres it contains.
    """
    if lam <= 1:
        raise DomainError(f"lambda must exceed 1, got {lam}")
    if p < 1:
        raise DomainError("p must be at least 1")
    mass = masses_of(mu, config.n_cells)
    b = check_function(b, mass.size, "b")
    centers = config.cell_centers()
    system = DyadicSystem(config)

    def osc(sel):
        m = mass[sel]
        if m.sum() == 0:
            return 0.0
        v = b[sel]
        if p == 2:
            a = np.dot(v, m) / m.sum()
            return float(np.dot((v - a) ** 2, m))
        if np.ptp(v) == 0:
            return 0.0
        res = optimize.minimize_scalar(lambda a: float(np.dot(np.abs(v - a) ** p, m)),
                                       bounds=(v.min(), v.max()), method="bounded",
                                       options={"xatol": 1e-10})
        return float(res.fun)

    total = mass.sum()
    best = (osc(np.ones(mass.size, bool)) / total) ** (1 / p) if total > 0 else 0.0
    for level in range(0, config.finest_level + 1):
        coords, lab = system.level_cubes(level)
        side = config.side_length(level)
        for i, c in enumerate(coords):
            sel = lab == i
            if mass[sel].sum() == 0:
                continue
            center = (config.origin + c * config.side(level)) * config.h + side / 2
            dil = (np.abs(centers - center) < lam * side / 2).all(axis=1)
            best = max(best, (osc(sel) / mass[dil].sum()) ** (1 / p))
    return best


# --------------------------------------------------------------------- Dini

@dataclass(frozen=True)
class DiniResult:
    value: float
    tail_bound: float
    k_max: int
    diverges: bool


def _sum_terms(omega, alpha, ks):
    ks = np.asarray(ks, dtype=float)
    return omega(2.0**-ks) * (1.0 + ks) ** alpha


def dini_sum(omega: ModulusOfContinuity, alpha: float, tol: float = 1e-10,
             k_cap: int = 10**6) -> DiniResult:
    """``sum_{k>=1} omega(2^-k) (1+k)^alpha`` as a partial sum plus a rigorous tail bound."""
    if alpha < 0:
        raise DomainError("alpha must be nonnegative")
    if omega.kind == "zero":
        return DiniResult(0.0, 0.0, 0, False)
    if omega.kind == "log_power":
        p = omega.param
        if p - alpha <= 1:
            K = 10**4
            return DiniResult(math.fsum(_sum_terms(omega, alpha, np.arange(1, K + 1))), math.inf, K, True)
        c = math.log(2) ** -p * 2**alpha / (p - alpha - 1)
        # choose K with c K^(alpha-p+1) <= tol, capped
        K = min(k_cap, max(16, math.ceil((c / tol) ** (1 / (p - alpha - 1)))))
        tail = c * K ** (alpha - p + 1)
        return DiniResult(math.fsum(_sum_terms(omega, alpha, np.arange(1, K + 1))), tail, K, False)
    # power or table: geometric decay from some k on
    if omega.kind == "power":
        delta, scale = omega.param, 1.0
    else:
        t0, w0 = omega.table[0]
        delta, scale = 1.0, w0 / t0  # linear interpolation from the origin below t0
    terms = []
    k = 1
    while True:
        terms.append(float(_sum_terms(omega, alpha, [k])[0]))
        q = 2.0**-delta * ((k + 2) / (k + 1)) ** alpha
        if q < 1 and (omega.kind == "power" or 2.0**-(k + 1) <= omega.table[0][0]):
            nxt = scale * 2.0 ** (-(k + 1) * delta) * (k + 2) ** alpha
            tail = nxt / (1 - q)
            if tail <= tol or k >= k_cap:
                return DiniResult(math.fsum(terms), tail, k, False)
        k += 1
        if k > k_cap:
            return DiniResult(math.fsum(terms), math.inf, k_cap, True)


def dini_integral(omega: ModulusOfContinuity, alpha: float) -> tuple[float, bool]:
    """``int_0^1 omega(t) (1 + log 1/t)^alpha dt/t`` computed as ``int_0^inf omega(e^-u)(1+u)^alpha du``."""
    if omega.kind == "zero":
        return 0.0, False
    if omega.kind == "log_power" and omega.param - alpha <= 1:
        return math.inf, True
    val, _ = integrate.quad(lambda u: float(omega(math.exp(-u))) * (1 + u) ** alpha, 0, np.inf,
                            limit=500, epsabs=1e-13, epsrel=1e-12)
    return float(val), False


# ---------------------------------------------------------- regularity audit

def regularity_audit(kernel: KernelSpec, config: GridConfig) -> tuple[float, float]:
    """Measured size and smoothness constants over lattice-centre triples (sup metric)."""
    pts = config.cell_centers()
    n = len(pts)
    with np.errstate(divide="ignore", invalid="ignore"):
        K = np.array(np.broadcast_to(kernel(pts[:, None, :], pts[None, :, :]), (n, n)), dtype=float)
    K[np.diag_indices(n)] = 0.0
    dist = np.abs(pts[:, None, :] - pts[None, :, :]).max(axis=-1)
    off = dist > 0
    c_size = float((np.abs(K[off]) * dist[off] ** kernel.n).max()) if off.any() else 0.0
    c_smooth = 0.0
    for xp in range(n):
        # rows x, columns y, fixed x'
        dxx = dist[:, xp]
        adm = off & (dxx[:, None] <= 0.5 * dist) & (dxx[:, None] > 0)
        adm[:, xp] = False
        if not adm.any():
            continue
        num = np.abs(K - K[xp][None, :]) + np.abs(K.T - K[:, xp][None, :])
        ratio = np.where(adm, dxx[:, None] / np.where(off, dist, 1), 0)
        w = kernel.omega(ratio)
        need = adm & (num > 0)
        if (w[need] == 0).any():
            raise DomainError("modulus vanishes at a positive argument needed by the audit")
        if need.any():
            c_smooth = max(c_smooth, float((num[need] * dist[need] ** kernel.n / w[need]).max()))
    return c_size, c_smooth
