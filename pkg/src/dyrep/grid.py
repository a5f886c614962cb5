"""Dyadic cubes, truncated random shifts and goodness.

All geometry is done in integer units of the finest cell side ``h = 2**-N``.
The unit cube ``K1 = [0, 1)^d`` carries the data; ``K0 = [-1, 1)^d`` is its
parent in the reference grid. A cube at level ``L`` has side ``2**(N + 1 - L)``
units, so level 0 is ``K0``, level 1 is the scale of ``K1`` and level ``N + 1``
is the finest lattice. Negative levels are the (non-randomised) ancestors of
``K0``, obtained by doubling around its lower-left corner.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterator

import numpy as np

from .exceptions import DomainError, InputError

DEFAULT_ENSEMBLE_CAP = 2**16


@dataclass(frozen=True)
class GridConfig:
    d: int
    N: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise DomainError(f"dimension d must be a positive integer, got {self.d!r}")
        if int(self.N) != self.N or self.N < 1:
            raise DomainError(f"depth N must be a positive integer, got {self.N!r}")

    @property
    def cells_per_side(self) -> int:
        return 2**self.N

    @property
    def n_cells(self) -> int:
        return 2 ** (self.d * self.N)

    @property
    def h(self) -> float:
        return 2.0**-self.N

    @property
    def origin(self) -> int:
        # lower-left corner of K0 (and of every ancestor of K0)
        return -(2**self.N)

    @property
    def finest_level(self) -> int:
        return self.N + 1

    def side(self, level: int) -> int:
        """Side length of a level-``level`` cube in finest-cell units."""
        return 2 ** (self.N + 1 - level)

    def side_length(self, level: int) -> float:
        return 2.0 ** (1 - level)

    @property
    def box(self) -> tuple[int, int]:
        # [lo, hi) per axis in cell units; contains K0 + sigma for every sigma
        return -(2**self.N), 2 ** (self.N + 1)

    def cell_coords(self) -> np.ndarray:
        """Integer coordinates of the cells of K1, shape (n_cells, d), C order."""
        m = self.cells_per_side
        grids = np.indices((m,) * self.d).reshape(self.d, -1).T
        return grids.astype(np.int64)

    def cell_centers(self) -> np.ndarray:
        return (self.cell_coords() + 0.5) * self.h

    def zero_shift(self) -> np.ndarray:
        return np.zeros((self.N, self.d), dtype=np.int64)


def as_shift(sigma, config: GridConfig) -> np.ndarray:
    """Validate a shift vector: ``N`` entries of ``{0,1}^d`` indexed by scale j = 1..N."""
    arr = np.asarray(sigma, dtype=np.int64)
    if arr.ndim == 1 and config.d == 1:
        arr = arr[:, None]
    if arr.shape != (config.N, config.d):
        raise DomainError(f"shift vector must have shape ({config.N}, {config.d}), got {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise DomainError("shift vector entries must be 0 or 1")
    return arr


def shift_offset(sigma: np.ndarray, config: GridConfig, level: int) -> np.ndarray:
    """Truncated translation of a level-``level`` cube, in cell units.

    Only scales ``2**-N <= 2**-j < min(side, 1)`` contribute.
    """
    first = max(level, 1)
    out = np.zeros(sigma.shape[:-2] + (config.d,), dtype=np.int64)
    for j in range(first, config.N + 1):
        out += (2 ** (config.N - j)) * sigma[..., j - 1, :]
    return out


class DyadicSystem:
    """The shifted dyadic system ``D^sigma`` restricted to the cells of K1."""

    def __init__(self, config: GridConfig, sigma=None):
        self.config = config
        self.sigma = config.zero_shift() if sigma is None else as_shift(sigma, config)
        self.sigma.setflags(write=False)
        self._key = (config, self.sigma.tobytes())
        self._labels: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._coords = config.cell_coords()

    def __eq__(self, other):
        return isinstance(other, DyadicSystem) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def __repr__(self):
        bits = "".join("".join(map(str, row)) for row in self.sigma)
        return f"DyadicSystem(d={self.config.d}, N={self.config.N}, sigma={bits})"

    @property
    def is_reference(self) -> bool:
        return not self.sigma.any()

    def offset(self, level: int) -> np.ndarray:
        return shift_offset(self.sigma, self.config, level)

    def lower_corner(self, level: int, coord) -> np.ndarray:
        coord = np.asarray(coord, dtype=np.int64)
        return self.config.origin + self.offset(level) + coord * self.config.side(level)

    def coord_of_point(self, level: int, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.int64)
        return np.floor_divide(points - self.config.origin - self.offset(level), self.config.side(level))

    def ancestor_coord(self, level: int, coord, r: int) -> np.ndarray:
        return self.coord_of_point(level - r, self.lower_corner(level, coord))

    def level_cubes(self, level: int) -> tuple[np.ndarray, np.ndarray]:
        """Cubes of one level meeting K1: ``(coords, labels)``.

        ``coords[i]`` is the integer coordinate of the i-th cube (sorted
        lexicographically) and ``labels[c]`` the cube containing cell ``c``.
        """
        level = min(level, self.config.finest_level)
        if level not in self._labels:
            q = self.coord_of_point(level, self._coords)
            coords, labels = np.unique(q, axis=0, return_inverse=True)
            self._labels[level] = (coords, labels.reshape(-1))
        return self._labels[level]

    def cubes(self, level: int) -> list["CubeId"]:
        coords, _ = self.level_cubes(level)
        return [CubeId(level, tuple(int(v) for v in c), self) for c in coords]

    def cube_of_cell(self, level: int, cell: int) -> "CubeId":
        coords, labels = self.level_cubes(level)
        return CubeId(level, tuple(int(v) for v in coords[labels[cell]]), self)

    def good_mask(self, level: int, coords: np.ndarray, k: int) -> np.ndarray:
        """k-goodness of an array of level-``level`` cubes of this system."""
        if k < 2:
            raise DomainError(f"goodness needs k >= 2, got {k}")
        coords = np.atleast_2d(np.asarray(coords, dtype=np.int64))
        lo = self.lower_corner(level, coords)
        anc = self.coord_of_point(level - k, lo)
        lo_a = self.lower_corner(level - k, anc)
        side, side_a = self.config.side(level), self.config.side(level - k)
        gap = np.minimum(lo - lo_a, (lo_a + side_a) - (lo + side)).min(axis=1)
        return 4 * gap >= side_a

    def weights(self, level: int, k: int, normalization: str = "measured") -> np.ndarray:
        """Goodness weights ``1_good / P(good)`` for the cubes of ``level_cubes(level)``.

        In ``measured`` mode the probability is the exact fraction over the
        truncated shift ensemble; a class of cubes that is never good keeps
        weight 1 (goodness cannot be inserted there). In ``idealized`` mode the
        weight is ``2**d * 1_good``.
        """
        coords, _ = self.level_cubes(level)
        good = self.good_mask(level, coords, k)
        if normalization == "idealized":
            return good * float(2**self.config.d)
        if normalization != "measured":
            raise DomainError(f"unknown normalization {normalization!r}")
        out = np.empty(len(coords))
        for i, c in enumerate(coords):
            p = _measured_probability(self.config, level, tuple(int(v) for v in c), k)
            out[i] = 1.0 if p == 0 else float(good[i]) / float(p)
        return out


@dataclass(frozen=True)
class CubeId:
    level: int
    coord: tuple
    system: DyadicSystem = field(repr=False)

    @property
    def config(self) -> GridConfig:
        return self.system.config

    @property
    def side(self) -> int:
        return self.config.side(self.level)

    @property
    def side_length(self) -> float:
        return self.config.side_length(self.level)

    @property
    def lower(self) -> np.ndarray:
        return self.system.lower_corner(self.level, self.coord)

    @property
    def upper(self) -> np.ndarray:
        return self.lower + self.side

    @property
    def center(self) -> np.ndarray:
        return (self.lower + self.side / 2.0) * self.config.h

    def cell_mask(self) -> np.ndarray:
        pts = self.system._coords
        return ((pts >= self.lower) & (pts < self.upper)).all(axis=1)

    def contains(self, other: "CubeId") -> bool:
        return bool((self.lower <= other.lower).all() and (other.upper <= self.upper).all())

    def intersects(self, other: "CubeId") -> bool:
        return bool((np.maximum(self.lower, other.lower) < np.minimum(self.upper, other.upper)).all())

    def reference(self) -> "CubeId":
        return CubeId(self.level, self.coord, DyadicSystem(self.config))


def _check_level(config: GridConfig, level: int):
    if level > config.finest_level:
        raise DomainError(f"level {level} is below the finest lattice (level {config.finest_level})")


def reference_cube(config: GridConfig, level: int, coord) -> CubeId:
    _check_level(config, level)
    return CubeId(level, tuple(int(v) for v in np.atleast_1d(coord)), DyadicSystem(config))


def realize_cube(cube: CubeId, sigma) -> CubeId:
    """Position of the reference cube ``cube`` in the shifted system ``D^sigma``.

    Cube coordinates are shared across systems: only the lattice offset moves.
    """
    config = cube.config
    if not 0 <= cube.level <= config.finest_level:
        raise DomainError(f"level {cube.level} outside [0, {config.finest_level}]")
    return CubeId(cube.level, cube.coord, DyadicSystem(config, sigma))


def ancestor(cube: CubeId, r: int) -> CubeId:
    if r < 0:
        raise DomainError("ancestor order must be nonnegative")
    _check_level(cube.config, cube.level)
    coord = cube.system.ancestor_coord(cube.level, cube.coord, r)
    return CubeId(cube.level - r, tuple(int(v) for v in coord), cube.system)


def children(cube: CubeId) -> list[CubeId]:
    config = cube.config
    if cube.level >= config.finest_level:
        raise DomainError("finest cells have no children")
    sub = config.side(cube.level + 1)
    out = []
    for eps in itertools.product((0, 1), repeat=config.d):
        corner = cube.lower + sub * np.array(eps)
        coord = cube.system.coord_of_point(cube.level + 1, corner)
        out.append(CubeId(cube.level + 1, tuple(int(v) for v in coord), cube.system))
    return out


def is_k_good(cube: CubeId, k: int) -> bool:
    """``dist(I, boundary of I^(k)) >= l(I^(k)) / 4`` in the sup metric."""
    _check_level(cube.config, cube.level)
    return bool(cube.system.good_mask(cube.level, np.array([cube.coord]), k)[0])


def translate_cube(cube: CubeId, m) -> CubeId:
    """``H + m``: translation by ``m * l(H)``; must stay inside the bounding box."""
    m = np.asarray(m, dtype=np.int64).reshape(-1)
    if m.shape != (cube.config.d,):
        raise DomainError(f"translation must have length {cube.config.d}")
    out = CubeId(cube.level, tuple(int(v) for v in np.asarray(cube.coord) + m), cube.system)
    lo, hi = cube.config.box
    if (out.lower < lo).any() or (out.upper > hi).any():
        raise DomainError(f"translated cube {out.coord} leaves the bounding box")
    return out


def randomized_scales(config: GridConfig, level: int, k: int) -> list[int]:
    """Scales j whose shift bits decide the k-goodness of a level-``level`` cube."""
    return list(range(max(level - k, 1), min(max(level, 1), config.N + 1)))


@lru_cache(maxsize=None)
def _measured_probability(config: GridConfig, level: int, coord: tuple, k: int) -> Fraction:
    scales = randomized_scales(config, level, k)
    nbits = len(scales) * config.d
    bits = np.array(list(itertools.product((0, 1), repeat=nbits)), dtype=np.int64)
    bits = bits.reshape(len(bits), len(scales), config.d)
    sig = np.zeros((len(bits), config.N, config.d), dtype=np.int64)
    for i, j in enumerate(scales):
        sig[:, j - 1, :] = bits[:, i, :]
    side, side_a = config.side(level), config.side(level - k)
    lo = config.origin + shift_offset(sig, config, level) + np.asarray(coord) * side
    off_a = shift_offset(sig, config, level - k)
    anc = np.floor_divide(lo - config.origin - off_a, side_a)
    lo_a = config.origin + off_a + anc * side_a
    gap = np.minimum(lo - lo_a, (lo_a + side_a) - (lo + side)).min(axis=1)
    return Fraction(int((4 * gap >= side_a).sum()), len(bits))


def goodness_probability(cube: CubeId, k: int, mode: str = "measured") -> Fraction:
    """Probability that the reference cube ``cube`` shifted by a random sigma is k-good.

    ``idealized`` returns ``2**-d``; ``measured`` counts the shift bits that
    matter exactly (the remaining bits cannot change relative positions).
    """
    if k < 2:
        raise DomainError(f"goodness needs k >= 2, got {k}")
    if mode == "idealized":
        return Fraction(1, 2**cube.config.d)
    if mode != "measured":
        raise DomainError(f"unknown mode {mode!r}")
    return _measured_probability(cube.config, cube.level, tuple(cube.coord), k)


def parse_mode(mode) -> tuple[str, int | None]:
    """``'exhaustive'`` or ``'mc:COUNT'`` (also accepts a ``(name, count)`` pair)."""
    if isinstance(mode, tuple):
        return mode
    if mode == "exhaustive":
        return ("exhaustive", None)
    if isinstance(mode, str) and mode.startswith("mc:"):
        try:
            count = int(mode[3:])
        except ValueError:
            raise InputError(f"bad ensemble mode {mode!r}") from None
        if count < 1:
            raise InputError("monte carlo count must be positive")
        return ("mc", count)
    raise InputError(f"ensemble mode must be 'exhaustive' or 'mc:COUNT', got {mode!r}")


def shift_ensemble(config: GridConfig, mode="exhaustive", seed: int | None = None,
                   cap: int = DEFAULT_ENSEMBLE_CAP) -> Iterator[np.ndarray]:
    """Shift vectors: every sigma once (lexicographic), or ``count`` seeded draws."""
    kind, count = parse_mode(mode)
    if kind == "exhaustive":
        total = 2 ** (config.d * config.N)
        if total > cap:
            raise DomainError(
                f"exhaustive ensemble has {total} shifts (cap {cap}); use monte carlo mode 'mc:COUNT'")
        return (np.array(bits, dtype=np.int64).reshape(config.N, config.d)
                for bits in itertools.product((0, 1), repeat=config.d * config.N))
    rng = np.random.default_rng(seed)
    return (rng.integers(0, 2, size=(config.N, config.d), dtype=np.int64) for _ in range(count))


def ensemble_size(config: GridConfig, mode="exhaustive") -> int:
    kind, count = parse_mode(mode)
    return 2 ** (config.d * config.N) if kind == "exhaustive" else count
