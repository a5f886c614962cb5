import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dyrep.exceptions import DomainError, InputError
from dyrep.grid import DyadicSystem, GridConfig
from dyrep.measure import (DiscreteMeasure, point_mass_mixture, power_law, random_measure, read_measure_csv,
                           uniform, write_measure_csv)


def test_uniform_is_lebesgue():
    for d, N in [(1, 3), (2, 2), (3, 1)]:
        mu = uniform(GridConfig(d, N))
        assert mu.total == pytest.approx(1.0)
        assert mu.order == d


def test_negative_and_wrong_length_rejected():
    c = GridConfig(1, 2)
    with pytest.raises(DomainError):
        DiscreteMeasure(c, [1, -1, 0, 0])
    with pytest.raises(InputError):
        DiscreteMeasure(c, [1, 1])
    with pytest.raises(DomainError):
        DiscreteMeasure(c, [1, np.nan, 0, 0])


def test_masses_are_read_only():
    mu = uniform(GridConfig(1, 2))
    with pytest.raises(ValueError):
        mu.masses[0] = 3.0


def test_growth_audit_uniform():
    # ball of radius h/2 around a cell has mass h^n, ratio 2^n
    for d in (1, 2):
        mu = uniform(GridConfig(d, 3))
        assert mu.growth_audit() == pytest.approx(2.0**d)


def test_growth_audit_enforces_declared_constant():
    c = GridConfig(1, 3)
    mu = DiscreteMeasure(c, uniform(c).masses, growth_constant=1.0)
    with pytest.raises(DomainError):
        mu.growth_audit()
    DiscreteMeasure(c, uniform(c).masses, growth_constant=2.0).growth_audit()


def test_growth_audit_matches_bruteforce(rng):
    c = GridConfig(1, 4)
    mu = random_measure(c, rng)
    m = mu.masses
    want = max(m[s:s + w].sum() / (w * c.h / 2) for w in (1, 2, 4, 8, 16) for s in range(0, 16 - w + 1))
    assert mu.growth_audit() == pytest.approx(want)


def test_doubling_constant():
    c = GridConfig(1, 3)
    assert uniform(c).doubling_constant() == pytest.approx(2.0)
    pm = point_mass_mixture(c, [[1]], [1.0], background=0.0)
    assert pm.doubling_constant() == float("inf")
    pm = point_mass_mixture(c, [[1]], [1.0], background=1e-4)
    assert pm.doubling_constant() > 1e3


def test_point_mass_mixture_and_power_law():
    c = GridConfig(2, 2)
    mu = point_mass_mixture(c, [[1, 2]], [5.0], background=1.0)
    idx = np.ravel_multi_index((1, 2), (4, 4))
    assert mu.masses[idx] == pytest.approx(5.0 + 1 / 16)
    pl = power_law(c, 0.0)
    assert np.allclose(pl.masses, uniform(c).masses)


def test_random_measure_is_deterministic():
    c = GridConfig(2, 2)
    a = random_measure(c, np.random.default_rng(4)).masses
    b = random_measure(c, np.random.default_rng(4)).masses
    assert np.array_equal(a, b)
    assert (a >= 0).all() and a.any()


@given(st.integers(0, 2**32 - 1), st.sampled_from([(1, 3), (2, 2)]))
def test_csv_round_trip(tmp_path_factory, seed, dn):
    c = GridConfig(*dn)
    mu = random_measure(c, np.random.default_rng(seed))
    path = tmp_path_factory.mktemp("m") / "mu.csv"
    write_measure_csv(mu, path)
    assert np.array_equal(read_measure_csv(path, c).masses, mu.masses)


@pytest.mark.parametrize("body, line", [
    ("cell_index_0,mass\n0,1\n1,x\n", 3),
    ("cell_index_0,mass\n0,1\n9,1\n", 3),
    ("cell_index_0,mass\n0,-1\n", 2),
    ("cell_index_0,mass\n0,1,2\n", 2),
    ("cell,mass\n0,1\n", 1),
])
def test_csv_errors_name_file_and_line(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(InputError, match=rf"bad\.csv:{line}:"):
        read_measure_csv(path, GridConfig(1, 2))


def test_csv_missing_file(tmp_path):
    with pytest.raises(InputError):
        read_measure_csv(tmp_path / "nope.csv", GridConfig(1, 2))


def test_doubling_constant_in_shifted_system():
    c = GridConfig(1, 3)
    s = DyadicSystem(c, [1, 0, 1])
    assert uniform(c).doubling_constant(s) >= 2.0
