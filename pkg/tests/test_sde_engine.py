import numpy as np
import pytest

from pathdep import presets
from pathdep.path_core import CadlagPath, GridError, InitialCondition, TimeGrid
from pathdep.sde_engine import (
    Bounds, CoefficientSet, EngineConfig, JumpMeasure, characteristics, history_of,
    iter_batches, simulate, validate_coefficients,
)
from pathdep.stats import Moments

from conftest import start_at


def test_zero_dynamics_stays_at_eta_s(grid):
    eta = CadlagPath(grid, np.linspace(-1, 1, len(grid)))
    init = InitialCondition(0.25, eta)
    c = CoefficientSet(1)
    ens = simulate(c, JumpMeasure.empty(1), init, grid, 5, seed=1)
    k = init.start_index
    assert np.all(ens.values[:, k:] == eta.values[k])
    assert np.all(ens.values[:, :k + 1] == eta.values[:k + 1])


def test_deterministic_ode_is_exact(grid):
    c = presets.constant(1, beta=1.0, sigma=0.0)
    init = start_at(grid, 0.5, s=0.25)
    ens = simulate(c, JumpMeasure.empty(1), init, grid, 3, seed=2)
    k = init.start_index
    expect = 0.5 + (grid.times[k:] - 0.25)
    np.testing.assert_allclose(ens.values[0, k:, 0], expect, rtol=0, atol=1e-13)


def test_moment_oracle_small_budget(jump_model):
    c, F = jump_model
    g = TimeGrid.uniform(1.0, 2**-7)
    ens = simulate(c, F, start_at(g), g, 20000, seed=3)
    x = ens.values[:, -1, 0]
    se_mean = x.std(ddof=1) / np.sqrt(x.size)
    assert abs(x.mean() - 0.1) <= 3 * se_mean
    mu4 = np.mean((x - x.mean()) ** 4)
    se_var = np.sqrt((mu4 - x.var() ** 2) / x.size)
    assert abs(x.var(ddof=1) - 0.54) <= 3 * se_var


def test_pinning_is_bit_exact(jump_model):
    c, F = jump_model
    g = TimeGrid.uniform(1.0, 2**-6)
    eta = CadlagPath(g, np.sin(7 * g.times) / 3)
    init = InitialCondition(0.5, eta)
    ens = simulate(c, F, init, g, 1000, seed=4)
    k = init.start_index
    assert np.all(ens.values[:, :k + 1] == eta.values[:k + 1])


def test_same_seed_same_bits_for_any_batching_and_workers(jump_model):
    c, F = jump_model
    g = TimeGrid.uniform(1.0, 2**-5)
    init = start_at(g)
    a = simulate(c, F, init, g, 1000, seed=5)
    b = simulate(c, F, init, g, 1000, seed=5, batch_size=64, workers=4)
    d = simulate(c, F, init, g, 1000, seed=5, batch_size=333, workers=8)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.values, d.values)
    e = simulate(c, F, init, g, 1000, seed=6)
    assert not np.array_equal(a.values, e.values)
    # a prefix of a larger ensemble is the smaller ensemble
    assert np.array_equal(simulate(c, F, init, g, 1500, seed=5).values[:1000], a.values)


def test_lazy_ensemble_regenerates_identically(jump_model):
    c, F = jump_model
    g = TimeGrid.uniform(1.0, 2**-5)
    lazy = EngineConfig(c, F, g, batch_size=128).ensemble(start_at(g), 500, seed=8)
    first = np.concatenate([b.values for b in lazy.batches()])
    second = np.concatenate([b.values for b in lazy.batches()])
    assert np.array_equal(first, second)
    assert np.array_equal(first, lazy.materialize().values)


def test_jump_measure_validation():
    with pytest.raises(ValueError):
        JumpMeasure.from_atoms([(0.0, 1.0)])
    with pytest.raises(ValueError):
        JumpMeasure.from_atoms([(1.0, -1.0)])
    with pytest.raises(ValueError):
        JumpMeasure.from_atoms([(1.0, 0.0)])
    F = JumpMeasure.from_atoms([((1.0, 2.0), 0.5), ((-1.0, 0.0), 0.25)], dim=2)
    assert F.n_atoms == 2 and F.total_mass == 0.75
    assert JumpMeasure.empty(3).n_atoms == 0


def test_start_time_must_be_a_node(grid):
    with pytest.raises(GridError):
        InitialCondition(0.3, CadlagPath.constant(grid, [0.0]))
    c = CoefficientSet(1)
    with pytest.raises(ValueError):
        list(iter_batches(c, JumpMeasure.empty(1), start_at(grid), grid, 0, 1))


def test_compensated_jumps_have_zero_mean():
    F = JumpMeasure.from_atoms([(1.0, 2.0), (-0.5, 1.0)])
    c = presets.constant(1, beta=0.0, sigma=0.0, jump_scale=1.0, F=F)
    g = TimeGrid.uniform(1.0, 2**-4)
    ens = simulate(c, F, start_at(g), g, 20000, seed=9)
    inc = ens.values[:, 1:, 0] - ens.values[:, :1, 0]
    m = Moments()
    m.add(inc)
    assert np.all(np.abs(m.mean) <= 3 * m.se)


def test_realized_variance_matches_c():
    c = presets.constant(1, beta=0.0, sigma=0.3)
    g = TimeGrid.uniform(1.0, 2**-8)
    ens = simulate(c, JumpMeasure.empty(1), start_at(g), g, 2000, seed=10)
    rv = (np.diff(ens.values[:, :, 0], axis=1) ** 2).sum(axis=1)
    ch = characteristics(c, JumpMeasure.empty(1), ens.path(0), 0.0)
    assert abs(rv.mean() - ch.C[-1, 0, 0]) <= 3 * rv.std(ddof=1) / np.sqrt(rv.size)


def test_characteristics_examples(grid):
    p = CadlagPath(grid, np.cos(3 * grid.times))
    F = JumpMeasure.from_atoms([(1.0, 0.7)])
    zero = characteristics(CoefficientSet(1), F, p, 0.25)
    assert np.all(zero.B == 0) and np.all(zero.C == 0)
    assert zero.nu_intensity(0.5, 0) == 0.0
    c = presets.constant(1, beta=0.4, sigma=0.5, jump_scale=1.0, F=F)
    ch = characteristics(c, F, p, 0.25)
    k = ch.start_index
    np.testing.assert_allclose(ch.B[k:, 0], 0.4 * (grid.times[k:] - 0.25), atol=1e-14)
    np.testing.assert_allclose(ch.C[k:, 0, 0], 0.25 * (grid.times[k:] - 0.25), atol=1e-14)
    assert ch.B[k, 0] == 0 and ch.C[k, 0, 0] == 0
    assert ch.nu_intensity(0.5, 0) == 0.7
    assert np.all(np.diff(ch.C[:, 0, 0]) >= 0)


def test_characteristics_psd_in_two_dims(grid):
    sig = np.array([[0.3, 0.1], [-0.2, 0.4]])
    c = presets.constant(2, beta=[0.1, 0.0], sigma=sig)
    p = CadlagPath.constant(grid, [0.0, 0.0])
    ch = characteristics(c, JumpMeasure.empty(2), p, 0.0)
    for C in ch.C:
        np.testing.assert_allclose(C, C.T)
        assert np.linalg.eigvalsh(C).min() >= -1e-15
    steps = np.diff(ch.C, axis=0)
    assert all(np.linalg.eigvalsh(s).min() >= -1e-15 for s in steps)


def test_validate_constant_coefficients():
    c = presets.constant(1, beta=0.2, sigma=0.1, jump_scale=1.0, F=JumpMeasure.from_atoms([(1.0, 1.0)]))
    rep = validate_coefficients(c, 50, F=JumpMeasure.from_atoms([(1.0, 1.0)]))
    assert rep.bounds_ok
    assert rep.lipschitz_ratio == {"beta": 0.0, "sigma": 0.0, "w": 0.0}


def test_validate_running_max_lipschitz_at_most_kappa():
    F = JumpMeasure.from_atoms([(1.0, 1.0)])
    c = presets.running_max(1, kappa=0.7, sigma=0.2, drift_bound=2.0, F=F)
    rep = validate_coefficients(c, 200, F=F)
    assert rep.bounds_ok
    assert 0 < rep.lipschitz_ratio["beta"] <= 0.7 + 1e-9


def test_validate_flags_bound_violator():
    c = CoefficientSet(1, beta=lambda h: 5.0 * np.ones((h.batch, 1)), bounds=Bounds(beta=1.0))
    rep = validate_coefficients(c, 5)
    assert not rep.bounds_ok
    v = rep.violations[0]
    assert v["coefficient"] == "beta" and v["norm"] == 5.0 and "t" in v and "path" in v


def test_coefficients_ignore_the_future(grid):
    c = presets.running_max(1, kappa=1.0, sigma=0.0, drift_bound=10.0)
    p = CadlagPath(grid, np.linspace(0, 1, len(grid)))
    q_vals = np.array(p.values)
    q_vals[len(grid) // 2 + 1:] += 100.0
    q = CadlagPath(grid, q_vals)
    t = grid.times[len(grid) // 2]
    assert np.array_equal(c.beta(history_of(p, t)), c.beta(history_of(q, t)))
