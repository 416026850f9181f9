import numpy as np
import pytest

from pathdep import presets
from pathdep.continuity_lab import (
    ConvergenceScenario, default_bank, levy_characteristic, levy_cos_mean,
    run_convergence_diagnostic, run_tightness_diagnostic,
)
from pathdep.sde_engine import EngineConfig, JumpMeasure
from pathdep.path_core import TimeGrid
from pathdep.projectors import estimate_projector

from conftest import start_at


def test_levy_characteristic_gaussian_and_jump_examples():
    phi = levy_characteristic(0.2, 1.5, 0.3, 0.4, [], [], 2.0)
    expect = np.exp(1j * 1.5 * (0.2 + 0.6) - 0.5 * 1.5**2 * 0.16 * 2.0)
    assert phi == pytest.approx(expect, abs=1e-15)
    # compensated Poisson with unit jumps: exp(lam tau (e^{i th} - 1 - i th))
    lam, th, tau = 0.7, 2.0, 1.5
    phi = levy_characteristic(0.0, th, 0.0, 0.0, [1.0], [lam], tau)
    assert phi == pytest.approx(np.exp(lam * tau * (np.exp(1j * th) - 1 - 1j * th)), abs=1e-15)
    assert levy_characteristic(0.0, 1.0, 0.0, 0.0, [], [], 0.0) == 1.0


def test_levy_cos_mean_matches_simulation(jump_model):
    c, F = jump_model
    g = TimeGrid.uniform(1.0, 2**-6)
    z = default_bank(1.0, thetas=(1.0,))[0]
    est = estimate_projector(EngineConfig(c, F, g), start_at(g, 0.3), z, 20000, 1)
    exact = levy_cos_mean(0.3, 1.0, 0.1, 0.2, [1.0], [0.5], 1.0)
    assert abs(est.value - exact) <= 3 * est.stderr


def test_default_bank_is_bounded():
    bank = default_bank(1.0, thetas=(1.0, 2.0), clamp=0.5)
    assert len(bank) == 5
    assert bank[-1].bound == 0.5 and all(b.measurability_time == 1.0 for b in bank)


def _value_scenario(g, levels, bank):
    target = start_at(g, 0.0)
    approx = [start_at(g, 2.0 ** -n) for n in range(1, levels + 1)]
    return ConvergenceScenario(target, approx, bank)


def test_scenario_requires_shrinking_distances():
    g = TimeGrid.uniform(1.0, 2**-5)
    sc = _value_scenario(g, 3, default_bank(1.0))
    np.testing.assert_allclose(sc.distances(), [0.5, 0.25, 0.125])
    assert sc.labels == [1, 2, 3]
    with pytest.raises(ValueError):
        ConvergenceScenario(start_at(g), [start_at(g, 0.1), start_at(g, 0.5)], default_bank(1.0))
    with pytest.raises(ValueError):
        ConvergenceScenario(start_at(g), [], default_bank(1.0))


def test_convergence_with_exact_differences():
    F = JumpMeasure.from_atoms([(1.0, 0.5)])
    c = presets.constant(1, beta=0.1, sigma=0.2, jump_scale=1.0, F=F)
    g = TimeGrid.uniform(1.0, 2**-5)
    bank = default_bank(1.0, thetas=(1.0,))[:1]
    sc = _value_scenario(g, 4, bank)

    def expected(init, target, gfun):
        x = lambda i: float(i.eta.values[i.start_index][0])
        cm = lambda x0: levy_cos_mean(x0, 1.0, 0.1, 0.2, [1.0], [0.5], 1.0)
        return cm(x(init)) - cm(x(target))

    rep = run_convergence_diagnostic(sc, EngineConfig(c, F, g), 4000, seed=7, expected=expected)
    assert rep.passed and len(rep.rows) == 4
    assert rep.trend[bank[0].name] < 0
    assert rep.statement == "consistent with convergence at tolerance 0.05"
    with pytest.raises(ValueError):
        run_convergence_diagnostic(ConvergenceScenario(sc.target, sc.approximants, []),
                                   EngineConfig(c, F, g), 10, 1)


def test_convergence_without_oracle_judges_last_level_only():
    c = presets.constant(1, beta=0.0, sigma=0.3)
    g = TimeGrid.uniform(1.0, 2**-5)
    sc = _value_scenario(g, 6, default_bank(1.0))
    rep = run_convergence_diagnostic(sc, EngineConfig(c, JumpMeasure.empty(1), g), 2000, seed=3)
    judged = [r for r in rep.rows if r["pass"] is not None]
    assert all(r["level"] == 6 for r in judged) and rep.passed
    # a gap far above the tolerance is not consistent
    far = ConvergenceScenario(start_at(g, 0.0), [start_at(g, 2.0), start_at(g, 1.5)], default_bank(1.0))
    bad = run_convergence_diagnostic(far, EngineConfig(c, JumpMeasure.empty(1), g), 2000, seed=3)
    assert not bad.passed and bad.statement.startswith("not consistent")


def test_tightness_diagnostic_on_bounded_model():
    F = JumpMeasure.from_atoms([(0.5, 1.0)])
    c = presets.running_max(1, kappa=0.5, sigma=0.3, drift_bound=1.0, F=F)
    g = TimeGrid.uniform(1.0, 2**-6)
    sc = _value_scenario(g, 3, default_bank(1.0))
    v = run_tightness_diagnostic(sc, EngineConfig(c, F, g), 1000, 1.0, 0.05, [0.5], seed=1)
    assert v.passed and v.K is not None
