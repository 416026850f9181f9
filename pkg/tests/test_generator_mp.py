import math

import numpy as np
import pytest

from pathdep import presets
from pathdep.events import AnticipationError, CylinderEvent, PathEvent
from pathdep.generator_mp import (
    ProcessFunctional, TestFunction, UnboundedFunctionError, apply_generator, check_derivatives,
    maf_from_generator, time_functional, trig_family, verify_martingale_problem,
    verify_weak_generator,
)
from pathdep.path_core import CadlagPath, TimeGrid
from pathdep.sde_engine import EngineConfig, JumpMeasure, simulate

from conftest import start_at


def _cos(theta):
    return trig_family([theta])[0]


def _sin(theta):
    return trig_family([theta])[1]


def test_brownian_generator_on_cosine(grid):
    c = presets.constant(1, beta=0.0, sigma=1.0)
    p = CadlagPath.constant(grid, [0.0])
    for th in (1.0, 2.0, 0.5):
        assert apply_generator(c, JumpMeasure.empty(1), _cos(th), 0.5, p) == pytest.approx(-0.5 * th**2, abs=1e-14)


def test_pure_jump_generator_on_sine(grid):
    lam = 0.7
    F = JumpMeasure.from_atoms([(1.0, lam)])
    c = presets.constant(1, beta=0.0, sigma=0.0, jump_scale=1.0, F=F)
    p = CadlagPath.constant(grid, [0.0])
    got = apply_generator(c, F, _sin(1.0), 0.25, p)
    assert got == pytest.approx(lam * (math.sin(1.0) - 1.0), abs=1e-14)


def test_generator_is_linear(grid, jump_model):
    c, F = jump_model
    p = CadlagPath(grid, np.sin(5 * grid.times))
    f, g = _cos(1.0), _sin(2.0)
    a, b = 0.3, -1.7
    lhs = apply_generator(c, F, a * f + b * g, 0.5, p)
    rhs = a * apply_generator(c, F, f, 0.5, p) + b * apply_generator(c, F, g, 0.5, p)
    assert lhs == pytest.approx(rhs, abs=1e-13)


def test_generator_rejects_unbounded_function(grid):
    c = presets.constant(1, beta=0.0, sigma=1.0)
    f = _cos(1.0)
    bad = TestFunction(f.f, f.grad, f.hess, 0.5, "cos-with-wrong-bound")
    with pytest.raises(UnboundedFunctionError):
        apply_generator(c, JumpMeasure.empty(1), bad, 0.0, CadlagPath.constant(grid, [0.0]))


def test_trig_family_and_derivatives():
    fam = trig_family([[1, 0], [0.5, -2]])
    assert len(fam) == 4 and all(f.bound == 1.0 for f in fam)
    pts = np.random.default_rng(0).normal(size=(20, 2))
    for f in fam:
        assert check_derivatives(f, pts) < 1e-6
    with pytest.raises(ValueError):
        trig_family([])


def test_equal_times_give_zero_statistic(jump_model):
    c, F = jump_model
    g = TimeGrid.uniform(1.0, 2**-5)
    ens = simulate(c, F, start_at(g), g, 500, seed=1)
    rep = verify_martingale_problem(ens, c, F, trig_family([[1.0]]), [(0.5, 0.5)])
    assert rep.passed
    assert all(r["estimate"] == 0.0 and r["stderr"] == 0.0 for r in rep.rows)


def test_honest_generator_passes_and_sabotage_is_caught(jump_model):
    c, F = jump_model
    g = TimeGrid.uniform(1.0, 2**-6)
    ens = EngineConfig(c, F, g).ensemble(start_at(g), 20000, seed=2)
    fns = trig_family([[1.0], [2.0]])
    honest = verify_martingale_problem(ens, c, F, fns, [0.5, 1.0])
    assert honest.passed
    assert honest.z_crit_adjusted > honest.z_crit
    bad = verify_martingale_problem(ens, c, F, fns, [0.5, 1.0], sabotage=True)
    assert not bad.passed


def test_anticipating_event_is_rejected(jump_model):
    c, F = jump_model
    g = TimeGrid.uniform(1.0, 2**-5)
    ens = simulate(c, F, start_at(g), g, 100, seed=3)
    late = CylinderEvent((0.75,), ((0.0,),), (1.0,))
    with pytest.raises(AnticipationError):
        verify_martingale_problem(ens, c, F, trig_family([[1.0]]), [(0.5, 1.0)], events=[late])
    sneaky = PathEvent(lambda v, gr: v[:, -1, 0] > 0, 0.5, "peeks at the end")
    with pytest.raises(AnticipationError):
        verify_martingale_problem(ens, c, F, trig_family([[1.0]]), [(0.5, 1.0)], events=[sneaky])


def test_time_functional_maf_is_zero(grid):
    p = CadlagPath(grid, np.cos(grid.times))
    phi = time_functional()
    assert maf_from_generator(phi, 0.25, 0.75, p) == pytest.approx(0.0, abs=1e-14)
    assert maf_from_generator(phi, 0.5, 0.5, p) == 0.0
    with pytest.raises(ValueError):
        maf_from_generator(phi, 0.75, 0.25, p)


def test_maf_from_generator_is_additive(grid, jump_model):
    c, F = jump_model
    p = CadlagPath(grid, np.sin(9 * grid.times))
    phi = ProcessFunctional.from_test_function(_cos(1.5), c, F)
    t, r, u = 0.125, 0.5, 0.875
    whole = maf_from_generator(phi, t, u, p)
    parts = maf_from_generator(phi, t, r, p) + maf_from_generator(phi, r, u, p)
    assert whole == pytest.approx(parts, abs=1e-13)


def test_maf_along_ode_vanishes_with_the_step():
    c = presets.constant(1, beta=1.0, sigma=0.0)
    errs = []
    for dt in (2**-4, 2**-6, 2**-8):
        g = TimeGrid.uniform(1.0, dt)
        p = CadlagPath(g, g.times.copy())
        phi = ProcessFunctional.from_test_function(_cos(1.0), c, JumpMeasure.empty(1))
        errs.append(abs(maf_from_generator(phi, 0.0, 1.0, p)))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 2e-3


def test_weak_generator_time_and_zero(jump_model):
    c, F = jump_model
    g = TimeGrid.uniform(1.0, 2**-5)
    eng = EngineConfig(c, F, g)
    init = start_at(g, s=0.25)
    rep = verify_weak_generator(eng, time_functional(), init, 0.75, 200, seed=1)
    assert rep.passed and abs(rep.discrepancy) <= 1e-12 and rep.lhs == pytest.approx(0.75)
    zero = ProcessFunctional(lambda h: np.zeros(h.batch), lambda h: np.zeros(h.batch), name="0")
    rep0 = verify_weak_generator(eng, zero, init, 1.0, 200, seed=1)
    assert rep0.lhs == 0.0 and rep0.rhs == 0.0 and rep0.passed
    with pytest.raises(ValueError):
        verify_weak_generator(eng, zero, init, 0.125, 10)


def test_weak_generator_statistical(jump_model):
    c, F = jump_model
    g = TimeGrid.uniform(1.0, 2**-6)
    phi = ProcessFunctional.from_test_function(_cos(1.0), c, F)
    rep = verify_weak_generator(EngineConfig(c, F, g), phi, start_at(g), 1.0, 20000, seed=4)
    assert rep.passed and rep.n == 20000
