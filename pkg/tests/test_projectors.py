import numpy as np
import pytest

from pathdep import presets
from pathdep.events import CylinderEvent, PathEvent, AnticipationError
from pathdep.path_core import CadlagPath, InitialCondition, TimeGrid
from pathdep.projectors import (
    BoundViolationError, PathRandomVariable, default_flow_pairs, estimate_projector,
    threshold_event, verify_flow_property, verify_projector_composition,
)
from pathdep.sde_engine import EngineConfig, JumpMeasure

from conftest import start_at


def _cos_T(T, th=1.0):
    return PathRandomVariable(lambda v, g: np.cos(th * v[:, g.snap(T), 0]), 1.0, T, f"cos({th} X_T)")


@pytest.fixture
def coarse():
    return TimeGrid.uniform(1.0, 2**-5)


def test_constant_is_reproduced_exactly(coarse, jump_model):
    c, F = jump_model
    est = estimate_projector(EngineConfig(c, F, coarse), start_at(coarse), PathRandomVariable.constant(0.7), 100, 1)
    assert est.value == 0.7 and est.stderr == 0.0 and est.n == 100
    with pytest.raises(ValueError):
        estimate_projector(EngineConfig(c, F, coarse), start_at(coarse), PathRandomVariable.constant(1), 1, 1)


def test_pinned_functional_is_deterministic(coarse, jump_model):
    c, F = jump_model
    eta = CadlagPath(coarse, np.sin(4 * coarse.times))
    init = InitialCondition(0.5, eta)
    z = PathRandomVariable(lambda v, g: np.cos(v[:, g.snap(0.25), 0]), 1.0, 0.25)
    est = estimate_projector(EngineConfig(c, F, coarse), init, z, 50, 2)
    assert est.value == pytest.approx(np.cos(eta(0.25)[0]), abs=0) and est.stderr == 0.0


def test_cosine_matches_closed_form(coarse):
    beta, sigma = 0.3, 0.5
    c = presets.constant(1, beta=beta, sigma=sigma)
    est = estimate_projector(EngineConfig(c, JumpMeasure.empty(1), coarse), start_at(coarse, 0.2),
                             _cos_T(1.0), 20000, 3)
    exact = np.cos(0.2 + beta) * np.exp(-0.5 * sigma**2)
    assert abs(est.value - exact) <= 3 * est.stderr


def test_linearity_and_positivity(coarse, jump_model):
    c, F = jump_model
    eng = EngineConfig(c, F, coarse)
    init = start_at(coarse)
    z1, z2 = _cos_T(1.0), _cos_T(0.5, 2.0)
    a, b = 0.4, -1.3
    comb = estimate_projector(eng, init, a * z1 + b * z2, 1000, 4).value
    sep = a * estimate_projector(eng, init, z1, 1000, 4).value + b * estimate_projector(eng, init, z2, 1000, 4).value
    assert comb == pytest.approx(sep, abs=1e-12)
    sq = PathRandomVariable(lambda v, g: v[:, -1, 0] ** 2 / (1 + v[:, -1, 0] ** 2), 1.0)
    assert estimate_projector(eng, init, sq, 500, 5).value >= 0.0


def test_bound_violation_is_reported(coarse, jump_model):
    c, F = jump_model
    z = PathRandomVariable(lambda v, g: np.full(v.shape[0], 2.0), 1.0)
    with pytest.raises(BoundViolationError):
        estimate_projector(EngineConfig(c, F, coarse), start_at(coarse), z, 10, 1)


def test_composition_with_deterministic_dynamics(coarse):
    c = presets.constant(1, beta=1.0, sigma=0.0)
    eng = EngineConfig(c, JumpMeasure.empty(1), coarse)
    rep = verify_projector_composition(eng, start_at(coarse), _cos_T(1.0), 0.0, 0.5, 10, 10, seed=1)
    assert rep.passed and rep.stderr == 0.0
    assert rep.nested == pytest.approx(np.cos(1.0), abs=1e-12)
    assert rep.discrepancy == pytest.approx(0.0, abs=1e-12)


def test_composition_at_equal_times_is_trivial(coarse, jump_model):
    c, F = jump_model
    rep = verify_projector_composition(EngineConfig(c, F, coarse), start_at(coarse), _cos_T(1.0),
                                       0.0, 0.0, 10, 10, seed=1)
    assert rep.passed and rep.discrepancy == 0.0


def test_composition_statistical(coarse, jump_model):
    c, F = jump_model
    rep = verify_projector_composition(EngineConfig(c, F, coarse), start_at(coarse), _cos_T(1.0),
                                       0.0, 0.5, 300, 300, seed=2)
    assert rep.passed
    with pytest.raises(ValueError):
        verify_projector_composition(EngineConfig(c, F, coarse), start_at(coarse), _cos_T(1.0),
                                     0.0, 0.5, 1, 10)


def test_flow_property_passes_and_rejects_bad_input(coarse):
    F = JumpMeasure.from_atoms([(0.5, 1.0)])
    c = presets.running_max(1, kappa=0.5, sigma=0.3, drift_bound=1.0, F=F)
    eng = EngineConfig(c, F, coarse)
    init = start_at(coarse)
    pairs = default_flow_pairs(eng, init, 0.5, n_pairs=4, scale=0.5)
    assert len(pairs) == 4
    rep = verify_flow_property(eng, init, pairs, 0.5, 300, 200, seed=3)
    assert rep.passed and len(rep.rows) == 4
    with pytest.raises(ValueError):
        verify_flow_property(eng, init, [], 0.5, 10, 10)
    late = CylinderEvent((0.75,), ((0.0,),), (1.0,))
    with pytest.raises(AnticipationError):
        verify_flow_property(eng, init, [(late, threshold_event(1.0, 0.0))], 0.5, 10, 10)


def test_flow_with_deterministic_dynamics_is_exact(coarse):
    c = presets.constant(1, beta=1.0, sigma=0.0)
    eng = EngineConfig(c, JumpMeasure.empty(1), coarse)
    G = PathEvent(lambda v, g: np.ones(v.shape[0], dtype=bool), 0.5, "all")
    rep = verify_flow_property(eng, start_at(coarse), [(G, threshold_event(1.0, 0.5))], 0.5, 20, 20)
    row = rep.rows[0]
    assert row["lhs"] == 1.0 and row["rhs"] == 1.0 and row["stderr"] == 0.0 and rep.passed
