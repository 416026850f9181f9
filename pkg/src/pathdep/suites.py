"""Verification suites assembled from an experiment config.

Each runner returns a JSON-ready dict with a top-level ``pass`` and
``rows`` whose entries carry a ``test_id``. Nothing here depends on the
worker count, so reports are byte-identical across ``--workers``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .config import ExperimentConfig
from .continuity_lab import ConvergenceScenario, default_bank, levy_characteristic, run_convergence_diagnostic, run_tightness_diagnostic
from .events import event_bank
from .generator_mp import ProcessFunctional, trig_family, verify_martingale_problem, verify_weak_generator
from .maf import AdditiveFunctional, PartitionScheme, bracket_values, qv_levels, rn_density_values
from .path_core import CadlagPath, GridMismatchError, InitialCondition, TimeGrid, read_path_csv
from .presets import make_coefficients
from .projectors import PathRandomVariable, default_flow_pairs, verify_flow_property, verify_projector_composition
from .sde_engine import EngineConfig, JumpMeasure
from .stats import Moments, z_score

__all__ = ["Experiment", "build_experiment", "run_suite", "event_banks", "RUNNERS"]


@dataclass
class Experiment:
    cfg: ExperimentConfig
    base: Path
    engine: EngineConfig
    init: InitialCondition
    seed: int

    @property
    def grid(self) -> TimeGrid:
        return self.engine.grid


def _initial_path(cfg: ExperimentConfig, base: Path, grid: TimeGrid) -> CadlagPath:
    dim = cfg.model.dim
    if cfg.run.initial_path is None:
        x0 = cfg.run.x0 if cfg.run.x0 is not None else [0.0] * dim
        return CadlagPath.constant(grid, x0)
    p = read_path_csv(base / cfg.run.initial_path)
    n = len(p.grid)
    if p.dim != dim:
        raise GridMismatchError(f"run.initial_path: path has dimension {p.dim}, expected {dim}")
    if n > len(grid) or not np.allclose(p.grid.times, grid.times[:n], rtol=0, atol=1e-12):
        raise GridMismatchError("run.initial_path: times must be the first nodes of the model grid")
    if n < len(grid):
        # held constant after its last sample
        values = np.concatenate([p.values, np.repeat(p.values[-1:], len(grid) - n, axis=0)])
    else:
        values = p.values
    if grid.index(cfg.run.s) > n - 1:
        raise GridMismatchError("run.initial_path: path ends before run.s")
    return CadlagPath(grid, values)


def build_experiment(cfg: ExperimentConfig, base: Path, seed: int | None = None, workers: int = 1) -> Experiment:
    grid = TimeGrid.uniform(cfg.model.horizon, cfg.model.dt)
    F = JumpMeasure.from_atoms([(a.y, a.mass) for a in cfg.model.jumps], cfg.model.dim)
    coeffs = make_coefficients(cfg.model.preset, cfg.model.dim, cfg.model.params, F, grid)
    engine = EngineConfig(coeffs, F, grid, cfg.run.batch_size, workers)
    init = InitialCondition(cfg.run.s, _initial_path(cfg, base, grid))
    return Experiment(cfg, base, engine, init, cfg.run.seed if seed is None else seed)


def _snap_up(grid: TimeGrid, t: float) -> float:
    k = grid.snap(min(t, grid.horizon))
    if grid.times[k] < t - 1e-12:
        k += 1
    return float(grid.times[k])


def _cos_theta(ex: Experiment):
    return trig_family([ex.cfg.verify.thetas[0]])[0]


# ---------------------------------------------------------------- canonical

def _pinning(ex: Experiment) -> dict:
    n = min(ex.cfg.run.n_paths, 10_000)
    ks = ex.init.start_index
    prefix = ex.init.eta.values[: ks + 1]
    agree = 0
    for b in ex.engine.ensemble(ex.init, n, ex.seed).batches():
        agree += int(np.all(b.values[:, : ks + 1] == prefix, axis=(1, 2)).sum())
    frac = agree / n
    return {"rows": [{"test_id": "pinning", "n": n, "fraction": frac, "pass": frac == 1.0}],
            "pass": frac == 1.0}


def _canonical_t(ex: Experiment) -> float:
    c = ex.cfg.verify.canonical
    if c.t is not None:
        return c.t
    return _snap_up(ex.grid, 0.5 * (ex.init.s + ex.grid.horizon))


def canonical(ex: Experiment) -> dict:
    c = ex.cfg.verify.canonical
    t = _canonical_t(ex)
    z_crit = ex.cfg.verify.z_crit
    f = _cos_theta(ex)
    T = ex.grid.horizon
    z = PathRandomVariable(lambda v, g: f.f(v[:, g.snap(T)]), 1.0, T, f"{f.name} at T")
    comp = verify_projector_composition(ex.engine, ex.init, z, ex.init.s, t, c.n_outer, c.n_inner,
                                        seed=rng.derive_seed(ex.seed, 1), z_crit=z_crit)
    pairs = default_flow_pairs(ex.engine, ex.init, t, c.pairs, c.scale, ex.seed)
    flow = verify_flow_property(ex.engine, ex.init, pairs, t, c.n_outer, c.n_inner,
                                seed=rng.derive_seed(ex.seed, 2), z_crit=z_crit)
    pin = _pinning(ex)
    rows = pin["rows"] + [comp.to_dict()] + flow.rows
    return {"suite": "canonical", "t": t, "pass": all(r["pass"] for r in rows), "rows": rows}


# ----------------------------------------------------------------------- mp

def _mp_times(ex: Experiment) -> list:
    return [t for t in ex.cfg.verify.times if t >= ex.init.s - 1e-12]


def mp(ex: Experiment, sabotage: bool = False) -> dict:
    v = ex.cfg.verify
    ens = ex.engine.ensemble(ex.init, ex.cfg.run.n_paths, ex.seed)
    rep = verify_martingale_problem(
        ens, ex.engine.coeffs, ex.engine.F, trig_family(v.thetas), _mp_times(ex),
        z_crit=v.z_crit, bonferroni=v.bonferroni, sabotage=sabotage or v.sabotage,
        bank_size=v.bank_size, bank_scale=v.bank_scale, bank_seed=ex.seed, replicates=v.replicates,
    )
    out = rep.to_dict()
    out["sabotage"] = bool(sabotage or v.sabotage)
    out["max_abs_z"] = rep.max_abs_z
    out["failing"] = [r["test_id"] for r in rep.failing()]
    return out


def event_banks(ex: Experiment) -> dict:
    """Every event used by the mp and canonical suites, for audit."""
    v = ex.cfg.verify
    center = ex.init.eta.values[ex.init.start_index]
    times = sorted(set(_mp_times(ex)))
    mp_banks = {repr(float(t)): [e.to_dict() for e in event_bank(t, v.bank_size, ex.grid, center,
                                                                 v.bank_scale, ex.seed, s=ex.init.s)]
                for t in times}
    c = v.canonical
    pairs = default_flow_pairs(ex.engine, ex.init, _canonical_t(ex), c.pairs, c.scale, ex.seed)
    flow = [{"G": G.to_dict(), "F": F.name} for G, F in pairs]
    return {"mp": mp_banks, "canonical_flow": flow}


# ---------------------------------------------------------------- generator

def generator(ex: Experiment) -> dict:
    v = ex.cfg.verify
    theta = v.generator.theta if v.generator.theta is not None else v.thetas[0]
    f = trig_family([theta])[0]
    phi = ProcessFunctional.from_test_function(f, ex.engine.coeffs, ex.engine.F)
    rows = []
    for t in v.generator.times:
        if t < ex.init.s - 1e-12:
            continue
        rep = verify_weak_generator(ex.engine, phi, ex.init, t, ex.cfg.run.n_paths,
                                    v.generator.tolerance, seed=ex.seed, z_crit=v.z_crit)
        rows.append(rep.to_dict())
    return {"suite": "generator", "function": f.name, "pass": all(r["pass"] for r in rows), "rows": rows}


# ---------------------------------------------------------------------- maf

def maf(ex: Experiment) -> dict:
    v = ex.cfg.verify
    m = v.maf
    grid = ex.grid
    t = max(m.t, ex.init.s)
    u = m.u if m.u is not None else grid.horizon
    scheme = PartitionScheme.dyadic(grid, t, u, m.max_level)
    f = _cos_theta(ex)
    coeffs, F = ex.engine.coeffs, ex.engine.F
    M = AdditiveFunctional.from_maf(ProcessFunctional.from_test_function(f, coeffs, F), ex.init.s)
    n = m.n_paths or ex.cfg.run.n_paths
    kt, ku = grid.index(t), grid.index(u)
    levels = [Moments() for _ in scheme.levels]
    qv_gap, sq_gap, bracket = Moments(), Moments(), Moments()
    for b in ex.engine.ensemble(ex.init, n, ex.seed).batches():
        proc = M.process(b.values, grid)
        lv = [(np.diff(proc[:, nodes], axis=1) ** 2).sum(axis=1) for nodes in scheme.levels]
        for i in range(len(scheme.levels)):
            levels[i].add(lv[i])
        br = bracket_values(coeffs, F, f, t, u, b.values, grid)[:, -1]
        inc = proc[:, ku] - proc[:, kt]
        bracket.add(br)
        qv_gap.add(lv[-1] - br)
        sq_gap.add(inc * inc - br)
    z_crit = v.z_crit
    rows = []
    for name, mom in (("qv_finest_vs_bracket", qv_gap), ("martingale_square_vs_bracket", sq_gap)):
        d, se = float(mom.mean), float(mom.se)
        rows.append({"test_id": f"maf/{name}", "estimate": d, "stderr": se,
                     "z": float(z_score(d, se)), "pass": bool(abs(d) <= z_crit * se)})
    meshes = scheme.meshes(grid)
    qv_rows = [{"level": i, "mesh": float(meshes[i]), "value": float(levels[i].mean),
                "stderr": float(levels[i].se)} for i in range(len(levels))]

    # deterministic bounded-variation input: level sums must halve with the mesh
    bv = AdditiveFunctional.deterministic(lambda r: r, "u - t")
    one = ex.init.eta.values[None]
    bv_levels = qv_levels(bv, scheme, one, grid)[:, 0]
    ratios = bv_levels[1:] / bv_levels[:-1]
    ok = bool(np.all((ratios >= 0.4) & (ratios <= 0.6))) if ratios.size else True
    rows.append({"test_id": "maf/bv_decay", "ratios": ratios.tolist(), "pass": ok})

    # density of A = int r dr against V = id, over the window schedule
    T = grid.horizon
    A = AdditiveFunctional.deterministic(lambda r: 0.5 * r * r, "int r dr")
    ident = AdditiveFunctional.deterministic(lambda r: r, "u - t")
    for w in m.delta_schedule:
        if w < 1 or w > len(grid) - 1:
            continue
        delta = w * grid.mesh
        h = rn_density_values(A, lambda r: r, one, grid, w)[0]
        err = float(np.max(np.abs(h - grid.times)))
        rows.append({"test_id": f"maf/density_linear/window={w}", "delta": delta, "max_error": err,
                     "pass": bool(err <= delta * (1 + 1e-9))})
        h1 = rn_density_values(ident, lambda r: r, one, grid, w)[0]
        rows.append({"test_id": f"maf/density_constant/window={w}", "delta": delta,
                     "max_error": float(np.max(np.abs(h1 - 1.0))), "pass": bool(np.all(h1 == 1.0))})
    return {
        "suite": "maf", "function": f.name, "t": t, "u": u, "n": n, "horizon": T,
        "bracket_mean": float(bracket.mean), "bracket_stderr": float(bracket.se),
        "qv_levels": qv_rows, "pass": all(r["pass"] for r in rows), "rows": rows,
    }


# ------------------------------------------------- tightness and continuity

def _scenario(ex: Experiment, levels: int, kind: str, bank) -> ConvergenceScenario:
    c = ex.cfg.verify.continuity
    grid = ex.grid
    if c.scenario_file is not None:
        return load_scenario(ex.base / c.scenario_file, grid, bank)
    s, eta = ex.init.s, ex.init.eta
    apps = []
    for n in range(1, levels + 1):
        if kind == "value":
            apps.append(InitialCondition(s, CadlagPath(grid, eta.values + 2.0 ** -n)))
        else:
            apps.append(InitialCondition(_snap_up(grid, s + 2.0 ** -n), eta))
    return ConvergenceScenario(ex.init, apps, bank, list(range(1, levels + 1)))


def load_scenario(path: Path, grid: TimeGrid, bank) -> ConvergenceScenario:
    """JSON ``{"target": {"s", "path"}, "approximants": [{"s", "path"}, ...]}``; paths relative to the file."""
    data = json.loads(Path(path).read_text())
    base = Path(path).parent

    def init(entry):
        p = read_path_csv(base / entry["path"])
        if p.grid != grid:
            raise GridMismatchError(f"{entry['path']}: path is not on the model grid")
        return InitialCondition(float(entry["s"]), p)

    apps = [init(e) for e in data["approximants"]]
    return ConvergenceScenario(init(data["target"]), apps, bank, data.get("labels"))


def tightness(ex: Experiment) -> dict:
    v = ex.cfg.verify.tightness
    sc = _scenario(ex, v.levels, ex.cfg.verify.continuity.kind, default_bank(ex.grid.horizon))
    verdict = run_tightness_diagnostic(sc, ex.engine, v.n_paths or ex.cfg.run.n_paths, v.N, v.epsilon,
                                       v.alphas, seed=ex.seed, K_cap=v.K_cap)
    out = verdict.to_dict()
    out["suite"] = "tightness"
    out["N"], out["epsilon"], out["alphas"] = v.N, v.epsilon, list(v.alphas)
    return out


def _trig_bank(ex: Experiment):
    T = ex.grid.horizon
    bank, trig_params = [], {}
    for th in ex.cfg.verify.thetas:
        for f in trig_family([th]):
            g = PathRandomVariable(lambda vv, gg, f=f: f.f(vv[:, gg.snap(T)]), 1.0, T, f"{f.name} at T")
            bank.append(g)
            trig_params[g.name] = (np.asarray(f.theta), f.kind)
    clamp = default_bank(T)[-1]
    bank.append(clamp)
    return bank, trig_params


def _constant_expectation(ex: Experiment, trig_params):
    coeffs = ex.engine.coeffs
    if ex.cfg.model.preset != "constant":
        return None
    p = coeffs.params
    F = ex.engine.F
    jumps = p["jump_scale"] * F.points
    T = ex.grid.horizon

    def value(init: InitialCondition, name: str):
        theta, kind = trig_params[name]
        x0 = init.eta.values[init.start_index]
        phi = levy_characteristic(x0, theta, p["beta"], p["sigma"], jumps, F.masses, T - init.s)
        return phi.real if kind == "cos" else phi.imag

    def expected(init_n, target, g):
        if g.name not in trig_params:
            return None
        return value(init_n, g.name) - value(target, g.name)

    return expected


def continuity(ex: Experiment) -> dict:
    c = ex.cfg.verify.continuity
    bank, trig_params = _trig_bank(ex)
    sc = _scenario(ex, c.levels, c.kind, bank)
    rep = run_convergence_diagnostic(sc, ex.engine, c.n_paths or ex.cfg.run.n_paths, ex.seed,
                                     expected=_constant_expectation(ex, trig_params),
                                     z_crit=ex.cfg.verify.z_crit, tolerance=c.tolerance)
    return rep.to_dict()


RUNNERS = {
    "canonical": canonical,
    "mp": mp,
    "generator": generator,
    "maf": maf,
    "tightness": tightness,
    "continuity": continuity,
}


def run_suite(name: str, ex: Experiment, sabotage: bool = False) -> dict:
    if name not in RUNNERS:
        raise KeyError(name)
    report = mp(ex, sabotage) if name == "mp" else RUNNERS[name](ex)
    report["suite"] = name
    report["seed"] = ex.seed
    return report
