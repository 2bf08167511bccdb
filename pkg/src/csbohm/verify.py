"""Invariant suites: exact identities and scenario contracts, each reduced to pass/fail checks.

Every check takes a parameter dict (defaults in ``DEFAULTS``, overridable with
dotted ``--set`` keys such as ``continuity.dt=0.4``) and returns ``CheckResult``.
"""

from __future__ import annotations

import copy
import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError
from .fields import (
    BoundaryLeakWarning,
    Grid1D,
    TwoParticleField,
    WavefunctionField,
    amplitude,
    gaussian_packet,
    harmonic_eigenstate,
    superposition,
)
from .guidance import (
    bohm_velocity,
    continuity_residual,
    many_body_density,
    many_body_velocity,
    reduce_final,
    symmetric_fields,
)
from .propagators import Potential, evolve_window
from .scenarios import SCENARIOS, ScenarioConfig, _clean, apply_overrides, default_config, run_scenario
from .statistics import (
    FinalBasis,
    outcome_summed_density,
    two_particle_product_density,
    correlation_coefficient,
    marginal_position,
)
from .trajectories import FieldInterpolator, integrate_time_param


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: object = None
    threshold: object = None
    detail: str = ""
    seconds: float = 0.0

    def to_dict(self, timing: bool = False) -> dict:
        d = {"name": self.name, "passed": bool(self.passed), "value": self.value,
             "threshold": self.threshold, "detail": self.detail}
        if timing:
            d["seconds"] = self.seconds
        return _clean(d)


DEFAULTS: dict = {
    "amplitude": {"n_points": 512, "length": 40.0, "dt": 0.002, "steps": 2000, "omega": 0.5, "tol": 1e-8},
    "continuity": {"n_points": 256, "length": 40.0, "dt": 0.02, "steps": 40, "pairs": 3, "seed": 3,
                   "min_ratio": 3.5},
    "standard_reduction": {"n_points": 512, "length": 40.0, "dt": 0.005, "steps": 400, "stride": 2,
                           "density_tol": 1e-12, "velocity_tol": 1e-10, "trajectory_tol": 1e-8},
    "marginal": {"n_points": 256, "length": 30.0, "n_states": 32, "position_tol": 1e-10, "truncated_tol": 1e-8},
    "two_particle": {"n_points": 128, "length": 24.0, "dt": 0.01, "steps": 50, "X": [-1.0, 1.5], "width_f": 0.4,
                 "concentration": 0.99, "l1_tol": 1e-8, "corr_tol": 1e-6},
    "many_body": {"n_points": 64, "length": 16.0, "tol": 1e-10},
    "scenarios": {},
}


def _p(params: dict, key: str) -> dict:
    return params.get(key, {})


# --- identities ------------------------------------------------------------------------

def check_amplitude_conserved(params: dict, **_) -> CheckResult:
    """Relative drift of <psi_f|psi_i> over free and harmonic runs with unrelated states."""
    P = _p(params, "amplitude")
    g = Grid1D.centered(int(P["n_points"]), float(P["length"]))
    dt, n = float(P["dt"]), int(P["steps"])
    T = n * dt
    worst = 0.0
    for V in (Potential("free"), Potential("harmonic", {"omega": float(P["omega"])})):
        psi_i = gaussian_packet(g, -2.0, 1.0, 1.0, 0.0)
        psi_f = gaussian_packet(g, 1.0, -0.5, 0.8, T)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BoundaryLeakWarning)
            ri = evolve_window(psi_i, V, 0.0, T, dt, n // 10)
            rf = evolve_window(psi_f, V, T, 0.0, dt, n // 10).chronological()
        a = np.array([np.vdot(f.values, i.values) * g.spacing for i, f in zip(ri, rf)])
        worst = max(worst, float(np.max(np.abs(a - a[0])) / abs(a[0])))
    tol = float(P["tol"])
    return CheckResult("amplitude_conserved", worst < tol, worst, tol, f"{n}-step free and harmonic runs")


def continuity_ratio(P: dict, rng: np.random.Generator) -> tuple[float, float]:
    """Residual RMS at dt and dt/2 (snapshots every step) for one random state pair."""
    g = Grid1D.centered(int(P["n_points"]), float(P["length"]))
    dt, n = float(P["dt"]), int(P["steps"])
    T = n * dt
    V = Potential("harmonic", {"omega": 0.3})
    ci, cf = rng.uniform(-4, 4, 2)
    pi_, pf = rng.uniform(-1.5, 1.5, 2)
    wi, wf = rng.uniform(0.8, 2.0, 2)
    out = []
    for h in (dt, dt / 2):
        psi_i = gaussian_packet(g, ci, pi_, wi, 0.0)
        psi_f = gaussian_packet(g, cf, pf, wf, T)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BoundaryLeakWarning)
            ri = evolve_window(psi_i, V, 0.0, T, h, 1)
            rf = evolve_window(psi_f, V, T, 0.0, h, 1).chronological()
        out.append(continuity_residual(ri, rf).overall)
    return out[0], out[1]


def check_continuity_order(params: dict, **_) -> CheckResult:
    """Second-order decrease of the symmetric continuity residual under dt halving."""
    P = _p(params, "continuity")
    rng = np.random.default_rng(int(P["seed"]))
    ratios = []
    for _ in range(int(P["pairs"])):
        coarse, fine = continuity_ratio(P, rng)
        ratios.append(coarse / fine)
    need = float(P["min_ratio"])
    return CheckResult("continuity_second_order", min(ratios) >= need, ratios, need,
                       f"residual ratio per random pair at dt = {P['dt']}")


def check_standard_reduction(params: dict, **_) -> CheckResult:
    """psi_f equal to psi_i: density, velocity and trajectories of the standard model."""
    P = _p(params, "standard_reduction")
    g = Grid1D.centered(int(P["n_points"]), float(P["length"]))
    dt, n, stride = float(P["dt"]), int(P["steps"]), int(P["stride"])
    psi = superposition([gaussian_packet(g, -2.0, 1.0, 1.0), gaussian_packet(g, 2.5, -0.5, 1.2)],
                        [1.0, 0.6j]).normalize()
    rec = evolve_window(psi, Potential("harmonic", {"omega": 0.2}), 0.0, n * dt, dt, stride)
    d_rho = d_v = 0.0
    for snap in rec:
        s = symmetric_fields(snap, snap)
        b = bohm_velocity(snap)
        d_rho = max(d_rho, float(np.max(np.abs(s.density - np.abs(snap.values) ** 2))))
        both = s.defined & b.defined
        d_v = max(d_v, float(np.max(np.abs(s.velocity[both] - b.velocity[both]))))
    sym = FieldInterpolator.from_records(rec, rec)
    std = FieldInterpolator.from_records(rec)
    seeds = np.linspace(-3.0, 3.5, 7)
    d_x = 0.0
    for x0 in seeds:
        a = integrate_time_param(sym, float(x0), (0.0, n * dt))
        b = integrate_time_param(std, float(x0), (0.0, n * dt))
        d_x = max(d_x, abs(float(a.x[-1] - b.x[-1])))
    ok = d_rho < P["density_tol"] and d_v < P["velocity_tol"] and d_x < P["trajectory_tol"]
    return CheckResult("standard_reduction", ok, {"density": d_rho, "velocity": d_v, "trajectory": d_x},
                       {"density": P["density_tol"], "velocity": P["velocity_tol"],
                        "trajectory": P["trajectory_tol"]})


def check_marginal_recovery(params: dict, **_) -> CheckResult:
    """Outcome-summed joint density reproduces |psi_i|^2 (position and truncated bases)."""
    P = _p(params, "marginal")
    g = Grid1D.centered(int(P["n_points"]), float(P["length"]))
    psi = gaussian_packet(g, 0.7, 0.4, 1.1)
    pos = marginal_position(psi, FinalBasis.position(g))
    l1_pos = float(np.sum(np.abs(pos.density - np.abs(psi.values) ** 2)) * g.spacing)
    basis = FinalBasis.harmonic(g, int(P["n_states"]))
    in_span = superposition([harmonic_eigenstate(g, k) for k in (0, 3, 7)], [1.0, 0.5j, -0.3]).normalize()
    trunc = marginal_position(in_span, basis)
    l1_tr = float(np.sum(np.abs(trunc.density - np.abs(in_span.values) ** 2)) * g.spacing)
    ok = l1_pos < P["position_tol"] and l1_tr < P["truncated_tol"]
    return CheckResult("marginal_recovery", ok, {"position_l1": l1_pos, "truncated_l1": l1_tr},
                       {"position_l1": P["position_tol"], "truncated_l1": P["truncated_tol"]})


def _entangled(g: Grid1D, time: float = 0.0) -> TwoParticleField:
    x1, x2 = np.meshgrid(g.x, g.x, indexing="ij")
    vals = np.exp(-((x1 + x2) ** 2) / 8 - ((x2 - x1) ** 2) / 18 + 0.6j * (x2 - x1) + 0.2j * x1)
    return TwoParticleField(g, g, vals, time).normalize()


def check_two_particle_chain(params: dict, **_) -> CheckResult:
    """Two-particle product density at T and outcome-summed recovery of |Psi_i|^2."""
    P = _p(params, "two_particle")
    g = Grid1D.centered(int(P["n_points"]), float(P["length"]))
    dt, n = float(P["dt"]), int(P["steps"])
    T = n * dt
    PsiT = evolve_window(_entangled(g), None, 0.0, T, dt, n)[-1]
    X1, X2 = map(float, P["X"])
    w = float(P["width_f"])
    f1, f2 = gaussian_packet(g, X1, 0.0, w, T), gaussian_packet(g, X2, 0.0, w, T)
    Psi_f = TwoParticleField(g, g, np.outer(f1.values, f2.values), T)
    rho = two_particle_product_density(PsiT, Psi_f)
    near = (np.abs(g.x[:, None] - X1) < 5 * w) & (np.abs(g.x[None, :] - X2) < 5 * w)
    conc = float(np.abs(rho)[near].sum() / np.abs(rho).sum())
    rec = outcome_summed_density(PsiT)
    direct = np.abs(PsiT.values) ** 2
    l1 = float(np.sum(np.abs(rec - direct)) * g.spacing**2)
    dcorr = abs(correlation_coefficient(rec, g, g) - correlation_coefficient(direct, g, g))
    ok = conc >= P["concentration"] and l1 < P["l1_tol"] and dcorr < P["corr_tol"]
    return CheckResult("two_particle_chain", ok, {"concentration": conc, "l1": l1, "correlation_diff": dcorr},
                       {"concentration": P["concentration"], "l1": P["l1_tol"], "correlation_diff": P["corr_tol"]})


def check_many_body_identity(params: dict, **_) -> CheckResult:
    """Factorised final state: joint-integral fields equal reduce-then-guide fields."""
    P = _p(params, "many_body")
    g = Grid1D.centered(int(P["n_points"]), float(P["length"]))
    Psi = _entangled(g)
    f1 = gaussian_packet(g, 0.5, -0.3, 1.3)
    f2 = gaussian_packet(g, -0.4, 0.8, 1.6)
    Psi_f = TwoParticleField(g, g, np.outer(f1.values, f2.values), 0.0)
    joint = many_body_velocity(Psi, Psi_f, which=2)
    red = reduce_final(Psi, f1, measured=1)
    single = symmetric_fields(red, f2)
    both = joint.defined & single.defined
    dv = float(np.max(np.abs(joint.velocity[both] - single.velocity[both])))
    drho = float(np.max(np.abs(many_body_density(Psi, Psi_f, which=2) - single.density)))
    tol = float(P["tol"])
    return CheckResult("many_body_identity", dv < tol and drho < tol, {"velocity": dv, "density": drho}, tol)


IDENTITY_CHECKS: dict[str, Callable[..., CheckResult]] = {
    "amplitude_conserved": check_amplitude_conserved,
    "continuity_second_order": check_continuity_order,
    "standard_reduction": check_standard_reduction,
    "marginal_recovery": check_marginal_recovery,
    "two_particle_chain": check_two_particle_chain,
    "many_body_identity": check_many_body_identity,
}


# --- scenarios -------------------------------------------------------------------------

def _scenario_check(name: str) -> Callable[..., CheckResult]:
    def run(params: dict, out: Optional[Path] = None, seed: Optional[int] = None, threads: int = 1,
            **_) -> CheckResult:
        doc = default_config(name)
        extra = _p(params, "scenarios").get(name, {})
        doc = apply_overrides(doc, [f"{k}={json.dumps(v)}" for k, v in _flatten(extra)])
        if seed is not None:
            doc["seed"] = int(seed)
        rep = run_scenario(ScenarioConfig.from_dict(doc), None if out is None else Path(out) / name, threads)
        failed = sorted(k for k, v in rep.assertions.items() if not v["passed"])
        return CheckResult(f"scenario:{name}", rep.passed, {"failed": failed, "config_hash": rep.config_hash},
                           None, "all contract assertions pass")
    run.__name__ = f"scenario_{name.replace('-', '_')}"
    return run


def _flatten(d: dict, prefix: str = ""):
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flatten(v, key + ".")
        else:
            yield key, v


SCENARIO_CHECKS = {f"scenario:{n}": _scenario_check(n) for n in SCENARIOS}

SUITES: dict[str, tuple] = {
    "identities": tuple(IDENTITY_CHECKS),
    "scenarios": tuple(SCENARIO_CHECKS),
    "full": tuple(IDENTITY_CHECKS) + tuple(SCENARIO_CHECKS),
}
ALL_CHECKS = {**IDENTITY_CHECKS, **SCENARIO_CHECKS}


@dataclass
class SuiteResult:
    suite: str
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"suite": self.suite, "passed": self.passed, "checks": [c.to_dict() for c in self.checks]}

    def write(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "verify.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def suite_params(overrides=None) -> dict:
    return apply_overrides(copy.deepcopy(DEFAULTS), overrides)


def run_suite(suite: str, overrides=None, out=None, seed: Optional[int] = None, threads: int = 1,
              progress: Optional[Callable[[CheckResult], None]] = None) -> SuiteResult:
    """Run every check of ``suite``; a check that raises is recorded as failed."""
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; known: {', '.join(SUITES)}")
    params = suite_params(overrides)
    result = SuiteResult(suite)
    for name in SUITES[suite]:
        t0 = time.perf_counter()
        try:
            res = ALL_CHECKS[name](params, out=out, seed=seed, threads=threads)
        except ConfigError:
            raise
        except Exception as exc:  # a crashing check is a failed check, with the reason kept
            res = CheckResult(name, False, None, None, f"{type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - t0
        result.checks.append(res)
        if progress is not None:
            progress(res)
    return result
