import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import cumulative_trapezoid

from csbohm.errors import StagnationPoint, StructuralError, TurningPointEncountered
from csbohm.fields import Grid1D, gaussian_packet, harmonic_eigenstate, hermite_functions, superposition
from csbohm.propagators import Potential, evolve_pair, evolve_window, rest_spinor
from csbohm.trajectories import (
    FieldInterpolator,
    StrideWarning,
    WorldLine,
    dirac_trajectory,
    ensemble,
    integrate_lambda_param,
    integrate_time_param,
    proper_time,
    trace_world_line,
    turning_points_from_sign,
)

pytestmark = pytest.mark.filterwarnings("ignore::csbohm.fields.BoundaryLeakWarning")
FREE = Potential()
HARM = Potential("harmonic", {"omega": 1.0})


def standard_interp(psi, V, t1, t2, dt, stride=1):
    return FieldInterpolator.from_records(evolve_window(psi, V, t1, t2, dt, stride))


def symmetric_interp(psi_i, psi_f, V, t1, t2, dt, stride=1):
    return FieldInterpolator.from_records(*evolve_pair(psi_i, psi_f, V, t1, t2, dt, stride))


@pytest.fixture(scope="module")
def harmonic_pair():
    """(phi0 + phi1)/sqrt2 forward, phi0 backward: rho = phi0^2 + phi0 phi1 cos t."""
    g = Grid1D.centered(256, 24.0)
    p0, p1 = harmonic_eigenstate(g, 0), harmonic_eigenstate(g, 1)
    psi_i = superposition([p0, p1], [1 / math.sqrt(2)] * 2)
    T = 3.0
    return symmetric_interp(psi_i, harmonic_eigenstate(g, 0, time=T), HARM, 0.0, T, 0.005, 2)


def level(t, x, x_fine=np.linspace(-12, 12, 24001)):
    """Oracle: F(x, t) from the closed-form density, integrated on a fine grid."""
    h = hermite_functions(x_fine, 1)
    rho = h[0] ** 2 + h[0] * h[1] * math.cos(t)
    F = cumulative_trapezoid(rho, x_fine, initial=0.0)
    return float(np.interp(x, x_fine, F))


# --- standard-model lines ---------------------------------------------------------------

def test_broad_packet_lines_move_at_packet_momentum():
    g = Grid1D.centered(1024, 200.0)
    interp = standard_interp(gaussian_packet(g, 0.0, 1.0, 8.0), FREE, 0.0, 2.0, 0.01, 5)
    for x0 in (-0.5, 0.0, 0.5):
        line = integrate_time_param(interp, x0, (0.0, 2.0))
        assert np.max(np.abs(line.x - (x0 + line.t))) < 1e-4


def test_free_gaussian_lines_match_analytic_trajectories():
    # Oracle: x(t) = c + p t + (x0 - c) sqrt(1 + t^2 / (4 sigma^4)).  Fields are
    # linear in time between snapshots, so the error is second order in their spacing.
    g = Grid1D.centered(512, 60.0)
    c, p, s = -1.0, 0.8, 1.0

    def worst(dt, stride):
        interp = standard_interp(gaussian_packet(g, c, p, s), FREE, 0.0, 2.0, dt, stride)
        err = 0.0
        for x0 in (-3.0, -1.0, 0.5):
            line = integrate_time_param(interp, x0, (0.0, 2.0))
            exact = c + p * line.t + (x0 - c) * np.sqrt(1 + line.t**2 / (4 * s**4))
            err = max(err, np.max(np.abs(line.x - exact)))
        return err

    assert worst(0.01, 2) / worst(0.01, 1) >= 3.5
    assert worst(0.002, 1) < 1e-6


def test_standard_lines_do_not_cross():
    g = Grid1D.centered(256, 30.0)
    psi = superposition([gaussian_packet(g, -2, 1.5, 0.8), gaussian_packet(g, 2, -1.5, 0.8)], [1, 1]).normalize()
    interp = standard_interp(psi, FREE, 0.0, 2.0, 0.005, 2)
    seeds = np.linspace(-3.5, 3.5, 15)
    res = ensemble(interp, seeds, "time")
    assert not res.errors
    ts = np.linspace(0.0, 2.0, 401)
    xs = np.array([np.interp(ts, line.t, line.x) for line in res.lines])
    assert np.all(np.diff(xs, axis=0) > 0)


def test_identical_pair_follows_standard_lines():
    g = Grid1D.centered(256, 40.0)
    psi = gaussian_packet(g, -1.0, 0.8, 1.0)
    T = 1.0
    psi_T = evolve_window(psi, FREE, 0.0, T, 0.01)[-1]
    std = standard_interp(psi, FREE, 0.0, T, 0.01, 2)
    sym = symmetric_interp(psi, psi_T, FREE, 0.0, T, 0.01, 2)
    for x0 in (-2.0, -1.0, 0.5):
        a, b = integrate_time_param(std, x0, (0, T)), integrate_time_param(sym, x0, (0, T))
        assert abs(a.x[-1] - b.x[-1]) < 1e-8


def test_coarse_stride_warns():
    g = Grid1D.centered(128, 40.0)
    rec = evolve_window(gaussian_packet(g, 0, 3.0, 1.0), FREE, 0.0, 1.0, 0.01, 50)
    with pytest.warns(StrideWarning):
        FieldInterpolator.from_records(rec)


# --- lambda parametrisation ---------------------------------------------------------------

def test_lambda_curve_matches_time_parametrisation_for_positive_density():
    g = Grid1D.centered(256, 40.0)
    psi = gaussian_packet(g, -1.0, 0.8, 1.0)
    psi_T = evolve_window(psi, FREE, 0.0, 1.0, 0.01)[-1]
    interp = symmetric_interp(psi, psi_T, FREE, 0.0, 1.0, 0.01, 2)
    for x0 in (-2.0, -0.5):
        ll = integrate_lambda_param(interp, (0.0, x0), (0, 1e6), on_exit="stop")
        assert ll.end_reason == "left_time_window" and not ll.turning_points
        assert np.all(np.diff(ll.t) > 0)
        # Distance between the curves: integrate in time exactly to the lambda nodes.
        for n in range(1, len(ll), max(1, len(ll) // 8)):
            tl = integrate_time_param(interp, x0, (0.0, ll.t[n]))
            assert abs(tl.x[-1] - ll.x[n]) < 1e-6


def test_harmonic_pair_world_line_turns_back(harmonic_pair):
    line = trace_world_line(harmonic_pair, (0.5, -1.2), lambda_max=200.0)
    assert len(line.turning_points) >= 1
    assert len(turning_points_from_sign(line)) == len(line.turning_points)
    assert np.min(line.t) >= harmonic_pair.t_min - 1e-12 and np.max(line.t) <= harmonic_pair.t_max + 1e-12


def test_world_lines_stay_on_their_level_sets(harmonic_pair):
    # Oracle: F(x, t) = int rho is conserved along integral curves of (rho, j).
    levels = []
    for seed in ((0.5, -1.2), (0.5, -1.1), (1.0, 0.5)):
        line = trace_world_line(harmonic_pair, seed, lambda_max=200.0)
        idx = np.linspace(0, len(line) - 1, 40).astype(int)
        F = np.array([level(line.t[n], line.x[n]) for n in idx])
        assert np.max(np.abs(F - F[0])) < 1e-3
        levels.append(F[0])
    # distinct seeds on distinct level sets: the curves cannot meet
    assert min(abs(a - b) for n, a in enumerate(levels) for b in levels[n + 1:]) > 1e-3


def test_time_parametrisation_consistent_with_lambda_curve(harmonic_pair):
    seed = (0.5, 0.5)
    wl = integrate_lambda_param(harmonic_pair, seed, (0.0, 200.0), on_exit="stop")
    nodes = np.nonzero((wl.t > 0.5) & (wl.t < 1.2))[0]
    assert nodes.size >= 3 and np.all(np.diff(wl.t[: nodes[-1] + 1]) > 0)
    for n in nodes[:: max(1, nodes.size // 6)]:
        tl = integrate_time_param(harmonic_pair, seed[1], (0.5, wl.t[n]))
        assert abs(tl.x[-1] - wl.x[n]) < 1e-6


def test_time_parametrisation_stops_at_turning_point(harmonic_pair):
    with pytest.raises(TurningPointEncountered) as exc:
        integrate_time_param(harmonic_pair, -1.2, (0.5, 3.0))
    assert exc.value.line is not None and len(exc.value.line) > 1
    joined = integrate_time_param(harmonic_pair, -1.2, (0.5, 3.0), on_turning="lambda", lambda_max=200.0)
    assert len(joined.turning_points) >= 1


def test_stagnation_seed_raises(harmonic_pair):
    with pytest.raises(StagnationPoint):
        integrate_lambda_param(harmonic_pair, (1.0, 11.5), (0, 10.0))


# --- proper time ----------------------------------------------------------------------------

def test_proper_time_examples():
    mk = lambda t, x: proper_time(WorldLine(np.array(t, float), np.array(x, float), np.arange(len(t), dtype=float)))  # noqa: E731
    a = mk([0, 1], [0, 0])
    assert a.tau[-1] == 1.0 and a.character[-1] == "timelike"
    b = mk([0, 0], [0, 1])
    assert b.tau[-1] == 1.0 and b.character[-1] == "spacelike"
    c = mk([0, 1], [0, 1])
    assert c.tau[-1] == 0.0 and c.character[-1] == "null"


coord = st.floats(-5, 5).map(lambda v: round(v, 6))  # keeps dt^2 - dx^2 clear of underflow


@given(arrays(np.float64, 12, elements=coord), arrays(np.float64, 12, elements=coord))
def test_proper_time_is_real_and_nondecreasing(t, x):
    line = proper_time(WorldLine(t, x, np.arange(12.0)))
    assert np.all(np.isfinite(line.tau))
    assert np.all(np.diff(line.tau) >= 0)
    dt, dx = np.diff(t), np.diff(x)
    assert np.all((line.character[1:] == "timelike") == (np.abs(dt) > np.abs(dx)))


def test_dirac_rest_line_is_vertical_with_tau_equal_t():
    g = Grid1D.centered(64, 20.0)
    T = 2.0
    ri, rf = evolve_pair(rest_spinor(g), rest_spinor(g, time=T), None, 0.0, T, 0.05, 4)
    interp = FieldInterpolator.from_dirac_records(ri, rf)
    line = dirac_trajectory(interp, (0.0, 1.0), (0.0, 1.5))
    assert line.end_reason == "done"
    assert np.max(np.abs(line.x - 1.0)) < 1e-10
    assert np.max(np.abs(line.tau - line.t)) < 1e-10
    assert abs(line.tau[-1] - 1.5) < 1e-10
    with pytest.raises(StructuralError):
        dirac_trajectory(FieldInterpolator.from_records(ri.__class__(
            [s for s in evolve_window(gaussian_packet(g, 0, 0, 1), FREE, 0, 0.2, 0.1)], 0.1, "forward")),
            (0.0, 0.0), (0, 1))


# --- ensembles -------------------------------------------------------------------------------

def test_ensemble_is_equivariant():
    # Stratified seeds: the quantiles of |psi(t1)|^2.  Equivariance means the final
    # positions are the quantiles of |psi(t2)|^2.
    g = Grid1D.centered(512, 60.0)
    psi = superposition([gaussian_packet(g, -2, 1.0, 1.0), gaussian_packet(g, 2, -0.5, 1.2)], [1, 0.8]).normalize()
    rec = evolve_window(psi, FREE, 0.0, 2.0, 0.01, 2)
    interp = FieldInterpolator.from_records(rec)
    cdf = cumulative_trapezoid(np.abs(psi.values) ** 2, g.x, initial=0.0)
    n = 1000
    seeds = np.interp((np.arange(n) + 0.5) / n, cdf, g.x)
    res = ensemble(interp, seeds, "time")
    assert not res.errors
    final = np.array([line.x[-1] for line in res.lines])
    edges = np.linspace(-12, 12, 25)
    hist = np.histogram(final, edges)[0] / n
    rho = np.abs(rec[-1].values) ** 2 * g.spacing
    target = np.array([rho[(g.x >= a) & (g.x < b)].sum() for a, b in zip(edges[:-1], edges[1:])])
    assert 0.5 * np.sum(np.abs(hist - target)) < 0.03


def test_duplicate_seeds_and_threads_give_identical_lines(harmonic_pair):
    seeds = [(0.5, -1.2), (1.0, 0.5), (0.5, -1.2), (2.0, 1.0)]
    a = ensemble(harmonic_pair, seeds, "world", lambda_max=200.0)
    b = ensemble(harmonic_pair, seeds, "world", lambda_max=200.0, threads=2)
    assert np.array_equal(a.lines[0].x, a.lines[2].x)
    for la, lb in zip(a.lines, b.lines):
        assert np.array_equal(la.t, lb.t) and np.array_equal(la.x, lb.x)


def test_ensemble_collects_failures_without_aborting(harmonic_pair):
    res = ensemble(harmonic_pair, [-1.2, 0.5], "time", t_range=(0.5, 3.0))
    assert 0 in res.errors and res.errors[0][0] == "TurningPointEncountered"
    assert 1 not in res.errors
    man = res.manifest()
    assert man["n_errors"] == 1 and man["lines"][1]["status"] == "ok"
    with pytest.raises(StructuralError):
        ensemble(harmonic_pair, [0.0], "sideways")


def test_ensemble_write(tmp_path, harmonic_pair):
    res = ensemble(harmonic_pair, [(1.0, 0.5)], "lambda", lambda_max=200.0)
    res.write(tmp_path)
    assert (tmp_path / "batch_manifest.json").exists()
    head = (tmp_path / "line_00000.csv").read_text().splitlines()[0]
    assert head == "lambda,t,x,tau,character,turning_flag"
