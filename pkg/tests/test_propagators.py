import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csbohm.errors import StructuralError
from csbohm.fields import BoundaryLeakWarning, Grid1D, TwoParticleField, WavefunctionField, gaussian_packet
from csbohm.propagators import (
    GAMMA0,
    GAMMA1,
    METRIC,
    EvolutionRecord,
    Potential,
    TwoParticlePotential,
    dirac_packet,
    dirac_step,
    energy_projector,
    evolve_pair,
    evolve_window,
    rest_spinor,
    schrodinger_step,
    two_particle_step,
)

FREE = Potential()
pytestmark = pytest.mark.filterwarnings("ignore::csbohm.fields.BoundaryLeakWarning")


def centroid(values, grid):
    rho = np.abs(values) ** 2
    if rho.ndim > 1:
        rho = rho.sum(axis=0)
    return float(np.sum(grid.x * rho) / np.sum(rho))


def phase_free_distance(a, b):
    """min over theta of max|a - e^{i theta} b|."""
    theta = np.angle(np.vdot(b, a))
    return float(np.max(np.abs(a - np.exp(1j * theta) * b)))


# --- Schrodinger --------------------------------------------------------------------------

def test_plane_wave_acquires_kinetic_phase():
    g = Grid1D.centered(128, 2 * np.pi * 4)
    p = g.k[5]
    psi = WavefunctionField(g, np.exp(1j * p * g.x))
    out = schrodinger_step(psi, FREE, 0.3)
    assert np.max(np.abs(out.values - np.exp(-0.5j * p**2 * 0.3) * psi.values)) < 1e-12
    assert out.time == pytest.approx(0.3)


def test_free_gaussian_spreads_at_analytic_rate():
    g = Grid1D.centered(512, 60.0)
    rec = evolve_window(gaussian_packet(g, 0.0, 0.5, 1.0), FREE, 0.0, 2.0, 0.01, 50)
    for s in rec:
        rho = np.abs(s.values) ** 2 * g.spacing
        mean = np.sum(g.x * rho)
        var = np.sum((g.x - mean) ** 2 * rho)
        assert abs(var - (1.0 + s.time**2 / 4.0)) < 1e-6
        assert abs(mean - 0.5 * s.time) < 1e-6


def test_forward_then_backward_restores_state():
    g = Grid1D.centered(256, 40.0)
    V = Potential("harmonic", {"omega": 0.3})
    psi = gaussian_packet(g, -2.0, 1.0, 1.0)
    fwd = evolve_window(psi, V, 0.0, 1.0, 0.01)
    back = evolve_window(fwd[-1], V, 1.0, 0.0, 0.01)
    assert np.max(np.abs(back[-1].values - psi.values)) < 1e-12
    assert back[-1].time == 0.0


@settings(max_examples=6)
@given(st.floats(-3, 3), st.floats(-2, 2), st.floats(0.8, 2.0))
def test_norm_conserved_over_many_steps(center, p, width):
    g = Grid1D.centered(128, 40.0)
    V = Potential("harmonic", {"omega": 0.4})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryLeakWarning)
        rec = evolve_window(gaussian_packet(g, center, p, width), V, 0.0, 1.0, 0.001, 1000)
    assert abs(rec[-1].norm_squared() - 1.0) < 1e-10


def test_strang_step_is_second_order():
    g = Grid1D.centered(256, 30.0)
    V = Potential("harmonic", {"omega": 1.0})
    psi = gaussian_packet(g, 1.5, 0.5, 1.0)
    ref = evolve_window(psi, V, 0.0, 1.0, 0.1 / 64)[-1].values
    err = [np.max(np.abs(evolve_window(psi, V, 0.0, 1.0, dt)[-1].values - ref)) for dt in (0.1, 0.05, 0.025)]
    ratios = [err[0] / err[1], err[1] / err[2]]
    assert min(ratios) >= 3.5, ratios


def test_coherent_state_returns_after_one_period():
    g = Grid1D.centered(256, 24.0)
    V = Potential("harmonic", {"omega": 1.0})
    psi = gaussian_packet(g, 2.0, 0.0, 1 / math.sqrt(2))
    T = 2 * math.pi
    out = evolve_window(psi, V, 0.0, T, T / 20000, 20000)[-1]
    assert phase_free_distance(out.values, psi.values) < 1e-6


def test_zero_length_window_returns_single_snapshot():
    psi = gaussian_packet(Grid1D.centered(128, 20.0), 0, 0, 1, time=0.5)
    rec = evolve_window(psi, FREE, 0.5, 0.5, 0.01)
    assert len(rec) == 1 and rec[0] is psi


def test_backward_tags_decrease_and_match_forward_tags_bitwise():
    g = Grid1D.centered(128, 30.0)
    fwd = evolve_window(gaussian_packet(g, 0, 0, 1), FREE, 0.1, 0.7, 0.003, 4)
    bwd = evolve_window(gaussian_packet(g, 0, 0, 1), FREE, 0.7, 0.1, 0.003, 4)
    assert np.all(np.diff(bwd.times) < 0)
    assert np.array_equal(fwd.times, bwd.chronological().times)
    assert bwd.direction == "backward" and bwd.chronological().direction == "forward"


def test_evolve_pair_shares_time_tags():
    g = Grid1D.centered(128, 30.0)
    ri, rf = evolve_pair(gaussian_packet(g, 0, 0, 1), gaussian_packet(g, 1, 0, 1), FREE, 0.0, 1.0, 0.01, 10)
    assert np.array_equal(ri.times, rf.times)


def test_structural_errors():
    psi = gaussian_packet(Grid1D.centered(128, 30.0), 0, 0, 1)
    with pytest.raises(StructuralError):
        evolve_window(psi, FREE, 0.0, 1.0, 0.3)
    with pytest.raises(StructuralError):
        evolve_window(psi, FREE, 0.0, 1.0, 0.1, stride=3)
    with pytest.raises(StructuralError):
        Potential("quartic")
    with pytest.raises(ValueError):
        schrodinger_step(psi, FREE, 0.0)


@pytest.mark.filterwarnings("default::csbohm.fields.BoundaryLeakWarning")
def test_boundary_leak_warning():
    g = Grid1D.centered(64, 16.0)
    with pytest.warns(BoundaryLeakWarning):
        evolve_window(gaussian_packet(g, 0.0, 4.0, 1.0), FREE, 0.0, 3.0, 0.01)


def test_record_save_load_roundtrip(tmp_path):
    g = Grid1D.centered(32, 12.0)
    rec = evolve_window(gaussian_packet(g, 0, 0, 1), FREE, 1.0, 0.0, 0.1, 5)
    back = EvolutionRecord.load(rec.save(tmp_path / "rec"))
    assert back.direction == "backward"
    assert np.array_equal(back.times, rec.times)
    assert np.max(np.abs(back.values - rec.values)) <= 1e-15


def test_potential_from_dict_roundtrip():
    V = Potential.from_dict({"kind": "separating_kick", "strength": 2.0, "window": [0.5, 1.0]})
    assert V.time_dependent
    assert np.all(V(np.linspace(-3, 3, 7), 0.0) == 0)
    assert Potential.from_dict(V.to_dict()) == V
    assert Potential.from_dict(None).kind == "free"


# --- two particles ------------------------------------------------------------------------

def test_separable_two_particle_step_is_product_of_one_particle_steps():
    g1, g2 = Grid1D.centered(64, 20.0), Grid1D.centered(32, 16.0)
    V1, V2 = Potential("harmonic", {"omega": 0.5}), Potential("barrier", {"height": 1.0, "width": 1.0})
    a, b = gaussian_packet(g1, -1, 0.5, 1.0), gaussian_packet(g2, 1, -0.3, 1.2)
    Psi = TwoParticleField.product(a, b)
    for _ in range(20):
        Psi = two_particle_step(Psi, TwoParticlePotential(V1, V2), 0.05)
        a, b = schrodinger_step(a, V1, 0.05), schrodinger_step(b, V2, 0.05)
    assert np.max(np.abs(Psi.values - np.outer(a.values, b.values))) < 1e-10


def test_two_particle_norm_conserved():
    g = Grid1D.centered(64, 20.0)
    Psi = TwoParticleField.product(gaussian_packet(g, -1, 1, 1), gaussian_packet(g, 1, -1, 1))
    rec = evolve_window(Psi, None, 0.0, 1.0, 0.001, 1000)
    assert abs(rec[-1].norm_squared() - 1.0) < 1e-12


def test_entangled_sum_coordinate_spreads_like_free_particle():
    # Oracle: in U = (x1 + x2)/sqrt2 the free state is a Gaussian of width s_sum,
    # so <U^2>(t) = s_sum^2 + t^2 / (4 s_sum^2).
    g = Grid1D.centered(128, 40.0)
    s_sum, s_diff = 0.8, 2.0
    x1, x2 = np.meshgrid(g.x, g.x, indexing="ij")
    vals = np.exp(-((x1 + x2) ** 2) / (8 * s_sum**2) - ((x2 - x1) ** 2) / (8 * s_diff**2))
    Psi = TwoParticleField(g, g, vals).normalize()
    t = 1.5
    out = evolve_window(Psi, None, 0.0, t, 0.01)[-1]
    rho = np.abs(out.values) ** 2 * g.spacing**2
    u2 = np.sum(0.5 * (x1 + x2) ** 2 * rho)
    assert abs(u2 - (s_sum**2 + t**2 / (4 * s_sum**2))) < 1e-6


# --- Dirac ---------------------------------------------------------------------------------

def test_gamma_matrices_satisfy_clifford_algebra():
    for mu, gm in enumerate((GAMMA0, GAMMA1)):
        for nu, gn in enumerate((GAMMA0, GAMMA1)):
            assert np.allclose(gm @ gn + gn @ gm, 2 * METRIC[mu, nu] * np.eye(2))


def test_rest_spinor_phase():
    g = Grid1D.centered(64, 20.0)
    psi = rest_spinor(g, 1.3)
    out = dirac_step(psi, 0.7, 1.3)
    assert np.max(np.abs(out.values - np.exp(-1j * 1.3 * 0.7) * psi.values)) < 1e-12
    assert np.max(np.abs(out.values - rest_spinor(g, 1.3, 0.7).values)) < 1e-12


def test_dirac_norm_conserved():
    g = Grid1D.centered(256, 60.0)
    rec = evolve_window(dirac_packet(g, -5.0, 1.0, 2.0), None, 0.0, 5.0, 0.01, 100)
    assert max(abs(s.norm_squared() - 1.0) for s in rec) < 1e-12


def test_energy_projector_is_idempotent_and_complete():
    g = Grid1D.centered(64, 20.0)
    P, M = energy_projector(g, 1.0, 1), energy_projector(g, 1.0, -1)
    assert np.max(np.abs(P @ P - P)) < 1e-12
    assert np.max(np.abs(P + M - np.eye(2)[None])) < 1e-12
    assert np.max(np.abs(P @ M)) < 1e-12


def test_dirac_group_velocity_is_p_over_e():
    # Oracle: centroid displacement of a wide positive-energy packet; its momentum
    # spread is small enough that <k/E> agrees with p/E to well below 1e-4.
    g = Grid1D.centered(2048, 600.0)
    m, p, t = 1.0, 1.0, 20.0
    psi = dirac_packet(g, -100.0, p, 30.0, m)
    out = evolve_window(psi, None, 0.0, t, t, 1, mass=m)[-1]
    v = (centroid(out.values, g) - centroid(psi.values, g)) / t
    assert abs(v - p / math.sqrt(p**2 + m**2)) < 1e-4


def test_negative_energy_packet_is_orthogonal_to_positive():
    g = Grid1D.centered(256, 60.0)
    a, b = dirac_packet(g, 0, 1, 2, sign=1), dirac_packet(g, 0, 1, 2, sign=-1)
    assert abs(np.vdot(a.values.ravel(), b.values.ravel())) * g.spacing < 1e-12
