import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from csbohm.errors import StructuralError, UnreliableEstimate
from csbohm.fields import (
    Grid1D,
    TwoParticleField,
    WavefunctionField,
    gaussian_packet,
    harmonic_eigenstate,
    hermite_functions,
    superposition,
)
from csbohm.guidance import symmetric_fields
from csbohm.propagators import Potential, schrodinger_step
from csbohm.statistics import (
    FinalBasis,
    IncompleteBasis,
    SignedSample,
    outcome_summed_density,
    two_particle_product_density,
    chain_density,
    correlation_coefficient,
    final_state_weight,
    joint_density,
    marginal_position,
    missing_projection_density,
    propagated_position_states,
    sample_signed,
    sample_signed_cells,
    signed_estimator,
    signed_histogram,
    total_variation,
)

G32 = Grid1D.centered(32, 10.0)
part = st.floats(-3, 3)


def random_state(re, im, grid=G32):
    v = re + 1j * im
    if np.sum(np.abs(v) ** 2) < 1e-6:
        v = v + 1.0
    return WavefunctionField(grid, v).normalize()


states = st.tuples(arrays(np.float64, 32, elements=part), arrays(np.float64, 32, elements=part))


# --- final-state weights -------------------------------------------------------------------

def test_final_state_weight_examples():
    g = Grid1D.centered(256, 24.0)
    p = [harmonic_eigenstate(g, n) for n in range(3)]
    psi = superposition(p[:2], [1 / math.sqrt(2)] * 2)
    assert abs(final_state_weight(psi, psi) - 1) < 1e-12
    assert final_state_weight(p[0], p[1]) < 1e-24
    w = [final_state_weight(q, psi) for q in p]
    assert np.allclose(w, [0.5, 0.5, 0.0], atol=1e-12)


@given(states)
def test_weights_over_complete_basis_sum_to_one(s):
    psi = random_state(*s)
    for basis in (FinalBasis.position(G32), FinalBasis.momentum(G32)):
        total = sum(final_state_weight(m, psi) for m in basis.members)
        assert abs(total - 1) < 1e-12


@given(states, states)
def test_joint_density_chain_rule(si, sf):
    # rho(x, f) = P(f) * rho_sym(x | f)
    psi_i, psi_f = random_state(*si), random_state(*sf)
    if abs(np.vdot(psi_f.values, psi_i.values)) * G32.spacing < 1e-6:
        return
    joint = joint_density(psi_i, psi_f)
    chain = final_state_weight(psi_f, psi_i) * symmetric_fields(psi_i, psi_f).density
    assert np.max(np.abs(joint - chain)) < 1e-12
    assert abs(np.sum(joint) * G32.spacing - final_state_weight(psi_f, psi_i)) < 1e-12


def test_joint_density_of_identical_states_is_born_density():
    psi = gaussian_packet(Grid1D.centered(128, 20.0), 0.5, 1.0, 1.0)
    assert np.max(np.abs(joint_density(psi, psi) - np.abs(psi.values) ** 2)) < 1e-14


# --- outcome sums ------------------------------------------------------------------------

def test_marginal_over_position_basis_recovers_born_density():
    g = Grid1D.centered(256, 30.0)
    psi = superposition([gaussian_packet(g, -2, 1, 1), gaussian_packet(g, 2, -1, 1)], [1, 1j]).normalize()
    res = marginal_position(psi, FinalBasis.position(g))
    assert res.max_deviation < 1e-10 and not res.incomplete


def test_marginal_over_harmonic_basis():
    g = Grid1D.centered(256, 30.0)
    basis = FinalBasis.harmonic(g, 32)
    psi = gaussian_packet(g, 0.5, 0.3, 0.9)
    res = marginal_position(psi, basis)
    assert res.max_deviation < 1e-8
    assert np.min(res.density) >= -1e-10 * np.max(res.reference)


def test_incomplete_basis_misses_exactly_the_unprojected_part():
    g = Grid1D.centered(256, 30.0)
    basis = FinalBasis.harmonic(g, 4)
    psi = gaussian_packet(g, 2.0, 1.0, 1.0)
    with pytest.warns(IncompleteBasis):
        res = marginal_position(psi, basis)
    assert res.incomplete
    miss = missing_projection_density(psi, basis)
    assert np.max(np.abs((res.reference - res.density) - miss)) < 1e-12
    assert abs(np.sum(miss) * g.spacing - res.projection_defect) < 1e-12


def test_basis_validation():
    g = Grid1D.centered(32, 10.0)
    with pytest.raises(StructuralError):
        FinalBasis(g, np.ones((2, 32)), [0, 1])
    with pytest.raises(StructuralError):
        FinalBasis(g, np.ones((2, 16)), [0, 1])
    assert FinalBasis.position(g).completeness_defect() < 1e-12
    assert FinalBasis.momentum(g).completeness_defect() < 1e-12
    assert FinalBasis.harmonic(g, 4).completeness_defect() == 1.0


# --- two-particle chain ----------------------------------------------------------------------

def entangled(g, s_sum=0.8, s_diff=2.0, p=0.5):
    x1, x2 = np.meshgrid(g.x, g.x, indexing="ij")
    v = np.exp(-((x1 + x2) ** 2) / (8 * s_sum**2) - ((x2 - x1) ** 2) / (8 * s_diff**2) + 1j * p * (x2 - x1))
    return TwoParticleField(g, g, v).normalize()


def brute_force_chain(Psi, U1, U2):
    """Loop over every outcome pair with the single-particle signed densities written out."""
    d = Psi.grid1.spacing
    P = Psi.values
    out = np.zeros(P.shape)
    for X1 in range(U1.shape[1]):
        for X2 in range(U2.shape[1]):
            f1, f2 = U1[:, X1], U2[:, X2]
            a = np.sum(np.conj(np.outer(f1, f2)) * P) * d * d
            if abs(a) == 0:
                continue
            r1 = np.real(np.conj(f1) * (P @ np.conj(f2)) * d / a)
            r2 = np.real(np.conj(f2) * (np.conj(f1) @ P) * d / a)
            out += abs(a) ** 2 * np.outer(r1, r2)
    return out


def test_chain_density_matches_brute_force_oracle():
    g = Grid1D.centered(16, 8.0)
    Psi = entangled(g)
    back = lambda v: schrodinger_step(WavefunctionField(g, v, 0.3), Potential(), -0.3).values  # noqa: E731
    U = propagated_position_states(g, back)
    assert np.max(np.abs(chain_density(Psi, U, U) - brute_force_chain(Psi, U, U))) < 1e-8


def test_chain_density_at_measurement_time_is_born_density():
    g = Grid1D.centered(32, 12.0)
    Psi = entangled(g)
    rho = outcome_summed_density(Psi)
    assert np.sum(np.abs(rho - np.abs(Psi.values) ** 2)) * g.spacing**2 < 1e-10
    corr = correlation_coefficient(rho, g, g)
    assert abs(corr - correlation_coefficient(np.abs(Psi.values) ** 2, g, g)) < 1e-6
    assert abs(corr) > 0.1


def test_product_state_has_uncorrelated_product_density():
    g = Grid1D.centered(64, 20.0)
    pa, pb = gaussian_packet(g, -1, 0.5, 1.0), gaussian_packet(g, 1.5, -0.5, 1.3)
    Psi = TwoParticleField.product(pa, pb)
    rho = two_particle_product_density(Psi, Psi)
    assert np.max(np.abs(rho - np.outer(np.abs(pa.values) ** 2, np.abs(pb.values) ** 2))) < 1e-12
    assert abs(correlation_coefficient(rho, g, g)) < 1e-12


# --- signed sampling and estimation ----------------------------------------------------------

def test_equal_weights_give_plain_mean():
    v = np.arange(10.0)
    rep = signed_estimator(v, weights=np.full(10, 0.1), min_ess=5)
    assert rep.estimate == pytest.approx(4.5)
    assert rep.stderr == pytest.approx(np.sqrt(np.sum((v - 4.5) ** 2)) / 10)
    assert rep.effective_sample_size == pytest.approx(10)
    assert rep.negativity_fraction == 0.0
    rep2 = signed_estimator([SignedSample(x, 1.0) for x in v], min_ess=5)
    assert rep2.estimate == pytest.approx(rep.estimate, rel=1e-15)


def test_signed_estimate_agrees_with_exact_sum():
    # Oracle: the exact grid sum of x rho over sum rho for the harmonic pair density.
    g = Grid1D.centered(256, 24.0)
    h = hermite_functions(g.x, 1)
    rho = h[0] ** 2 + h[0] * h[1]
    exact = np.sum(g.x * rho) / np.sum(rho)
    x, w = sample_signed(rho, g, 40000, np.random.default_rng(11))
    rep = signed_estimator(x, weights=w)
    assert rep.negativity_fraction > 0.01
    assert abs(rep.estimate - exact) < 3 * rep.stderr


def test_near_cancellation_is_unreliable():
    w = np.tile([1.0, -1.0], 50)
    w[0] += 1e-3
    with pytest.raises(UnreliableEstimate):
        signed_estimator(np.arange(100.0), weights=w)
    with pytest.raises(UnreliableEstimate):
        signed_estimator(np.arange(3.0), weights=np.ones(3))
    with pytest.raises(StructuralError):
        signed_estimator(np.arange(3.0), weights=np.ones(2))


def test_signed_sampling_is_reproducible_and_unbiased():
    rho = np.array([0.5, -0.2, 0.7, 0.0])
    c1, w1 = sample_signed_cells(rho, 1000, np.random.default_rng(3))
    c2, w2 = sample_signed_cells(rho, 1000, np.random.default_rng(3))
    assert np.array_equal(c1, c2) and np.array_equal(w1, w2)
    assert not np.any(c1 == 3)
    assert np.all(np.sign(w1) == np.sign(rho[c1]))
    # E[sum w] = sum rho; |w| = 1.4 / n, so the spread of sum w is at most 1.4 / sqrt(n)
    assert abs(w1.sum() - rho.sum()) < 4 * 1.4 / math.sqrt(1000)
    with pytest.raises(StructuralError):
        sample_signed_cells(np.zeros(4), 10, np.random.default_rng(0))


def test_estimator_report_json(tmp_path):
    rep = signed_estimator(np.arange(20.0), weights=np.ones(20))
    d = json.loads(rep.write(tmp_path / "est.json").read_text())
    assert d["n_samples"] == 20 and d["estimate"] == pytest.approx(9.5)


def test_signed_histogram_is_normalised():
    h = signed_histogram([0.1, 0.5, 0.9, 0.6], [1.0, -0.5, 2.0, 1.0], [0, 0.5, 1.0])
    assert h.sum() == pytest.approx(1.0)
    assert h[0] == pytest.approx(1 / 3.5)


@settings(max_examples=50)
@given(arrays(np.float64, 8, elements=st.floats(0.01, 1)), arrays(np.float64, 8, elements=st.floats(0.01, 1)))
def test_total_variation_is_a_bounded_symmetric_distance(p, q):
    tv = total_variation(p, q)
    assert 0 <= tv <= 1
    assert tv == pytest.approx(total_variation(q, p))
    assert total_variation(p, p) < 1e-15
