"""Outcome probabilities, signed joint densities and signed-weight estimators."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import StructuralError, UnreliableEstimate
from .fields import (
    Grid1D,
    TwoParticleField,
    WavefunctionField,
    amplitude,
    check_same_grid,
    hermite_functions,
    inner_product,
)
from .guidance import many_body_density

GRAM_TOL = 1e-8
DEFECT_TOL = 1e-6
MIN_ESS = 10.0


class IncompleteBasis(UserWarning):
    """The final basis does not span the initial state to the required accuracy."""


# --- final bases -----------------------------------------------------------------------

@dataclass
class FinalBasis:
    """Orthonormal outcome states of the next measurement, stored as rows of ``vectors``.

    Rows are grid samples normalised with the grid measure: sum |v|^2 dx = 1.
    """

    grid: Grid1D
    vectors: np.ndarray  # (M, N) complex
    labels: list
    time: float = 0.0
    kind: str = "custom"

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=complex)
        if self.vectors.ndim != 2 or self.vectors.shape[1] != self.grid.n_points:
            raise StructuralError("basis vectors must have shape (members, grid points)")
        if len(self.labels) != self.vectors.shape[0]:
            raise StructuralError("one label per basis member required")
        err = self.gram_error()
        if err > GRAM_TOL:
            raise StructuralError(f"basis is not orthonormal: Gram error {err:.2e}")

    def __len__(self):
        return self.vectors.shape[0]

    def gram_error(self) -> float:
        G = self.vectors.conj() @ self.vectors.T * self.grid.spacing
        return float(np.max(np.abs(G - np.eye(len(self)))))

    def member(self, n: int) -> WavefunctionField:
        return WavefunctionField(self.grid, self.vectors[n], self.time, normalized=True)

    @property
    def members(self) -> list:
        return [self.member(n) for n in range(len(self))]

    def coefficients(self, psi: WavefunctionField) -> np.ndarray:
        """<phi_n|psi> for every member."""
        if psi.grid != self.grid:
            raise StructuralError("state and basis live on different grids")
        return self.vectors.conj() @ psi.values * self.grid.spacing

    def completeness_defect(self) -> float:
        """Spectral norm of (1 - sum |phi><phi|) on the grid space.

        A projector onto M < N dimensions leaves a defect of exactly 1; a full
        basis is checked numerically.
        """
        M, N = self.vectors.shape
        if M < N:
            return 1.0
        P = self.vectors.T @ self.vectors.conj() * self.grid.spacing
        return float(np.linalg.norm(np.eye(N) - P, 2))

    def projection_defect(self, psi: WavefunctionField) -> float:
        """||psi - P psi||^2: the weight of psi outside the span of the basis."""
        c = self.coefficients(psi)
        return float(max(psi.norm_squared() - np.sum(np.abs(c) ** 2), 0.0))

    @classmethod
    def position(cls, grid: Grid1D, time: float = 0.0) -> "FinalBasis":
        vecs = np.eye(grid.n_points, dtype=complex) / np.sqrt(grid.spacing)
        return cls(grid, vecs, [float(x) for x in grid.x], time, "position")

    @classmethod
    def momentum(cls, grid: Grid1D, time: float = 0.0) -> "FinalBasis":
        """Discrete plane waves exp(i k x) / sqrt(L), k on the FFT grid."""
        k = grid.k
        vecs = np.exp(1j * np.outer(k, grid.x - grid.origin)) / np.sqrt(grid.length)
        return cls(grid, vecs, [float(v) for v in k], time, "momentum")

    @classmethod
    def harmonic(cls, grid: Grid1D, n_states: int, omega: float = 1.0, center: float = 0.0,
                 time: float = 0.0) -> "FinalBasis":
        """First ``n_states`` oscillator eigenfunctions, re-orthonormalised on the grid."""
        H = hermite_functions(grid.x, n_states - 1, omega, center).astype(complex)
        # Discrete sampling breaks orthonormality slightly; a QR pass restores it
        # without changing the span.
        q, r = np.linalg.qr(H.T * np.sqrt(grid.spacing))
        q = q * np.sign(np.real(np.diag(r)))
        return cls(grid, q.T / np.sqrt(grid.spacing), list(range(n_states)), time, "harmonic")

    @classmethod
    def from_fields(cls, fields: Sequence[WavefunctionField], labels=None) -> "FinalBasis":
        grid = fields[0].grid
        for f in fields[1:]:
            check_same_grid(fields[0], f)
        labels = list(range(len(fields))) if labels is None else list(labels)
        return cls(grid, np.stack([f.values for f in fields]), labels, fields[0].time, "custom")


# --- probabilities and densities -------------------------------------------------------

def final_state_weight(psi_f: WavefunctionField, psi_i: WavefunctionField) -> float:
    """Probability |<psi_f|psi_i>|^2 of the outcome psi_f given psi_i."""
    return float(abs(inner_product(psi_f, psi_i)) ** 2)


def joint_density(psi_i: WavefunctionField, psi_f: WavefunctionField) -> np.ndarray:
    """Signed joint density of position x and outcome psi_f: Re[<psi_i|psi_f> psi_f*(x) psi_i(x)]."""
    check_same_grid(psi_i, psi_f)
    c = inner_product(psi_i, psi_f)
    return np.real(c * np.conj(psi_f.values) * psi_i.values)


@dataclass
class MarginalResult:
    density: np.ndarray
    reference: np.ndarray  # |psi_i|^2
    max_deviation: float
    l1_error: float
    projection_defect: float
    incomplete: bool


def marginal_position(psi_i: WavefunctionField, basis: FinalBasis) -> MarginalResult:
    """Sum of joint densities over all outcomes of ``basis``.

    For a basis spanning psi_i this reproduces |psi_i|^2; otherwise the deviation
    is Re[psi_i* (1 - P) psi_i] and an IncompleteBasis warning is issued.
    """
    if psi_i.grid != basis.grid:
        raise StructuralError("state and basis live on different grids")
    c = basis.coefficients(psi_i)  # <phi_n|psi_i>
    terms = np.real(np.conj(c)[:, None] * np.conj(basis.vectors) * psi_i.values[None, :])
    dens = terms.sum(axis=0)
    ref = np.abs(psi_i.values) ** 2
    defect = basis.projection_defect(psi_i)
    incomplete = defect > DEFECT_TOL
    if incomplete:
        warnings.warn(f"final basis misses weight {defect:.3e} of the initial state", IncompleteBasis, stacklevel=2)
    else:
        floor = -1e-10 * np.max(ref)
        if np.min(dens) < floor:
            raise AssertionError(f"outcome-summed density is negative: min {np.min(dens):.3e}")
    dev = dens - ref
    return MarginalResult(dens, ref, float(np.max(np.abs(dev))), float(np.sum(np.abs(dev)) * psi_i.grid.spacing),
                          defect, incomplete)


def missing_projection_density(psi_i: WavefunctionField, basis: FinalBasis) -> np.ndarray:
    """Re[psi_i* (1 - P) psi_i]: the part of |psi_i|^2 an incomplete basis cannot reach."""
    c = basis.coefficients(psi_i)
    q = psi_i.values - c @ basis.vectors
    return np.real(np.conj(psi_i.values) * q)


# --- two-particle chain ----------------------------------------------------------------

def two_particle_product_density(Psi_i: TwoParticleField, Psi_f: TwoParticleField, a=None) -> np.ndarray:
    """Uncorrelated product rho_1(x1) rho_2(x2) of the two single-particle signed densities."""
    if a is None:
        a = amplitude(Psi_f, Psi_i)
    r1 = many_body_density(Psi_i, Psi_f, a, which=1)
    r2 = many_body_density(Psi_i, Psi_f, a, which=2)
    return np.outer(r1, r2)


def chain_density(Psi_i: TwoParticleField, U1: np.ndarray, U2: np.ndarray) -> np.ndarray:
    """Outcome-summed density at the time of ``Psi_i`` for position outcomes at a later T.

    ``U1[:, X]`` and ``U2[:, X]`` hold the final position state |X> carried back
    from T to the current time (unit-normalised columns).  For each outcome
    pair the uncorrelated product density is weighted by |<X1 X2|Psi_i>|^2 and
    the results are summed.  At t = T (U = identity / sqrt(dx)) this is
    |Psi_i|^2 exactly; before T it is correlated but differs from |Psi_i|^2.
    """
    d1, d2 = Psi_i.grid1.spacing, Psi_i.grid2.spacing
    P = Psi_i.values
    B = P @ np.conj(U2) * d2  # B[x1, X2] = int phi_X2*(x2) Psi(x1, x2)
    C = np.conj(U1).T @ P * d1  # C[X1, x2] = int phi_X1*(x1) Psi(x1, x2)
    A = np.conj(U1).T @ B * d1  # A[X1, X2] = <X1 X2|Psi>
    W = np.abs(A) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        invA = np.where(np.abs(A) > 0, 1.0 / A, 0.0)
    # rho_1^X(x1) |a_X|^2 and rho_2^X(x2) are combined so that zero-weight outcomes drop out.
    R1 = np.real(np.conj(U1)[:, :, None] * B[:, None, :] * invA[None, :, :])  # (x1, X1, X2)
    R2 = np.real(np.conj(U2)[:, None, :] * C.T[:, :, None] * invA[None, :, :])  # (x2, X1, X2)
    return np.einsum("aXY,bXY,XY->ab", R1, R2, W, optimize=True)


def outcome_summed_density(Psi_i: TwoParticleField) -> np.ndarray:
    """Outcome-summed density at the measurement time for grid-position outcomes."""
    U1 = np.eye(Psi_i.grid1.n_points) / np.sqrt(Psi_i.grid1.spacing)
    U2 = np.eye(Psi_i.grid2.n_points) / np.sqrt(Psi_i.grid2.spacing)
    return chain_density(Psi_i, U1, U2)


def propagated_position_states(grid: Grid1D, step: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Columns |X> (unit-normalised grid deltas) mapped through ``step``."""
    eye = np.eye(grid.n_points, dtype=complex) / np.sqrt(grid.spacing)
    return np.stack([step(eye[:, n]) for n in range(grid.n_points)], axis=1)


def correlation_coefficient(density: np.ndarray, grid1: Grid1D, grid2: Grid1D) -> float:
    """Pearson correlation of x1 and x2 under a two-dimensional density."""
    w = density * grid1.spacing * grid2.spacing
    Z = w.sum()
    x1, x2 = grid1.x[:, None], grid2.x[None, :]
    m1, m2 = (w * x1).sum() / Z, (w * x2).sum() / Z
    c11 = (w * (x1 - m1) ** 2).sum() / Z
    c22 = (w * (x2 - m2) ** 2).sum() / Z
    c12 = (w * (x1 - m1) * (x2 - m2)).sum() / Z
    return float(c12 / np.sqrt(c11 * c22))


# --- signed samples and estimators -----------------------------------------------------

@dataclass(frozen=True)
class SignedSample:
    value: float
    weight: float


def sample_signed_cells(density: np.ndarray, n: int, rng: np.random.Generator):
    """Draw ``n`` flat cell indices from |density| by inverse CDF.

    Returns (indices, weights) with weight sign(density) * sum|density| / n, so
    the weights sum to an unbiased estimate of sum(density).
    """
    flat = np.asarray(density, dtype=float).ravel()
    mag = np.abs(flat)
    Z = mag.sum()
    if not np.isfinite(Z) or Z <= 0:
        raise StructuralError("density has no mass to sample")
    cdf = np.cumsum(mag)
    cdf /= cdf[-1]
    cell = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), flat.size - 1)
    return cell, np.sign(flat[cell]) * Z / n


def sample_signed(density: np.ndarray, grid: Grid1D, n: int, rng: np.random.Generator):
    """Draw ``n`` positions from |density| with signed weights that sum to the integral of density.

    Positions are uniform within the grid cell chosen by inverse CDF, so the
    samples are a piecewise-constant reconstruction of the density.
    Returns (positions, weights).
    """
    cell, w = sample_signed_cells(density, n, rng)
    pos = grid.x[cell] + (rng.random(n) - 0.5) * grid.spacing
    return pos, w * grid.spacing


@dataclass
class EstimatorReport:
    estimate: float
    stderr: float
    effective_sample_size: float  # (sum |w|)^2 / sum w^2
    signed_effective_sample_size: float  # (sum w)^2 / sum w^2
    negativity_fraction: float
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "stderr": self.stderr,
            "effective_sample_size": self.effective_sample_size,
            "signed_effective_sample_size": self.signed_effective_sample_size,
            "negativity_fraction": self.negativity_fraction,
            "n_samples": self.n_samples,
        }

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def signed_estimator(samples, statistic: Callable = lambda v: v, weights=None,
                     min_ess: float = MIN_ESS) -> EstimatorReport:
    """Self-normalised signed-weight estimate of E[statistic].

    ``samples`` is either a sequence of SignedSample or an array of values with
    ``weights`` given separately.  The sums run in input order, so results are
    reproducible bit-for-bit.

    Raises
    ------
    UnreliableEstimate
        If either the magnitude ESS or the signed ESS falls below ``min_ess``;
        the latter catches near-cancellation of positive and negative weights.
    """
    if weights is None:
        values = np.array([s.value for s in samples], dtype=float)
        w = np.array([s.weight for s in samples], dtype=float)
    else:
        values = np.asarray(samples, dtype=float)
        w = np.asarray(weights, dtype=float)
    if values.shape[0] != w.shape[0] or w.size == 0:
        raise StructuralError("need one weight per sample")
    if not np.all(np.isfinite(w)):
        raise StructuralError("weights must be finite")
    f = np.asarray(statistic(values), dtype=float)
    sw = w.sum()
    sw2 = np.sum(w * w)
    sabs = np.abs(w).sum()
    ess = float(sabs**2 / sw2) if sw2 > 0 else 0.0
    sess = float(sw**2 / sw2) if sw2 > 0 else 0.0
    if ess < min_ess or sess < min_ess:
        raise UnreliableEstimate(f"effective sample size too small: |w| ESS {ess:.2f}, signed ESS {sess:.2f}")
    est = float(np.sum(w * f) / sw)
    err = float(np.sqrt(np.sum(w * w * (f - est) ** 2)) / abs(sw))
    neg = float(-np.sum(np.minimum(w, 0.0)) / sabs)
    return EstimatorReport(est, err, ess, sess, neg, int(w.size))


def signed_histogram(values, weights, edges) -> np.ndarray:
    """Signed-weight histogram normalised to unit total weight."""
    h, _ = np.histogram(values, bins=edges, weights=weights)
    return h / np.sum(weights)


def total_variation(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return float(0.5 * np.sum(np.abs(p / p.sum() - q / q.sum())))
