"""Density, current and velocity fields for standard and causally symmetric guidance.

Standard model:  rho = |psi|^2,  j = Im(psi* d psi).
Symmetric model: rho = Re(psi_f* psi_i / a),
                 j   = Re[(psi_f* d psi_i - (d psi_f*) psi_i) / (2 i a)],
with a = <psi_f|psi_i>.  Velocities are j / rho and are left undefined where
|rho| falls below ``eps_rel * max|rho|``; nothing is regularised.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DegenerateReduction, GridMismatch, StructuralError
from .fields import (
    EPS_DEGENERATE,
    Amplitude,
    Grid1D,
    SpinorField,
    TwoParticleField,
    WavefunctionField,
    amplitude,
    check_same_grid,
    spectral_derivative,
)
from .propagators import GAMMA0, GAMMA1, EvolutionRecord

EPS_TURN_REL = 1e-12


@dataclass(frozen=True)
class GuidanceField:
    grid: Grid1D
    density: np.ndarray
    current: np.ndarray
    velocity: np.ndarray  # NaN where undefined
    defined: np.ndarray
    time: float
    model: str

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    def total(self) -> float:
        return float(np.sum(self.density) * self.grid.spacing)

    def negativity_fraction(self) -> float:
        """Integral of the negative part over the integral of |rho|."""
        neg = -np.sum(np.minimum(self.density, 0.0))
        return float(neg / np.sum(np.abs(self.density)))

    def negative_measure(self) -> float:
        """Length of the set where rho < 0 (a per-slice diagnostic)."""
        return float(np.count_nonzero(self.density < 0) * self.grid.spacing)

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "density", "current", "velocity", "defined"])
            for row in zip(self.x, self.density, self.current, self.velocity, self.defined):
                w.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])),
                            repr(float(row[3])), int(row[4])])
        return path


def _velocity(rho: np.ndarray, j: np.ndarray, eps_rel: float):
    scale = np.max(np.abs(rho))
    defined = np.abs(rho) >= eps_rel * scale
    v = np.full_like(rho, np.nan)
    v[defined] = j[defined] / rho[defined]
    return v, defined


def _normalizer(a: Amplitude | complex, normalization: str) -> complex:
    val = a.value if isinstance(a, Amplitude) else complex(a)
    if normalization == "complex":
        return val
    if normalization == "real-part":
        return complex(val.real)
    raise StructuralError(f"normalization must be 'complex' or 'real-part', got {normalization!r}")


def standard_density_current(values: np.ndarray, grid: Grid1D, axis: int = -1):
    d = spectral_derivative(values, grid, axis)
    return np.abs(values) ** 2, np.imag(np.conj(values) * d)


def symmetric_density_current(
    vi: np.ndarray, vf: np.ndarray, grid: Grid1D, a: complex, axis: int = -1
):
    """Raw (rho, j) arrays for the symmetric model; derivatives along ``axis``."""
    di = spectral_derivative(vi, grid, axis)
    df = spectral_derivative(vf, grid, axis)
    cf = np.conj(vf)
    rho = np.real(cf * vi / a)
    j = np.real((cf * di - np.conj(df) * vi) / (2j * a))
    return rho, j


def bohm_velocity(psi: WavefunctionField, eps_rel: float = EPS_TURN_REL) -> GuidanceField:
    rho, j = standard_density_current(psi.values, psi.grid)
    v, ok = _velocity(rho, j, eps_rel)
    return GuidanceField(psi.grid, rho, j, v, ok, psi.time, "standard")


def symmetric_fields(
    psi_i: WavefunctionField,
    psi_f: WavefunctionField,
    a: Optional[Amplitude] = None,
    normalization: str = "complex",
    eps_rel: float = EPS_TURN_REL,
) -> GuidanceField:
    """Causally symmetric density, current and velocity at the common time slice.

    ``normalization='real-part'`` divides by Re(a) instead of a.
    """
    check_same_grid(psi_i, psi_f)
    if psi_i.time != psi_f.time:
        raise GridMismatch(f"time tags differ: {psi_i.time} vs {psi_f.time}")
    if a is None:
        a = amplitude(psi_f, psi_i)
    elif isinstance(a, Amplitude):
        a.require_nondegenerate()
    norm = _normalizer(a, normalization)
    rho, j = symmetric_density_current(psi_i.values, psi_f.values, psi_i.grid, norm)
    v, ok = _velocity(rho, j, eps_rel)
    return GuidanceField(psi_i.grid, rho, j, v, ok, psi_i.time, "symmetric")


@dataclass(frozen=True)
class ContinuityResidual:
    times: np.ndarray  # interior snapshot times
    rms: np.ndarray  # spatial RMS of d_t rho + d_x j at each interior time

    @property
    def overall(self) -> float:
        return float(np.sqrt(np.mean(self.rms**2)))


def _aligned(record_i: EvolutionRecord, record_f: Optional[EvolutionRecord]):
    ri = record_i.chronological()
    rf = ri if record_f is None else record_f.chronological()
    if len(ri) != len(rf) or not np.array_equal(ri.times, rf.times):
        raise StructuralError("records must share the same snapshot times")
    if len(ri) < 3:
        raise StructuralError("continuity residual needs at least 3 snapshots")
    check_same_grid(ri[0], rf[0])
    return ri, rf


def _centered_residual(times, rho, j, grid, axis=-1) -> ContinuityResidual:
    h = np.diff(times)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0):
        raise StructuralError("snapshots must be uniformly spaced")
    dt = times[2:] - times[:-2]
    drho = (rho[2:] - rho[:-2]) / dt[:, None]
    dj = np.real(spectral_derivative(j[1:-1], grid, axis))
    r = drho + dj
    rms = np.sqrt(np.mean(r.reshape(r.shape[0], -1) ** 2, axis=1))
    return ContinuityResidual(times[1:-1], rms)


def continuity_residual(
    record_i: EvolutionRecord, record_f: EvolutionRecord, a: Optional[Amplitude] = None
) -> ContinuityResidual:
    """Time-centred discrete d_t rho + d_x j for the symmetric fields of two runs."""
    ri, rf = _aligned(record_i, record_f)
    if a is None:
        a = amplitude(rf[0], ri[0])
    av = a.value if isinstance(a, Amplitude) else complex(a)
    vi, vf = ri.values, rf.values
    rho, j = symmetric_density_current(vi, vf, ri[0].grid, av, axis=-1)
    return _centered_residual(ri.times, rho, j, ri[0].grid)


def standard_continuity_residual(record: EvolutionRecord) -> ContinuityResidual:
    r = _aligned(record, None)[0]
    rho, j = standard_density_current(r.values, r[0].grid, axis=-1)
    return _centered_residual(r.times, rho, j, r[0].grid)


# --- two particles ---------------------------------------------------------------------

def reduce_final(
    Psi_i: TwoParticleField,
    psi_f: WavefunctionField,
    measured: int = 1,
    eps: float = EPS_DEGENERATE,
) -> WavefunctionField:
    """Contract the joint state with one particle's final wavefunction.

    Returns the normalised single-particle state of the *other* particle.

    Raises
    ------
    DegenerateReduction
        If the contraction has norm below ``eps``.
    """
    if psi_f.time != Psi_i.time:
        raise GridMismatch(f"time tags differ: {psi_f.time} vs {Psi_i.time}")
    if measured == 1:
        if psi_f.grid != Psi_i.grid1:
            raise GridMismatch("final state must live on grid1")
        vals = np.conj(psi_f.values) @ Psi_i.values * Psi_i.grid1.spacing
        grid = Psi_i.grid2
    elif measured == 2:
        if psi_f.grid != Psi_i.grid2:
            raise GridMismatch("final state must live on grid2")
        vals = Psi_i.values @ np.conj(psi_f.values) * Psi_i.grid2.spacing
        grid = Psi_i.grid1
    else:
        raise StructuralError("measured must be 1 or 2")
    N = float(np.sqrt(np.sum(np.abs(vals) ** 2) * grid.spacing))
    if N < eps:
        raise DegenerateReduction(f"reduction norm {N:.3e} below {eps:.1e}")
    return WavefunctionField(grid, vals / N, Psi_i.time, normalized=True)


def _many_body_parts(Psi_i: TwoParticleField, Psi_f: TwoParticleField, a, which: int):
    check_same_grid(Psi_i, Psi_f)
    if which not in (1, 2):
        raise StructuralError("which must be 1 or 2")
    if a is None:
        a = amplitude(Psi_f, Psi_i)
    elif isinstance(a, Amplitude):
        a.require_nondegenerate()
    av = a.value if isinstance(a, Amplitude) else complex(a)
    axis = which - 1
    grid = Psi_i.grid1 if which == 1 else Psi_i.grid2
    other = Psi_i.grid2 if which == 1 else Psi_i.grid1
    vi, vf = Psi_i.values, Psi_f.values
    di = spectral_derivative(vi, grid, axis)
    df = spectral_derivative(vf, grid, axis)
    cf = np.conj(vf)
    sum_axis = 1 - axis
    den = np.sum(cf * vi, axis=sum_axis) * other.spacing
    num = np.sum(cf * di - np.conj(df) * vi, axis=sum_axis) * other.spacing
    return grid, np.real(den / av), np.real(num / (2j * av))


def many_body_density(
    Psi_i: TwoParticleField, Psi_f: TwoParticleField, a: Optional[Amplitude] = None, which: int = 1
) -> np.ndarray:
    """Signed single-particle density of particle ``which`` with the other integrated out."""
    return _many_body_parts(Psi_i, Psi_f, a, which)[1]


def many_body_velocity(
    Psi_i: TwoParticleField,
    Psi_f: TwoParticleField,
    a: Optional[Amplitude] = None,
    which: int = 1,
    eps_rel: float = EPS_TURN_REL,
) -> GuidanceField:
    """Velocity field of one particle over its own 1D grid (current / density)."""
    grid, rho, j = _many_body_parts(Psi_i, Psi_f, a, which)
    v, ok = _velocity(rho, j, eps_rel)
    return GuidanceField(grid, rho, j, v, ok, Psi_i.time, "symmetric")


def configuration_velocity(Psi: TwoParticleField, which: int = 2, eps_rel: float = EPS_TURN_REL):
    """Standard-Bohm velocity of one particle over configuration space (x1, x2)."""
    grid = Psi.grid1 if which == 1 else Psi.grid2
    rho, j = standard_density_current(Psi.values, grid, axis=which - 1)
    defined = rho >= eps_rel * rho.max()
    v = np.full_like(rho, np.nan)
    v[defined] = j[defined] / rho[defined]
    return v, defined


# --- Dirac -----------------------------------------------------------------------------

@dataclass(frozen=True)
class DiracGuidance:
    grid: Grid1D
    j0: np.ndarray
    j1: np.ndarray
    rho0: np.ndarray
    u0: np.ndarray  # NaN where undefined
    u1: np.ndarray
    defined: np.ndarray
    character: np.ndarray  # 'timelike' | 'spacelike' | 'null'
    time: float

    def norm_identity(self) -> np.ndarray:
        """u_nu u^nu at defined points, evaluated in factored form (u0-u1)(u0+u1)."""
        u0, u1 = self.u0[self.defined], self.u1[self.defined]
        return (u0 - u1) * (u0 + u1)


def dirac_currents(vi: np.ndarray, vf: np.ndarray, a: complex):
    """j^nu = Re(psi_f-bar gamma^nu psi_i / a) with psi-bar = psi^dagger gamma^0."""
    bar = np.einsum("c...,cd->d...", np.conj(vf), GAMMA0)
    j0 = np.real(np.einsum("c...,cd,d...->...", bar, GAMMA0, vi) / a)
    j1 = np.real(np.einsum("c...,cd,d...->...", bar, GAMMA1, vi) / a)
    return j0, j1


def dirac_guidance(
    psi_i: SpinorField,
    psi_f: SpinorField,
    a: Optional[Amplitude] = None,
    eps_rel: float = EPS_TURN_REL,
) -> DiracGuidance:
    check_same_grid(psi_i, psi_f)
    if a is None:
        a = amplitude(psi_f, psi_i)
    elif isinstance(a, Amplitude):
        a.require_nondegenerate()
    av = a.value if isinstance(a, Amplitude) else complex(a)
    j0, j1 = dirac_currents(psi_i.values, psi_f.values, av)
    jj = (j0 - j1) * (j0 + j1)
    rho0 = np.sqrt(np.abs(jj))
    defined = rho0 >= eps_rel * rho0.max()
    u0 = np.full_like(j0, np.nan)
    u1 = np.full_like(j1, np.nan)
    u0[defined] = j0[defined] / rho0[defined]
    u1[defined] = j1[defined] / rho0[defined]
    character = np.where(~defined, "null", np.where(jj > 0, "timelike", "spacelike"))
    return DiracGuidance(psi_i.grid, j0, j1, rho0, u0, u1, defined, character, psi_i.time)


def dirac_continuity_residual(
    record_i: EvolutionRecord, record_f: EvolutionRecord, a: Optional[Amplitude] = None
) -> ContinuityResidual:
    """Time-centred d_nu j^nu for the symmetric Dirac current."""
    ri, rf = _aligned(record_i, record_f)
    if a is None:
        a = amplitude(rf[0], ri[0])
    av = a.value if isinstance(a, Amplitude) else complex(a)
    vi = np.moveaxis(ri.values, 1, 0)  # (component, time, x)
    vf = np.moveaxis(rf.values, 1, 0)
    j0, j1 = dirac_currents(vi, vf, av)
    return _centered_residual(ri.times, j0, j1, ri[0].grid)
