"""Grids, wavefunction containers, quadrature and the conserved overlap amplitude.

Units are hbar = m = 1 throughout.  Grids are uniform and treated as periodic by
the spectral routines; physical scenarios must keep amplitudes negligible near
the grid edges (see :func:`boundary_leak`).
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .errors import (
    DegenerateOverlap,
    GridMismatch,
    InvalidField,
    PacketTooNarrow,
    PacketTooWide,
)

EPS_DEGENERATE = 1e-8
BOUNDARY_TOL = 1e-12
NORM_TOL = 1e-10


class BoundaryLeakWarning(UserWarning):
    """Amplitude near the grid edge exceeds the periodic-boundary tolerance."""


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid ``origin + j * spacing`` for ``j = 0 .. n_points - 1``."""

    n_points: int
    spacing: float
    origin: float = 0.0

    def __post_init__(self):
        n = int(self.n_points)
        if n <= 0 or n & (n - 1):
            raise ValueError(f"n_points must be a positive power of two, got {self.n_points}")
        if not self.spacing > 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "n_points", n)
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "origin", float(self.origin))

    @classmethod
    def centered(cls, n_points: int, length: float) -> "Grid1D":
        """Grid of periodic length ``length`` symmetric about x = 0."""
        dx = length / n_points
        return cls(n_points, dx, -0.5 * length)

    @property
    def x(self) -> np.ndarray:
        return self.origin + self.spacing * np.arange(self.n_points)

    @property
    def k(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.spacing)

    @property
    def length(self) -> float:
        return self.n_points * self.spacing

    @property
    def x_min(self) -> float:
        return self.origin

    @property
    def x_max(self) -> float:
        return self.origin + (self.n_points - 1) * self.spacing

    def derivative_multiplier(self) -> np.ndarray:
        # Nyquist mode dropped so the derivative of a real field stays real.
        ik = 1j * self.k
        if self.n_points % 2 == 0:
            ik[self.n_points // 2] = 0.0
        return ik

    def to_dict(self) -> dict:
        return {"n_points": self.n_points, "spacing": self.spacing, "origin": self.origin}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid1D":
        return cls(int(d["n_points"]), float(d["spacing"]), float(d.get("origin", 0.0)))


def spectral_derivative(values: np.ndarray, grid: Grid1D, axis: int = -1) -> np.ndarray:
    """d/dx of periodic samples along ``axis`` via FFT."""
    shape = [1] * values.ndim
    shape[axis] = grid.n_points
    ik = grid.derivative_multiplier().reshape(shape)
    return np.fft.ifft(ik * np.fft.fft(values, axis=axis), axis=axis)


def _freeze(values, dtype=complex) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


def _check_finite(values: np.ndarray):
    if not np.all(np.isfinite(values)):
        raise InvalidField("field values must be finite everywhere")


@dataclass(frozen=True)
class WavefunctionField:
    """Complex amplitudes on a 1D grid at simulation time ``time``."""

    grid: Grid1D
    values: np.ndarray
    time: float = 0.0
    normalized: bool = False

    def __post_init__(self):
        vals = _freeze(self.values)
        if vals.shape != (self.grid.n_points,):
            raise InvalidField(f"expected shape ({self.grid.n_points},), got {vals.shape}")
        _check_finite(vals)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "time", float(self.time))
        if self.normalized and abs(self.norm_squared() - 1.0) > NORM_TOL:
            raise InvalidField(f"field flagged normalized but norm^2 = {self.norm_squared()!r}")

    def norm_squared(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.grid.spacing)

    def normalize(self) -> "WavefunctionField":
        n = math.sqrt(self.norm_squared())
        return WavefunctionField(self.grid, self.values / n, self.time, normalized=True)

    def replace(self, values=None, time=None, normalized=None) -> "WavefunctionField":
        return WavefunctionField(
            self.grid,
            self.values if values is None else values,
            self.time if time is None else time,
            self.normalized if normalized is None else normalized,
        )

    def derivative(self) -> np.ndarray:
        return spectral_derivative(self.values, self.grid)

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.values) ** 2

    @property
    def measure(self) -> float:
        return self.grid.spacing


@dataclass(frozen=True)
class TwoParticleField:
    """Complex amplitudes on the product grid; ``values[i, j]`` is at (x1_i, x2_j)."""

    grid1: Grid1D
    grid2: Grid1D
    values: np.ndarray
    time: float = 0.0
    normalized: bool = False

    def __post_init__(self):
        vals = _freeze(self.values)
        if vals.shape != (self.grid1.n_points, self.grid2.n_points):
            raise InvalidField(
                f"expected shape ({self.grid1.n_points}, {self.grid2.n_points}), got {vals.shape}"
            )
        _check_finite(vals)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "time", float(self.time))
        if self.normalized and abs(self.norm_squared() - 1.0) > NORM_TOL:
            raise InvalidField(f"field flagged normalized but norm^2 = {self.norm_squared()!r}")

    @property
    def measure(self) -> float:
        return self.grid1.spacing * self.grid2.spacing

    def norm_squared(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.measure)

    def normalize(self) -> "TwoParticleField":
        n = math.sqrt(self.norm_squared())
        return TwoParticleField(self.grid1, self.grid2, self.values / n, self.time, True)

    def replace(self, values=None, time=None, normalized=None) -> "TwoParticleField":
        return TwoParticleField(
            self.grid1,
            self.grid2,
            self.values if values is None else values,
            self.time if time is None else time,
            self.normalized if normalized is None else normalized,
        )

    @classmethod
    def product(cls, psi1: WavefunctionField, psi2: WavefunctionField) -> "TwoParticleField":
        return cls(
            psi1.grid,
            psi2.grid,
            np.outer(psi1.values, psi2.values),
            psi1.time,
            psi1.normalized and psi2.normalized,
        )


@dataclass(frozen=True)
class SpinorField:
    """Two-component Dirac spinor; ``values[c, j]`` is component c at x_j."""

    grid: Grid1D
    values: np.ndarray
    time: float = 0.0
    normalized: bool = False

    def __post_init__(self):
        vals = _freeze(self.values)
        if vals.shape != (2, self.grid.n_points):
            raise InvalidField(f"expected shape (2, {self.grid.n_points}), got {vals.shape}")
        _check_finite(vals)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "time", float(self.time))
        if self.normalized and abs(self.norm_squared() - 1.0) > NORM_TOL:
            raise InvalidField(f"field flagged normalized but norm^2 = {self.norm_squared()!r}")

    @property
    def measure(self) -> float:
        return self.grid.spacing

    def norm_squared(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.grid.spacing)

    def normalize(self) -> "SpinorField":
        n = math.sqrt(self.norm_squared())
        return SpinorField(self.grid, self.values / n, self.time, True)

    def replace(self, values=None, time=None, normalized=None) -> "SpinorField":
        return SpinorField(
            self.grid,
            self.values if values is None else values,
            self.time if time is None else time,
            self.normalized if normalized is None else normalized,
        )


AnyField = Union[WavefunctionField, TwoParticleField, SpinorField]


def _grids(f) -> tuple:
    if isinstance(f, TwoParticleField):
        return (f.grid1, f.grid2)
    return (f.grid,)


def check_same_grid(a, b):
    if type(a) is not type(b) or _grids(a) != _grids(b):
        raise GridMismatch("fields live on different grids")


def inner_product(bra: AnyField, ket: AnyField) -> complex:
    """Riemann-sum realisation of <bra|ket> on the shared grid.

    Evaluated in real arithmetic so that swapping the arguments yields the exact
    complex conjugate of the result.
    """
    check_same_grid(bra, ket)
    br, bi = bra.values.real.ravel(), bra.values.imag.ravel()
    kr, ki = ket.values.real.ravel(), ket.values.imag.ravel()
    re = np.sum(br * kr + bi * ki)
    im = np.sum(br * ki - bi * kr)
    return complex(re * bra.measure, im * bra.measure)


@dataclass(frozen=True)
class Amplitude:
    """The overlap a = <psi_f|psi_i>, constant under joint unitary evolution."""

    value: complex
    eps: float = EPS_DEGENERATE

    def __post_init__(self):
        object.__setattr__(self, "value", complex(self.value))

    def __abs__(self):
        return abs(self.value)

    @property
    def degenerate(self) -> bool:
        return abs(self.value) <= self.eps

    def require_nondegenerate(self) -> "Amplitude":
        if self.degenerate:
            raise DegenerateOverlap(f"|a| = {abs(self.value):.3e} <= {self.eps:.1e}")
        return self


def amplitude(psi_f: AnyField, psi_i: AnyField, eps: float = EPS_DEGENERATE) -> Amplitude:
    """Overlap amplitude used to normalise all symmetric-model fields.

    For spinors this is the integral of psi_f-bar gamma^0 psi_i, which in the
    Dirac representation reduces to the ordinary spinor inner product.

    Raises
    ------
    DegenerateOverlap
        If ``|a| <= eps``.
    """
    if psi_f.time != psi_i.time:
        raise GridMismatch(f"time tags differ: {psi_f.time} vs {psi_i.time}")
    return Amplitude(inner_product(psi_f, psi_i), eps).require_nondegenerate()


def gaussian_packet(
    grid: Grid1D, center: float, momentum: float, width: float, time: float = 0.0
) -> WavefunctionField:
    """Normalised Gaussian with position standard deviation ``width`` and phase e^{i p x}."""
    if width <= 2.0 * grid.spacing:
        raise PacketTooNarrow(f"width {width} must exceed twice the spacing {grid.spacing}")
    if center - 3.0 * width < grid.x_min or center + 3.0 * width > grid.x_max:
        raise PacketTooWide(f"6-sigma support of packet at {center} (sigma {width}) leaves grid")
    x = grid.x
    vals = np.exp(-((x - center) ** 2) / (4.0 * width**2) + 1j * momentum * x)
    vals /= math.sqrt(np.sum(np.abs(vals) ** 2) * grid.spacing)
    return WavefunctionField(grid, vals, time, normalized=True)


def free_gaussian(
    x: np.ndarray, t: float, center: float, momentum: float, width: float
) -> np.ndarray:
    """Closed-form free evolution (hbar = m = 1) of the continuum Gaussian packet."""
    s = width * (1.0 + 0.5j * t / width**2)
    pref = (2.0 * np.pi) ** -0.25 / np.sqrt(s)
    arg = -((x - center - momentum * t) ** 2) / (4.0 * width * s)
    return pref * np.exp(arg + 1j * momentum * x - 0.5j * momentum**2 * t)


def hermite_functions(x: np.ndarray, n_max: int, omega: float = 1.0, center: float = 0.0):
    """Harmonic-oscillator eigenfunctions phi_0 .. phi_{n_max} as rows of an array."""
    xi = math.sqrt(omega) * (np.asarray(x, dtype=float) - center)
    out = np.empty((n_max + 1, xi.size))
    out[0] = (omega / math.pi) ** 0.25 * np.exp(-0.5 * xi**2)
    if n_max >= 1:
        out[1] = math.sqrt(2.0) * xi * out[0]
    for n in range(1, n_max):
        out[n + 1] = math.sqrt(2.0 / (n + 1)) * xi * out[n] - math.sqrt(n / (n + 1)) * out[n - 1]
    return out


def harmonic_eigenstate(
    grid: Grid1D, n: int, omega: float = 1.0, center: float = 0.0, time: float = 0.0
) -> WavefunctionField:
    vals = hermite_functions(grid.x, n, omega, center)[n]
    # Eigenstate phase e^{-i E t} so that states at t != 0 are consistent.
    phase = np.exp(-1j * omega * (n + 0.5) * time)
    f = WavefunctionField(grid, vals * phase, time)
    return f.replace(normalized=abs(f.norm_squared() - 1.0) <= NORM_TOL)


def superposition(fields, coefficients) -> WavefunctionField:
    fields = list(fields)
    vals = sum(c * f.values for c, f in zip(coefficients, fields))
    f = fields[0].replace(values=vals, normalized=False)
    return f.replace(normalized=abs(f.norm_squared() - 1.0) <= NORM_TOL)


def boundary_leak(f: AnyField, margin: int = 4) -> float:
    """Largest |psi| within ``margin`` points of any grid edge."""
    v = np.abs(f.values)
    if isinstance(f, TwoParticleField):
        edges = [v[:margin, :], v[-margin:, :], v[:, :margin], v[:, -margin:]]
    else:
        v = v.reshape(-1, v.shape[-1])
        edges = [v[:, :margin], v[:, -margin:]]
    return float(max(e.max() for e in edges))


def check_boundary(f: AnyField, tol: float = BOUNDARY_TOL, margin: int = 4) -> float:
    leak = boundary_leak(f, margin)
    if leak > tol:
        warnings.warn(
            f"|psi| = {leak:.3e} at grid margin (t = {f.time}) exceeds {tol:.0e}",
            BoundaryLeakWarning,
            stacklevel=2,
        )
    return leak


# --- snapshot files -------------------------------------------------------------------

def _header(f: AnyField) -> dict:
    if isinstance(f, TwoParticleField):
        kind, grids = "two_particle", [f.grid1.to_dict(), f.grid2.to_dict()]
    elif isinstance(f, SpinorField):
        kind, grids = "spinor", [f.grid.to_dict()]
    else:
        kind, grids = "wavefunction", [f.grid.to_dict()]
    return {
        "kind": kind,
        "grids": grids,
        "shape": list(f.values.shape),
        "time": f.time,
        "normalized": bool(f.normalized),
    }


def save_field(f: AnyField, stem) -> tuple[Path, Path]:
    """Write ``stem.json`` (header) and ``stem.csv`` (index, re, im rows, C order)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    head, data = stem.with_suffix(".json"), stem.with_suffix(".csv")
    head.write_text(json.dumps(_header(f), indent=2, sort_keys=True) + "\n")
    flat = f.values.ravel()
    with open(data, "w") as fh:
        fh.write("index,re,im\n")
        for i, z in enumerate(flat):
            fh.write(f"{i},{float(z.real)!r},{float(z.imag)!r}\n")
    return head, data


def load_field(stem) -> AnyField:
    stem = Path(stem)
    head = json.loads(stem.with_suffix(".json").read_text())
    raw = np.loadtxt(stem.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
    vals = (raw[:, 1] + 1j * raw[:, 2]).reshape(head["shape"])
    grids = [Grid1D.from_dict(g) for g in head["grids"]]
    kind = head["kind"]
    if kind == "two_particle":
        return TwoParticleField(grids[0], grids[1], vals, head["time"], head["normalized"])
    if kind == "spinor":
        return SpinorField(grids[0], vals, head["time"], head["normalized"])
    return WavefunctionField(grids[0], vals, head["time"], head["normalized"])
