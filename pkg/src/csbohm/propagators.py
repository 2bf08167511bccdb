"""Unitary propagators: split-step Schrodinger (one and two particles) and free 1+1D Dirac.

Every step is exactly invertible by flipping the sign of ``dt``; potentials are
sampled at the midpoint of each step so a backward step retraces a forward one.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import StructuralError
from .fields import (
    BOUNDARY_TOL,
    BoundaryLeakWarning,
    Grid1D,
    SpinorField,
    TwoParticleField,
    WavefunctionField,
    boundary_leak,
    load_field,
    save_field,
)

# Dirac representation: gamma^0 = sigma_3, gamma^1 = i sigma_1.
GAMMA0 = np.array([[1, 0], [0, -1]], dtype=complex)
GAMMA1 = np.array([[0, 1j], [1j, 0]], dtype=complex)
ALPHA = GAMMA0 @ GAMMA1
BETA = GAMMA0
METRIC = np.diag([1.0, -1.0])


@dataclass(frozen=True)
class Potential:
    """Real external potential V(x, t).

    kinds
    -----
    ``free``
        V = 0.
    ``harmonic``
        ``omega``, ``center``: V = omega^2 (x - center)^2 / 2.
    ``barrier``
        ``height``, ``width``, ``center``: rectangular step of the given height.
    ``separating_kick``
        ``strength``, ``window`` = (t_on, t_off), ``center``, ``smoothing``:
        V = -strength * s * log cosh((x - center)/s) while t_on <= t < t_off, i.e. a
        force of +strength on the right of ``center`` and -strength on the left.
    """

    kind: str = "free"
    params: dict = field(default_factory=dict)

    KINDS = ("free", "harmonic", "barrier", "separating_kick")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise StructuralError(f"unknown potential kind {self.kind!r}")
        object.__setattr__(self, "params", dict(self.params))

    @property
    def time_dependent(self) -> bool:
        return self.kind == "separating_kick"

    def __call__(self, x, t: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.kind == "free":
            return np.zeros_like(x)
        if self.kind == "harmonic":
            w = p.get("omega", 1.0)
            return 0.5 * w**2 * (x - p.get("center", 0.0)) ** 2
        if self.kind == "barrier":
            inside = np.abs(x - p.get("center", 0.0)) < 0.5 * p["width"]
            return np.where(inside, float(p["height"]), 0.0)
        t_on, t_off = p["window"]
        if not (t_on <= t < t_off):
            return np.zeros_like(x)
        s = p.get("smoothing", 0.5)
        u = (x - p.get("center", 0.0)) / s
        return -p["strength"] * s * (np.logaddexp(u, -u) - math.log(2.0))

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "Potential":
        if not d:
            return cls()
        d = dict(d)
        kind = d.pop("kind", "free")
        if "window" in d:
            d["window"] = tuple(d["window"])
        return cls(kind, d)


@dataclass(frozen=True)
class TwoParticlePotential:
    """Separable V(x1, x2, t) = V1(x1, t) + V2(x2, t)."""

    v1: Potential = Potential()
    v2: Potential = Potential()

    @property
    def time_dependent(self) -> bool:
        return self.v1.time_dependent or self.v2.time_dependent

    def __call__(self, x1, x2, t: float = 0.0) -> np.ndarray:
        return self.v1(x1, t)[:, None] + self.v2(x2, t)[None, :]


def _kinetic_phase(grid: Grid1D, dt: float) -> np.ndarray:
    return np.exp(-0.5j * grid.k**2 * dt)


def schrodinger_step(psi: WavefunctionField, V: Potential, dt: float) -> WavefunctionField:
    """One Strang step: half kick, spectral drift, half kick.  ``dt < 0`` steps backward."""
    if dt == 0:
        raise ValueError("dt must be non-zero")
    v = V(psi.grid.x, psi.time + 0.5 * dt)
    half = np.exp(-0.5j * v * dt)
    out = half * np.fft.ifft(_kinetic_phase(psi.grid, dt) * np.fft.fft(half * psi.values))
    return WavefunctionField(psi.grid, out, psi.time + dt, psi.normalized)


def two_particle_step(Psi: TwoParticleField, V: Optional[TwoParticlePotential], dt: float) -> TwoParticleField:
    """2D Strang split-step on the product grid (equal unit masses)."""
    if dt == 0:
        raise ValueError("dt must be non-zero")
    V = V or TwoParticlePotential()
    v = V(Psi.grid1.x, Psi.grid2.x, Psi.time + 0.5 * dt)
    half = np.exp(-0.5j * v * dt)
    kin = np.outer(_kinetic_phase(Psi.grid1, dt), _kinetic_phase(Psi.grid2, dt))
    out = half * np.fft.ifft2(kin * np.fft.fft2(half * Psi.values))
    return TwoParticleField(Psi.grid1, Psi.grid2, out, Psi.time + dt, Psi.normalized)


def dirac_hamiltonian(k: np.ndarray, mass: float) -> np.ndarray:
    """H(k) = alpha k + beta m for each wavenumber; shape (n, 2, 2)."""
    return k[:, None, None] * ALPHA[None] + mass * BETA[None]


def dirac_propagator(grid: Grid1D, mass: float, dt: float) -> np.ndarray:
    """exp(-i H(k) dt) per wavenumber, using H^2 = E^2."""
    k = grid.k
    E = np.sqrt(k**2 + mass**2)
    H = dirac_hamiltonian(k, mass)
    # sin(E dt)/E is finite as E -> 0 (massless k = 0 mode).
    sinc = np.where(E > 0, np.sin(E * dt) / np.where(E > 0, E, 1.0), dt)
    return np.cos(E * dt)[:, None, None] * np.eye(2)[None] - 1j * sinc[:, None, None] * H


def _apply_kspace(U: np.ndarray, values: np.ndarray) -> np.ndarray:
    phi = np.fft.fft(values, axis=1)
    phi = np.einsum("kab,bk->ak", U, phi)
    return np.fft.ifft(phi, axis=1)


def dirac_step(psi: SpinorField, dt: float, mass: float = 1.0) -> SpinorField:
    """Exact free Dirac evolution by ``dt`` (either sign)."""
    if dt == 0:
        raise ValueError("dt must be non-zero")
    out = _apply_kspace(dirac_propagator(psi.grid, mass, dt), psi.values)
    return SpinorField(psi.grid, out, psi.time + dt, psi.normalized)


def energy_projector(grid: Grid1D, mass: float, sign: int = 1) -> np.ndarray:
    E = np.sqrt(grid.k**2 + mass**2)
    H = dirac_hamiltonian(grid.k, mass)
    return 0.5 * (np.eye(2)[None] + sign * H / E[:, None, None])


def dirac_packet(
    grid: Grid1D,
    center: float,
    momentum: float,
    width: float,
    mass: float = 1.0,
    sign: int = 1,
    time: float = 0.0,
) -> SpinorField:
    """Gaussian packet built from definite-sign energy eigenspinors.

    ``width`` is the position standard deviation of the scalar envelope.
    """
    x = grid.x
    env = np.exp(-((x - center) ** 2) / (4.0 * width**2) + 1j * momentum * x)
    phik = np.fft.fft(env)
    P = energy_projector(grid, mass, sign)
    # This projector column never vanishes for mass > 0, so the eigenspinor
    # phase convention is smooth in k.
    vec = P[:, :, 0] if sign > 0 else P[:, :, 1]
    vec /= np.linalg.norm(vec, axis=1)[:, None]
    vals = np.fft.ifft(vec.T * phik[None, :], axis=1)
    f = SpinorField(grid, vals, time)
    return f.normalize()


def rest_spinor(grid: Grid1D, mass: float = 1.0, time: float = 0.0) -> SpinorField:
    """Uniform positive-energy rest spinor (k = 0 eigenstate of the periodic grid)."""
    vals = np.zeros((2, grid.n_points), dtype=complex)
    vals[0] = np.exp(-1j * mass * time) / math.sqrt(grid.length)
    return SpinorField(grid, vals, time, normalized=True)


@dataclass
class EvolutionRecord:
    """Uniformly spaced snapshots of one evolution run."""

    snapshots: list
    dt: float
    direction: str
    boundary_leak: float = 0.0

    def __post_init__(self):
        if self.direction not in ("forward", "backward"):
            raise StructuralError(f"direction must be forward or backward, got {self.direction!r}")
        if not self.snapshots:
            raise StructuralError("record needs at least one snapshot")

    def __len__(self):
        return len(self.snapshots)

    def __getitem__(self, i):
        return self.snapshots[i]

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    @property
    def values(self) -> np.ndarray:
        return np.stack([s.values for s in self.snapshots])

    @property
    def snapshot_dt(self) -> float:
        if len(self.snapshots) < 2:
            return 0.0
        return self.snapshots[1].time - self.snapshots[0].time

    def chronological(self) -> "EvolutionRecord":
        """Same snapshots ordered by increasing time."""
        if self.direction == "forward":
            return self
        return EvolutionRecord(self.snapshots[::-1], -self.dt, "forward", self.boundary_leak)

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        names = []
        for n, s in enumerate(self.snapshots):
            name = f"snap_{n:05d}"
            save_field(s, directory / name)
            names.append(name)
        header = {
            "dt": self.dt,
            "direction": self.direction,
            "boundary_leak": self.boundary_leak,
            "times": [s.time for s in self.snapshots],
            "snapshots": names,
        }
        (directory / "record.json").write_text(json.dumps(header, indent=2) + "\n")
        return directory

    @classmethod
    def load(cls, directory) -> "EvolutionRecord":
        directory = Path(directory)
        header = json.loads((directory / "record.json").read_text())
        snaps = [load_field(directory / n) for n in header["snapshots"]]
        return cls(snaps, header["dt"], header["direction"], header.get("boundary_leak", 0.0))


def _step_count(t_start: float, t_end: float, dt: float) -> int:
    span = abs(t_end - t_start)
    n = round(span / abs(dt))
    if abs(n * abs(dt) - span) > 1e-9 * max(1.0, span):
        raise StructuralError(f"window length {span} is not a multiple of dt = {abs(dt)}")
    return n


def evolve_window(
    psi0,
    V=None,
    t_start: Optional[float] = None,
    t_end: float = 0.0,
    dt: float = 1e-3,
    stride: int = 1,
    mass: float = 1.0,
    leak_tol: float = BOUNDARY_TOL,
    progress: Optional[Callable[[int, int], None]] = None,
) -> EvolutionRecord:
    """Evolve ``psi0`` from ``t_start`` (default: its own time tag) to ``t_end``.

    Snapshots are taken every ``stride`` steps and always include both endpoints.
    The direction follows the sign of ``t_end - t_start``; the sign of ``dt`` is
    ignored.  Works for one-particle, two-particle and spinor fields (``V`` is
    ignored for spinors, which evolve freely with ``mass``).
    """
    t_start = psi0.time if t_start is None else float(t_start)
    if t_start != psi0.time:
        psi0 = psi0.replace(time=t_start)
    n_steps = _step_count(t_start, t_end, dt) if t_end != t_start else 0
    if n_steps and n_steps % stride:
        raise StructuralError(f"stride {stride} does not divide {n_steps} steps")
    sgn = 1.0 if t_end >= t_start else -1.0
    h = sgn * abs(dt)
    direction = "forward" if sgn > 0 else "backward"

    if isinstance(psi0, SpinorField):
        U = dirac_propagator(psi0.grid, mass, h)

        def step(f, t_next):
            return SpinorField(f.grid, _apply_kspace(U, f.values), t_next, f.normalized)

    elif isinstance(psi0, TwoParticleField):
        V = V if isinstance(V, TwoParticlePotential) else TwoParticlePotential()
        kin = np.outer(_kinetic_phase(psi0.grid1, h), _kinetic_phase(psi0.grid2, h))
        static = None if V.time_dependent else np.exp(-0.5j * V(psi0.grid1.x, psi0.grid2.x) * h)

        def step(f, t_next):
            half = static if static is not None else np.exp(
                -0.5j * V(f.grid1.x, f.grid2.x, 0.5 * (f.time + t_next)) * h
            )
            out = half * np.fft.ifft2(kin * np.fft.fft2(half * f.values))
            return TwoParticleField(f.grid1, f.grid2, out, t_next, f.normalized)

    else:
        V = V if isinstance(V, Potential) else Potential()
        kin = _kinetic_phase(psi0.grid, h)
        static = None if V.time_dependent else np.exp(-0.5j * V(psi0.grid.x) * h)

        def step(f, t_next):
            half = static if static is not None else np.exp(
                -0.5j * V(f.grid.x, 0.5 * (f.time + t_next)) * h
            )
            out = half * np.fft.ifft(kin * np.fft.fft(half * f.values))
            return WavefunctionField(f.grid, out, t_next, f.normalized)

    t_lo = min(t_start, t_end)

    def tag(n):
        # Tags are counted from the early end of the window so that forward and
        # backward runs over one window share bit-identical time tags.
        j = n if sgn > 0 else n_steps - n
        if j == 0:
            return t_lo
        if j == n_steps:
            return max(t_start, t_end)
        return t_lo + j * abs(dt)

    snaps = [psi0]
    leak = boundary_leak(psi0)
    f = psi0
    for n in range(1, n_steps + 1):
        t_next = tag(n)
        f = step(f, t_next)
        if n % stride == 0:
            snaps.append(f)
            leak = max(leak, boundary_leak(f))
        if progress is not None:
            progress(n, n_steps)
    if leak > leak_tol:
        warnings.warn(
            f"boundary leak {leak:.3e} exceeds {leak_tol:.0e} during evolution",
            BoundaryLeakWarning,
            stacklevel=2,
        )
    return EvolutionRecord(snaps, h, direction, leak)


def evolve_pair(
    psi_i,
    psi_f,
    V,
    t1: float,
    t2: float,
    dt: float,
    stride: int = 1,
    mass: float = 1.0,
) -> tuple[EvolutionRecord, EvolutionRecord]:
    """Forward-evolve ``psi_i`` from t1 and backward-evolve ``psi_f`` from t2.

    Both records are returned in chronological order on the same time tags.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryLeakWarning)
        rec_i = evolve_window(psi_i, V, t1, t2, dt, stride, mass)
        rec_f = evolve_window(psi_f, V, t2, t1, dt, stride, mass).chronological()
    worst = max(rec_i.boundary_leak, rec_f.boundary_leak)
    if worst > BOUNDARY_TOL:
        warnings.warn(f"boundary leak {worst:.3e} in paired evolution", BoundaryLeakWarning, stacklevel=2)
    return rec_i, rec_f
