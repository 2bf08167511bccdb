"""World-line integration through guidance fields.

Three parametrisations share one vectorised Dormand-Prince 5(4) core with
per-lane step control:

* time:    dx/dt = j / rho  (fails at rho = 0, where the 3-velocity diverges)
* lambda:  dt/dlam = rho, dx/dlam = j  (integral curves of the 2-current; pass
           straight through rho = 0 and so can run backwards in t)
* dirac:   as lambda with the Dirac current, plus dtau/dlam = rho_0 so that
           dx^nu/dtau = u^nu holds along the curve.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (
    LeftGrid,
    LeftTimeWindow,
    RestDensityVanishes,
    StagnationPoint,
    StructuralError,
    TrajectoryError,
    TurningPointEncountered,
)
from .fields import Grid1D, amplitude
from .guidance import (
    EPS_TURN_REL,
    dirac_currents,
    standard_density_current,
    symmetric_density_current,
)
from .propagators import EvolutionRecord

RTOL = 1e-8
ATOL = 1e-10

# Dormand-Prince 5(4) tableau.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

ERRORS = {
    "turning_point": TurningPointEncountered,
    "stagnation": StagnationPoint,
    "left_grid": LeftGrid,
    "left_time_window": LeftTimeWindow,
    "rest_density_vanishes": RestDensityVanishes,
    "step_collapse": TurningPointEncountered,
    "max_steps": TrajectoryError,
}


class StrideWarning(UserWarning):
    pass


# --- interpolation ---------------------------------------------------------------------

class FieldInterpolator:
    """Space-time interpolation of two real channels sampled on snapshots.

    Channels are (rho, j) for Schrodinger records and (j0, j1) for Dirac records.
    Time interpolation is linear between snapshots; space interpolation is a
    periodic cubic spline (``space='cubic'``) or the trigonometric interpolant
    (``space='spectral'``).  Queries outside the time window are clamped to it.
    """

    def __init__(self, grid: Grid1D, times, channels, model: str, space: str = "cubic",
                 eps_rel: float = EPS_TURN_REL):
        times = np.asarray(times, dtype=float)
        channels = np.asarray(channels, dtype=float)  # (S, C, N)
        if times.ndim != 1 or times.size < 2:
            raise StructuralError("interpolation needs at least two snapshots")
        if np.any(np.diff(times) <= 0):
            raise StructuralError("snapshot times must be strictly increasing")
        if space not in ("cubic", "spectral"):
            raise StructuralError(f"space must be 'cubic' or 'spectral', got {space!r}")
        self.grid = grid
        self.times = times
        self.channels = channels
        self.model = model
        self.space = space
        self.eps_turn = eps_rel * float(np.max(np.abs(channels[:, 0, :])))
        S, C, N = channels.shape
        if space == "cubic":
            xs = grid.origin + grid.spacing * np.arange(N + 1)
            y = np.concatenate([channels, channels[:, :, :1]], axis=2)  # (S, C, N+1)
            y = np.moveaxis(y, 2, 0).reshape(N + 1, S * C)
            sp = CubicSpline(xs, y, bc_type="periodic", axis=0)
            coef = sp.c.reshape(4, N, S, C)
            self._coef = np.ascontiguousarray(np.transpose(coef, (2, 1, 0, 3)))  # (S, N, 4, C)
        else:
            self._fft = np.fft.fft(channels, axis=2) / N  # (S, C, N)
            self._k = grid.k

    @property
    def t_min(self) -> float:
        return float(self.times[0])

    @property
    def t_max(self) -> float:
        return float(self.times[-1])

    @classmethod
    def from_records(cls, record_i: EvolutionRecord, record_f: Optional[EvolutionRecord] = None,
                     a=None, normalization: str = "complex", space: str = "cubic",
                     eps_rel: float = EPS_TURN_REL) -> "FieldInterpolator":
        """Standard model if ``record_f`` is None, symmetric model otherwise."""
        ri = record_i.chronological()
        grid = ri[0].grid
        vi = ri.values
        if record_f is None:
            rho, j = standard_density_current(vi, grid)
            model = "standard"
            interp = cls(grid, ri.times, np.stack([rho, j], axis=1), model, space, eps_rel)
            ratio = interp.check_stride()
            if ratio >= 0.5:
                warnings.warn(f"snapshot stride too coarse: |v| dt / dx = {ratio:.2f}", StrideWarning, stacklevel=2)
            return interp
        else:
            rf = record_f.chronological()
            if not np.array_equal(ri.times, rf.times):
                raise StructuralError("records must share snapshot times")
            if a is None:
                a = amplitude(rf[0], ri[0])
            av = a.value if hasattr(a, "value") else complex(a)
            if normalization == "real-part":
                av = complex(av.real)
            rho, j = symmetric_density_current(vi, rf.values, grid, av)
            model = "symmetric"
        return cls(grid, ri.times, np.stack([rho, j], axis=1), model, space, eps_rel)

    @classmethod
    def from_dirac_records(cls, record_i: EvolutionRecord, record_f: EvolutionRecord, a=None,
                           space: str = "cubic", eps_rel: float = EPS_TURN_REL):
        ri, rf = record_i.chronological(), record_f.chronological()
        if not np.array_equal(ri.times, rf.times):
            raise StructuralError("records must share snapshot times")
        if a is None:
            a = amplitude(rf[0], ri[0])
        av = a.value if hasattr(a, "value") else complex(a)
        vi = np.moveaxis(ri.values, 1, 0)
        vf = np.moveaxis(rf.values, 1, 0)
        j0, j1 = dirac_currents(vi, vf, av)
        return cls(ri[0].grid, ri.times, np.stack([j0, j1], axis=1), "dirac", space, eps_rel)

    def check_stride(self, rel_cutoff: float = 0.05) -> float:
        """Largest |v| * dt_snapshot / spacing over points with |rho| above ``rel_cutoff * max|rho|``.

        Values >= 0.5 mean the snapshot stride is too coarse for linear time
        interpolation.  Near nodes of rho the velocity diverges, which is why a
        relative density cutoff is applied.
        """
        rho, j = self.channels[:, 0], self.channels[:, 1]
        ok = np.abs(rho) > rel_cutoff * np.max(np.abs(rho))
        vmax = np.max(np.abs(j[ok] / rho[ok])) if np.any(ok) else 0.0
        return float(vmax * np.max(np.diff(self.times)) / self.grid.spacing)

    def __call__(self, t, x) -> np.ndarray:
        """Channel values at points (t, x); returns shape (L, C)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.atleast_1d(np.asarray(x, dtype=float))
        tc = np.clip(t, self.times[0], self.times[-1])
        k = np.clip(np.searchsorted(self.times, tc, side="right") - 1, 0, self.times.size - 2)
        t0, t1 = self.times[k], self.times[k + 1]
        w = ((tc - t0) / (t1 - t0))[:, None]
        g = self.grid
        if self.space == "cubic":
            xi = (x - g.origin) / g.spacing
            fl = np.floor(xi)
            i = fl.astype(np.int64) % g.n_points
            u = ((xi - fl) * g.spacing)[:, None]
            ca = self._coef[k, i]  # (L, 4, C)
            cb = self._coef[k + 1, i]
            va = ((ca[:, 0] * u + ca[:, 1]) * u + ca[:, 2]) * u + ca[:, 3]
            vb = ((cb[:, 0] * u + cb[:, 1]) * u + cb[:, 2]) * u + cb[:, 3]
        else:
            ph = np.exp(1j * (x - g.origin)[:, None] * self._k[None, :])  # (L, N)
            va = np.real(np.einsum("lcn,ln->lc", self._fft[k], ph))
            vb = np.real(np.einsum("lcn,ln->lc", self._fft[k + 1], ph))
        return (1.0 - w) * va + w * vb


# --- world lines -----------------------------------------------------------------------

@dataclass
class WorldLine:
    """Ordered (t, x) points with curve parameter, proper time and turning points."""

    t: np.ndarray
    x: np.ndarray
    lam: np.ndarray
    tau: Optional[np.ndarray] = None
    turning_points: list = field(default_factory=list)
    character: Optional[np.ndarray] = None  # per point: character of the segment ending there
    end_reason: str = "done"
    weight: float = 1.0
    seed: tuple = ()

    def __len__(self):
        return self.t.size

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.t, self.x])

    def slice_crossings(self, t_slice: float) -> int:
        """Number of times the piecewise-linear curve crosses the slice t = t_slice."""
        d = self.t - t_slice
        s = np.sign(d)
        # Touching points count once; treat zeros as belonging to the previous side.
        for n in range(1, s.size):
            if s[n] == 0:
                s[n] = s[n - 1]
        if s.size and s[0] == 0:
            nz = s[s != 0]
            s[0] = nz[0] if nz.size else 1
        return int(np.count_nonzero(s[1:] != s[:-1]))

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tau = self.tau if self.tau is not None else np.full(self.t.size, np.nan)
        char = self.character if self.character is not None else np.array([""] * self.t.size)
        tp = set(self.turning_points)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "t", "x", "tau", "character", "turning_flag"])
            for n in range(self.t.size):
                w.writerow([repr(float(self.lam[n])), repr(float(self.t[n])), repr(float(self.x[n])),
                            repr(float(tau[n])), str(char[n]), int(n in tp)])
        return path


def proper_time(line: WorldLine) -> WorldLine:
    """Fill tau with the two-part proper time dtau = |dt^2 - dx^2|^(1/2) (c = 1).

    Segment character is timelike where dt^2 > dx^2, null where equal and
    spacelike otherwise; tau is real and nondecreasing on every segment.
    """
    dt = np.diff(line.t)
    dx = np.diff(line.x)
    q = (dt - dx) * (dt + dx)
    dtau = np.sqrt(np.abs(q))
    tau = np.concatenate([[0.0], np.cumsum(dtau)])
    seg = np.where(q > 0, "timelike", np.where(q < 0, "spacelike", "null"))
    char = np.concatenate([seg[:1], seg]) if seg.size else np.array(["timelike"])
    return replace(line, tau=tau, character=char)


def turning_points_from_sign(line: WorldLine) -> list:
    """Indices where dt changes sign along the polyline (independent check)."""
    dt = np.sign(np.diff(line.t))
    dt = dt[dt != 0] if dt.size else dt
    return [int(n) for n in np.nonzero(dt[1:] != dt[:-1])[0]]


# --- vectorised Dormand-Prince core ----------------------------------------------------

@dataclass
class _Problem:
    """What the core needs: rhs(s, y) -> (f, aux) plus stopping rules."""

    rhs: callable
    bounds: list  # [(component, lo, hi, reason_lo, reason_hi)]
    event_component: Optional[int] = None  # sign changes of f[:, c] are refined and recorded
    stop: Optional[callable] = None  # stop(aux, lanes) -> array of reason strings ('' = go on)
    breaks: Optional[np.ndarray] = None  # sorted s values where rhs has kinks; steps end on them


def _hermite(theta, h, y0, f0, y1, f1):
    t = theta[:, None]
    h = h[:, None]
    h00 = 2 * t**3 - 3 * t**2 + 1
    h10 = t**3 - 2 * t**2 + t
    h01 = -2 * t**3 + 3 * t**2
    h11 = t**3 - t**2
    return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


def _next_break(breaks: np.ndarray, s: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """First breakpoint strictly ahead of each s in its direction (+-inf if none)."""
    up = np.searchsorted(breaks, s, side="right")
    down = np.searchsorted(breaks, s, side="left") - 1
    ahead = np.where(up < breaks.size, breaks[np.minimum(up, breaks.size - 1)], np.inf)
    behind = np.where(down >= 0, breaks[np.maximum(down, 0)], -np.inf)
    return np.where(direction > 0, ahead, behind)


def _integrate(prob: _Problem, s0, y0, s_end, rtol=RTOL, atol=ATOL, max_iter=20000,
               h_min_rel=1e-14):
    """Integrate all lanes; returns per-lane (s, y, event_indices, reason)."""
    y = np.array(y0, dtype=float, copy=True)
    L, d = y.shape
    s = np.array(s0, dtype=float, copy=True)
    s_end = np.broadcast_to(np.asarray(s_end, dtype=float), (L,)).copy()
    direction = np.where(s_end >= s, 1.0, -1.0)
    span = np.abs(s_end - s)

    f, aux = prob.rhs(s, y)
    reason = np.array([""] * L, dtype=object)
    if prob.stop is not None:
        r0 = prob.stop(aux, np.arange(L))
        reason[:] = r0
    active = reason == ""

    sc = atol + rtol * np.abs(y)
    d0 = np.sqrt(np.mean((y / sc) ** 2, axis=1))
    d1 = np.sqrt(np.mean((f / sc) ** 2, axis=1))
    h = np.where((d0 > 1e-5) & (d1 > 1e-5), 0.01 * d0 / np.maximum(d1, 1e-300), 1e-6)
    h = np.minimum(np.maximum(h, 1e-10), np.where(span > 0, span, 1.0))

    lane_ids = [np.arange(L)]
    hist_s = [s.copy()]
    hist_y = [y.copy()]
    hist_ev = [np.zeros(L, bool)]

    for _ in range(max_iter):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        remaining = np.abs(s_end[idx] - s[idx])
        land = s_end[idx].copy()
        if prob.breaks is not None:
            nb = _next_break(prob.breaks, s[idx], direction[idx])
            closer = np.abs(nb - s[idx]) < remaining
            remaining = np.where(closer, np.abs(nb - s[idx]), remaining)
            land = np.where(closer, nb, land)
        clamped = h[idx] >= remaining
        hh = np.where(clamped, remaining, h[idx])
        hs = direction[idx] * hh
        si, yi = s[idx], y[idx]
        K = [f[idx]]
        for i in range(1, 7):
            yst = yi + hs[:, None] * sum(a * k for a, k in zip(_A[i], K) if a != 0.0)
            kf, ka = prob.rhs(si + _C[i] * hs, yst)
            K.append(kf)
        y5 = yst  # stage 7 argument equals the 5th-order solution (FSAL)
        f5, aux5 = kf, ka
        err_vec = hs[:, None] * sum(e * k for e, k in zip(_E, K) if e != 0.0)
        scale = atol + rtol * np.maximum(np.abs(yi), np.abs(y5))
        err = np.sqrt(np.mean((err_vec / scale) ** 2, axis=1))
        ok = err <= 1.0
        with np.errstate(divide="ignore"):
            fac = np.clip(0.9 * err ** -0.2, 0.2, 5.0)
        fac = np.where(ok, fac, np.minimum(fac, 0.9))
        h_prop = h[idx]
        h[idx] = np.where(clamped & ok, np.maximum(hh * fac, h_prop), hh * fac)

        acc = idx[ok]
        if acc.size:
            s_old, y_old, f_old = s[acc], y[acc], f[acc]
            s_new = np.where(clamped[ok], land[ok], s_old + hs[ok])
            y_new, f_new, aux_new = y5[ok], f5[ok], aux5[ok]
            hacc = hs[ok]
            new_reason = np.array([""] * acc.size, dtype=object)

            # Boundary crossings: truncate the step at the earliest crossing point.
            theta_cut = np.full(acc.size, np.inf)
            hit = [None] * acc.size  # (component, bound) that ends the lane
            for comp, lo, hi, r_lo, r_hi in prob.bounds:
                for bound, rname, below, out in ((lo, r_lo, True, y_new[:, comp] < lo),
                                                 (hi, r_hi, False, y_new[:, comp] > hi)):
                    sel = np.nonzero(out)[0]
                    if sel.size == 0:
                        continue
                    a_, b_ = np.zeros(sel.size), np.ones(sel.size)
                    for _b in range(60):
                        m = 0.5 * (a_ + b_)
                        ym = _hermite(m, hacc[sel], y_old[sel], f_old[sel], y_new[sel], f_new[sel])
                        past = (ym[:, comp] < bound) if below else (ym[:, comp] > bound)
                        b_ = np.where(past, m, b_)
                        a_ = np.where(past, a_, m)
                    earlier = b_ < theta_cut[sel]
                    for n in sel[earlier]:
                        hit[n] = (comp, bound)
                    theta_cut[sel[earlier]] = b_[earlier]
                    new_reason[sel[earlier]] = rname
            cut = np.nonzero(np.isfinite(theta_cut))[0]
            if cut.size:
                ym = _hermite(theta_cut[cut], hacc[cut], y_old[cut], f_old[cut], y_new[cut], f_new[cut])
                for row, n in enumerate(cut):
                    comp, bound = hit[n]
                    ym[row, comp] = bound
                s_new[cut] = s_old[cut] + theta_cut[cut] * hacc[cut]
                y_new[cut] = ym
                fm, am = prob.rhs(s_new[cut], ym)
                f_new[cut], aux_new[cut] = fm, am

            # Sign changes of the event component: locate by bisection and insert a point.
            if prob.event_component is not None:
                c = prob.event_component
                ev = np.nonzero(np.sign(f_old[:, c]) * np.sign(f_new[:, c]) < 0)[0]
                if ev.size:
                    a_, b_ = np.zeros(ev.size), np.ones(ev.size)
                    sgn0 = np.sign(f_old[ev, c])
                    hev = (s_new[ev] - s_old[ev])
                    for _b in range(50):
                        m = 0.5 * (a_ + b_)
                        ym = _hermite(m, hev, y_old[ev], f_old[ev], y_new[ev], f_new[ev])
                        fm, _ = prob.rhs(s_old[ev] + m * hev, ym)
                        same = np.sign(fm[:, c]) == sgn0
                        a_ = np.where(same, m, a_)
                        b_ = np.where(same, b_, m)
                    m = 0.5 * (a_ + b_)
                    ok_ev = (m > 0) & (m < 1)
                    ev, m, hev = ev[ok_ev], m[ok_ev], hev[ok_ev]
                    if ev.size:
                        ym = _hermite(m, hev, y_old[ev], f_old[ev], y_new[ev], f_new[ev])
                        lane_ids.append(acc[ev])
                        hist_s.append(s_old[ev] + m * hev)
                        hist_y.append(ym)
                        hist_ev.append(np.ones(ev.size, bool))

            if prob.stop is not None:
                r = prob.stop(aux_new, acc)
                fresh = (new_reason == "") & (r != "")
                new_reason[fresh] = r[fresh]

            s[acc], y[acc], f[acc] = s_new, y_new, f_new
            lane_ids.append(acc)
            hist_s.append(s_new.copy())
            hist_y.append(y_new.copy())
            hist_ev.append(np.zeros(acc.size, bool))

            done = (np.abs(s_end[acc] - s_new) <= 1e-14 * np.maximum(1.0, np.abs(s_new))) & (new_reason == "")
            new_reason[done] = "done"
            reason[acc] = np.where(new_reason != "", new_reason, reason[acc])
            active[acc] = new_reason == ""

        collapsed = idx[h[idx] < h_min_rel * np.maximum(1.0, np.abs(s[idx]))]
        collapsed = collapsed[active[collapsed]]
        if collapsed.size:
            reason[collapsed] = "step_collapse"
            active[collapsed] = False
    reason[active] = "max_steps"

    lanes = np.concatenate(lane_ids)
    S = np.concatenate(hist_s)
    Y = np.concatenate(hist_y)
    EV = np.concatenate(hist_ev)
    order = np.lexsort((direction[lanes] * S, lanes))
    lanes, S, Y, EV = lanes[order], S[order], Y[order], EV[order]
    bounds = np.searchsorted(lanes, np.arange(L + 1))
    out = []
    for n in range(L):
        sl = slice(bounds[n], bounds[n + 1])
        ev_idx = [int(i) for i in np.nonzero(EV[sl])[0]]
        out.append((S[sl], Y[sl], ev_idx, reason[n]))
    return out


def _run_chunks(fn, n_lanes: int, threads: int):
    if threads <= 1 or n_lanes < 2 * threads:
        return fn(np.arange(n_lanes))
    chunks = np.array_split(np.arange(n_lanes), threads)
    with ThreadPoolExecutor(max_workers=threads) as ex:
        parts = list(ex.map(fn, chunks))
    return [item for part in parts for item in part]


# --- time parametrisation --------------------------------------------------------------

def _time_problem(interp: FieldInterpolator, sign0: np.ndarray):
    eps = interp.eps_turn

    def rhs(t, y):
        ch = interp(t, y[:, 0])
        rho, j = ch[:, 0], ch[:, 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(np.abs(rho) > eps, j / rho, 0.0)
        return v[:, None], rho

    def stop(rho, lanes):
        bad = (np.abs(rho) < eps) | (np.sign(rho) != sign0[lanes])
        return np.where(bad, "turning_point", "")

    g = interp.grid
    # Time interpolation is linear between snapshots, so steps are made to end on them.
    return _Problem(rhs, [(0, g.x_min, g.x_max, "left_grid", "left_grid")], None, stop, interp.times)


def _time_lines(interp, x0, t0, t1, rtol, atol, threads=1):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    rho0 = interp(np.full(x0.size, t0), x0)[:, 0]
    sign0 = np.where(rho0 >= 0, 1.0, -1.0)

    def run(lanes):
        prob = _time_problem(interp, sign0[lanes])
        # stop() receives global lane numbers relative to this chunk
        res = _integrate(prob, np.full(lanes.size, t0), x0[lanes, None], t1, rtol, atol)
        lines = []
        for (S, Y, _, reason), n in zip(res, lanes):
            if S[0] > S[-1]:
                S, Y = S[::-1], Y[::-1]
            line = WorldLine(S.copy(), Y[:, 0].copy(), S.copy(), end_reason=reason,
                             weight=float(sign0[n]), seed=(t0, float(x0[n])))
            lines.append(proper_time(line))
        return lines

    return _run_chunks(run, x0.size, threads)


def integrate_time_param(interp: FieldInterpolator, x0: float, t_range, rtol: float = RTOL,
                         atol: float = ATOL, on_turning: str = "raise",
                         lambda_max: float = 1e7) -> WorldLine:
    """Integrate dx/dt = v(x, t) from (t_range[0], x0) to t_range[1].

    With the symmetric model, reaching |rho| < eps_turn raises
    TurningPointEncountered carrying the partial line, unless
    ``on_turning='lambda'``, in which case the curve is continued with the
    lambda parametrisation from the last point.
    """
    t0, t1 = map(float, t_range)
    line = _time_lines(interp, [x0], t0, t1, rtol, atol)[0]
    if line.end_reason in ("done",):
        return line
    if line.end_reason in ("turning_point", "step_collapse") and on_turning == "lambda":
        # Restart from the last point strictly before the turning point.
        seed = (float(line.t[-1]) if t1 > t0 else float(line.t[0]),
                float(line.x[-1]) if t1 > t0 else float(line.x[0]))
        sign = 1.0 if t1 > t0 else -1.0
        cont = integrate_lambda_param(interp, seed, (0.0, sign * lambda_max), rtol, atol, on_exit="stop")
        if t1 > t0:
            return _join(line, cont)
        return _join(_reverse(cont), line)
    raise ERRORS.get(line.end_reason, TrajectoryError)(
        f"time-parametrised integration stopped: {line.end_reason} near t = {line.t[-1]:.6g}", line
    )


# --- lambda parametrisation ------------------------------------------------------------

def _lambda_problem(interp: FieldInterpolator, window):
    eps = interp.eps_turn
    g = interp.grid
    lo, hi = window

    def rhs(lam, y):
        ch = interp(y[:, 0], y[:, 1])
        return ch, ch

    def stop(ch, lanes):
        return np.where(np.abs(ch[:, 0]) + np.abs(ch[:, 1]) < eps, "stagnation", "")

    bounds = [(0, lo, hi, "left_time_window", "left_time_window"),
              (1, g.x_min, g.x_max, "left_grid", "left_grid")]
    return _Problem(rhs, bounds, 0, stop)


def _lambda_lines(interp, seeds, lam_end, rtol, atol, window=None, threads=1):
    seeds = np.asarray(seeds, dtype=float).reshape(-1, 2)
    window = window or (interp.t_min, interp.t_max)
    ch0 = interp(seeds[:, 0], seeds[:, 1])
    sign0 = np.where(ch0[:, 0] >= 0, 1.0, -1.0)

    def run(lanes):
        prob = _lambda_problem(interp, window)
        res = _integrate(prob, np.zeros(lanes.size), seeds[lanes], lam_end, rtol, atol)
        lines = []
        for (S, Y, ev, reason), n in zip(res, lanes):
            line = WorldLine(Y[:, 0].copy(), Y[:, 1].copy(), S.copy(), turning_points=[int(i) for i in ev],
                             end_reason=reason, weight=float(sign0[n]),
                             seed=(float(seeds[n, 0]), float(seeds[n, 1])))
            if S.size > 1 and S[0] > S[-1]:
                line = _reverse(line)
            lines.append(proper_time(line))
        return lines

    return _run_chunks(run, seeds.shape[0], threads)


def _reverse(line: WorldLine) -> WorldLine:
    n = line.t.size
    return WorldLine(line.t[::-1].copy(), line.x[::-1].copy(), -line.lam[::-1].copy(),
                     None, sorted(n - 1 - i for i in line.turning_points), None,
                     line.end_reason, line.weight, line.seed)


def _join(first: WorldLine, second: WorldLine) -> WorldLine:
    """Concatenate two lines where ``second`` starts at the end point of ``first``."""
    lam2 = second.lam - second.lam[0] + first.lam[-1]
    keep = slice(1, None)
    t = np.concatenate([first.t, second.t[keep]])
    x = np.concatenate([first.x, second.x[keep]])
    lam = np.concatenate([first.lam, lam2[keep]])
    tps = list(first.turning_points) + [i - 1 + first.t.size for i in second.turning_points if i > 0]
    return proper_time(WorldLine(t, x, lam, None, tps, None, second.end_reason, first.weight, first.seed))


def integrate_lambda_param(interp: FieldInterpolator, seed, lambda_span, rtol: float = RTOL,
                           atol: float = ATOL, on_exit: str = "raise") -> WorldLine:
    """Integral curve of (rho, j) in the (t, x) plane through ``seed = (t, x)``.

    ``lambda_span = (0, L)``; a negative L follows the curve against the current.
    Turning points (sign changes of dt/dlam = rho) are located by bisection and
    inserted into the line.  With ``on_exit='stop'`` leaving the time window or
    the grid ends the line normally; otherwise the corresponding error is raised
    with the line attached.  Stagnation always raises.
    """
    t_s, x_s = map(float, seed)
    ch = interp([t_s], [x_s])[0]
    if abs(ch[0]) + abs(ch[1]) < interp.eps_turn:
        raise StagnationPoint(f"rho and j both vanish at seed {seed}")
    lam0, lam1 = map(float, lambda_span)
    line = _lambda_lines(interp, [(t_s, x_s)], lam1 - lam0, rtol, atol)[0]
    line.lam = line.lam + lam0
    if line.end_reason == "done":
        return line
    if on_exit == "stop" and line.end_reason in ("left_time_window", "left_grid"):
        return line
    raise ERRORS.get(line.end_reason, TrajectoryError)(
        f"lambda integration stopped: {line.end_reason}", line
    )


def trace_world_line(interp: FieldInterpolator, seed, lambda_max: float = 1e7,
                     rtol: float = RTOL, atol: float = ATOL) -> WorldLine:
    """Whole world line through ``seed``, followed both ways until it leaves the window."""
    back = integrate_lambda_param(interp, seed, (0.0, -lambda_max), rtol, atol, on_exit="stop")
    fwd = integrate_lambda_param(interp, seed, (0.0, lambda_max), rtol, atol, on_exit="stop")
    line = _join(back, fwd)
    line.end_reason = fwd.end_reason
    return line


# --- Dirac -----------------------------------------------------------------------------

def _dirac_problem(interp: FieldInterpolator, window, tau_end):
    eps = interp.eps_turn
    g = interp.grid
    lo, hi = window

    def rhs(lam, y):
        ch = interp(y[:, 0], y[:, 1])
        j0, j1 = ch[:, 0], ch[:, 1]
        q = (j0 - j1) * (j0 + j1)
        rho0 = np.sqrt(np.abs(q))
        return np.column_stack([j0, j1, rho0]), np.column_stack([j0, j1, q])

    def stop(aux, lanes):
        return np.where(np.abs(aux[:, 0]) + np.abs(aux[:, 1]) < eps, "stagnation", "")

    bounds = [(0, lo, hi, "left_time_window", "left_time_window"),
              (1, g.x_min, g.x_max, "left_grid", "left_grid"),
              (2, -np.inf, tau_end, "done", "done")]
    return _Problem(rhs, bounds, 0, stop)


def dirac_trajectory(interp: FieldInterpolator, seed, tau_span, rtol: float = RTOL,
                     atol: float = ATOL, on_exit: str = "raise", lambda_max: float = 1e7) -> WorldLine:
    """World line with dx^nu/dtau = u^nu = j^nu / rho_0 from ``seed = (t, x)``.

    The curve is followed through the current's integral-curve parametrisation
    with tau accumulated as d tau = rho_0 d lam, so null points (rho_0 = 0, where
    u^nu diverges) are crossed without special handling.
    """
    if interp.model != "dirac":
        raise StructuralError("dirac_trajectory needs an interpolator built from Dirac records")
    t_s, x_s = map(float, seed)
    tau0, tau1 = map(float, tau_span)
    ch = interp([t_s], [x_s])[0]
    rho0 = math.sqrt(abs((ch[0] - ch[1]) * (ch[0] + ch[1])))
    if rho0 < interp.eps_turn:
        raise RestDensityVanishes(f"rest density {rho0:.3e} at seed {seed}")
    prob = _dirac_problem(interp, (interp.t_min, interp.t_max), tau1 - tau0)
    S, Y, ev, reason = _integrate(prob, np.zeros(1), np.array([[t_s, x_s, 0.0]]), lambda_max, rtol, atol)[0]
    fvals, aux = prob.rhs(S, Y)
    q = aux[:, 2]
    seg_q = 0.5 * (q[1:] + q[:-1]) if q.size > 1 else q
    seg = np.where(seg_q > 0, "timelike", np.where(seg_q < 0, "spacelike", "null"))
    char = np.concatenate([seg[:1], seg]) if seg.size else np.array(["timelike"])
    line = WorldLine(Y[:, 0].copy(), Y[:, 1].copy(), S.copy(), Y[:, 2] + tau0, [int(i) for i in ev], char,
                     reason, 1.0, (t_s, x_s))
    if reason == "done" or (on_exit == "stop" and reason in ("left_time_window", "left_grid")):
        return line
    raise ERRORS.get(reason, TrajectoryError)(f"dirac integration stopped: {reason}", line)


# --- ensembles -------------------------------------------------------------------------

@dataclass
class EnsembleResult:
    lines: list  # WorldLine or None per seed
    errors: dict  # seed index -> (error class name, message)
    mode: str

    def manifest(self) -> dict:
        rows = []
        for n, line in enumerate(self.lines):
            if n in self.errors:
                rows.append({"seed": n, "status": "error", "error": self.errors[n][0],
                             "message": self.errors[n][1]})
            else:
                rows.append({"seed": n, "status": "ok", "end_reason": line.end_reason,
                             "t_end": float(line.t[-1]), "x_end": float(line.x[-1]),
                             "turning_points": len(line.turning_points), "weight": line.weight})
        return {"mode": self.mode, "n_seeds": len(self.lines), "n_errors": len(self.errors), "lines": rows}

    def write(self, directory, write_lines: bool = True) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        if write_lines:
            for n, line in enumerate(self.lines):
                if line is not None:
                    line.to_csv(directory / f"line_{n:05d}.csv")
        (directory / "batch_manifest.json").write_text(json.dumps(self.manifest(), indent=2) + "\n")
        return directory


def ensemble(interp: FieldInterpolator, seeds: Sequence, mode: str = "time", t_range=None,
             lambda_max: float = 1e7, rtol: float = RTOL, atol: float = ATOL,
             threads: int = 1, ok_reasons=("done",)) -> EnsembleResult:
    """Integrate many seeds independently; per-line failures are collected.

    ``mode='time'``: seeds are positions at ``t_range[0]``, integrated to
    ``t_range[1]``.  ``mode='lambda'``: seeds are (t, x) points followed forward
    along the current until they leave the window (a normal end).
    ``mode='world'``: as lambda, followed both ways, giving whole world lines.
    """
    if mode == "time":
        t0, t1 = t_range if t_range is not None else (interp.t_min, interp.t_max)
        lines = _time_lines(interp, np.asarray(seeds, dtype=float), float(t0), float(t1), rtol, atol, threads)
    elif mode == "lambda":
        lines = _lambda_lines(interp, seeds, lambda_max, rtol, atol, threads=threads)
        ok_reasons = tuple(ok_reasons) + ("left_time_window",)
    elif mode == "world":
        back = _lambda_lines(interp, seeds, -lambda_max, rtol, atol, threads=threads)
        fwd = _lambda_lines(interp, seeds, lambda_max, rtol, atol, threads=threads)
        lines = []
        for b, f in zip(back, fwd):
            line = _join(b, f)
            # Both ends must be normal exits for a whole world line.
            bad = [r for r in (b.end_reason, f.end_reason) if r not in ("left_time_window", "done")]
            line.end_reason = bad[0] if bad else "left_time_window"
            lines.append(line)
        ok_reasons = tuple(ok_reasons) + ("left_time_window",)
    else:
        raise StructuralError(f"mode must be 'time', 'lambda' or 'world', got {mode!r}")
    errors = {}
    out = []
    for n, line in enumerate(lines):
        if line.end_reason not in ok_reasons:
            cls = ERRORS.get(line.end_reason, TrajectoryError)
            errors[n] = (cls.__name__, f"{line.end_reason} at t = {line.t[-1]:.6g}, x = {line.x[-1]:.6g}")
        out.append(line)
    return EnsembleResult(out, errors, mode)
