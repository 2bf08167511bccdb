"""Negative-density weight and world-line folding against the admixture of the first excited state.

The initial state is cos(theta) phi_0 + sin(theta) phi_1 in a unit harmonic well and the
final state is phi_0. For each theta the script reports the negative part of the
two-wavefunction density at t1 and traces the world line through a seed inside the
negative region, counting its turning points.

Usage: python scripts/negative_density_scan.py [--angles N] [--t2 T]
"""

import argparse
import math
import warnings
from dataclasses import dataclass

import numpy as np

from csbohm.errors import TrajectoryError
from csbohm.fields import Grid1D, harmonic_eigenstate, superposition
from csbohm.guidance import symmetric_fields
from csbohm.propagators import Potential, evolve_pair
from csbohm.trajectories import FieldInterpolator, trace_world_line


@dataclass
class Config:
    n_points: int = 256
    length: float = 24.0
    t2: float = 3.0
    dt: float = 0.005
    stride: int = 2
    angles: int = 7
    seed_x: float = -0.9


def main(cfg: Config) -> None:
    g = Grid1D.centered(cfg.n_points, cfg.length)
    V = Potential("harmonic", {"omega": 1.0})
    phi0, phi1 = harmonic_eigenstate(g, 0), harmonic_eigenstate(g, 1)
    print(f"{'theta':>7} {'neg weight':>11} {'turning pts':>11} {'end':>16}")
    for theta in np.linspace(0.0, 0.5 * math.pi, cfg.angles + 2)[1:-1]:
        psi_i = superposition([phi0, phi1], [math.cos(theta), math.sin(theta)]).normalize()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ri, rf = evolve_pair(psi_i, harmonic_eigenstate(g, 0, time=cfg.t2), V, 0.0, cfg.t2, cfg.dt,
                                 cfg.stride)
        rho = symmetric_fields(ri[0], rf[0]).density
        neg = float(-np.sum(np.minimum(rho, 0.0)) * g.spacing)
        try:
            line = trace_world_line(FieldInterpolator.from_records(ri, rf), (0.0, cfg.seed_x))
            n_tp, end = len(line.turning_points), line.end_reason
        except TrajectoryError as exc:
            n_tp, end = -1, type(exc).__name__
        print(f"{theta:7.3f} {neg:11.4e} {n_tp:11d} {end:>16}")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--angles", type=int, default=Config.angles)
    p.add_argument("--t2", type=float, default=Config.t2)
    main(Config(**vars(p.parse_args())))
