"""Continuity residual of the two-wavefunction density and current against the step size.

Random initial/final Gaussian pairs in a weak harmonic well are evolved with snapshots at
every step; the RMS residual of the centred continuity stencil should fall fourfold per
halving of dt.

Usage: python scripts/continuity_convergence.py [--pairs N] [--levels N] [--seed N]
"""

import argparse
from dataclasses import dataclass

import numpy as np

from csbohm.verify import DEFAULTS, continuity_ratio


@dataclass
class Config:
    pairs: int = 5
    levels: int = 4
    dt: float = 0.04
    seed: int = 0


def main(cfg: Config) -> None:
    base = dict(DEFAULTS["continuity"])
    span = base["dt"] * base["steps"]
    print(f"{'pair':>4} {'dt':>9} {'rms(dt)':>12} {'rms(dt/2)':>12} {'ratio':>7}")
    for pair in range(cfg.pairs):
        for level in range(cfg.levels):
            dt = cfg.dt / 2**level
            P = {**base, "dt": dt, "steps": int(round(span / dt))}
            # Reseed per level so every row of a pair uses the same random states.
            coarse, fine = continuity_ratio(P, np.random.default_rng([cfg.seed, pair]))
            print(f"{pair:4d} {dt:9.5f} {coarse:12.4e} {fine:12.4e} {coarse / fine:7.3f}")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    for f in ("pairs", "levels", "seed"):
        p.add_argument(f"--{f}", type=int, default=getattr(Config, f))
    p.add_argument("--dt", type=float, default=Config.dt)
    main(Config(**vars(p.parse_args())))
