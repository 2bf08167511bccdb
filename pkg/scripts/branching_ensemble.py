"""Branch selection of the two-wavefunction ensemble across RNG seeds.

Reruns the measurement-branching scenario for several seeds and tabulates how many world
lines end in the branch overlapped by the final state, alongside the standard-model
control's split between the two branches.

Usage: python scripts/branching_ensemble.py [--seeds N] [--ensemble N]
"""

import argparse
import warnings
from dataclasses import dataclass
from typing import Optional

from csbohm.scenarios import ScenarioConfig, default_config, run_scenario


@dataclass
class Config:
    seeds: int = 3
    ensemble: Optional[int] = None  # None keeps the bundled size
    threads: int = 1


def main(cfg: Config) -> None:
    print(f"{'seed':>4} {'lines':>6} {'in branch':>10} {'standard right':>15} {'contract':>9}")
    for seed in range(cfg.seeds):
        doc = default_config("measurement-branching")
        doc["seed"] = seed
        if cfg.ensemble is not None:
            doc["ensemble"] = cfg.ensemble
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = run_scenario(ScenarioConfig.from_dict(doc), threads=cfg.threads)
        right = rep.metrics["symmetric_right"]
        print(f"{seed:4d} {right['n_at_T']:6d} {right['fraction_in_branch']:10.3f} "
              f"{rep.metrics['standard_right_fraction']:15.3f} {'pass' if rep.passed else 'fail':>9}")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    for f in ("seeds", "ensemble", "threads"):
        p.add_argument(f"--{f}", type=int, default=getattr(Config, f))
    main(Config(**vars(p.parse_args())))
