"""Run every bundled scenario and print one row per contract assertion.

Usage: python scripts/run_all_scenarios.py [--out DIR] [--seed N] [--threads N]
"""

import argparse
import time
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from csbohm.scenarios import SCENARIOS, ScenarioConfig, default_config, run_scenario


@dataclass
class Config:
    out: Path = Path("runs/all-scenarios")
    seed: Optional[int] = None
    threads: int = 1


def main(cfg: Config) -> int:
    failures = 0
    for name in SCENARIOS:
        doc = default_config(name)
        if cfg.seed is not None:
            doc["seed"] = cfg.seed
        t0 = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = run_scenario(ScenarioConfig.from_dict(doc), cfg.out / name, threads=cfg.threads)
        print(f"{name}  ({time.perf_counter() - t0:.1f} s)")
        for key in rep.contract:
            a = rep.assertions[key]
            failures += not a["passed"]
            print(f"  {'PASS' if a['passed'] else 'FAIL'}  {key:38s} value={a['value']!s:.40s} threshold={a['threshold']}")
    print(f"reports written under {cfg.out}")
    return 1 if failures else 0


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Config.out)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    raise SystemExit(main(Config(**vars(p.parse_args()))))
