"""Run plumbing: configs for the direct (non-scenario) commands, config loading, run manifests."""

from __future__ import annotations

import copy
import datetime as _dt
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import ConfigError
from .fields import Grid1D
from .propagators import Potential
from .scenarios import (
    STATE_KINDS,
    apply_overrides,
    config_hash,
    parse_config_text,
    validate_grid,
    validate_window,
)

TRAJECTORY_MODES = ("time", "lambda", "world")


def load_config(path, overrides=None) -> dict:
    """Read a JSON config file and apply dotted ``key=value`` overrides."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return apply_overrides(parse_config_text(text, str(path)), overrides)


@dataclass
class RunConfig:
    """Config for ``evolve`` and ``trajectories``: a state pair on a grid plus integration options.

    ``final`` may be empty, in which case only the forward record is produced and
    trajectories follow the standard model.
    """

    grid: dict
    window: dict
    initial: dict
    final: dict = field(default_factory=dict)
    potential: dict = field(default_factory=lambda: {"kind": "free"})
    trajectories: dict = field(default_factory=dict)
    seed: int = 0

    KEYS = ("grid", "window", "initial", "final", "potential", "trajectories", "seed")

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(doc) - set(cls.KEYS))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        for key in ("grid", "window", "initial"):
            if key not in doc:
                raise ConfigError(f"missing required key {key!r}")
        cfg = cls(**copy.deepcopy(doc))
        cfg.validate()
        return cfg

    def validate(self):
        validate_grid(self.grid)
        validate_window(self.window)
        for name in ("initial", "final"):
            spec = getattr(self, name)
            if not isinstance(spec, dict):
                raise ConfigError(f"{name} must be a JSON object")
            if (spec or name == "initial") and spec.get("kind") not in STATE_KINDS:
                raise ConfigError(f"{name}.kind must be one of {sorted(STATE_KINDS)}")
        try:
            Potential.from_dict(self.potential)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad potential spec: {exc}") from None
        tr = self.trajectories
        if not isinstance(tr, dict):
            raise ConfigError("trajectories must be a JSON object")
        if tr.get("mode", "time") not in TRAJECTORY_MODES:
            raise ConfigError(f"trajectories.mode must be one of {TRAJECTORY_MODES}")
        seeds = tr.get("seeds")
        if seeds is not None and not isinstance(seeds, (list, dict)):
            raise ConfigError("trajectories.seeds must be a list of positions or {start, stop, count}")
        if isinstance(seeds, dict):
            try:
                count = int(seeds["count"])
                float(seeds["start"]), float(seeds["stop"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"trajectories.seeds range needs start, stop, count ({exc})") from None
            if count < 1:
                raise ConfigError("trajectories.seeds.count must be positive")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed!r}")

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in self.KEYS}

    def make_grid(self) -> Grid1D:
        return Grid1D.centered(int(self.grid["n_points"]), float(self.grid["length"]))

    def seed_positions(self) -> list:
        seeds = self.trajectories.get("seeds", {"start": -1.0, "stop": 1.0, "count": 11})
        if isinstance(seeds, dict):
            return np.linspace(float(seeds["start"]), float(seeds["stop"]), int(seeds["count"])).tolist()
        return [float(s) for s in seeds]


@dataclass
class RunManifest:
    """Where a run came from and what it wrote.  The only file that carries wall-clock data."""

    run_id: str
    command: str
    config_hash: str
    version: str = __version__
    started: str = ""
    finished: str = ""
    wall_seconds: float = 0.0
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    passed: Optional[bool] = None
    summary: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    _t0: float = field(default=0.0, repr=False)

    @classmethod
    def start(cls, command: str, config: Optional[dict], inputs=()) -> "RunManifest":
        h = config_hash(config) if config is not None else ""
        now = _dt.datetime.now(_dt.timezone.utc)
        run_id = f"{command}-{h[:12] or 'noconfig'}-{now.strftime('%Y%m%dT%H%M%S%fZ')}"
        return cls(run_id, command, h, started=now.isoformat(), inputs=[str(p) for p in inputs],
                   _t0=time.perf_counter())

    def finish(self, out_dir: Optional[Path], passed: Optional[bool] = None, summary=None) -> Optional[Path]:
        self.finished = _dt.datetime.now(_dt.timezone.utc).isoformat()
        self.wall_seconds = time.perf_counter() - self._t0
        self.passed = passed
        self.summary = summary or {}
        if out_dir is None:
            return None
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        self.outputs = sorted(str(p.relative_to(out_dir)) for p in out_dir.rglob("*")
                              if p.is_file() and p.name != "manifest.json")
        path = out_dir / "manifest.json"
        d = asdict(self)
        d.pop("_t0")
        path.write_text(json.dumps(d, indent=2, sort_keys=True, default=str) + "\n")
        return path
