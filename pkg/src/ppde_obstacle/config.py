"""Experiment configuration: a plain JSON mapping with explicit defaults for
every solver knob, hashed for artifact provenance."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .errors import DomainError
from .frozen import CellOptions
from .model import ProblemData, build_problem

DEFAULT_PROBLEM = {
    "label": "quadratic-inactive",
    "T": 1.0,
    "sigma": [1.0],
    "driver": {"name": "zero"},
    "barrier": {"name": "const", "c": -10.0},
    "terminal": {"name": "power", "power": 2},
    "M0": 16.0,
    "L0": 1.0,
    "rho0": {"c": 2.0, "beta": 1.0},
}

DEFAULT_SOLVER = {
    "n_steps": 50,
    "n_paths": 100_000,
    "basis": "quad-extrema",
    "method": "auto",
    "m_schedule": [1, 2, 4, 8, 16, 32, 64, 128, 256],
    "alphas": [0.4, 0.2, 0.1],
    "depth_cap": 2,
    "L": 1.0,
    "lattice_steps": 4,
    "lattice_dx": 0.6,
    "delta": 0.5,
    "t1": 0.5,
    "steps_sweep": [10, 20, 40, 80],
    "paths_sweep": [10_000, 40_000],
    "x_list": [0.01, 0.02, 0.04, 0.08],
    "delta_list": [0.02, 0.05, 0.1, 0.2],
    "diag_paths": 2000,
    "diag_steps": 1500,
    "cell": {},
}


@dataclass(frozen=True)
class ExperimentConfig:
    problem: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    seed: int = 0
    outdir: str = "out"

    def merged(self) -> dict:
        prob = {**DEFAULT_PROBLEM, **self.problem}
        solv = {**DEFAULT_SOLVER, **self.solver}
        return {"problem": prob, "solver": solv, "seed": self.seed, "outdir": self.outdir}

    def data(self) -> ProblemData:
        return build_problem(self.merged()["problem"])

    def cell_options(self, seed_shift: int = 0) -> CellOptions:
        cell = dict(self.merged()["solver"].get("cell", {}))
        cell.setdefault("seed", self.seed + seed_shift)
        return CellOptions(**cell)

    def canonical_json(self) -> str:
        body = self.merged()
        body.pop("outdir")
        return json.dumps(body, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    @staticmethod
    def from_file(path, seed: int | None = None, outdir: str | None = None) -> "ExperimentConfig":
        with open(path) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise DomainError("config must be a JSON object")
        return ExperimentConfig(
            problem=raw.get("problem", {}),
            solver=raw.get("solver", {}),
            seed=int(raw.get("seed", 0) if seed is None else seed),
            outdir=str(raw.get("outdir", "out") if outdir is None else outdir),
        )
