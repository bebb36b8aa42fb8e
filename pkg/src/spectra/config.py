"""Run configuration: one JSON document, every default materialized."""

from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import dataclass, field

from .errors import ConfigError
from .lattice import AsymptoticParams, BoxGeometry
from .potential import MatrixFourierPotential, generate_random_potential

MODES = ("classify", "solve1d", "solvefull", "predict", "compare", "measure")

DEFAULTS = {
    "mode": "compare",
    "output": "out",
    "geometry": {"a": ["pi", "pi"]},
    "potential": {"generate": {"seed": 7, "m": 2, "l": 17, "amplitude": 0.25, "support_radius": 3.0}},
    "params": {
        "rho_grid": [10.0, 20.0, 40.0],
        "alpha": 0.04,
        "c1": 0.5,
        "c2": 2.0,
        "k_max": 4,
        "order": 3,
        "n_trunc_1d": 256,
        "max_dim": 4000,
        "cutoff": None,
        "tol": 1e-12,
        "containment_margin": 2.0,
        "denominator_factor": 0.5,
        "gap_factor": 0.5,
        "gap_floor": None,
        "bound_constant": 1.0,
        "budget_constant": 1.0,
        "residual_constant": 1.0,
    },
    "directions": [0],
    "measure": {"samples": 100000, "seed": 7, "axis": 0},
    "fail_on_guard": True,
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and key != "potential":
            if not isinstance(val, dict):
                raise ConfigError(f"config key {path + key!r} must be an object")
            out[key] = _merge(base[key], val, path + key + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def parse_length(value) -> float:
    """A positive edge length: a number, ``"pi"`` or ``"<number>pi"``."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, str):
        text = value.strip().lower().replace("*", "")
        if text.endswith("pi"):
            head = text[:-2].strip()
            try:
                return (float(head) if head else 1.0) * math.pi
            except ValueError:
                pass
    raise ConfigError(f"cannot read edge length {value!r}")


@dataclass(frozen=True)
class RunConfig:
    doc: dict = field(repr=False)
    base_dir: str = "."

    @classmethod
    def from_dict(cls, doc: dict | None = None, base_dir: str = ".") -> "RunConfig":
        cfg = cls(_merge(DEFAULTS, doc or {}), base_dir)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(doc, os.path.dirname(os.path.abspath(path)))

    def with_overrides(self, **changes) -> "RunConfig":
        doc = copy.deepcopy(self.doc)
        for key, val in changes.items():
            if val is None:
                continue
            if key == "seed":
                gen = doc["potential"].get("generate")
                if gen is not None:
                    gen["seed"] = int(val)
                doc["measure"]["seed"] = int(val)
            elif key == "rho_grid":
                doc["params"]["rho_grid"] = [float(r) for r in val]
            elif key == "order":
                doc["params"]["order"] = int(val)
            else:
                doc[key] = val
        cfg = RunConfig(doc, self.base_dir)
        cfg.validate()
        return cfg

    # -- accessors ---------------------------------------------------------

    @property
    def mode(self) -> str:
        return self.doc["mode"]

    @property
    def output(self) -> str:
        return self.doc["output"]

    @property
    def p(self) -> dict:
        return self.doc["params"]

    @property
    def rho_grid(self) -> list[float]:
        return list(self.p["rho_grid"])

    @property
    def directions(self) -> list[int]:
        return list(self.doc["directions"])

    def geometry(self) -> BoxGeometry:
        return BoxGeometry(tuple(parse_length(a) for a in self.doc["geometry"]["a"]))

    def params(self, rho: float) -> AsymptoticParams:
        return AsymptoticParams(rho=float(rho), alpha=self.p["alpha"], l=self.decay_order(),
                                d=self.geometry().d, c1=self.p["c1"], c2=self.p["c2"])

    def decay_order(self) -> int:
        src = self.doc["potential"]
        if "generate" in src:
            return int(src["generate"]["l"])
        return self.potential().l

    def potential_path(self) -> str | None:
        path = self.doc["potential"].get("file")
        if path is None:
            return None
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    def potential(self) -> MatrixFourierPotential:
        src = self.doc["potential"]
        geometry = self.geometry()
        if "file" in src:
            pot = MatrixFourierPotential.load(self.potential_path())
            if pot.geometry != geometry:
                raise ConfigError("potential file geometry disagrees with the configured box")
            return pot
        gen = src["generate"]
        return generate_random_potential(int(gen["seed"]), int(gen["m"]), geometry.d, int(gen["l"]),
                                         float(gen["amplitude"]), float(gen["support_radius"]), geometry)

    def validate(self) -> None:
        d = self.doc
        if d["mode"] not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {d['mode']!r}")
        try:
            geometry = self.geometry()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        src = d["potential"]
        if not isinstance(src, dict) or len(src) != 1 or not ({"file", "generate"} & set(src)):
            raise ConfigError("potential must be {\"file\": path} or {\"generate\": {...}}")
        if "file" in src:
            if not os.path.exists(self.potential_path()):
                raise ConfigError(f"potential file {self.potential_path()} does not exist")
        else:
            gen = _merge(DEFAULTS["potential"]["generate"], src["generate"], "potential.generate.")
            d["potential"]["generate"] = gen
        grid = self.rho_grid
        if not grid or any(r <= 0 for r in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError(f"rho grid must be nonempty, positive and ascending, got {grid}")
        for key in ("tol", "alpha", "containment_margin", "denominator_factor", "gap_factor",
                    "bound_constant", "budget_constant", "residual_constant"):
            if not self.p[key] > 0:
                raise ConfigError(f"params.{key} must be positive")
        for key in ("k_max", "order", "n_trunc_1d", "max_dim"):
            if int(self.p[key]) < 1:
                raise ConfigError(f"params.{key} must be a positive integer")
        if any(not 0 <= k < geometry.d for k in self.directions) or not self.directions:
            raise ConfigError(f"directions must be axes in 0..{geometry.d - 1}")
        if int(d["measure"]["samples"]) < 1:
            raise ConfigError("measure.samples must be positive")
        if not 0 <= int(d["measure"]["seed"]) < 2**64:
            raise ConfigError("measure.seed must be an unsigned 64-bit integer")

    def materialized(self) -> dict:
        return copy.deepcopy(self.doc)
