"""Run configuration: JSON schema, loading, and initial-data construction."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ConfigError, CrossDiffError
from .grid import Field, Mesh, read_field_csv
from .model import ModelSpec
from .stepper import SolverSettings, TimeGrid

__all__ = ["CONFIG_SCHEMA", "RunConfig", "load_config", "build_initial"]

_vec = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_mat = {"type": "array", "items": _vec, "minItems": 1}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["model"],
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object",
            "required": ["pressure"],
            "additionalProperties": False,
            "properties": {
                "species": {"type": "integer", "minimum": 1},
                "pressure": {
                    "type": "object",
                    "required": ["d", "m"],
                    "additionalProperties": False,
                    "properties": {
                        "d": _vec,
                        "m": _mat,
                        "s": _vec,
                        "laws": {
                            "type": "array",
                            "items": {
                                "type": "object",
                                "required": ["type"],
                                "properties": {
                                    "type": {"enum": ["power", "saturating"]},
                                    "s": {"type": "number", "exclusiveMinimum": 0},
                                },
                            },
                        },
                    },
                    "oneOf": [{"required": ["s"]}, {"required": ["laws"]}],
                },
                "reaction": {
                    "type": "object",
                    "required": ["rho", "c", "alpha"],
                    "additionalProperties": False,
                    "properties": {"rho": _vec, "c": _mat, "alpha": _mat},
                },
                "entropy": {"type": "object"},
            },
        },
        "mesh": {
            "type": "object",
            "required": ["n"],
            "additionalProperties": False,
            "properties": {
                "dim": {"enum": [1, 2]},
                "extents": _vec,
                "n": {"type": "array", "items": {"type": "integer", "minimum": 3}, "minItems": 1, "maxItems": 2},
            },
        },
        "time": {
            "type": "object",
            "required": ["T", "N"],
            "additionalProperties": False,
            "properties": {
                "T": {"type": "number", "exclusiveMinimum": 0},
                "N": {"type": "integer", "minimum": 1},
            },
        },
        "initial": {
            "type": "object",
            "required": ["type"],
            "properties": {
                "type": {"enum": ["constant", "gaussian-bumps", "file"]},
                "values": _vec,
                "background": _vec,
                "centers": {"type": "array"},
                "widths": {"type": "array"},
                "amplitudes": {"type": "array"},
                "path": {"type": "string"},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_newton": {"type": "integer", "minimum": 1},
                "max_picard": {"type": "integer", "minimum": 1},
                "damping_floor": {"type": "number", "exclusiveMinimum": 0},
                "inversion": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "tol": {"type": "number", "exclusiveMinimum": 0},
                        "max_iters": {"type": "integer", "minimum": 1},
                        "damping": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    },
                },
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "snapshot_stride": {"type": "integer", "minimum": 1},
                "strict": {"type": "boolean"},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "samples": {"type": "integer", "minimum": 1},
    },
}


@dataclass
class RunConfig:
    """Validated configuration; sections are kept as plain JSON values."""

    model: dict
    mesh: dict = field(default_factory=lambda: {"dim": 1, "extents": [1.0], "n": [64]})
    time: dict = field(default_factory=lambda: {"T": 0.1, "N": 10})
    initial: dict = field(default_factory=lambda: {"type": "constant", "values": [1.0]})
    solver: dict = field(default_factory=dict)
    output: dict = field(default_factory=lambda: {"dir": "out", "snapshot_stride": 1, "strict": False})
    seed: int = 0
    samples: int = 10_000
    base_dir: str = "."

    @classmethod
    def from_dict(cls, obj, base_dir="."):
        try:
            jsonschema.validate(obj, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {where}: {exc.message}") from None
        obj = copy.deepcopy(obj)
        defaults = cls(model=obj["model"])
        out = cls(
            model=obj["model"],
            mesh=obj.get("mesh", defaults.mesh),
            time=obj.get("time", defaults.time),
            initial=obj.get("initial", defaults.initial),
            solver=obj.get("solver", {}),
            output={**defaults.output, **obj.get("output", {})},
            seed=obj.get("seed", 0),
            samples=obj.get("samples", 10_000),
            base_dir=str(base_dir),
        )
        out.mesh.setdefault("dim", len(out.mesh["n"]))
        out.mesh.setdefault("extents", [1.0] * len(out.mesh["n"]))
        # surface construction errors (species counts, signs) at load time
        try:
            out.build_model()
            out.build_mesh()
            out.build_time()
            out.build_settings()
            out.build_time().check(out.build_model().reaction.rho_max)
        except CrossDiffError as exc:
            raise ConfigError(str(exc)) from None
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid config: {exc}") from None
        return out

    def to_dict(self):
        return {
            "model": copy.deepcopy(self.model),
            "mesh": copy.deepcopy(self.mesh),
            "time": copy.deepcopy(self.time),
            "initial": copy.deepcopy(self.initial),
            "solver": copy.deepcopy(self.solver),
            "output": copy.deepcopy(self.output),
            "seed": self.seed,
            "samples": self.samples,
        }

    def build_model(self):
        return ModelSpec.from_dict(self.model)

    def build_mesh(self):
        mesh = Mesh(tuple(self.mesh["extents"]), tuple(self.mesh["n"]))
        if self.mesh.get("dim", mesh.dim) != mesh.dim:
            raise ConfigError("mesh.dim disagrees with the length of mesh.n")
        return mesh

    def build_time(self):
        return TimeGrid(self.time["T"], self.time["N"])

    def build_settings(self):
        return SolverSettings.from_dict(self.solver)

    def check_time(self, C=None):
        """Time-step restrictions; raises ConfigError quoting the admissible tau."""
        try:
            self.build_time().check(self.build_model().reaction.rho_max, C)
        except CrossDiffError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path):
    path = Path(path)
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return RunConfig.from_dict(obj, base_dir=path.parent)


def build_initial(cfg, mesh, species):
    """Initial Field from the ``initial`` section."""
    spec = cfg.initial
    kind = spec["type"]
    coords = mesh.coordinates
    if kind == "constant":
        vals = np.broadcast_to(np.asarray(spec["values"], dtype=float), (species,))
        return Field(np.repeat(vals[:, None], mesh.size, axis=1), mesh)
    if kind == "gaussian-bumps":
        bg = np.broadcast_to(np.asarray(spec.get("background", [0.0]), dtype=float), (species,))
        out = np.repeat(bg[:, None], mesh.size, axis=1).astype(float)
        centers, widths, amps = spec.get("centers", []), spec.get("widths", []), spec.get("amplitudes", [])
        if not (len(centers) == len(widths) == len(amps) == species):
            raise ConfigError("gaussian-bumps needs one list of centers, widths and amplitudes per species")
        for i in range(species):
            if not (len(centers[i]) == len(widths[i]) == len(amps[i])):
                raise ConfigError(f"species {i}: centers, widths and amplitudes differ in length")
            for c, w, a in zip(centers[i], widths[i], amps[i]):
                c = np.broadcast_to(np.asarray(c, dtype=float), (mesh.dim,))
                r2 = np.sum((coords - c) ** 2, axis=1)
                out[i] += a * np.exp(-r2 / w**2)
        return Field(out, mesh)
    if kind == "file":
        path = Path(spec["path"])
        if not path.is_absolute():
            path = Path(cfg.base_dir) / path
        fld = read_field_csv(path, mesh)
        if fld.species != species:
            raise ConfigError(f"{path}: {fld.species} species, model has {species}")
        return fld
    raise ConfigError(f"unknown initial data type {kind!r}")
