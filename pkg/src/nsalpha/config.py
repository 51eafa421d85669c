"""JSON run configuration.

Schema (every key optional unless marked)::

    {
      "box":      {"n": 16, "lengths": [L1, L2, L3]},          # n required, even
      "physics":  {"nu": 0.1, "alpha": 0.2, "forcing": FIELD},
      "solver":   {"dt": 0.01, "t_end": 2.0, "scheme": "if-midpoint",
                   "save_stride": 1, "model": "ns-alpha"},
      "initial":  FIELD,                                        # simulate
      "sampler":  {"kind": "gaussian", "pairs": 6, "variance": 1.0}
                | {"kind": "ball", "pairs": 6, "radius": 1.0}
                | {"kind": "dirac", "field": FIELD},
      "ensemble_size": 16,
      "alphas":   [0.4, 0.2, 0.1, 0.05, 0.0],                   # converge; must end in 0
      "functionals": {"scale": 1.0, "modes": [1, 2, 3]},
      "times":    [0.5, 1.0, 2.0],
      "metric_modes": 32,
      "stationary": {"spinup": 20.0, "windows": [10, 20, 40], "taus": [1, 2, 5]},
      "seed": 0,                                                # unsigned 64-bit
      "threads": 1,
      "tolerance_scale": 1.0,
      "planted_defect": false,
      "output": "out"
    }

    FIELD = {"kind": "zero"}
          | {"kind": "taylor_green", "amplitude": a}
          | {"kind": "random", "coords": m, "norm": r, "seed": s}
          | {"kind": "coordinates", "values": [x1, x2, ...]}
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import SolverConfig
from .errors import ConfigurationError
from .functionals import default_dictionary
from .measures import BallSampler, DiracSampler, GaussianSampler, TrajectoryMetric
from .spectral import BoxSpec, PhysParams, SpectralField, random_field, taylor_green

TWO_PI = 2 * math.pi

DEFAULTS = {
    "box": {"n": 16, "lengths": [TWO_PI] * 3},
    "physics": {"nu": 0.1, "alpha": 0.2, "forcing": {"kind": "zero"}},
    "solver": {"dt": 0.01, "t_end": 1.0, "scheme": "if-midpoint", "save_stride": 1, "model": "ns-alpha"},
    "initial": {"kind": "zero"},
    "sampler": {"kind": "gaussian", "pairs": 6, "variance": 1.0},
    "ensemble_size": 16,
    "alphas": [0.4, 0.2, 0.1, 0.05, 0.0],
    "functionals": {"scale": 1.0, "modes": [1, 2, 3]},
    "times": [0.5, 1.0],
    "metric_modes": 32,
    "stationary": {"spinup": 20.0, "windows": [10.0, 20.0, 40.0], "taus": [1.0, 2.0, 5.0]},
    "seed": 0,
    "threads": 1,
    "tolerance_scale": 1.0,
    "planted_defect": False,
    "output": "out",
}

# keys that do not change any numeric result
_HASH_EXCLUDE = ("output", "threads")


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigurationError(f"unknown config key {k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict) and k in ("box", "physics", "solver", "functionals", "stationary"):
            out[k] = {**out[k], **v}
        else:
            out[k] = copy.deepcopy(v)
    return out


def build_field(box: BoxSpec, desc: dict) -> SpectralField:
    kind = desc.get("kind")
    if kind == "zero":
        return SpectralField.zeros(box)
    if kind == "taylor_green":
        return taylor_green(box, float(desc.get("amplitude", 1.0)))
    if kind == "random":
        rng = np.random.default_rng(int(desc.get("seed", 0)))
        m = int(desc.get("coords", 24))
        if not 1 <= m <= box.mode_count():
            raise ConfigurationError(f"random field needs 1 <= coords <= {box.mode_count()}")
        return random_field(box, rng, m, float(desc.get("norm", 1.0)))
    if kind == "coordinates":
        vals = np.asarray(desc.get("values", []), dtype=float)
        if vals.ndim != 1 or len(vals) > box.mode_count():
            raise ConfigurationError("coordinate list too long for the box")
        return SpectralField.from_coordinates(box, vals)
    raise ConfigurationError(f"unknown field kind {kind!r}")


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Validated configuration; ``raw`` is the normalized dictionary form."""

    raw: dict = field(repr=False)

    def __post_init__(self):
        # build everything once so invalid entries fail before any compute
        self.box
        self.params
        self.solver
        self.initial
        self.sampler
        self.functionals
        self.metric
        seed = self.raw["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
            raise ConfigurationError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
        if int(self.raw["ensemble_size"]) < 1:
            raise ConfigurationError("ensemble_size must be >= 1")
        if int(self.raw["threads"]) < 1:
            raise ConfigurationError("threads must be >= 1")
        if not float(self.raw["tolerance_scale"]) > 0:
            raise ConfigurationError("tolerance_scale must be positive")
        for t in self.raw["times"]:
            if not 0 <= float(t) <= self.solver.t_end + 1e-12:
                raise ConfigurationError(f"projection time {t} outside [0, t_end]")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigurationError("config must be a JSON object")
        return cls(_merge(DEFAULTS, d))

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigurationError(f"cannot read config {path}: {e}") from e
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def replace(self, **changes) -> "RunConfig":
        return RunConfig.from_dict({**self.raw, **changes})

    def hash(self) -> str:
        from .fileio import config_hash

        return config_hash({k: v for k, v in self.raw.items() if k not in _HASH_EXCLUDE})

    def _get(self, section, key):
        try:
            return self.raw[section][key]
        except KeyError:
            raise ConfigurationError(f"missing {section}.{key}") from None

    # -- derived objects -------------------------------------------------

    @property
    def box(self) -> BoxSpec:
        b = self.raw["box"]
        n = b.get("n")
        if not isinstance(n, int) or isinstance(n, bool):
            raise ConfigurationError(f"box.n must be an integer, got {n!r}")
        box = BoxSpec(tuple(b.get("lengths", [TWO_PI] * 3)), n)
        if 3 * box.cutoff >= box.n or box.cutoff < 1:
            raise ConfigurationError(f"resolution n={n} too small to dealias")
        return box

    @property
    def params(self) -> PhysParams:
        ph = self.raw["physics"]
        return PhysParams(float(self._get("physics", "nu")), float(ph.get("alpha", 0.0)), build_field(self.box, ph.get("forcing", {"kind": "zero"})))

    @property
    def solver(self) -> SolverConfig:
        s = self.raw["solver"]
        try:
            return SolverConfig(
                float(s["dt"]),
                float(s["t_end"]),
                s.get("scheme", "if-midpoint"),
                int(s.get("save_stride", 1)),
                s.get("model", "ns-alpha"),
                bool(s.get("nonlinear", True)),
            )
        except KeyError as e:
            raise ConfigurationError(f"missing solver.{e.args[0]}") from None

    @property
    def initial(self) -> SpectralField:
        return build_field(self.box, self.raw["initial"])

    @property
    def sampler(self):
        s = self.raw["sampler"]
        kind = s.get("kind")
        if kind == "gaussian":
            out = GaussianSampler(int(s.get("pairs", 6)), float(s.get("variance", 1.0)))
            out._dim(self.box)
            if not out.variance > 0:
                raise ConfigurationError("sampler variance must be positive")
            return out
        if kind == "ball":
            out = BallSampler(int(s.get("pairs", 6)), float(s.get("radius", 1.0)))
            GaussianSampler(out.pairs)._dim(self.box)
            return out
        if kind == "dirac":
            return DiracSampler(build_field(self.box, s.get("field", {"kind": "zero"})))
        raise ConfigurationError(f"unknown sampler kind {kind!r}")

    @property
    def functionals(self):
        f = self.raw["functionals"]
        modes = tuple(int(j) for j in f.get("modes", (1, 2, 3)))
        if any(j < 1 or j > self.box.mode_count() for j in modes):
            raise ConfigurationError("functional modes out of range")
        return default_dictionary(self.box, float(f.get("scale", 1.0)), modes)

    @property
    def metric(self) -> TrajectoryMetric:
        return TrajectoryMetric(int(self.raw["metric_modes"]))

    @property
    def alphas(self):
        """Positive alpha values, validated to end with the alpha = 0 reference."""
        a = [float(x) for x in self.raw["alphas"]]
        if not a or a[-1] != 0.0:
            raise ConfigurationError("alpha list must end with the alpha = 0 reference")
        pos = a[:-1]
        if not pos or any(x <= 0 for x in pos):
            raise ConfigurationError("alpha list needs at least one positive value before the 0 reference")
        if any(b > c for c, b in zip(pos, pos[1:])):
            raise ConfigurationError("alpha list must be nonincreasing")
        return pos

    @property
    def times(self):
        return [float(t) for t in self.raw["times"]]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def threads(self) -> int:
        return int(self.raw["threads"])

    @property
    def tolerance_scale(self) -> float:
        return float(self.raw["tolerance_scale"])

    @property
    def output(self) -> Path:
        return Path(self.raw["output"])
