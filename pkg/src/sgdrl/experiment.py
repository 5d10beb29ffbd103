"""Experiment configuration: flat key=value files and the problem builders they refer to."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from .core_math import parse_params, parse_vector
from .drift import parse_drift
from .engine import BoundedNoise, GaussianNoise, SaaProblem, ZeroNoise
from .linreg import affine_noise_kappa, parse_model, setup, spd_contraction_constant
from .schedules import Schedule, parse_schedule

SEED_ENV = "SGDRL_SEED"
DEFAULTS = {
    "problem": "linreg:two_point",
    "schedule": "poly:alpha=0.1,nu=0.5",
    "p": "2",
    "checkpoints": "dyadic:4,13",
    "ensemble_size": "2000",
    "master_seed": "0",
    "output_dir": "sgdrl-out",
    "noise": "zero",
}


class ConfigError(ValueError):
    pass


def read_config(path) -> dict[str, str]:
    """Parse "key = value" lines; blank lines and '#' comments are skipped."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        out[key.strip()] = value.strip()
    return out


def parse_checkpoints(text: str) -> np.ndarray:
    """"dyadic:<lo>,<hi>" for 2^lo..2^hi, or an explicit ';'-separated list."""
    if text.startswith("dyadic:"):
        lo, _, hi = text[len("dyadic:"):].partition(",")
        return 2 ** np.arange(int(lo), int(hi) + 1, dtype=np.int64)
    cps = parse_vector(text)
    if np.any(cps != np.round(cps)):
        raise ConfigError(f"checkpoints must be integers: {text!r}")
    return cps.astype(np.int64)


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict[str, str] = field(default_factory=dict)

    @classmethod
    def load(cls, path=None, overrides: dict[str, str] | None = None) -> "ExperimentConfig":
        values = dict(DEFAULTS)
        if path is not None:
            values.update(read_config(path))
        values.update(overrides or {})
        if os.environ.get(SEED_ENV):
            values["master_seed"] = os.environ[SEED_ENV]
        cfg = cls(values)
        cfg.validate()
        return cfg

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def validate(self) -> None:
        try:
            self.schedule
            self.checkpoints
            if self.p < 2 or self.p % 2:
                raise ConfigError(f"p must be an even integer >= 2, got {self.p}")
            if self.ensemble_size < 1:
                raise ConfigError("ensemble_size must be >= 1")
            self.master_seed
        except ConfigError:
            raise
        except (ValueError, KeyError, OSError) as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def schedule(self) -> Schedule:
        return parse_schedule(self.values["schedule"])

    @property
    def checkpoints(self) -> np.ndarray:
        return parse_checkpoints(self.values["checkpoints"])

    @property
    def p(self) -> int:
        return int(self.values["p"])

    @property
    def ensemble_size(self) -> int:
        return int(self.values["ensemble_size"])

    @property
    def master_seed(self) -> int:
        return int(self.values["master_seed"])

    @property
    def output_dir(self) -> Path:
        return Path(self.values["output_dir"])

    def optional_float(self, key: str) -> float | None:
        v = self.values.get(key)
        return None if v in (None, "") else float(v)


@dataclass(frozen=True)
class BuiltProblem:
    problem: SaaProblem
    contraction_c: float
    kind: str  # linreg | drift
    model: object = None
    noise_desc: str = "zero"

    def noise_kappa(self, p: int) -> float:
        """A centered constant with E||D||^p <= kappa (1 + ||theta - target||^p)."""
        if self.kind == "linreg":
            return affine_noise_kappa(self.model, p).kappa
        noise = self.problem.noise
        if isinstance(noise, ZeroNoise):
            return 1.0  # any positive value is valid without noise
        d = self.problem.dim
        if isinstance(noise, GaussianNoise):
            # E||Z||^p for a standard Gaussian vector in d dimensions
            chi = np.exp(p / 2 * np.log(2) + gammaln((d + p) / 2) - gammaln(d / 2))
            return float(noise.sigma**p * chi)
        if isinstance(noise, BoundedNoise):
            return float(noise.radius**p)
        raise ConfigError("no noise constant known for this noise model; set kappa")


def parse_noise(text: str, dim: int):
    kind, _, rest = text.strip().partition(":")
    params = parse_params(rest)
    if kind == "zero":
        return ZeroNoise(dim)
    if kind == "gauss":
        return GaussianNoise(float(params["sigma"]), dim)
    if kind == "bounded":
        return BoundedNoise(float(params["radius"]), dim)
    raise ConfigError(f"unknown noise {text!r}")


def build_problem(cfg: ExperimentConfig) -> BuiltProblem:
    text = cfg.values["problem"]
    try:
        if text.startswith("linreg:"):
            lr = setup(parse_model(text))
            return BuiltProblem(lr.problem, lr.contraction.c, "linreg", lr.model)
        drift = parse_drift(text)
        noise = parse_noise(cfg.values.get("noise", "zero"), drift.dim)
        A = -drift(np.eye(drift.dim) + drift.target).T  # drift is -A(theta - target)
        try:
            c = spd_contraction_constant(A, sharp=False).c
        except ValueError:
            c = float("nan")  # not symmetric positive definite: c must be supplied
        return BuiltProblem(SaaProblem(drift, noise, text), c, "drift", None, cfg.values.get("noise", "zero"))
    except ConfigError:
        raise
    except (ValueError, KeyError, OSError) as exc:
        raise ConfigError(f"problem {text!r}: {exc}") from exc


def theta0_for(cfg: ExperimentConfig, dim: int) -> np.ndarray:
    text = cfg.values.get("theta0")
    theta0 = np.zeros(dim) if not text else parse_vector(text)
    if theta0.size != dim:
        raise ConfigError(f"theta0 has {theta0.size} entries, problem has d={dim}")
    return theta0
