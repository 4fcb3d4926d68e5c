"""Scenario configuration: spaces, marginal presets and test fields from JSON."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .space import MeasureSpace, SpaceError, space_from_dict

CHECKS = ("identities", "prop5", "bounds", "sweep", "geodesic_formula", "heat_estimates")

DEFAULT_TOL = {"sinkhorn": 1e-14, "max_iter": 20000, "identity": 1e-10,
               "parallelogram": 1e-9, "heat_estimate": 1e-3}


class ConfigError(ValueError):
    """Invalid scenario document; the message carries ``path:line``."""


@dataclass
class ScenarioConfig:
    space: dict
    rho0: dict
    rho1: dict
    eps_ladder: list
    J: int = 128
    delta: float = 0.1
    tol: dict = field(default_factory=dict)
    checks: list = field(default_factory=lambda: list(CHECKS))
    testfields: dict = field(default_factory=dict)
    refinement: list = field(default_factory=list)
    output: str = "out"

    def tolerance(self, key):
        return self.tol.get(key, DEFAULT_TOL[key])

    def to_dict(self) -> dict:
        return {"space": self.space, "rho0": self.rho0, "rho1": self.rho1,
                "eps_ladder": list(self.eps_ladder), "J": self.J, "delta": self.delta,
                "tol": dict(self.tol), "checks": list(self.checks),
                "testfields": dict(self.testfields), "refinement": list(self.refinement),
                "output": self.output}


def default_config() -> ScenarioConfig:
    """Two Gaussian bumps on a Neumann interval of length 8 with 400 nodes."""
    return ScenarioConfig(
        space={"kind": "interval", "n": 400, "length": 8.0, "boundary": "neumann"},
        rho0={"preset": "gaussian_bump", "center": 2.5, "width": 0.6},
        rho1={"preset": "gaussian_bump", "center": 5.5, "width": 0.6},
        eps_ladder=[0.5, 0.2, 0.1, 0.05, 0.02],
        testfields={"bump": {"preset": "gaussian_bump", "center": 4.0, "width": 1.0},
                    "clipped_quadratic": {"preset": "clipped_quadratic", "center": 4.0,
                                          "clip": 3.0}},
        refinement=[[200, 64], [400, 128], [800, 256]])


# ---------------------------------------------------------------------------
# presets


def _coords(space: MeasureSpace, preset: str) -> np.ndarray:
    if space.coords is None or not space.is_grid:
        raise ConfigError(f"preset {preset!r} needs a grid space")
    return space.coords


def _point(value, dim: int, what: str) -> np.ndarray:
    p = np.atleast_1d(np.asarray(value, dtype=float))
    if p.shape != (dim,):
        raise ConfigError(f"{what} must have {dim} coordinate(s), got {value!r}")
    return p


def _profile(space: MeasureSpace, spec: dict, name: str) -> np.ndarray:
    """Unnormalized nonnegative node profile for a preset."""
    preset = spec.get("preset")
    if preset == "uniform":
        return np.ones(space.n)
    if preset == "weights":
        w = np.asarray(spec.get("values"), dtype=float)
        if w.shape != (space.n,):
            raise ConfigError(f"{name}: expected {space.n} weights, got shape {w.shape}")
        return w / space.measure
    if preset == "density":
        return np.asarray(spec.get("values"), dtype=float)
    X = _coords(space, preset)
    dim = X.shape[1]
    if preset == "gaussian_bump":
        c = _point(spec["center"], dim, f"{name}.center")
        w = float(spec["width"])
        if not w > 0:
            raise ConfigError(f"{name}: width must be positive")
        return np.exp(-np.sum((X - c) ** 2, axis=1) / (2 * w * w))
    if preset == "double_bump":
        w = float(spec["width"])
        centers = spec["centers"]
        weights = spec.get("weights", [1.0] * len(centers))
        out = np.zeros(space.n)
        for c, a in zip(centers, weights):
            c = _point(c, dim, f"{name}.centers")
            out += a * np.exp(-np.sum((X - c) ** 2, axis=1) / (2 * w * w))
        return out
    if preset == "indicator_block":
        lo = _point(spec["left"], dim, f"{name}.left")
        hi = _point(spec["right"], dim, f"{name}.right")
        return np.all((X >= lo - 1e-12) & (X <= hi + 1e-12), axis=1).astype(float)
    raise ConfigError(f"{name}: unknown preset {preset!r}")


def build_marginal(space: MeasureSpace, spec: dict, name: str = "marginal") -> np.ndarray:
    """Probability density (w.r.t. ``m``) from a preset description."""
    if not isinstance(spec, dict):
        raise ConfigError(f"{name}: marginal must be an object with a 'preset' key")
    try:
        rho = _profile(space, spec, name)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{name}: missing or malformed field {exc}") from exc
    if not np.all(np.isfinite(rho)):
        raise ConfigError(f"{name}: non-finite entries")
    if np.any(rho < 0):
        raise ConfigError(f"{name}: negative entry at node {int(np.argmin(rho))}")
    mass = float(rho @ space.measure)
    if not mass > 0:
        raise ConfigError(f"{name}: zero total mass")
    return rho / mass


def build_testfield(space: MeasureSpace, spec: dict, name: str = "testfield") -> np.ndarray:
    """Test function ``h`` (not normalized)."""
    preset = spec.get("preset")
    X = _coords(space, preset) if preset != "values" else None
    if preset == "values":
        return np.asarray(spec["values"], dtype=float)
    dim = X.shape[1]
    c = _point(spec.get("center", [0.0] * dim), dim, f"{name}.center")
    r2 = np.sum((X - c) ** 2, axis=1)
    if preset == "gaussian_bump":
        w = float(spec["width"])
        return np.exp(-r2 / (2 * w * w))
    if preset == "quadratic":
        return 0.5 * r2
    if preset == "clipped_quadratic":
        clip = float(spec["clip"])
        return 0.5 * np.sum(np.clip(X - c, -clip, clip) ** 2, axis=1)
    if preset == "coordinate":
        return X[:, int(spec.get("axis", 0))] - c[int(spec.get("axis", 0))]
    raise ConfigError(f"{name}: unknown test-field preset {preset!r}")


# ---------------------------------------------------------------------------
# loading


def _line_of(text: str, key: str) -> int:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else 1


def config_from_dict(doc: dict, text: str = "", source: str = "<config>") -> ScenarioConfig:
    def fail(key, msg):
        raise ConfigError(f"{source}:{_line_of(text, key)}: {msg}")

    if not isinstance(doc, dict):
        raise ConfigError(f"{source}:1: top level must be an object")
    known = set(ScenarioConfig.__dataclass_fields__)
    for key in doc:
        if key not in known:
            fail(key, f"unknown key {key!r}")
    for key in ("space", "rho0", "rho1", "eps_ladder"):
        if key not in doc:
            raise ConfigError(f"{source}:1: missing required key {key!r}")
    eps = doc["eps_ladder"]
    if not isinstance(eps, list) or not eps or not all(isinstance(e, (int, float)) for e in eps):
        fail("eps_ladder", "eps_ladder must be a non-empty list of numbers")
    if any(e <= 0 for e in eps):
        fail("eps_ladder", "eps_ladder entries must be positive")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        fail("eps_ladder", "eps_ladder must be strictly decreasing")
    J = doc.get("J", 128)
    if not isinstance(J, int) or J < 16:
        fail("J", f"J must be an integer >= 16, got {J!r}")
    delta = doc.get("delta", 0.1)
    if not isinstance(delta, (int, float)) or not 0 < delta < 0.5:
        fail("delta", f"delta must lie in (0, 1/2), got {delta!r}")
    checks = doc.get("checks", list(CHECKS))
    bad = [c for c in checks if c not in CHECKS]
    if bad:
        fail("checks", f"unknown checks {bad}; choose from {list(CHECKS)}")
    tol = doc.get("tol", {})
    if not isinstance(tol, dict) or any(k not in DEFAULT_TOL for k in tol):
        fail("tol", f"tol keys must be among {sorted(DEFAULT_TOL)}")
    cfg = ScenarioConfig(space=doc["space"], rho0=doc["rho0"], rho1=doc["rho1"],
                         eps_ladder=[float(e) for e in eps], J=J, delta=float(delta), tol=tol,
                         checks=list(checks), testfields=doc.get("testfields", {}),
                         refinement=doc.get("refinement", []), output=doc.get("output", "out"))
    # build once so that errors surface at load time with a line number
    try:
        space = space_from_dict(cfg.space)
    except (SpaceError, KeyError, TypeError, ValueError) as exc:
        fail("space", f"invalid space: {exc}")
    for key in ("rho0", "rho1"):
        try:
            build_marginal(space, getattr(cfg, key), key)
        except ConfigError as exc:
            fail(key, str(exc))
    for name, spec in cfg.testfields.items():
        try:
            build_testfield(space, spec, name)
        except (ConfigError, KeyError, TypeError) as exc:
            fail("testfields", f"{name}: {exc}")
    for pair in cfg.refinement:
        if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(v, int) for v in pair)):
            fail("refinement", f"refinement entries must be [n, J] pairs, got {pair!r}")
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    return config_from_dict(doc, text, str(path))


def with_resolution(cfg: ScenarioConfig, n: int, J: int) -> ScenarioConfig:
    """Copy of a 1D config at another grid size and time resolution."""
    if cfg.space.get("kind") != "interval":
        raise ConfigError("resolution changes are only defined for interval spaces")
    doc = cfg.to_dict()
    doc["space"] = dict(doc["space"], n=n)
    doc["J"] = J
    return config_from_dict(doc)


@dataclass(frozen=True, eq=False)
class Scenario:
    """Materialized config: space, marginals and test fields."""

    config: ScenarioConfig
    space: MeasureSpace
    rho0: np.ndarray
    rho1: np.ndarray
    testfields: dict


def materialize(cfg: ScenarioConfig) -> Scenario:
    space = space_from_dict(cfg.space)
    return Scenario(cfg, space, build_marginal(space, cfg.rho0, "rho0"),
                    build_marginal(space, cfg.rho1, "rho1"),
                    {k: build_testfield(space, v, k) for k, v in cfg.testfields.items()})
