"""Flat key-value run configuration with dotted keys.

Format: one `key = value` per line, `#` starts a comment, blank lines are
skipped. Dotted keys group settings (problem.*, domain.*, train.*, net.*,
out.*) without nesting, so override lists on the command line stay trivial.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geometry import Domain
from .problems import PdeProblem, builtin_problem
from .training import TrainConfig


def _cast_int(text: str) -> int:
    return int(text)


def _cast_float(text: str) -> float:
    return float(text)


def _cast_str(text: str) -> str:
    return text


def _cast_floats(text: str) -> tuple:
    return tuple(float(p) for p in text.split(",") if p.strip())


def _cast_ints(text: str) -> tuple:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _cast_faces(text: str) -> tuple:
    """Face list like "0:low,1:high"; "none" means the empty list."""
    if text.strip().lower() in ("none", ""):
        return ()
    faces = []
    for part in text.split(","):
        axis_text, _, side = part.strip().partition(":")
        if side not in ("low", "high"):
            raise ValueError(f"face side must be 'low' or 'high', got {part!r}")
        faces.append((int(axis_text), side))
    return tuple(faces)


_SCHEMA = {
    "problem.name": _cast_str,
    "problem.dim": _cast_int,
    "domain.shape": _cast_str,
    "domain.lower": _cast_floats,
    "domain.upper": _cast_floats,
    "domain.center": _cast_floats,
    "domain.radius": _cast_float,
    "domain.neumann": _cast_faces,
    "train.epochs": _cast_int,
    "train.m_interior": _cast_int,
    "train.m_dirichlet": _cast_int,
    "train.m_neumann": _cast_int,
    "train.tau": _cast_float,
    "train.tau_tilde": _cast_float,
    "train.replicates": _cast_int,
    "train.lr_solution": _cast_float,
    "train.lr_test": _cast_float,
    "train.test_steps_per_epoch": _cast_int,
    "train.loss_mode": _cast_str,
    "train.seed": _cast_int,
    "train.eval_every": _cast_int,
    "train.checkpoint_every": _cast_int,
    "train.precision": _cast_str,
    "net.hidden": _cast_ints,
    "net.activation": _cast_str,
    "out.dir": _cast_str,
}

_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}


@dataclass(frozen=True)
class RunSpec:
    """A fully resolved run: problem instance, training settings, networks."""

    problem: PdeProblem
    train: TrainConfig
    hidden: tuple
    activation: str
    out_dir: str
    resolved: dict


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse flat key-value text into a {key: raw-string} map."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, eq, value = stripped.partition("=")
        if not eq:
            raise ConfigError(
                f"{source}:{lineno}: cannot parse line (expected key = value): {stripped!r}"
            )
        raw[key.strip()] = value.split("#", 1)[0].strip()
    return raw


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), source=str(path))


def apply_overrides(raw: dict, overrides) -> dict:
    merged = dict(raw)
    for item in overrides:
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        merged[key.strip()] = value.strip()
    return merged


def _cast_all(raw: dict) -> dict:
    typed = {}
    for key, text in raw.items():
        caster = _SCHEMA.get(key)
        if caster is None:
            raise ConfigError(f"unknown config key: {key}")
        try:
            typed[key] = caster(text)
        except (ValueError, TypeError) as err:
            raise ConfigError(f"bad value for {key}: {text!r} ({err})") from err
    return typed


def _override_domain(typed: dict, dim: int) -> Domain | None:
    domain_keys = [k for k in typed if k.startswith("domain.")]
    if not domain_keys:
        return None
    shape = typed.get("domain.shape")
    if shape is None:
        raise ConfigError("domain.shape required when overriding the domain")
    if shape == "box":
        if "domain.lower" not in typed or "domain.upper" not in typed:
            raise ConfigError("box domains need domain.lower and domain.upper")
        lower, upper = typed["domain.lower"], typed["domain.upper"]
        if len(lower) != dim or len(upper) != dim:
            raise ConfigError(
                f"domain corners must have problem.dim = {dim} entries"
            )
        neumann = set(typed.get("domain.neumann", ()))
        for axis, _ in neumann:
            if not 0 <= axis < dim:
                raise ConfigError(f"face axis out of range for dim {dim}")
        every = {(a, s) for a in range(dim) for s in ("low", "high")}
        dirichlet = sorted(every - neumann)
        try:
            return Domain.box(np.array(lower), np.array(upper), dirichlet=dirichlet)
        except ValueError as err:
            raise ConfigError(str(err)) from err
    if shape == "ball":
        if "domain.center" not in typed or "domain.radius" not in typed:
            raise ConfigError("ball domains need domain.center and domain.radius")
        center = typed["domain.center"]
        if len(center) != dim:
            raise ConfigError(f"domain.center must have problem.dim = {dim} entries")
        try:
            return Domain.ball(np.array(center), typed["domain.radius"])
        except ValueError as err:
            raise ConfigError(str(err)) from err
    raise ConfigError(f"domain.shape must be 'box' or 'ball', got {shape!r}")


def resolve(raw: dict) -> RunSpec:
    """Cast, validate, and build the problem and train settings from raw keys."""
    typed = _cast_all(raw)
    for required in ("problem.name", "problem.dim"):
        if required not in typed:
            raise ConfigError(f"missing required config key: {required}")
    name = typed["problem.name"]
    dim = typed["problem.dim"]
    try:
        problem = builtin_problem(name, dim)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    domain = _override_domain(typed, dim)
    if domain is not None:
        try:
            problem = dataclasses.replace(problem, domain=domain)
        except ValueError as err:
            raise ConfigError(str(err)) from err

    train_kwargs = {}
    for key, value in typed.items():
        if key.startswith("train."):
            field = key.split(".", 1)[1]
            if field not in _TRAIN_FIELDS:
                raise ConfigError(f"unknown config key: {key}")
            train_kwargs[field] = value
    try:
        train_config = TrainConfig(**train_kwargs)
    except ValueError as err:
        raise ConfigError(str(err)) from err

    hidden = typed.get("net.hidden", (32, 32, 32))
    activation = typed.get("net.activation", "tanh")
    out_dir = typed.get("out.dir", ".")

    resolved = {"problem.name": name, "problem.dim": dim}
    for key in sorted(typed):
        if key.startswith("domain."):
            value = typed[key]
            resolved[key] = list(value) if isinstance(value, tuple) else value
    for field in sorted(_TRAIN_FIELDS):
        resolved[f"train.{field}"] = getattr(train_config, field)
    resolved["net.hidden"] = list(hidden)
    resolved["net.activation"] = activation
    resolved["out.dir"] = out_dir
    return RunSpec(problem, train_config, tuple(hidden), activation, out_dir, resolved)
