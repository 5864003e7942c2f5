"""Run configuration: defaults, TOML/JSON config files, override merging.

A config file may be TOML or JSON. Sections are flattened with underscore
joins, so ``[estimate] rho = 0.1`` and a top-level ``estimate_rho = 0.1``
are equivalent. The TOML reader below covers the small dialect needed for
configuration (tables, scalars, homogeneous arrays); the standard library
gained ``tomllib`` only in Python 3.11 and this package supports 3.10.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .grid import GridDefaults


class ConfigError(Exception):
    """Bad configuration file or unknown setting."""


@dataclass(frozen=True)
class RunConfig:
    """All tunables for screening runs, estimators, and the server."""

    # grid parsing defaults
    grid_gen_inertia: float = 1.0
    grid_gen_damping: float = 1.0
    grid_load_inertia_scale: float = 0.5
    grid_limit_margin: float = 2.0
    grid_limit_floor: float = 0.1

    # time discretization
    dt: float = 0.01
    horizon: float = 20.0

    # fault model
    fault_retained_fraction: float = 2.0 / 3.0
    sigma_scale: float = 0.04

    # nominal scenario law
    scenario_rate: float = 0.1
    scenario_no_fault_mass: float = 0.0

    # estimator settings
    estimate_n: int = 10000
    ce_n_per_iter: int = 2000
    ce_rho: float = 0.1
    ce_smoothing: float | None = None  # defaults to 1e-3 / n_branches
    ce_mixing: float = 0.7
    ce_tol: float = 1e-3
    ce_max_iters: int = 20
    ce_elite_min: int = 10

    # screening sweep
    screen_n: int = 20000
    t_star: float = 1.0
    zone_warning: float = 0.025
    zone_emergency: float = 0.04
    top_k: int = 100
    tau_bin_width: float = 2.0
    workers: int = 1
    batch_size: int = 256
    master_seed: int = 2024

    # server behaviour
    server_sync_limit: int = 512
    server_queue_limit: int = 16

    def grid_defaults(self):
        return GridDefaults(
            gen_inertia=self.grid_gen_inertia,
            gen_damping=self.grid_gen_damping,
            load_inertia_scale=self.grid_load_inertia_scale,
            limit_margin=self.grid_limit_margin,
            limit_floor=self.grid_limit_floor,
        )

    def replace(self, **kwargs):
        return dataclasses.replace(self, **kwargs)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name, value):
    f = _FIELDS[name]
    if f.type in ("int", int.__name__):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if f.type.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    return value


def make_config(overrides=None, base=None):
    """Build a RunConfig from a mapping, rejecting unknown keys."""
    cfg = base or RunConfig()
    if not overrides:
        return cfg
    clean = {}
    for key, value in overrides.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown setting {key!r}")
        clean[key] = _coerce(key, value)
    return cfg.replace(**clean)


def _flatten(tree, prefix=""):
    flat = {}
    for key, value in tree.items():
        name = f"{prefix}_{key}" if prefix else key
        if isinstance(value, dict):
            flat.update(_flatten(value, name))
        else:
            flat[name] = value
    return flat


def load_config(path, base=None):
    """Read a TOML or JSON config file into a RunConfig."""
    with open(path) as fh:
        text = fh.read()
    if str(path).endswith(".json"):
        try:
            tree = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})")
    else:
        tree = _parse_toml(text, path)
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: top level must be a table")
    return make_config(_flatten(tree), base=base)


# ---------------------------------------------------------------------------
# Minimal TOML subset reader (tables, scalars, flat arrays)


def _toml_scalar(token, path, n):
    token = token.strip()
    if not token:
        raise ConfigError(f"{path}:{n}: empty value")
    if token.startswith('"') and token.endswith('"') and len(token) >= 2:
        return token[1:-1]
    if token == "true":
        return True
    if token == "false":
        return False
    try:
        if any(c in token for c in ".eE") and not token.startswith("0x"):
            return float(token)
        return int(token)
    except ValueError:
        try:
            return float(token)
        except ValueError:
            raise ConfigError(f"{path}:{n}: cannot read value {token!r}")


def _parse_toml(text, path):
    tree = {}
    table = tree
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            table = tree
            for part in line[1:-1].strip().split("."):
                part = part.strip()
                if not part:
                    raise ConfigError(f"{path}:{n}: empty table name")
                table = table.setdefault(part, {})
                if not isinstance(table, dict):
                    raise ConfigError(f"{path}:{n}: table clashes with a value")
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, _, rest = line.partition("=")
        key = key.strip().strip('"')
        rest = rest.strip()
        cut = rest.find("#")
        if cut >= 0 and '"' not in rest[:cut]:
            rest = rest[:cut].strip()
        if rest.startswith("[") and rest.endswith("]"):
            body = rest[1:-1].strip()
            value = (
                [_toml_scalar(t, path, n) for t in body.split(",") if t.strip()]
                if body
                else []
            )
        else:
            value = _toml_scalar(rest, path, n)
        if key in table:
            raise ConfigError(f"{path}:{n}: duplicate key {key!r}")
        table[key] = value
    return tree
