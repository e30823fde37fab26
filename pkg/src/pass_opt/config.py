"""TOML run configuration with [scenario], [coupling], [solver], [experiment] sections."""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .coupling import CouplingParams
from .harness import PRESETS, SWEEP_KEYS, preset
from .model import Scenario, Waveguide, db_to_linear, dbm_to_watts

SECTIONS = ("scenario", "coupling", "solver", "experiment")

_SCENARIO_KEYS = {
    "preset", "num_waveguides", "num_users", "antennas_per_waveguide", "N", "K", "L", "span_x", "span_y",
    "height", "carrier_freq", "carrier_freq_ghz", "effective_index", "noise_power", "noise_dbm",
    "sinr_min", "sinr_db", "user_positions", "waveguides", "power_budget",
}
_COUPLING_KEYS = {"omega0", "alpha", "d_pa", "active", "targets", "samples"}
_SOLVER_KEYS = {"eps", "mode", "share_gub", "P0", "max_iter", "time_limit", "perspective", "tighten",
                "max_rounds", "rule", "grid_points", "sweeps", "grid_counts", "baseline_axis"}
_EXPERIMENT_KEYS = {"solvers", "sweep", "values", "trials", "seed"}
_ALIASES = {"N": "num_waveguides", "K": "num_users", "L": "antennas_per_waveguide"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scenario: Scenario
    coupling: CouplingParams = field(default_factory=CouplingParams)
    active: list | None = None  # per-waveguide activation flags for spacing plans
    targets: list | None = None
    samples: str | None = None
    solver: dict = field(default_factory=dict)
    solvers: tuple = ("matching", "baseline-mimo")
    sweep_key: str | None = None
    sweep_values: tuple = ()
    trials: int = 1
    seed: int = 0
    base_dir: Path = Path(".")


def _check_keys(section: str, table: dict, allowed: set):
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {sorted(unknown)}")


def _scenario(table: dict) -> Scenario:
    _check_keys("scenario", table, _SCENARIO_KEYS)
    t = {(_ALIASES.get(k, k)): v for k, v in table.items()}
    kw = {}
    name = t.pop("preset", None)
    if "carrier_freq_ghz" in t:
        t["carrier_freq"] = float(t.pop("carrier_freq_ghz")) * 1e9
    if "noise_dbm" in t:
        t["noise_power"] = float(dbm_to_watts(t.pop("noise_dbm")))
    if "sinr_db" in t:
        t["sinr_min"] = float(db_to_linear(t.pop("sinr_db")))
    if "waveguides" in t:
        kw["waveguide_layout"] = tuple(Waveguide(w["axis"], tuple(w["feed"])) for w in t.pop("waveguides"))
    if "user_positions" in t:
        kw["user_positions"] = tuple(tuple(p) for p in t.pop("user_positions"))
    kw.update(t)
    try:
        if name is not None:
            if name not in PRESETS:
                raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
            base = preset(name)
            if "user_positions" in kw and "num_users" not in kw:
                kw["num_users"] = len(kw["user_positions"])
            return base.replace(**kw)
        for req in ("num_waveguides", "num_users", "antennas_per_waveguide"):
            if req not in kw:
                raise ConfigError(f"[scenario] needs {req} (or a preset)")
        return Scenario(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(data: dict, base_dir: Path = Path(".")) -> RunConfig:
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    sc = _scenario(dict(data.get("scenario", {"preset": "paper-small"})))
    cp = dict(data.get("coupling", {}))
    _check_keys("coupling", cp, _COUPLING_KEYS)
    params = CouplingParams(**{k: float(cp[k]) for k in ("omega0", "alpha", "d_pa") if k in cp})
    solver = dict(data.get("solver", {}))
    _check_keys("solver", solver, _SOLVER_KEYS)
    ex = dict(data.get("experiment", {}))
    _check_keys("experiment", ex, _EXPERIMENT_KEYS)
    sweep = ex.get("sweep")
    if sweep is not None and sweep not in SWEEP_KEYS:
        raise ConfigError(f"unknown sweep key {sweep!r}")
    active = cp.get("active")
    if active is not None and active and not isinstance(active[0], list):
        active = [active]
    targets = cp.get("targets")
    if targets is not None and targets and not isinstance(targets[0], list):
        targets = [targets]
    return RunConfig(
        scenario=sc, coupling=params, active=active, targets=targets, samples=cp.get("samples"),
        solver=solver, solvers=tuple(ex.get("solvers", ("matching", "baseline-mimo"))),
        sweep_key=sweep, sweep_values=tuple(ex.get("values", ())), trials=int(ex.get("trials", 1)),
        seed=int(ex.get("seed", 0)), base_dir=base_dir)


def load_config(path: str | Path | None) -> RunConfig:
    """Read a TOML file; ``None`` gives the ``paper-small`` defaults."""
    if path is None:
        return parse_config({})
    path = Path(path)
    with path.open("rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data, path.parent)


def parse_sweep(text: str) -> tuple[str, tuple[float, ...]]:
    """``key=v1,v2,...`` from the command line."""
    key, sep, vals = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"--sweep expects key=v1,v2,..., got {text!r}")
    if key not in SWEEP_KEYS:
        raise ConfigError(f"unknown sweep key {key!r}; choose from {sorted(SWEEP_KEYS)}")
    try:
        values = tuple(float(v) if "." in v or "e" in v.lower() else int(v)
                       for v in (s.strip() for s in vals.split(",")) if v)
    except ValueError:
        raise ConfigError(f"--sweep values must be numbers, got {vals!r}") from None
    return key, values
