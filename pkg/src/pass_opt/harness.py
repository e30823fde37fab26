"""Experiment orchestration: baselines, oracles, sweeps and CSV output."""
from __future__ import annotations

import csv
import dataclasses
import io
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .beamforming import solve_fixed_activation
from .bnb_mu import bnb_multi_user, exhaustive_multi_user
from .bnb_su import bnb_single_user, closed_form_power, exhaustive_single_user
from .matching import welfare_matching
from .model import (SPEED_OF_LIGHT, ActivationPattern, Scenario, build_channels, build_geometry,
                    db_to_linear, dbm_to_watts, effective_channel, reference_gain, watts_to_dbm)

SOLVERS = ("bnb-su", "bnb-su-equal", "bnb-mu", "matching", "matching-vanilla",
           "baseline-mimo", "continuous-grid", "exhaustive")
EXHAUSTIVE_MAX_M = 14

PRESETS = {
    "paper-small": dict(num_waveguides=2, num_users=2, antennas_per_waveguide=6,
                        span_x=10.0, span_y=10.0, sinr_min=100.0),
    "single-user": dict(num_waveguides=2, num_users=1, antennas_per_waveguide=12,
                        span_x=15.0, span_y=15.0, sinr_min=100.0),
    "multi-user-large": dict(num_waveguides=4, num_users=4, antennas_per_waveguide=6,
                             span_x=10.0, span_y=10.0, sinr_min=100.0),
}


def preset(name: str, **overrides) -> Scenario:
    try:
        base = dict(PRESETS[name])
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    base.update(overrides)
    return Scenario(**base)


def thread_count() -> int:
    raw = os.environ.get("PASS_OPT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"PASS_OPT_THREADS must be an integer, got {raw!r}") from None


# -- baselines --------------------------------------------------------------------------

def baseline_channels(scenario: Scenario, axis: str = "y") -> np.ndarray:
    """(K, K) channels of a K-antenna half-wavelength array at ``(0, 0, h)``.

    The array lies along ``axis``; the default ``y`` puts it on the edge
    that carries the waveguide feeds.
    """
    if axis not in ("x", "y"):
        raise ValueError("axis must be 'x' or 'y'")
    K = scenario.num_users
    lam = scenario.carrier_wavelength
    ant = np.zeros((K, 3))
    ant[:, 0 if axis == "x" else 1] = np.arange(K) * lam / 2
    ant[:, 2] = scenario.height
    users = np.zeros((K, 3))
    users[:, :2] = np.asarray(scenario.user_positions, dtype=float)
    d = np.linalg.norm(users[:, None, :] - ant[None, :, :], axis=-1)  # (K users, K antennas)
    phase = np.exp(-2j * np.pi * np.mod(d / lam, 1.0))
    return math.sqrt(reference_gain(scenario.carrier_freq)) * phase / d


def baseline_mimo(scenario: Scenario, axis: str = "y"):
    """Fully digital conventional array; returns ``(power, W)``."""
    sol = solve_fixed_activation(baseline_channels(scenario, axis), scenario.sinr_min, scenario.noise_power)
    return sol.power, sol.W


def _channels_for_positions(scenario: Scenario, coords: list[np.ndarray]):
    """Per-antenna coefficients (K, N, Ls) for antennas at the given axis coordinates."""
    geo = build_geometry(scenario)
    N = scenario.num_waveguides
    Ls = len(coords[0])
    pos = np.zeros((N, Ls, 3))
    for n, wg in enumerate(scenario.waveguide_layout):
        fx, fy = wg.feed
        c = np.asarray(coords[n], dtype=float)
        pos[n, :, 0] = fx + c if wg.axis == "x" else fx
        pos[n, :, 1] = fy if wg.axis == "x" else fy + c
        pos[n, :, 2] = scenario.height
    geo = dataclasses.replace(geo, antenna_positions=pos)
    return build_channels(scenario, geo).coefficients()


def continuous_grid_search(scenario: Scenario, counts=None, grid_points: int = 50, sweeps: int = 3):
    """Coordinate descent over antenna positions on a uniform grid.

    Each waveguide carries ``counts[n]`` antennas (one count for all
    waveguides, default 1) that may sit at any of ``grid_points`` cell
    centres along its span; distinct antennas never share a grid point.
    Returns ``(power, coordinates per waveguide)``.
    """
    N = scenario.num_waveguides
    if counts is None:
        counts = 1
    counts = np.broadcast_to(np.asarray(counts, dtype=int), (N,))
    if np.any(counts < 1) or np.any(counts > grid_points):
        raise ValueError("need 1 <= antennas per waveguide <= grid_points")
    if len(set(counts.tolist())) != 1:
        raise ValueError("continuous search uses one antenna count for every waveguide")
    Ls = int(counts[0])
    spans = [scenario.span_x if wg.axis == "x" else scenario.span_y for wg in scenario.waveguide_layout]
    grid = [(np.arange(grid_points) + 0.5) / grid_points * s for s in spans]
    # start spread out like the discrete lattice
    idx = [[min(grid_points - 1, int((i + 0.5) * grid_points / Ls)) for i in range(Ls)] for _ in range(N)]
    pattern = ActivationPattern(np.ones((N, Ls), dtype=np.int8))

    def power_of(ix):
        coef = _channels_for_positions(scenario, [grid[n][ix[n]] for n in range(N)])
        sol = solve_fixed_activation(effective_channel(coef, pattern), scenario.sinr_min, scenario.noise_power)
        return sol.power

    best = power_of(idx)
    for _ in range(sweeps):
        improved = False
        for n in range(N):
            for i in range(Ls):
                for g in range(grid_points):
                    if g == idx[n][i] or g in idx[n]:
                        continue
                    trial = [row[:] for row in idx]
                    trial[n][i] = g
                    p = power_of(trial)
                    if p < best:
                        best, idx, improved = p, trial, True
        if not improved:
            break
    return best, [grid[n][idx[n]] for n in range(N)]


def exhaustive_oracle(scenario: Scenario, channels=None):
    """Best activation pattern by enumeration; returns ``(pattern, power)``."""
    if scenario.num_antennas > EXHAUSTIVE_MAX_M:
        raise ValueError(f"exhaustive search limited to M <= {EXHAUSTIVE_MAX_M}")
    channels = channels or build_channels(scenario)
    if scenario.num_users == 1:
        return exhaustive_single_user(channels, scenario.sinr_min, scenario.noise_power)
    pat, power, _ = exhaustive_multi_user(channels, scenario.sinr_min, scenario.noise_power,
                                          EXHAUSTIVE_MAX_M)
    return pat, power


# -- experiments ------------------------------------------------------------------------

SWEEP_KEYS = {
    "sinr_db": ("sinr_min", lambda v: float(db_to_linear(v))),
    "sinr_min": ("sinr_min", float),
    "L": ("antennas_per_waveguide", int),
    "antennas_per_waveguide": ("antennas_per_waveguide", int),
    "N": ("num_waveguides", int),
    "num_waveguides": ("num_waveguides", int),
    "K": ("num_users", int),
    "num_users": ("num_users", int),
    "span_x": ("span_x", float),
    "span_y": ("span_y", float),
    "height": ("height", float),
    "carrier_freq": ("carrier_freq", float),
    "noise_dbm": ("noise_power", lambda v: float(dbm_to_watts(v))),
    "noise_power": ("noise_power", float),
}


def apply_sweep(template: Scenario, key: str, value) -> Scenario:
    try:
        field_name, conv = SWEEP_KEYS[key]
    except KeyError:
        raise ValueError(f"unknown sweep key {key!r}; choose from {sorted(SWEEP_KEYS)}") from None
    return template.replace(**{field_name: conv(value)})


@dataclass
class ExperimentSpec:
    scenario: Scenario
    solvers: tuple = ("matching", "baseline-mimo")
    sweep_key: str | None = None
    sweep_values: tuple = ()
    trials: int = 1
    seed: int = 0
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        bad = [s for s in self.solvers if s not in SOLVERS]
        if bad:
            raise ValueError(f"unknown solvers {bad}; choose from {SOLVERS}")
        if self.trials < 0:
            raise ValueError("trials must be >= 0")
        if self.sweep_key is not None:
            for v in self.sweep_values:  # validate eagerly
                sc = apply_sweep(self.scenario, self.sweep_key, v)
                if "exhaustive" in self.solvers and sc.num_antennas > EXHAUSTIVE_MAX_M:
                    raise ValueError(f"exhaustive needs M <= {EXHAUSTIVE_MAX_M}")
        elif "exhaustive" in self.solvers and self.scenario.num_antennas > EXHAUSTIVE_MAX_M:
            raise ValueError(f"exhaustive needs M <= {EXHAUSTIVE_MAX_M}")

    @property
    def points(self):
        if self.sweep_key is None:
            return [(None, self.scenario)]
        return [(v, apply_sweep(self.scenario, self.sweep_key, v)) for v in self.sweep_values]


@dataclass
class ResultRecord:
    sweep_key: str
    sweep_value: str
    trial: int
    solver: str
    power_w: float
    power_dbm: float
    iterations: int
    gap: float
    status: str
    pattern: str
    wall_time: float = 0.0

    CSV_FIELDS = ("sweep_key", "sweep_value", "trial", "solver", "power_w", "power_dbm",
                  "iterations", "gap", "status", "pattern")

    def csv_row(self):
        return [self.sweep_key, self.sweep_value, self.trial, self.solver, _fmt(self.power_w),
                _fmt(self.power_dbm), self.iterations, _fmt(self.gap), self.status, self.pattern]


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return f"{x:.12e}"


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Counter-based stream per trial, so every solver sees the same users."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, trial])))


def trial_users(scenario: Scenario, seed: int, trial: int) -> Scenario:
    if scenario.user_positions:
        return scenario
    unit = trial_rng(seed, trial).uniform(size=(scenario.num_users, 2))
    xy = unit * np.array([scenario.span_x, scenario.span_y])
    return scenario.with_users([tuple(p) for p in xy])


def solve_one(solver: str, scenario: Scenario, options: dict | None = None):
    """Run one solver; returns ``(power, iterations, gap, status, pattern, trace)``."""
    opts = options or {}
    ch = build_channels(scenario)
    gamma, sig = scenario.sinr_min, scenario.noise_power
    eps = opts.get("eps")
    if solver in ("bnb-su", "bnb-su-equal"):
        mode = "equal-counts" if solver == "bnb-su-equal" else opts.get("mode", "per-waveguide-search")
        r = bnb_single_user(ch, gamma, sig, eps=eps, mode=mode, share_gub=opts.get("share_gub", True))
        trace = [(i, g, l) for i, _, _, g, l in r.trace_rows()]
        return r.power, r.iterations, r.gap, "optimal", str(r.pattern), trace
    if solver == "bnb-mu":
        P0 = opts.get("P0") or scenario.power_budget
        if P0 is None:
            base, _ = baseline_mimo(scenario)
            P0 = 100.0 * base if math.isfinite(base) else None
        r = bnb_multi_user(ch, gamma, sig, eps=eps, P0=P0, max_iter=opts.get("max_iter"),
                           time_limit=opts.get("time_limit"), perspective=opts.get("perspective", False),
                           tighten=opts.get("tighten", False))
        trace = [(i, g, l) for i, g, l, _, _ in r.trace]
        return r.power, r.iterations, r.gap, r.status, str(r.pattern), trace
    if solver in ("matching", "matching-vanilla"):
        rule = "vanilla" if solver == "matching-vanilla" else "welfare"
        r = welfare_matching(ch, gamma, sig, max_rounds=opts.get("max_rounds", 50), rule=rule)
        trace = [(i, p, math.nan) for i, p in enumerate(r.accepted_powers)]
        return (r.power, r.rounds, math.nan, "converged" if r.converged else "round-cap",
                str(r.pattern), trace)
    if solver == "baseline-mimo":
        p, _ = baseline_mimo(scenario, opts.get("baseline_axis", "y"))
        return p, 0, math.nan, "optimal" if math.isfinite(p) else "infeasible", "", []
    if solver == "continuous-grid":
        counts = opts.get("grid_counts")
        if counts is None:
            m = welfare_matching(ch, gamma, sig)
            counts = max(1, int(round(float(np.mean(m.pattern.counts)))))
        p, coords = continuous_grid_search(scenario, counts, opts.get("grid_points", 50),
                                           opts.get("sweeps", 3))
        desc = "|".join(",".join(f"{c:.3f}" for c in row) for row in coords)
        return p, opts.get("sweeps", 3), math.nan, "heuristic", desc, []
    if solver == "exhaustive":
        pat, p = exhaustive_oracle(scenario, ch)
        return p, 0, 0.0, "optimal", str(pat), []
    raise ValueError(f"unknown solver {solver!r}")


def _run_trial(spec: ExperimentSpec, value, scenario: Scenario, trial: int):
    sc = trial_users(scenario, spec.seed, trial)
    recs, traces = [], []
    for solver in spec.solvers:
        t0 = time.perf_counter()
        try:
            p, it, gap, status, pat, trace = solve_one(solver, sc, spec.options)
        except Exception as exc:  # recorded, not fatal
            p, it, gap, status, pat, trace = math.nan, 0, math.nan, f"error: {exc}", "", []
        dt = time.perf_counter() - t0
        dbm = float(watts_to_dbm(p)) if (isinstance(p, float) and p > 0 and math.isfinite(p)) else math.nan
        recs.append(ResultRecord(spec.sweep_key or "", "" if value is None else str(value), trial,
                                 solver, float(p), dbm, int(it), float(gap), status, pat, dt))
        traces += [(spec.sweep_key or "", "" if value is None else str(value), trial, solver) + tuple(t)
                   for t in trace]
    return recs, traces


def run_experiment(spec: ExperimentSpec, threads: int | None = None):
    """Run every (sweep point, trial, solver); returns ``(records, trace rows)``.

    Trials run on up to ``threads`` workers (``PASS_OPT_THREADS`` by
    default); results are collected in submission order so output is
    independent of scheduling.
    """
    threads = threads or thread_count()
    jobs = [(v, sc, t) for v, sc in spec.points for t in range(spec.trials)]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(lambda j: _run_trial(spec, *j), jobs))
    else:
        outs = [_run_trial(spec, *j) for j in jobs]
    records = [r for recs, _ in outs for r in recs]
    traces = [t for _, tr in outs for t in tr]
    return records, traces


def results_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ResultRecord.CSV_FIELDS)
    for r in records:
        w.writerow(r.csv_row())
    return buf.getvalue()


def trace_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sweep_key", "sweep_value", "trial", "solver", "step", "upper_w", "lower_w"])
    for r in rows:
        w.writerow(list(r[:5]) + [_fmt(float(x)) for x in r[5:]])
    return buf.getvalue()


def summarize(records):
    """Mean / min / max dBm per (sweep value, solver), in first-seen order."""
    groups = {}
    for r in records:
        groups.setdefault((r.sweep_value, r.solver), []).append(r.power_dbm)
    out = []
    for (v, s), vals in groups.items():
        arr = np.array([x for x in vals if math.isfinite(x)])
        if arr.size:
            out.append((v, s, len(vals), float(arr.mean()), float(arr.min()), float(arr.max())))
        else:
            out.append((v, s, len(vals), math.nan, math.nan, math.nan))
    return out


def summary_text(records, header: str = "") -> str:
    lines = [header] if header else []
    lines.append(f"{'sweep':>10} {'solver':>18} {'n':>4} {'mean_dBm':>10} {'min_dBm':>10} {'max_dBm':>10}")
    for v, s, n, mean, lo, hi in summarize(records):
        lines.append(f"{v:>10} {s:>18} {n:>4d} {mean:>10.4f} {lo:>10.4f} {hi:>10.4f}")
    times = {}
    for r in records:
        times.setdefault(r.solver, []).append(r.wall_time)
    lines.append("")
    lines.append("wall time per solve (s): " + ", ".join(
        f"{s}={np.mean(t):.3f}" for s, t in times.items()))
    return "\n".join(lines) + "\n"


__all__ = [
    "ExperimentSpec", "ResultRecord", "SOLVERS", "apply_sweep", "baseline_channels", "baseline_mimo",
    "continuous_grid_search", "exhaustive_oracle", "preset", "results_csv", "run_experiment",
    "solve_one", "summarize", "summary_text", "trace_csv", "trial_users", "SPEED_OF_LIGHT",
    "closed_form_power",
]
