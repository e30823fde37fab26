"""Command-line entry point: ``pass-opt <verb> --config file.toml``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import harness
from .bnb_mu import bnb_multi_user
from .bnb_su import bnb_single_user
from .config import ConfigError, RunConfig, load_config, parse_sweep
from .coupling import (CouplingParams, equal_power_spacings, fit_exponential, fit_residuals,
                       plans_to_csv, read_samples_csv, spacing_for_targets)
from .matching import welfare_matching
from .model import build_channels, build_geometry, channel_table, watts_to_dbm
from .socp import MUScale, build_P1C, build_P2C

VERBS = ("su-solve", "mu-solve", "match-solve", "baseline", "exhaustive", "experiment",
         "coupling-fit", "spacing-plan")
VERB_SOLVER = {"su-solve": "bnb-su", "mu-solve": "bnb-mu", "match-solve": "matching",
               "baseline": "baseline-mimo", "exhaustive": "exhaustive"}


def _rows_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _e(x: float) -> str:
    return harness._fmt(float(x))


def _dbm(p: float) -> float:
    return float(watts_to_dbm(p)) if p > 0 and math.isfinite(p) else math.nan


class Outputs:
    def __init__(self, out: Path):
        self.out = out
        out.mkdir(parents=True, exist_ok=True)
        self.written = []

    def write(self, name: str, text: str):
        path = self.out / name
        path.write_text(text)
        self.written.append(path)


def _record(sc_value, solver, power, iterations, gap, status, pattern):
    return harness.ResultRecord("", sc_value, 0, solver, float(power), _dbm(power), int(iterations),
                                float(gap), status, pattern)


def _summary(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=False, default=float) + "\n"


def cmd_su(cfg: RunConfig, sc, out: Outputs, args):
    t0 = time.perf_counter()
    ch = build_channels(sc)
    r = bnb_single_user(ch, sc.sinr_min, sc.noise_power, eps=cfg.solver.get("eps"),
                        mode=cfg.solver.get("mode", "per-waveguide-search"),
                        share_gub=cfg.solver.get("share_gub", True))
    out.write("results.csv", harness.results_csv(
        [_record("", "bnb-su", r.power, r.iterations, r.gap, "optimal", str(r.pattern))]))
    out.write("trace.csv", _rows_csv(["iteration", "counts", "local_iteration", "gub_w", "glb_w"],
                                     [(i, c, j, _e(g), _e(l)) for i, c, j, g, l in r.trace_rows()]))
    out.write("summary.txt", _summary({
        "solver": "bnb-su", "pattern": str(r.pattern), "L_s": list(r.counts), "power_w": r.power,
        "power_dbm": _dbm(r.power), "iterations": r.iterations, "nodes": r.nodes,
        "max_tree_nodes": r.max_tree_nodes, "gap_w": r.gap,
        "wall_time_s": round(time.perf_counter() - t0, 3)}))
    if args.dump_conic:
        N, L = sc.num_waveguides, sc.antennas_per_waveguide
        prog, _, _ = build_P1C(np.zeros(N * L), np.ones(N * L), np.full(N, L), ch.coefficients()[0])
        out.write("conic.txt", prog.to_text())


def cmd_mu(cfg: RunConfig, sc, out: Outputs, args):
    t0 = time.perf_counter()
    ch = build_channels(sc)
    P0 = cfg.solver.get("P0") or sc.power_budget
    if P0 is None:
        base, _ = harness.baseline_mimo(sc)
        P0 = 100.0 * base if math.isfinite(base) else None
    r = bnb_multi_user(ch, sc.sinr_min, sc.noise_power, eps=cfg.solver.get("eps"), P0=P0,
                       max_iter=cfg.solver.get("max_iter"), time_limit=cfg.solver.get("time_limit"),
                       perspective=cfg.solver.get("perspective", False),
                       tighten=cfg.solver.get("tighten", False))
    out.write("results.csv", harness.results_csv(
        [_record("", "bnb-mu", r.power, r.iterations, r.gap, r.status, str(r.pattern))]))
    out.write("trace.csv", _rows_csv(["iteration", "gub_w", "glb_w", "max_edge", "open_boxes"],
                                     [(i, _e(g), _e(l), _e(p), n) for i, g, l, p, n in r.trace]))
    if r.W is not None:
        N, K = r.W.shape
        out.write("weights.csv", _rows_csv(["n", "k", "re", "im"], [
            (n, k, _e(r.W[n, k].real), _e(r.W[n, k].imag)) for n in range(N) for k in range(K)]))
    out.write("summary.txt", _summary({
        "solver": "bnb-mu", "status": r.status, "pattern": str(r.pattern),
        "L_s": [int(c) for c in r.pattern.counts] if r.pattern is not None else None,
        "power_w": r.power, "power_dbm": _dbm(r.power), "glb_w": r.glb, "gap_w": r.gap,
        "iterations": r.iterations, "nodes": r.nodes, "P0_w": r.P0, "xi": r.certificate.xi,
        "log10_t_max": r.certificate.log10_t_max,
        "wall_time_s": round(time.perf_counter() - t0, 3)}))
    if args.dump_conic:
        coef = ch.coefficients()
        K, N, L = coef.shape
        M, rr = N * L, math.sqrt(r.P0)
        lo = np.concatenate([np.zeros(M), -rr * np.ones(2 * N * K)])
        prog, _, _ = build_P2C(lo, -lo + np.concatenate([np.ones(M), np.zeros(2 * N * K)]), coef,
                               sc.sinr_min, sc.noise_power, MUScale.for_problem(coef, sc.noise_power, sc.sinr_min))
        out.write("conic.txt", prog.to_text())
    return 0 if r.status == "optimal" else 3


def cmd_match(cfg: RunConfig, sc, out: Outputs, args):
    t0 = time.perf_counter()
    r = welfare_matching(build_channels(sc), sc.sinr_min, sc.noise_power,
                         max_rounds=cfg.solver.get("max_rounds", 50), rule=cfg.solver.get("rule", "welfare"))
    status = "converged" if r.converged else "round-cap"
    out.write("results.csv", harness.results_csv(
        [_record("", "matching", r.power, r.rounds, math.nan, status, str(r.pattern))]))
    out.write("trace.csv", _rows_csv(["round", "swaps_evaluated", "swaps_accepted", "power_dbm"],
                                     [(i, e, a, f"{p:.9f}") for i, e, a, p in r.round_log]))
    out.write("summary.txt", _summary({
        "solver": "matching", "rule": cfg.solver.get("rule", "welfare"), "status": status,
        "pattern": str(r.pattern), "L_s": [int(c) for c in r.pattern.counts], "power_w": r.power,
        "power_dbm": _dbm(r.power), "rounds": r.rounds,
        "wall_time_s": round(time.perf_counter() - t0, 3)}))


def cmd_simple(verb: str, cfg: RunConfig, sc, out: Outputs, args):
    solver = VERB_SOLVER[verb]
    t0 = time.perf_counter()
    p, it, gap, status, pat, _ = harness.solve_one(solver, sc, cfg.solver)
    out.write("results.csv", harness.results_csv([_record("", solver, p, it, gap, status, pat)]))
    out.write("trace.csv", _rows_csv(["step", "upper_w", "lower_w"], []))
    out.write("summary.txt", _summary({
        "solver": solver, "status": status, "pattern": pat, "power_w": p, "power_dbm": _dbm(p),
        "wall_time_s": round(time.perf_counter() - t0, 3)}))


def cmd_experiment(cfg: RunConfig, out: Outputs, args, solvers=None):
    spec = harness.ExperimentSpec(cfg.scenario, solvers=tuple(solvers or cfg.solvers),
                                  sweep_key=cfg.sweep_key, sweep_values=cfg.sweep_values,
                                  trials=cfg.trials, seed=cfg.seed, options=cfg.solver)
    records, traces = harness.run_experiment(spec)
    out.write("results.csv", harness.results_csv(records))
    out.write("trace.csv", harness.trace_csv(traces))
    head = (f"solvers={','.join(spec.solvers)} sweep={spec.sweep_key or '-'} "
            f"trials={spec.trials} seed={spec.seed}")
    out.write("summary.txt", harness.summary_text(records, head))
    failed = [r for r in records if r.status.startswith("error")]
    return 4 if failed else 0


def cmd_fit(cfg: RunConfig, out: Outputs, args):
    src = args.samples or cfg.samples
    if not src:
        raise ConfigError("coupling-fit needs --samples FILE or [coupling] samples = \"FILE\"")
    path = Path(src)
    if not path.is_absolute() and not path.exists():
        path = cfg.base_dir / path
    samples = read_samples_csv(path.read_text())
    params = fit_exponential(samples, d_pa=cfg.coupling.d_pa)
    res = fit_residuals(samples, params)
    out.write("results.csv", _rows_csv(["spacing_mm", "kappa_per_mm", "model_per_mm", "rel_residual"], [
        (_e(s), _e(k), _e(params.omega0 * math.exp(-params.alpha * s)), _e(e))
        for (s, k), e in zip(samples, res)]))
    out.write("trace.csv", _rows_csv(["step"], []))
    out.write("summary.txt", _summary({
        "omega0_per_mm": params.omega0, "alpha_per_mm": params.alpha, "d_pa_mm": params.d_pa,
        "s_min_mm": params.s_min, "samples": len(samples),
        "max_abs_rel_residual": float(np.max(np.abs(res)))}))


def cmd_spacing(cfg: RunConfig, sc, out: Outputs, args):
    params: CouplingParams = cfg.coupling
    active = cfg.active or [[1] * sc.antennas_per_waveguide] * sc.num_waveguides
    plans = []
    for n, flags in enumerate(active):
        if cfg.targets:
            plans.append(spacing_for_targets(cfg.targets[n], flags, params))
        else:
            plans.append(equal_power_spacings(flags, params))
    out.write("results.csv", plans_to_csv(plans))
    out.write("trace.csv", _rows_csv(["step"], []))
    out.write("summary.txt", _summary({
        "omega0_per_mm": params.omega0, "alpha_per_mm": params.alpha, "d_pa_mm": params.d_pa,
        "s_min_mm": params.s_min, "waveguides": len(plans),
        "beta_sq_sum": [float(np.sum(p.ratios ** 2)) for p in plans]}))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pass-opt", description="Pinching-antenna activation and beamforming.")
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", help="TOML file with [scenario], [coupling], [solver], [experiment]")
    p.add_argument("--sweep", help="key=v1,v2,... (overrides [experiment] sweep)")
    p.add_argument("--seed", type=int, help="seed for random user drops")
    p.add_argument("--trials", type=int, help="trials per sweep point")
    p.add_argument("--out", default="pass_opt_out", help="output directory")
    p.add_argument("--samples", help="CSV of (spacing mm, kappa 1/mm) for coupling-fit")
    p.add_argument("--dump-channels", action="store_true", help="write channels.csv")
    p.add_argument("--dump-conic", action="store_true", help="write the root relaxation as conic.txt")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.trials is not None:
            cfg.trials = args.trials
        if args.sweep:
            cfg.sweep_key, cfg.sweep_values = parse_sweep(args.sweep)
        out = Outputs(Path(args.out))
        verb = args.verb
        if verb == "coupling-fit":
            code = cmd_fit(cfg, out, args)
        elif verb == "experiment":
            code = cmd_experiment(cfg, out, args)
        elif verb in VERB_SOLVER and (cfg.sweep_key or cfg.trials > 1):
            code = cmd_experiment(cfg, out, args, solvers=[VERB_SOLVER[verb]])
        else:
            sc = harness.trial_users(cfg.scenario, cfg.seed, 0)
            if args.dump_channels:
                out.write("channels.csv", channel_table(build_geometry(sc), build_channels(sc)))
            if verb == "su-solve":
                code = cmd_su(cfg, sc, out, args)
            elif verb == "mu-solve":
                code = cmd_mu(cfg, sc, out, args)
            elif verb == "match-solve":
                code = cmd_match(cfg, sc, out, args)
            elif verb == "spacing-plan":
                code = cmd_spacing(cfg, sc, out, args)
            else:
                code = cmd_simple(verb, cfg, sc, out, args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"pass-opt: error: {exc}", file=sys.stderr)
        return 2
    for path in out.written:
        print(path)
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
