"""Globally optimal activation for a single user.

With one user the best beamformer is MRT, and the minimum power for a
pattern has the closed form ``sigma^2 gamma / sum_n |sum_l a c|^2 / L_n``.
Branch-and-bound searches activation patterns for each count vector
``L_s`` using LP relaxations (McCormick on ``Q = a a'``) as bounds.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from ._accel import kernels
from .model import ActivationPattern, ChannelSet
from .socp import build_P1C, solve_with_retry

# LP objectives are inflated by this many solver tolerances before being
# turned into power lower bounds, so rounding never prunes the optimum
BOUND_SAFETY = 100.0


def single_user_coef(channels) -> np.ndarray:
    if isinstance(channels, ChannelSet):
        coef = channels.coefficients()
    else:
        coef = np.asarray(channels, dtype=complex)
    if coef.ndim == 3:
        if coef.shape[0] != 1:
            raise ValueError("single-user solver needs exactly one user")
        coef = coef[0]
    if coef.ndim != 2:
        raise ValueError("expected per-antenna coefficients of shape (N, L)")
    return coef


def mrt_beamformer(heff: np.ndarray, power: float) -> np.ndarray:
    """Unit-power MRT direction for the effective channel row, scaled to ``power``."""
    heff = np.asarray(heff, dtype=complex).reshape(-1)
    nrm = np.linalg.norm(heff)
    if nrm == 0:
        raise ValueError("all-zero effective channel")
    return math.sqrt(power) * np.conj(heff) / nrm


def pattern_gain(coef: np.ndarray, pattern: ActivationPattern | np.ndarray) -> float:
    a = pattern.a if isinstance(pattern, ActivationPattern) else np.asarray(pattern)
    return float(kernels.pattern_gains(coef, a[None].astype(np.int8))[0])


def closed_form_power(pattern, channels, gamma: float, noise_power: float) -> float:
    """Minimum single-user power for a fixed pattern (inf when the gain is zero)."""
    g = pattern_gain(single_user_coef(channels), pattern)
    return math.inf if g <= 0 else noise_power * gamma / g


@dataclass(eq=False)
class Box:
    lower: np.ndarray
    upper: np.ndarray
    index: int
    f_lb: float = -math.inf
    f_ub: float = math.inf
    relaxed: np.ndarray | None = None

    @property
    def edges(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def is_point(self) -> bool:
        return bool(np.all(self.upper == self.lower))


@dataclass
class BnBState:
    boxes: list = field(default_factory=list)
    gub: float = math.inf
    glb: float = -math.inf
    incumbent: ActivationPattern | None = None
    iterations: int = 0
    nodes: int = 0

    def refresh_glb(self):
        if self.boxes:
            self.glb = max(self.glb, min(min(b.f_lb for b in self.boxes), self.gub))
        else:
            self.glb = self.gub


def select_box(state: BnBState) -> Box:
    """Best-bound-first; ties go to the earliest-created box."""
    return min(state.boxes, key=lambda b: (b.f_lb, b.index))


def longest_edge(box: Box, prefer: np.ndarray | None = None) -> int:
    """Maximum-length-first edge, lowest index on ties.

    ``prefer`` marks coordinates that win exact-length ties (binary ones in
    the mixed search).
    """
    e = box.edges
    top = e.max()
    cand = np.flatnonzero(e == top)
    if prefer is not None:
        pref = cand[prefer[cand]]
        if pref.size:
            return int(pref[0])
    return int(cand[0])


def split_binary(box: Box, e: int, next_index: int) -> tuple[Box, Box]:
    lo0, up0 = box.lower.copy(), box.upper.copy()
    up0[e] = 0.0
    lo1, up1 = box.lower.copy(), box.upper.copy()
    lo1[e] = 1.0
    return (Box(lo0, up0, next_index, f_lb=box.f_lb), Box(lo1, up1, next_index + 1, f_lb=box.f_lb))


def branch(state: BnBState) -> tuple[Box, Box]:
    """Pick a box and edge and replace the box by its two children."""
    box = select_box(state)
    e = longest_edge(box)
    state.boxes.remove(box)
    kids = split_binary(box, e, state.nodes)
    state.nodes += 2
    state.boxes.extend(kids)
    return kids


def project_activation(a_relaxed: np.ndarray, lower: np.ndarray, upper: np.ndarray,
                       counts: np.ndarray) -> ActivationPattern | None:
    """Keep the ``L_n`` largest relaxed entries per waveguide, honouring fixings.

    Returns ``None`` when the box fixes more than ``L_n`` ones (or leaves
    too few free entries) on some waveguide.
    """
    counts = np.asarray(counts, dtype=int)
    N = counts.size
    ac = np.asarray(a_relaxed, dtype=float).reshape(N, -1)
    lo = np.asarray(lower).reshape(N, -1)
    up = np.asarray(upper).reshape(N, -1)
    out = np.zeros_like(lo, dtype=np.int8)
    for n in range(N):
        ones = np.flatnonzero(lo[n] == 1)
        free = np.flatnonzero((lo[n] == 0) & (up[n] == 1))
        need = counts[n] - ones.size
        if need < 0 or need > free.size:
            return None
        out[n, ones] = 1
        if need:
            # stable sort: ties go to the lower antenna index
            order = free[np.argsort(-ac[n, free], kind="stable")]
            out[n, order[:need]] = 1
    return ActivationPattern(out)


def _box_feasible(lower, upper, counts) -> bool:
    N = counts.size
    lo = lower.reshape(N, -1)
    up = upper.reshape(N, -1)
    return bool(np.all(lo.sum(axis=1) <= counts) and np.all(up.sum(axis=1) >= counts))


@dataclass
class SURun:
    counts: tuple
    power: float
    pattern: ActivationPattern | None
    glb: float
    nodes: int
    iterations: int
    trace: list


def _bnb_fixed_counts(coef, counts, gamma, noise_power, eps, gub, incumbent, max_iter):
    """BnB over patterns with ``sum_l a_{l,n} = counts[n]``.

    ``gub``/``incumbent`` seed the upper bound (shared across count vectors).
    """
    N, L = coef.shape
    M = N * L
    sg = noise_power * gamma
    state = BnBState(gub=gub, incumbent=incumbent)
    trace = []

    def bound(box: Box) -> bool:
        """Fill ``f_lb``/``f_ub``; return False if the box is pruned outright."""
        if not _box_feasible(box.lower, box.upper, counts):
            return False
        if box.is_point:
            pat = ActivationPattern(box.lower.reshape(N, L).astype(np.int8))
            p = closed_form_power(pat, coef, gamma, noise_power)
            box.f_lb = box.f_ub = p
            box.relaxed = box.lower.copy()
            _offer(pat, p)
            return math.isfinite(p)
        prog, lay, s = build_P1C(box.lower, box.upper, counts, coef)
        rep = solve_with_retry(prog)
        if rep.status == "infeasible":
            return False
        if rep.status == "optimal":
            obj = max(-rep.objective, 0.0) * (1.0 + BOUND_SAFETY * rep.tolerance) * s ** 2
            lb = sg / obj if obj > 0 else math.inf
            box.f_lb = max(box.f_lb, lb)
            box.relaxed = np.clip(rep.x[:M], 0.0, 1.0)
        else:
            # solver trouble: keep the parent bound, project from the midpoint
            box.relaxed = 0.5 * (box.lower + box.upper)
        pat = project_activation(box.relaxed, box.lower, box.upper, counts)
        if pat is not None:
            box.f_ub = closed_form_power(pat, coef, gamma, noise_power)
            _offer(pat, box.f_ub)
        return True

    def _offer(pat, p):
        if p < state.gub:
            state.gub = p
            state.incumbent = pat

    def keep(box: Box) -> bool:
        # non-optimality, and fathoming of boxes whose bounds already meet
        if box.f_lb >= state.gub - eps:
            return False
        if box.f_ub - box.f_lb <= eps:
            return False
        return True

    root = Box(np.zeros(M), np.ones(M), 0)
    state.nodes = 1
    if bound(root) and keep(root):
        state.boxes.append(root)
    state.refresh_glb()
    trace.append((0, state.gub, state.glb))
    while state.boxes and state.gub - state.glb > eps and state.iterations < max_iter:
        state.iterations += 1
        for kid in branch(state):
            if not (bound(kid) and keep(kid)):
                state.boxes.remove(kid)
        # a better incumbent can retire boxes created earlier
        state.boxes = [b for b in state.boxes if keep(b)]
        state.refresh_glb()
        trace.append((state.iterations, state.gub, state.glb))
    return SURun(tuple(int(c) for c in counts), state.gub, state.incumbent, state.glb,
                 state.nodes, state.iterations, trace)


@dataclass
class SUResult:
    counts: tuple
    pattern: ActivationPattern
    w: np.ndarray
    power: float
    gap: float
    iterations: int
    nodes: int
    max_tree_nodes: int
    runs: list

    def trace_rows(self):
        """(global iteration, counts, local iteration, GUB, GLB) rows."""
        rows, offset = [], 0
        for run in self.runs:
            for it, gub, glb in run.trace:
                rows.append((offset + it, "-".join(map(str, run.counts)), it, gub, glb))
            offset += len(run.trace)
        return rows


def count_vectors(N: int, L: int, mode: str):
    if mode == "equal-counts":
        return [(c,) * N for c in range(L, 0, -1)]
    if mode == "per-waveguide-search":
        vecs = list(itertools.product(range(L, 0, -1), repeat=N))
        return sorted(vecs, key=lambda v: -sum(v))
    raise ValueError(f"unknown mode {mode!r}")


def bnb_single_user(channels, gamma: float, noise_power: float, eps: float | None = None,
                    mode: str = "per-waveguide-search", share_gub: bool = True,
                    max_iter: int = 1_000_000) -> SUResult:
    """Branch-and-bound over activation patterns for one user.

    ``eps`` defaults to ``1e-6 * sigma^2 * gamma``. ``share_gub`` carries the
    incumbent across count vectors; with it off each count vector is solved
    from scratch and the best result is kept.
    """
    coef = single_user_coef(channels)
    if not np.any(coef):
        raise ValueError("infeasible: all-zero channel")
    N, L = coef.shape
    if eps is None:
        eps = 1e-6 * noise_power * gamma
    if eps <= 0:
        raise ValueError("eps must be positive")
    gub, inc = math.inf, None
    runs = []
    for counts in count_vectors(N, L, mode):
        run = _bnb_fixed_counts(coef, np.array(counts), gamma, noise_power, eps,
                                gub if share_gub else math.inf,
                                inc if share_gub else None, max_iter)
        runs.append(run)
        if run.power < gub:
            gub, inc = run.power, run.pattern
    if inc is None or not math.isfinite(gub):
        raise ValueError("infeasible: no pattern yields a nonzero effective channel")
    glb = min(min(r.glb for r in runs), gub)
    counts = tuple(int(c) for c in inc.counts)
    heff = np.einsum("nl,nl->n", coef, inc.equal_power_ratios())
    return SUResult(counts, inc, mrt_beamformer(heff, gub), gub, max(gub - glb, 0.0),
                    sum(r.iterations for r in runs), sum(r.nodes for r in runs),
                    max(r.nodes for r in runs), runs)


def exhaustive_single_user(channels, gamma: float, noise_power: float, chunk: int = 1 << 16):
    """Minimum over every pattern with at least one antenna per waveguide."""
    coef = single_user_coef(channels)
    N, L = coef.shape
    rows = np.array(list(itertools.product((0, 1), repeat=L))[1:], dtype=np.int8)  # nonempty
    best_g, best = -1.0, None
    idx = itertools.product(range(len(rows)), repeat=N)
    while True:
        block = list(itertools.islice(idx, chunk))
        if not block:
            break
        pats = rows[np.array(block)]  # (P, N, L)
        g = kernels.pattern_gains(coef, pats)
        i = int(np.argmax(g))
        if g[i] > best_g:
            best_g, best = g[i], pats[i].copy()
    return ActivationPattern(best), noise_power * gamma / best_g
