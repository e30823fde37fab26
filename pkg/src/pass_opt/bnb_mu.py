"""Globally optimal activation and beamforming for several users.

Branching runs over the binary activations and the real and imaginary parts
of the per-waveguide weights ``d`` (``W_n = sqrt(L_n) d_n``). Every box is
bounded by the McCormick/SOCP relaxation; upper bounds come from rounding
the relaxed activations and solving the fixed-activation problem. Once a
box fixes every activation, its best point is that pattern's fixed-activation
optimum, so the box is fathomed exactly.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .beamforming import solve_fixed_activation
from .bnb_su import BnBState, Box, select_box
from .model import ActivationPattern, ChannelSet, effective_channel
from .socp import MUScale, build_P2C, solve_with_retry

BOUND_SAFETY = 100.0


@dataclass(frozen=True)
class Certificate:
    xi: float
    psi_vol: float
    log10_t_max: float

    @property
    def t_max(self) -> float:
        """Iteration cap; ``inf`` when it overflows a float."""
        if self.log10_t_max > 300:
            return math.inf
        return float(math.ceil(10.0 ** self.log10_t_max - 1))


def certificate(M: int, N: int, K: int, P0: float, eps: float) -> Certificate:
    """Edge threshold and iteration cap for an ``eps``-optimal finish."""
    if min(M, N, K) < 1 or P0 <= 0 or eps <= 0:
        raise ValueError("parameters must be positive")
    B = M + 2 * N * K
    xi = eps / math.sqrt(2 * M * P0 * B)
    psi = (2 * math.sqrt(P0)) ** (2 * N * K)
    log_t = 2 * N * K * math.log10(2 * math.sqrt(P0) / xi) + (B + 1) * math.log10(2)
    return Certificate(xi, psi, log_t)


def branch_mixed(state: BnBState, M: int) -> tuple[Box, Box]:
    """BBF box, MLF edge over all coordinates (binary wins exact ties)."""
    box = select_box(state)
    e = box.edges
    top = e.max()
    cand = np.flatnonzero(e == top)
    bins = cand[cand < M]
    edge = int(bins[0]) if bins.size else int(cand[0])
    lo0, up0 = box.lower.copy(), box.upper.copy()
    lo1, up1 = box.lower.copy(), box.upper.copy()
    if edge < M:
        up0[edge] = 0.0
        lo1[edge] = 1.0
    else:
        mid = 0.5 * (box.lower[edge] + box.upper[edge])
        up0[edge] = mid
        lo1[edge] = mid
    state.boxes.remove(box)
    kids = (Box(lo0, up0, state.nodes, f_lb=box.f_lb), Box(lo1, up1, state.nodes + 1, f_lb=box.f_lb))
    state.nodes += 2
    state.boxes.extend(kids)
    return kids


def round_activation(a_relaxed: np.ndarray, lower: np.ndarray, upper: np.ndarray,
                     N: int, L: int) -> ActivationPattern | None:
    """Entrywise rounding that respects fixings and keeps every waveguide nonempty."""
    ac = np.clip(np.asarray(a_relaxed, dtype=float), lower, upper).reshape(N, L)
    lo = np.asarray(lower).reshape(N, L)
    up = np.asarray(upper).reshape(N, L)
    a = np.where(lo == 1, 1, np.where(up == 0, 0, (ac >= 0.5).astype(int))).astype(np.int8)
    for n in range(N):
        if a[n].sum() == 0:
            free = np.flatnonzero(up[n] == 1)
            if not free.size:
                return None
            a[n, free[np.argmax(ac[n, free])]] = 1
    return ActivationPattern(a)


@dataclass(frozen=True)
class FixedEval:
    power: float
    W: np.ndarray | None
    D: np.ndarray | None


def evaluate_pattern(coef: np.ndarray, pattern: ActivationPattern, gamma: float,
                     noise_power: float) -> FixedEval:
    heff = effective_channel(coef, pattern)
    sol = solve_fixed_activation(heff, gamma, noise_power)
    if sol.status != "optimal":
        return FixedEval(math.inf, None, None)
    D = sol.W / np.sqrt(np.maximum(pattern.counts, 1))[:, None]
    return FixedEval(sol.power, sol.W, D)


def upper_bound_from_projection(a_relaxed, lower, upper, coef, gamma, noise_power):
    """Round the relaxed activations and solve for that pattern.

    Returns ``(pattern, D, power)``; power is ``inf`` when infeasible.
    """
    K, N, L = coef.shape
    pat = round_activation(a_relaxed, lower, upper, N, L)
    if pat is None:
        return None, None, math.inf
    ev = evaluate_pattern(coef, pat, gamma, noise_power)
    return pat, ev.D, ev.power


@dataclass
class MUResult:
    status: str  # optimal | budget
    pattern: ActivationPattern | None
    W: np.ndarray | None
    power: float
    gub: float
    glb: float
    iterations: int
    nodes: int
    P0: float
    certificate: Certificate
    trace: list = field(default_factory=list)  # (iteration, GUB, GLB, max edge, open boxes)
    edge_threshold_hits: int = 0
    certificate_violations: int = 0
    relaxation_violations: int = 0

    @property
    def gap(self) -> float:
        return max(self.gub - self.glb, 0.0)


def multi_user_coef(channels) -> np.ndarray:
    coef = channels.coefficients() if isinstance(channels, ChannelSet) else np.asarray(channels, dtype=complex)
    if coef.ndim != 3:
        raise ValueError("expected coefficients of shape (K, N, L)")
    return coef


def bnb_multi_user(channels, gamma: float, noise_power: float, eps: float | None = None,
                   P0: float | None = None, max_iter: int | None = None,
                   time_limit: float | None = None, perspective: bool = False,
                   tighten: bool = False) -> MUResult:
    """Branch-and-bound over ``(A, Re D, Im D)``.

    ``P0`` bounds the weights (``|Re d|, |Im d| <= sqrt(P0)``); by default it
    is 100x the all-active power, and it is never allowed below that power
    so the optimum always lies inside the root box.

    ``tighten`` clips every box's weight bounds to ``+-sqrt(GUB)`` before it
    is bounded (no improving solution lies outside); ``perspective`` selects
    the perspective form of the relaxation objective. Turning both off gives
    the plain McCormick relaxation.
    """
    coef = multi_user_coef(channels)
    K, N, L = coef.shape
    M = N * L
    if eps is None:
        eps = 1e-6 * noise_power * gamma
    if eps <= 0:
        raise ValueError("eps must be positive")
    full = ActivationPattern(np.ones((N, L), dtype=np.int8))
    probe = evaluate_pattern(coef, full, gamma, noise_power)
    if P0 is None:
        P0 = 100.0 * probe.power if math.isfinite(probe.power) else None
    if P0 is None:
        raise ValueError("P0 required: the all-active pattern is infeasible")
    if math.isfinite(probe.power):
        P0 = max(P0, probe.power)
    cert = certificate(M, N, K, P0, eps)
    B = M + 2 * N * K
    gap_slope = math.sqrt(2 * M * P0 * B)
    scale = MUScale.for_problem(coef, noise_power, gamma)
    state = BnBState()
    best_W = None
    res_counts = dict(hits=0, viol=0, relax=0)

    def offer(pat, power, W):
        nonlocal best_W
        if pat is not None and power < state.gub:
            state.gub = power
            state.incumbent = pat
            best_W = W

    offer(full if math.isfinite(probe.power) else None, probe.power, probe.W)

    def bound(box: Box) -> bool:
        if np.all(box.lower[:M] == box.upper[:M]):
            pat = ActivationPattern(box.lower[:M].reshape(N, L).astype(np.int8))
            if np.any(pat.counts == 0):
                return False
            ev = evaluate_pattern(coef, pat, gamma, noise_power)
            offer(pat, ev.power, ev.W)
            return False  # exact: nothing better than this pattern's optimum inside
        lo, up = box.lower, box.upper
        if tighten and math.isfinite(state.gub):
            r_ub = math.sqrt(state.gub) * (1 + 1e-9)
            lo = lo.copy()
            up = up.copy()
            lo[M:] = np.maximum(lo[M:], -r_ub)
            up[M:] = np.minimum(up[M:], r_ub)
            if np.any(lo > up):
                return False
        prog, lay, _ = build_P2C(lo, up, coef, gamma, noise_power, scale, perspective)
        rep = solve_with_retry(prog)
        if rep.status == "infeasible":
            return False
        if rep.status == "optimal":
            lb = max(rep.objective, 0.0) * scale.ps * (1.0 - BOUND_SAFETY * rep.tolerance)
            box.f_lb = max(box.f_lb, lb)
            box.relaxed = np.clip(rep.x[:M], box.lower[:M], box.upper[:M])
        else:
            box.relaxed = 0.5 * (box.lower[:M] + box.upper[:M])
        pat, D, ub = upper_bound_from_projection(box.relaxed, box.lower[:M], box.upper[:M],
                                                 coef, gamma, noise_power)
        box.f_ub = ub
        if math.isfinite(ub):
            W = D * np.sqrt(pat.counts)[:, None]
            offer(pat, ub, W)
            if box.f_lb > ub * (1 + 1e-6) + eps:
                res_counts["relax"] += 1
        return True

    def keep(box: Box) -> bool:
        return box.f_lb < state.gub - eps and box.f_ub - box.f_lb > eps

    r = math.sqrt(P0)
    root = Box(np.concatenate([np.zeros(M), -r * np.ones(2 * N * K)]),
               np.concatenate([np.ones(M), r * np.ones(2 * N * K)]), 0)
    state.nodes = 1
    if bound(root) and keep(root):
        state.boxes.append(root)
    state.refresh_glb()
    trace = [(0, state.gub, state.glb, float(root.edges.max()), len(state.boxes))]
    start = time.perf_counter()
    status = "optimal"
    while state.boxes and state.gub - state.glb > eps:
        if max_iter is not None and state.iterations >= max_iter:
            status = "budget"
            break
        if time_limit is not None and time.perf_counter() - start > time_limit:
            status = "budget"
            break
        state.iterations += 1
        phi = float(select_box(state).edges.max())
        # gap certificate on the box about to be split
        gap = state.gub - state.glb
        if phi <= cert.xi:
            res_counts["hits"] += 1
            if gap > eps:
                res_counts["viol"] += 1
        if gap > gap_slope * phi:
            res_counts["viol"] += 1
        for kid in branch_mixed(state, M):
            if not (bound(kid) and keep(kid)):
                state.boxes.remove(kid)
        state.boxes = [b for b in state.boxes if keep(b)]
        state.refresh_glb()
        trace.append((state.iterations, state.gub, state.glb, phi, len(state.boxes)))
    if state.gub - state.glb > eps:
        status = "budget"
    return MUResult(status, state.incumbent, best_W, state.gub, state.gub, state.glb,
                    state.iterations, state.nodes, P0, cert, trace,
                    res_counts["hits"], res_counts["viol"], res_counts["relax"])


def exhaustive_multi_user(channels, gamma: float, noise_power: float, max_antennas: int = 14):
    """Best pattern by enumeration (every waveguide nonempty)."""
    coef = multi_user_coef(channels)
    K, N, L = coef.shape
    if N * L > max_antennas:
        raise ValueError(f"exhaustive search limited to M <= {max_antennas}")
    best = (math.inf, None, None)
    for bits in range(1, 1 << (N * L)):
        a = np.array([(bits >> i) & 1 for i in range(N * L)], dtype=np.int8).reshape(N, L)
        if np.any(a.sum(axis=1) == 0):
            continue
        pat = ActivationPattern(a)
        ev = evaluate_pattern(coef, pat, gamma, noise_power)
        if ev.power < best[0]:
            best = (ev.power, pat, ev.W)
    return best[1], best[0], best[2]
