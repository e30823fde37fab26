"""Welfare-driven many-to-many matching between waveguides and antenna indices.

A matching is the set of active ``(l, n)`` pairs. Starting from one antenna
per waveguide, swaps (add, replace, exchange) are applied whenever they
strictly reduce the total transmit power of the power-minimal beamformer
for the resulting pattern.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .beamforming import kkt_beamformer, solve_fixed_activation  # noqa: F401  (re-export)
from .model import ActivationPattern, ChannelSet, effective_channel, watts_to_dbm

REL_MARGIN = 1e-9
DEFAULT_MAX_ROUNDS = 50


@dataclass(frozen=True)
class SwapOp:
    kind: str  # add | replace | exchange
    remove: tuple = ()  # (l, n) pairs leaving the matching
    add: tuple = ()  # (l, n) pairs entering it

    def __post_init__(self):
        if self.kind not in ("add", "replace", "exchange"):
            raise ValueError(f"unknown swap kind {self.kind!r}")

    def apply(self, a: np.ndarray) -> np.ndarray:
        out = a.copy()
        for l, n in self.remove:
            out[n, l] = 0
        for l, n in self.add:
            out[n, l] = 1
        return out

    def valid_for(self, a: np.ndarray) -> bool:
        if not all(a[n, l] == 1 for l, n in self.remove):
            return False
        if self.kind == "exchange":
            return True
        return all(a[n, l] == 0 for l, n in self.add)

    @property
    def waveguides(self) -> set:
        return {n for _, n in self.remove + self.add}

    @property
    def antennas(self) -> set:
        return {l for l, _ in self.remove + self.add}


@dataclass
class MatchingState:
    a: np.ndarray  # (N, L) int8
    coef: np.ndarray  # (K, N, L)
    gamma: float
    noise_power: float
    W: np.ndarray | None = None
    power: float = math.inf

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.int8).copy()
        if np.any(self.a.sum(axis=1) == 0):
            raise ValueError("every waveguide must be matched with at least one antenna")
        if self.W is None:
            self.refresh()

    def refresh(self):
        sol = solve_fixed_activation(effective_channel(self.coef, self.pattern), self.gamma, self.noise_power)
        self.W = sol.W
        self.power = sol.power if sol.status == "optimal" else math.inf

    @property
    def pattern(self) -> ActivationPattern:
        return ActivationPattern(self.a)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        """Matched ``(l, n)`` pairs in waveguide-major order."""
        N, L = self.a.shape
        return [(l, n) for n in range(N) for l in range(L) if self.a[n, l]]

    @property
    def utility(self) -> float:
        return -self.power

    def utilities(self):
        """``(U_n per waveguide, U_l per antenna index, U total)``."""
        N, L = self.a.shape
        if self.W is None:
            return np.full(N, -math.inf), np.full(L, -math.inf), -math.inf
        per_wg = np.sum(np.abs(self.W) ** 2, axis=1)
        U_n = -per_wg
        d_sq = per_wg / np.maximum(self.a.sum(axis=1), 1)  # sum_k |d_{n,k}|^2
        U_l = -(self.a * d_sq[:, None]).sum(axis=0)
        return U_n, U_l, -float(np.sum(per_wg))

    def with_pattern(self, a: np.ndarray) -> "MatchingState":
        return MatchingState(a, self.coef, self.gamma, self.noise_power)


def _adds(a) -> Iterator[SwapOp]:
    N, L = a.shape
    for n in range(N):
        for l in range(L):
            if not a[n, l]:
                yield SwapOp("add", (), ((l, n),))


def _replaces(a, l, n) -> Iterator[SwapOp]:
    for lp in range(a.shape[1]):
        if lp != l and not a[n, lp]:
            yield SwapOp("replace", ((l, n),), ((lp, n),))


def _exchanges(a, l, n, pairs) -> Iterator[SwapOp]:
    for lp, np_ in pairs:
        if np_ == n or lp == l:
            continue  # identity swap
        # a target pair may already be matched; the exchange then nets one pair fewer
        yield SwapOp("exchange", ((l, n), (lp, np_)), ((l, np_), (lp, n)))


def propose_swaps(state: MatchingState) -> list[SwapOp]:
    """All feasible swaps of the current matching: adds, replaces, exchanges."""
    a = state.a
    pairs = state.pairs
    out = list(_adds(a))
    for l, n in pairs:
        out += list(_replaces(a, l, n))
    for l, n in pairs:
        out += list(_exchanges(a, l, n, pairs))
    return out


def _improves(new: MatchingState, old: MatchingState) -> bool:
    if not math.isfinite(new.power):
        return False
    if not math.isfinite(old.power):
        return True
    return new.power < old.power - REL_MARGIN * old.power


def _vanilla_improves(new: MatchingState, old: MatchingState, swap: SwapOp) -> bool:
    if not math.isfinite(new.power):
        return False
    if not math.isfinite(old.power):
        return True
    Un0, Ul0, _ = old.utilities()
    Un1, Ul1, _ = new.utilities()
    tol = REL_MARGIN * old.power
    before = [Un0[n] for n in swap.waveguides] + [Ul0[l] for l in swap.antennas]
    after = [Un1[n] for n in swap.waveguides] + [Ul1[l] for l in swap.antennas]
    no_loss = all(y >= x - tol for x, y in zip(before, after))
    gain = any(y > x + tol for x, y in zip(before, after))
    return no_loss and gain


def apply_if_welfare_improving(state: MatchingState, swap: SwapOp, rule: str = "welfare"):
    """Return ``(state', accepted)``; the state is unchanged when rejected."""
    if not swap.valid_for(state.a):
        return state, False
    new_a = swap.apply(state.a)
    if np.any(new_a.sum(axis=1) == 0):
        return state, False
    new = state.with_pattern(new_a)
    ok = _improves(new, state) if rule == "welfare" else _vanilla_improves(new, state, swap)
    return (new, True) if ok else (state, False)


def initial_matching(coef: np.ndarray) -> np.ndarray:
    """Each waveguide takes the antenna with the strongest single-user gain."""
    K, N, L = coef.shape
    strength = np.abs(coef).max(axis=0)  # (N, L)
    a = np.zeros((N, L), dtype=np.int8)
    a[np.arange(N), np.argmax(strength, axis=1)] = 1
    return a


@dataclass
class MatchingResult:
    state: MatchingState
    power: float
    rounds: int
    converged: bool
    accepted_powers: list = field(default_factory=list)  # power after each accepted swap
    round_log: list = field(default_factory=list)  # (round, evaluated, accepted, power dBm)
    visited: int = 0

    @property
    def pattern(self) -> ActivationPattern:
        return self.state.pattern

    @property
    def W(self):
        return self.state.W


def welfare_matching(channels, gamma: float, noise_power: float,
                     max_rounds: int = DEFAULT_MAX_ROUNDS, rule: str = "welfare",
                     initial: np.ndarray | None = None) -> MatchingResult:
    """Swap matching with first-improvement acceptance.

    ``rule="welfare"`` accepts a swap when total power strictly drops;
    ``rule="vanilla"`` requires that no involved agent's own utility drops
    and at least one rises.
    """
    coef = channels.coefficients() if isinstance(channels, ChannelSet) else np.asarray(channels, dtype=complex)
    if rule not in ("welfare", "vanilla"):
        raise ValueError("rule must be 'welfare' or 'vanilla'")
    state = MatchingState(initial_matching(coef) if initial is None else initial, coef, gamma, noise_power)
    accepted_powers = [state.power]
    log = []
    seen = {state.a.tobytes()}
    converged = False
    rounds = 0
    while rounds < max_rounds:
        rounds += 1
        evaluated = accepted = 0

        def attempt(swap):
            nonlocal state, evaluated, accepted
            if not swap.valid_for(state.a):
                return False
            evaluated += 1
            state, ok = apply_if_welfare_improving(state, swap, rule)
            if ok:
                accepted += 1
                accepted_powers.append(state.power)
                key = state.a.tobytes()
                if key in seen:
                    raise RuntimeError("matching revisited a previous state")
                seen.add(key)
            return ok

        for swap in list(_adds(state.a)):
            attempt(swap)
        for l, n in list(state.pairs):
            if not state.a[n, l]:
                continue
            for swap in list(_replaces(state.a, l, n)):
                if attempt(swap):
                    break  # (l, n) left the matching
            if not state.a[n, l]:
                continue
            for swap in list(_exchanges(state.a, l, n, state.pairs)):
                if attempt(swap):
                    break
        log.append((rounds, evaluated, accepted, float(watts_to_dbm(state.power))
                    if math.isfinite(state.power) else math.inf))
        if accepted == 0:
            converged = True
            break
    return MatchingResult(state, state.power, rounds, converged, accepted_powers, log, len(seen))


def verify_pairwise_stable(state: MatchingState, rule: str = "welfare") -> bool:
    """True when no feasible swap improves the matching."""
    for swap in propose_swaps(state):
        _, ok = apply_if_welfare_improving(state, swap, rule)
        if ok:
            return False
    return True
