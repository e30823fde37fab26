"""Adjustable power-radiation model.

Coupling spacing ``S`` (mm) sets the coupling coefficient through the
exponential law ``kappa = Omega0 * exp(-alpha * S)``; a pinching antenna of
length ``D`` then taps a fraction ``sin(kappa * D)`` of the field still
guided when it reaches it. Everything here works in millimetres.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import special

from . import _accel

# reject delta beyond 1 + this; within it, treat as exactly 1 (rounding noise)
FEASIBILITY_MARGIN = 1e-12


class InfeasibleTarget(ValueError):
    """A requested radiation ratio cannot be produced by any spacing."""


@dataclass(frozen=True)
class CouplingParams:
    omega0: float = 0.3300  # mm^-1
    alpha: float = 0.24615  # mm^-1
    d_pa: float = 5.0  # mm

    def __post_init__(self):
        if not (self.omega0 > 0 and self.alpha > 0 and self.d_pa > 0):
            raise ValueError("omega0, alpha and d_pa must be positive")

    @property
    def s_min(self) -> float:
        """Spacing where ``kappa * D`` reaches ``pi/2`` (full radiation)."""
        if self.omega0 * self.d_pa < math.pi / 2:
            raise ValueError("omega0 * d_pa < pi/2: full radiation is unreachable at any spacing")
        return spacing_for_kd(math.pi / 2, self)


def coupling_coefficient(S, params: CouplingParams = CouplingParams()):
    S = np.asarray(S, dtype=float)
    if np.any(S < 0):
        raise ValueError("spacing must be non-negative")
    out = params.omega0 * np.exp(-params.alpha * S)
    return float(out) if out.ndim == 0 else out


def spacing_for_kd(kd: float, params: CouplingParams) -> float:
    """Invert ``Omega0 exp(-alpha S) D = kd`` for ``S``."""
    return math.log(params.omega0 * params.d_pa / kd) / params.alpha


def radiation_ratios(active_flags: Sequence[int], spacings: Sequence[float],
                     params: CouplingParams = CouplingParams()) -> np.ndarray:
    """Amplitude radiation ratio of every antenna along one waveguide.

    ``spacings`` may hold anything (e.g. ``nan``) at inactive positions.
    Inactive antennas get ratio 0 and do not deplete the guided field.
    """
    flags = np.asarray(active_flags, dtype=float)
    S = np.asarray(spacings, dtype=float)
    if flags.shape != S.shape:
        raise ValueError("active_flags and spacings must have the same length")
    active = flags > 0
    if np.any(~np.isfinite(S[active])):
        raise ValueError("every active antenna needs a finite spacing")
    kd = np.zeros_like(S)
    kd[active] = params.omega0 * np.exp(-params.alpha * S[active]) * params.d_pa
    if np.any(kd[active] > math.pi / 2 * (1 + FEASIBILITY_MARGIN)) or np.any(kd[active] < 0):
        raise ValueError("coupling argument outside [0, pi/2]: spacing below S_min over-couples")
    return _accel.kernels.radiation_ratios(flags, kd)


@dataclass(frozen=True)
class SpacingPlan:
    active: np.ndarray  # (L,) 0/1
    spacings: np.ndarray  # (L,) mm, nan where inactive
    ratios: np.ndarray  # (L,)
    prior_active: np.ndarray  # (L,) rho_l

    def rows(self, waveguide: int = 0) -> list[tuple]:
        return [(waveguide, l, int(self.active[l]), self.spacings[l], self.ratios[l])
                for l in range(len(self.active))]


def _deltas_to_plan(flags: np.ndarray, deltas: np.ndarray, params: CouplingParams) -> SpacingPlan:
    S = np.full(flags.shape, np.nan)
    s_min = params.s_min
    for l in np.flatnonzero(flags):
        S[l] = spacing_for_kd(math.asin(deltas[l]), params)
        if S[l] < s_min - 1e-12:
            raise InfeasibleTarget(f"antenna {l}: spacing {S[l]:.6g} mm below S_min {s_min:.6g} mm")
        S[l] = max(S[l], s_min)
    rho = np.concatenate(([0], np.cumsum(flags)[:-1])).astype(int)
    return SpacingPlan(flags.astype(int), S, radiation_ratios(flags, S, params), rho)


def spacing_for_targets(targets: Sequence[float], active_flags: Sequence[int],
                        params: CouplingParams = CouplingParams()) -> SpacingPlan:
    """Sequentially choose spacings so antenna ``l`` radiates ``targets[l]``.

    Each antenna taps ``delta_l = target_l / prod_{i<l} sqrt(1 - a_i delta_i^2)``
    of what remains; its spacing then follows from ``sin(kappa D) = delta``.
    """
    flags = np.asarray(active_flags, dtype=int)
    tgt = np.asarray(targets, dtype=float)
    if flags.shape != tgt.shape:
        raise ValueError("targets and active_flags must have the same length")
    deltas = np.zeros(len(flags))
    remaining = 1.0  # amplitude still guided
    for l in range(len(flags)):
        if not flags[l]:
            continue
        if tgt[l] <= 0:
            raise InfeasibleTarget(f"antenna {l}: target ratio must be positive")
        if remaining <= 0:
            raise InfeasibleTarget(f"antenna {l}: no guided power left")
        d = tgt[l] / remaining
        if d > 1 + FEASIBILITY_MARGIN:
            raise InfeasibleTarget(f"antenna {l}: implied tap fraction {d:.6g} exceeds 1")
        if d > 1 - FEASIBILITY_MARGIN:
            d = 1.0
        deltas[l] = d
        remaining *= math.sqrt(max(1.0 - d * d, 0.0))
    return _deltas_to_plan(flags, deltas, params)


def equal_power_spacings(active_flags: Sequence[int],
                         params: CouplingParams = CouplingParams()) -> SpacingPlan:
    """Spacings giving every active antenna the ratio ``1 / sqrt(L_s)``.

    The closed form ``delta_l = 1 / sqrt(L_s - rho_l)`` only depends on how
    many active antennas remain downstream.
    """
    flags = np.asarray(active_flags, dtype=int)
    n_active = int(flags.sum())
    if n_active < 1:
        raise ValueError("at least one antenna must be active")
    deltas = np.zeros(len(flags))
    rho = 0
    for l in np.flatnonzero(flags):
        deltas[l] = 1.0 / math.sqrt(n_active - rho)
        rho += 1
    return _deltas_to_plan(flags, deltas, params)


def plans_to_csv(plans: Iterable[SpacingPlan]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["waveguide", "antenna", "active", "spacing_mm", "beta"])
    for n, plan in enumerate(plans):
        for wg, l, a, s, b in plan.rows(n):
            w.writerow([wg, l, a, "" if np.isnan(s) else f"{s:.6f}", f"{b:.12f}"])
    return buf.getvalue()


# -- analytical coupling oracles ----------------------------------------------------

@dataclass(frozen=True)
class CrossSection:
    """Core cross-section for the closed-form coupled-mode oracles.

    ``k0`` is the transverse core wavenumber and ``delta0`` the relative
    index contrast; neither follows from the fitted constants, so both are
    configuration. Use :meth:`from_target_alpha` to back-solve ``k0``.
    """

    shape: str = "rectangular"
    half_width: float = 5.0  # b, mm
    n_eff: float = 1.4
    n_clad: float = 1.0
    wavelength: float = 20.0  # lambda_f, mm
    k0: float = 0.18482
    delta0: float = 0.1

    def __post_init__(self):
        if self.shape not in ("rectangular", "circular"):
            raise ValueError("shape must be 'rectangular' or 'circular'")
        if not self.n_eff > self.n_clad >= 1:
            raise ValueError("need n_eff > n_clad >= 1")
        if not (self.half_width > 0 and self.delta0 > 0 and self.k0 > 0):
            raise ValueError("half_width, delta0 and k0 must be positive")
        if self._alpha_sq() <= 0:
            raise ValueError("evanescent decay constant is not real: k0 too large")

    @classmethod
    def from_target_alpha(cls, alpha: float, **kw) -> "CrossSection":
        probe = dict(shape="rectangular", half_width=5.0, n_eff=1.4, n_clad=1.0, wavelength=20.0)
        probe.update(kw)
        kt2 = (2 * math.pi / probe["wavelength"]) ** 2 * (probe["n_eff"] ** 2 - probe["n_clad"] ** 2)
        k0_sq = kt2 - alpha ** 2
        if k0_sq <= 0:
            raise ValueError("target alpha exceeds the evanescent limit for this cross-section")
        return cls(k0=math.sqrt(k0_sq), **probe)

    def _alpha_sq(self) -> float:
        kt = 2 * math.pi / self.wavelength
        return kt ** 2 * (self.n_eff ** 2 - self.n_clad ** 2) - self.k0 ** 2

    @property
    def alpha(self) -> float:
        return math.sqrt(self._alpha_sq())

    @property
    def propagation_constant(self) -> float:
        return math.sqrt((2 * math.pi / self.wavelength * self.n_eff) ** 2 - self.k0 ** 2)

    @property
    def v(self) -> float:
        kt = 2 * math.pi / self.wavelength
        if self.shape == "rectangular":
            return kt * self.n_eff * self.half_width * math.sqrt(2 * self.delta0)
        return kt * self.half_width * math.sqrt(self.n_eff ** 2 - self.n_clad ** 2)

    @property
    def u(self) -> float:
        beta0 = self.propagation_constant
        return self.half_width * math.sqrt((2 * math.pi / self.wavelength * self.n_eff) ** 2 - beta0 ** 2)

    @property
    def w(self) -> float:
        return self.half_width * self.alpha

    def rect_prefactor(self) -> float:
        b, a = self.half_width, self.alpha
        return (math.sqrt(2 * self.delta0) / b) * (self.k0 ** 2 * a ** 2 * b ** 4) / ((1 + a * b) * self.v ** 3)


def _check_gap(cs: CrossSection, S, shape: str) -> np.ndarray:
    if cs.shape != shape:
        raise ValueError(f"cross-section is {cs.shape}, not {shape}")
    S = np.asarray(S, dtype=float)
    if np.any(S < 2 * cs.half_width):
        raise ValueError("centre spacing must be at least the core width 2b")
    return S


def oracle_kappa_rect(cs: CrossSection, S):
    """Rectangular slab coupling coefficient from the evanescent-field overlap."""
    S = _check_gap(cs, S, "rectangular")
    out = cs.rect_prefactor() * np.exp(-cs.alpha * (S - 2 * cs.half_width))
    return float(out) if out.ndim == 0 else out


def oracle_kappa_circ(cs: CrossSection, S):
    """Circular-core coupling coefficient (modified-Bessel exterior field)."""
    S = _check_gap(cs, S, "circular")
    b, w = cs.half_width, cs.w
    pref = (math.sqrt(cs.delta0) / b) * cs.u ** 2 / (special.k1(w) ** 2 * cs.v ** 3)
    out = pref * np.sqrt(np.pi * b) / (w * S) * np.exp(-cs.alpha * (S - 2 * b))
    return float(out) if out.ndim == 0 else out


def fit_exponential(samples: Iterable[tuple[float, float]], d_pa: float = 5.0) -> CouplingParams:
    """Least-squares fit of ``ln kappa = ln Omega0 - alpha S``."""
    arr = np.asarray(list(samples), dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 2 or arr.shape[1] != 2:
        raise ValueError("need at least two (S, kappa) samples")
    S, kappa = arr[:, 0], arr[:, 1]
    if np.any(kappa <= 0):
        raise ValueError("coupling samples must be positive")
    if np.ptp(S) == 0:
        raise ValueError("degenerate samples: all spacings equal")
    slope, intercept = np.polyfit(S, np.log(kappa), 1)
    return CouplingParams(omega0=math.exp(intercept), alpha=-slope, d_pa=d_pa)


def fit_residuals(samples: Iterable[tuple[float, float]], params: CouplingParams) -> np.ndarray:
    arr = np.asarray(list(samples), dtype=float)
    model = params.omega0 * np.exp(-params.alpha * arr[:, 0])
    return (arr[:, 1] - model) / model


def read_samples_csv(text: str) -> list[tuple[float, float]]:
    rows = []
    for rec in csv.reader(io.StringIO(text)):
        if not rec or rec[0].strip().startswith("#"):
            continue
        try:
            rows.append((float(rec[0]), float(rec[1])))
        except ValueError:
            continue  # header
    return rows
