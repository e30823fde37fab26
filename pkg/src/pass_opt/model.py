"""Physical layer of a pinching-antenna system.

Geometry, free-space and in-waveguide responses, effective channels and
SINR evaluation. Arrays indexed by antenna use the waveguide-major layout
``(N, L)``; the flat index of antenna ``l`` on waveguide ``n`` is
``m = n * L + l``.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SPEED_OF_LIGHT = 3.0e8


def watts_to_dbm(p):
    """Convert watts to dBm (``10 log10(P / 1 mW)``)."""
    return 10.0 * np.log10(np.asarray(p, dtype=float) / 1e-3)


def dbm_to_watts(p_dbm):
    return 1e-3 * 10.0 ** (np.asarray(p_dbm, dtype=float) / 10.0)


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


@dataclass(frozen=True)
class Waveguide:
    """One waveguide: the axis it runs along and its feed point ``(x, y)``."""

    axis: str
    feed: tuple[float, float]

    def __post_init__(self):
        if self.axis not in ("x", "y"):
            raise ValueError(f"waveguide axis must be 'x' or 'y', got {self.axis!r}")


@dataclass(frozen=True)
class Scenario:
    num_waveguides: int
    num_users: int
    antennas_per_waveguide: int
    span_x: float = 10.0
    span_y: float = 10.0
    height: float = 5.0
    carrier_freq: float = 15e9
    effective_index: float = 1.4
    noise_power: float = 1e-11
    sinr_min: float = 100.0
    user_positions: tuple[tuple[float, float], ...] = ()
    waveguide_layout: tuple[Waveguide, ...] = ()
    power_budget: float | None = None

    def __post_init__(self):
        if self.num_waveguides < 1 or self.num_users < 1 or self.antennas_per_waveguide < 1:
            raise ValueError("N, K and L must all be >= 1")
        for name in ("height", "carrier_freq", "noise_power", "sinr_min", "span_x", "span_y"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.effective_index <= 0:
            raise ValueError("effective_index must be positive")
        if not self.waveguide_layout:
            object.__setattr__(self, "waveguide_layout", tuple(
                default_layout(self.num_waveguides, self.span_x, self.span_y)))
        if len(self.waveguide_layout) != self.num_waveguides:
            raise ValueError("waveguide_layout must have one entry per waveguide")
        users = tuple((float(x), float(y)) for x, y in self.user_positions)
        object.__setattr__(self, "user_positions", users)
        if users and len(users) != self.num_users:
            raise ValueError(f"expected {self.num_users} user positions, got {len(users)}")
        lam = self.carrier_wavelength
        for wg in self.waveguide_layout:
            span = self.span_x if wg.axis == "x" else self.span_y
            if span / self.antennas_per_waveguide <= lam:
                raise ValueError(
                    f"antenna spacing {span / self.antennas_per_waveguide:.4g} m does not "
                    f"exceed the carrier wavelength {lam:.4g} m")

    @property
    def num_antennas(self) -> int:
        return self.num_waveguides * self.antennas_per_waveguide

    @property
    def carrier_wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def guided_wavelength(self) -> float:
        return self.carrier_wavelength / self.effective_index

    def with_users(self, positions: Sequence[tuple[float, float]]) -> "Scenario":
        return _replace(self, user_positions=tuple(map(tuple, positions)), num_users=len(positions))

    def random_users(self, rng: np.random.Generator) -> "Scenario":
        """Users drawn uniformly over ``[0, S_x] x [0, S_y]``."""
        xy = rng.uniform(size=(self.num_users, 2)) * np.array([self.span_x, self.span_y])
        return self.with_users([tuple(p) for p in xy])

    def replace(self, **changes) -> "Scenario":
        return _replace(self, **changes)


def _replace(sc: Scenario, **changes) -> Scenario:
    # a derived default layout follows span / waveguide-count changes
    if "waveguide_layout" not in changes and {"span_x", "span_y", "num_waveguides"} & changes.keys():
        if sc.waveguide_layout == tuple(default_layout(sc.num_waveguides, sc.span_x, sc.span_y)):
            changes["waveguide_layout"] = ()
    return dataclasses.replace(sc, **changes)


def default_layout(num_waveguides: int, span_x: float, span_y: float) -> list[Waveguide]:
    """Feed points of the reference deployment.

    Up to two waveguides run along x with feeds at ``(0, n S_y / 2)``; a third
    and fourth run along y with feeds at ``((n - 3) S_x / 2, 0)``.
    """
    if num_waveguides > 4:
        raise ValueError("the default layout defines at most 4 waveguides; "
                         "pass waveguide_layout explicitly")
    out = []
    for n in range(1, num_waveguides + 1):
        if n <= 2:
            out.append(Waveguide("x", (0.0, n * span_y / 2)))
        else:
            out.append(Waveguide("y", ((n - 3) * span_x / 2, 0.0)))
    return out


@dataclass(frozen=True)
class Geometry:
    antenna_positions: np.ndarray  # (N, L, 3)
    feed_points: np.ndarray  # (N, 3)
    user_positions: np.ndarray  # (K, 3)
    guided_wavelength: float
    carrier_wavelength: float

    @property
    def feed_distances(self) -> np.ndarray:
        return np.linalg.norm(self.antenna_positions - self.feed_points[:, None, :], axis=-1)

    @property
    def user_distances(self) -> np.ndarray:
        """Antenna-to-user distances, shape ``(N, L, K)``."""
        diff = self.antenna_positions[:, :, None, :] - self.user_positions[None, None, :, :]
        return np.linalg.norm(diff, axis=-1)


def build_geometry(scenario: Scenario) -> Geometry:
    if not scenario.user_positions:
        raise ValueError("scenario has no user positions")
    L = scenario.antennas_per_waveguide
    h = scenario.height
    cells = (np.arange(L) + 0.5) / L
    ant = np.zeros((scenario.num_waveguides, L, 3))
    feeds = np.zeros((scenario.num_waveguides, 3))
    for n, wg in enumerate(scenario.waveguide_layout):
        fx, fy = wg.feed
        feeds[n] = (fx, fy, h)
        if wg.axis == "x":
            ant[n, :, 0] = fx + scenario.span_x * cells
            ant[n, :, 1] = fy
        else:
            ant[n, :, 0] = fx
            ant[n, :, 1] = fy + scenario.span_y * cells
        ant[n, :, 2] = h
    users = np.zeros((scenario.num_users, 3))
    users[:, :2] = np.asarray(scenario.user_positions, dtype=float)
    return Geometry(ant, feeds, users, scenario.guided_wavelength, scenario.carrier_wavelength)


def _phase(d: np.ndarray, wavelength: float) -> np.ndarray:
    # reduce d / wavelength modulo 1 before scaling by 2*pi
    frac = np.mod(np.asarray(d, dtype=float) / wavelength, 1.0)
    return np.exp(-2j * np.pi * frac)


@dataclass(frozen=True)
class ChannelSet:
    free_space: np.ndarray  # (N, L, K) complex
    in_waveguide: np.ndarray  # (N, L) complex, unit modulus
    reference_gain: float

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.free_space.shape

    def coefficients(self) -> np.ndarray:
        """Per-antenna, per-user products ``g~ * h`` with shape ``(K, N, L)``."""
        return np.transpose(self.free_space * self.in_waveguide[:, :, None], (2, 0, 1))


def reference_gain(carrier_freq: float) -> float:
    return SPEED_OF_LIGHT / (4 * np.pi * carrier_freq)


def free_space_channels(geometry: Geometry, scenario: Scenario) -> np.ndarray:
    """Spherical-wavefront LoS channel ``sqrt(phi) exp(-j 2 pi d / lambda) / d``."""
    d = geometry.user_distances
    if np.any(d <= 0):
        raise ValueError("zero antenna-user distance")
    phi = reference_gain(scenario.carrier_freq)
    return np.sqrt(phi) * _phase(d, geometry.carrier_wavelength) / d


def in_waveguide_phases(geometry: Geometry) -> np.ndarray:
    return _phase(geometry.feed_distances, geometry.guided_wavelength)


def build_channels(scenario: Scenario, geometry: Geometry | None = None) -> ChannelSet:
    geometry = geometry or build_geometry(scenario)
    return ChannelSet(free_space_channels(geometry, scenario), in_waveguide_phases(geometry),
                      reference_gain(scenario.carrier_freq))


@dataclass(frozen=True)
class ActivationPattern:
    """Binary activation grid ``a[n, l]``."""

    a: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.a)
        if arr.ndim != 2:
            raise ValueError("activation pattern must be 2-D (N, L)")
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError("activation entries must be 0 or 1")
        object.__setattr__(self, "a", arr.astype(np.int8))

    @classmethod
    def from_flat(cls, bits: Iterable[int], N: int, L: int) -> "ActivationPattern":
        return cls(np.asarray(list(bits), dtype=np.int8).reshape(N, L))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]], N: int, L: int) -> "ActivationPattern":
        a = np.zeros((N, L), dtype=np.int8)
        for l, n in pairs:
            a[n, l] = 1
        return cls(a)

    @property
    def counts(self) -> np.ndarray:
        return self.a.sum(axis=1)

    @property
    def flat(self) -> np.ndarray:
        return self.a.reshape(-1)

    def equal_power_ratios(self) -> np.ndarray:
        counts = self.counts
        with np.errstate(divide="ignore"):
            beta = np.where(counts > 0, 1.0 / np.sqrt(np.maximum(counts, 1)), 0.0)
        return self.a * beta[:, None]

    def __str__(self) -> str:
        return "|".join("".join(str(int(v)) for v in row) for row in self.a)


def effective_channel(channels: ChannelSet | np.ndarray, pattern: ActivationPattern,
                      ratios: np.ndarray | None = None) -> np.ndarray:
    """Per-user effective channel rows, shape ``(K, N)``.

    Row ``k`` gives the complex gain from each waveguide feed to user ``k``,
    so user ``k`` receives ``heff[k] @ w``. ``ratios`` defaults to the
    equal-power split ``1 / sqrt(L_n)`` over the active antennas.
    """
    coef = channels.coefficients() if isinstance(channels, ChannelSet) else np.asarray(channels)
    K, N, L = coef.shape
    if pattern.a.shape != (N, L):
        raise ValueError(f"pattern shape {pattern.a.shape} does not match channels {(N, L)}")
    if ratios is None:
        ratios = pattern.equal_power_ratios()
    ratios = np.asarray(ratios, dtype=float)
    if ratios.shape != (N, L):
        raise ValueError("ratios must have shape (N, L)")
    if np.any((pattern.a == 0) & (ratios != 0)):
        raise ValueError("nonzero radiation ratio on an inactive antenna")
    return np.einsum("knl,nl->kn", coef, pattern.a * ratios)


def sinr_of(W: np.ndarray, heff: np.ndarray, noise_power: float) -> np.ndarray:
    """Per-user SINR for beamformer ``W`` (N, K) and effective channels (K, N)."""
    W = np.asarray(W)
    heff = np.asarray(heff)
    if W.shape != heff.T.shape:
        raise ValueError(f"W shape {W.shape} incompatible with channels {heff.shape}")
    gains = np.abs(heff @ W) ** 2  # [k, j] = |h_k w_j|^2
    signal = np.diag(gains)
    interference = gains.sum(axis=1) - signal
    return signal / (interference + noise_power)


@dataclass(frozen=True)
class BeamformingSolution:
    W: np.ndarray
    total_power: float
    per_user_sinr: np.ndarray

    @classmethod
    def from_weights(cls, W: np.ndarray, heff: np.ndarray, noise_power: float) -> "BeamformingSolution":
        W = np.asarray(W, dtype=complex)
        return cls(W, float(np.sum(np.abs(W) ** 2)), sinr_of(W, heff, noise_power))


def channel_table(geometry: Geometry, channels: ChannelSet) -> str:
    """CSV dump with one row per (l, n, k): distance, modulus and phase of h."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["l", "n", "k", "distance_m", "abs_h", "arg_h"])
    d = geometry.user_distances
    h = channels.free_space
    N, L, K = h.shape
    for n in range(N):
        for l in range(L):
            for k in range(K):
                w.writerow([l, n, k, f"{d[n, l, k]:.9e}", f"{abs(h[n, l, k]):.9e}",
                            f"{math.atan2(h[n, l, k].imag, h[n, l, k].real):.9e}"])
    return buf.getvalue()
