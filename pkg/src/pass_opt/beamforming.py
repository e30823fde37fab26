"""Fixed-activation transmit beamforming.

For fixed effective channels the power-minimal beamformer has the
regularized-inverse structure ``w_k ~ (I + sum_i lam_i g_i g_i^H)^-1 g_k``
with ``g_k = conj(heff[k])``. The multipliers solve
``lam_k = gamma / g_k^H (I + sum_{i != k} lam_i g_i g_i^H)^-1 g_k``, a
standard interference function, so plain iteration from zero converges
whenever the problem is feasible; per-user powers then follow from the
linear system of tight SINR constraints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .socp import socp_fixed_activation

LAMBDA_TOL = 1e-10
LAMBDA_MAX_ITER = 500


class FixedPointFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class FixedSolution:
    status: str  # optimal | infeasible
    power: float
    W: np.ndarray | None
    powers: np.ndarray | None = None
    multipliers: np.ndarray | None = None
    method: str = "kkt"


def kkt_beamformer(heff: np.ndarray, gamma: float, noise_power: float,
                   tol: float = LAMBDA_TOL, max_iter: int = LAMBDA_MAX_ITER) -> FixedSolution:
    """Closed-form-direction beamformer with multipliers from fixed-point iteration.

    Raises :class:`FixedPointFailure` when the iteration does not settle or
    the implied powers are not positive (e.g. infeasible SINR targets).
    """
    heff = np.asarray(heff, dtype=complex)
    K, N = heff.shape
    cs = float(np.max(np.abs(heff)))
    if cs == 0:
        raise FixedPointFailure("all-zero effective channel")
    G = np.conj(heff / cs).T  # (N, K), column k is g_k
    norms = np.einsum("nk,nk->k", G.conj(), G).real
    if np.any(norms == 0):
        raise FixedPointFailure("a user has a zero effective channel")
    lam = np.zeros(K)
    eye = np.eye(N)
    for it in range(max_iter):
        new = np.empty(K)
        for k in range(K):
            # leave-one-out form of the stationarity condition
            others = np.delete(np.arange(K), k)
            Sk = eye + (G[:, others] * lam[others]) @ G[:, others].conj().T
            try:
                qk = np.real(G[:, k].conj() @ np.linalg.solve(Sk, G[:, k]))
            except np.linalg.LinAlgError as exc:
                raise FixedPointFailure("multipliers diverged") from exc
            with np.errstate(divide="ignore", over="ignore"):
                new[k] = gamma / qk
        if not np.all(np.isfinite(new)) or np.any(new <= 0):
            raise FixedPointFailure("multipliers diverged")
        done = np.max(np.abs(new - lam) / new) < tol
        lam = new
        if done:
            break
    else:
        raise FixedPointFailure(f"multiplier iteration did not settle in {max_iter} steps")
    Sigma = eye + (G * lam) @ G.conj().T
    dirs = np.linalg.solve(Sigma, G)
    dirs /= np.linalg.norm(dirs, axis=0)
    # tight SINR system: gain[k, j] = |g_k^H w~_j|^2
    gain = np.abs(G.conj().T @ dirs) ** 2
    A = -gain.copy()
    A[np.diag_indices(K)] = np.diag(gain) / gamma
    sig = noise_power / cs ** 2
    try:
        p = np.linalg.solve(A, np.full(K, sig))
    except np.linalg.LinAlgError as exc:
        raise FixedPointFailure("singular power system") from exc
    if np.any(p <= 0) or not np.all(np.isfinite(p)):
        raise FixedPointFailure("non-positive power: SINR targets infeasible")
    W = dirs * np.sqrt(p)
    # rotate each column so the desired received signal is real-positive
    rx = np.einsum("kn,nk->k", heff, W)
    W = W * np.exp(-1j * np.angle(rx))
    return FixedSolution("optimal", float(p.sum()), W, p, lam * noise_power / cs ** 2)


def solve_fixed_activation(heff: np.ndarray, gamma: float, noise_power: float) -> FixedSolution:
    """Power-minimal beamformer for fixed effective channels.

    Uses :func:`kkt_beamformer`; falls back to the conic solver when the
    fixed point fails, and reports ``infeasible`` with infinite power when
    neither produces a solution.
    """
    heff = np.asarray(heff, dtype=complex)
    if not np.any(heff):
        return FixedSolution("infeasible", math.inf, None, method="none")
    try:
        return kkt_beamformer(heff, gamma, noise_power)
    except FixedPointFailure:
        pass
    status, power, W = socp_fixed_activation(heff, gamma, noise_power)
    if status != "optimal":
        return FixedSolution("infeasible", math.inf, None, method="socp")
    return FixedSolution("optimal", power, W, np.sum(np.abs(W) ** 2, axis=0), method="socp")
