"""Pure-numpy versions of the compiled kernels (same signatures)."""
import numpy as np


def radiation_ratios(flags, kd):
    flags = np.asarray(flags, dtype=float)
    s = np.sin(np.asarray(kd, dtype=float)) * (flags > 0)
    # field left in the waveguide when antenna l is reached
    left = np.concatenate(([1.0], np.cumprod(np.sqrt(np.maximum(1.0 - s * s, 0.0)))[:-1]))
    return s * left


def pattern_gains(coef, patterns):
    """Single-user objective ``sum_n |sum_l a c|^2 / L_n`` for a batch of patterns.

    ``coef`` is (N, L) complex, ``patterns`` is (P, N, L) of 0/1.
    """
    coef = np.asarray(coef, dtype=complex)
    pats = np.asarray(patterns, dtype=float)
    sums = np.einsum("pnl,nl->pn", pats, coef)
    counts = pats.sum(axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(counts > 0, np.abs(sums) ** 2 / np.maximum(counts, 1), 0.0)
    return terms.sum(axis=1)
