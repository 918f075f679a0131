"""Rank-revealing linear algebra shared by the dynamics and constraint code.

All rank and kernel decisions in the package go through these helpers so that
a single tolerance knob controls them. The knob is relative to the largest
singular value and can be overridden with the AMECH_TOL environment variable.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import RankAmbiguous

__all__ = [
    "rank_rtol",
    "null_space",
    "row_space_rank",
    "decide_rank",
    "min_norm_lstsq",
    "AMBIGUITY_BAND",
]

DEFAULT_RANK_RTOL = 1e-9

# normalized singular values strictly inside this band are refused, not rounded
AMBIGUITY_BAND = (1e-11, 1e-7)


def rank_rtol() -> float:
    """Relative singular-value threshold, possibly overridden by AMECH_TOL."""
    raw = os.environ.get("AMECH_TOL")
    if raw is None:
        return DEFAULT_RANK_RTOL
    value = float(raw)
    if value <= 0.0:
        raise ValueError(f"AMECH_TOL must be positive, got {raw!r}")
    return value


def null_space(a: np.ndarray, rtol: float | None = None) -> np.ndarray:
    """Orthonormal basis of the null space of a, as columns.

    A matrix with no rows constrains nothing, so the basis is the identity.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    rows, cols = a.shape
    if cols == 0:
        return np.zeros((0, 0))
    if rows == 0 or not np.any(a):
        return np.eye(cols)
    if rtol is None:
        rtol = rank_rtol()
    _, s, vt = np.linalg.svd(a)
    cutoff = rtol * s[0]
    rank = int(np.sum(s > cutoff))
    return vt[rank:].T


def row_space_rank(a: np.ndarray, rtol: float | None = None) -> int:
    """Numerical rank with the shared relative threshold."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0 or not np.any(a):
        return 0
    if rtol is None:
        rtol = rank_rtol()
    s = np.linalg.svd(a, compute_uv=False)
    return int(np.sum(s > rtol * s[0]))


def decide_rank(a: np.ndarray) -> int:
    """Rank with an ambiguity guard for constraint-algorithm decisions.

    Normalized singular values that fall strictly inside AMBIGUITY_BAND are
    neither counted nor dropped; they raise RankAmbiguous so the caller can
    surface the problem instead of silently picking a manifold dimension.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0 or not np.any(a):
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    normalized = s / s[0]
    low, high = AMBIGUITY_BAND
    inside = normalized[(normalized > low) & (normalized < high)]
    if inside.size:
        raise RankAmbiguous(inside, AMBIGUITY_BAND)
    return int(np.sum(normalized >= high))


def min_norm_lstsq(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    """Minimum-norm least-squares solution of a x = b and its residual.

    The residual is the infinity norm of a x - b, reported so callers can
    distinguish an exactly-solvable system from a genuine least-squares fit.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float)
    if a.shape[1] == 0:
        x = np.zeros(0)
        residual = float(np.max(np.abs(b))) if b.size else 0.0
        return x, residual
    x, _, _, _ = np.linalg.lstsq(a, b, rcond=rank_rtol())
    residual = float(np.max(np.abs(a @ x - b))) if b.size else 0.0
    return x, residual
