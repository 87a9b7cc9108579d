"""Small dense linear-algebra helpers shared by synthesis and control."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .errors import ConfigurationError


def right_inverse(M: np.ndarray, rank_tol: float = 1e-10) -> np.ndarray:
    """``M^T (M M^T)^{-1}`` for a full-row-rank ``M``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    sv = np.linalg.svd(M, compute_uv=False)
    if sv.size < M.shape[0] or sv[-1] <= rank_tol * max(sv[0], 1.0):
        raise ConfigurationError(f"matrix of shape {M.shape} is not full row rank (singular values {sv})")
    gram = M @ M.T
    return sla.solve(gram, M, assume_a="pos").T


def projector(B: np.ndarray, N: np.ndarray) -> np.ndarray:
    """``Phi = I - B (N B)^+ N``."""
    B = np.atleast_2d(B)
    return np.eye(B.shape[0]) - B @ right_inverse(N @ B) @ N


def spd_right_solve(Y: np.ndarray, P: np.ndarray) -> np.ndarray:
    """``Y P^{-1}`` for symmetric positive definite ``P`` via Cholesky."""
    factor = sla.cho_factor(P, lower=True)
    return sla.cho_solve(factor, Y.T).T


def spd_inverse(P: np.ndarray) -> np.ndarray:
    factor = sla.cho_factor(P, lower=True)
    return sla.cho_solve(factor, np.eye(P.shape[0]))


def sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def min_eig(M: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(sym(M))[0])


def max_eig(M: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(sym(M))[-1])
