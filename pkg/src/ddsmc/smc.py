"""Sliding-mode control law around a data-driven nominal gain.

The control is ``u = u_n + u_r`` with ``u_n = K Z(x)`` and::

    u_r = (N B)^+ [ -A_tilde x + (1 - q) phi(s) s - varphi(s) sgn(s) ]

where ``s = N x``, ``phi_i = 1 / cosh(sigma s_i)`` and ``varphi_i = rho_i |s_i|``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, InputError
from .linalg import right_inverse

CANCEL_READINGS = ("x", "Z")
_MAX_EXPONENT = 700.0


def sgn(v) -> np.ndarray:
    """Componentwise sign with ``sgn(0) = 0``."""
    return np.sign(np.asarray(v, dtype=float))


@dataclass(frozen=True, eq=False)
class SmcParams:
    """Sliding matrix ``N`` (m x n_x) and reaching-law constants."""

    N: np.ndarray
    q: float = 0.1
    sigma: float = 0.1
    rho: np.ndarray = (0.5,)

    def __post_init__(self):
        N = np.atleast_2d(np.asarray(self.N, dtype=float))
        rho = np.atleast_1d(np.asarray(self.rho, dtype=float)).reshape(-1)
        if rho.size == 1 and N.shape[0] > 1:
            rho = np.full(N.shape[0], rho[0])
        if rho.size != N.shape[0]:
            raise ConfigurationError(f"rho needs {N.shape[0]} entries (one per row of N), got {rho.size}")
        if not 0.0 < self.q < 1.0:
            raise ConfigurationError(f"q must lie in (0, 1), got {self.q}")
        if not np.all((rho > 0.0) & (rho < 1.0)):
            raise ConfigurationError(f"every rho_i must lie in (0, 1), got {rho}")
        if not (np.isfinite(self.sigma) and self.sigma > 0.0):
            raise ConfigurationError(f"sigma must be positive, got {self.sigma}")
        N.setflags(write=False)
        rho.setflags(write=False)
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "q", float(self.q))
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def m(self) -> int:
        return self.N.shape[0]


def sliding_variable(params: SmcParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != params.N.shape[1]:
        raise InputError(f"x must have dimension {params.N.shape[1]}, got {x.size}")
    return params.N @ x


def reaching_gains(params: SmcParams, s) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal entries ``phi`` and ``varphi`` of the reaching law at ``s``."""
    s = np.asarray(s, dtype=float).reshape(-1)
    # 2 / (e^-a + e^a) = 1 / cosh(a); the exponent saturates so phi stays in (0, 1]
    a = np.minimum(np.abs(params.sigma * s), _MAX_EXPONENT)
    e = np.exp(-a)
    phi = 2.0 * e / (1.0 + e * e)
    varphi = params.rho * np.abs(s)
    return phi, varphi


def omega_bound(params: SmcParams, f_bar) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel ``lambda_i`` and radii ``lambda_i f_bar_i`` of the quasi-sliding band."""
    f_bar = np.asarray(f_bar, dtype=float).reshape(-1)
    if f_bar.size != params.m:
        raise InputError(f"f_bar must have {params.m} entries, got {f_bar.size}")
    if np.any(f_bar < 0):
        raise InputError("f_bar must be nonnegative")
    q, rho = params.q, params.rho
    lam = np.maximum(1.0 / (2.0 - q - rho), 1.0 / (q + rho))
    return lam, lam * f_bar


@dataclass(frozen=True, eq=False)
class ControllerState:
    """Everything ``control`` needs. ``A_tilde`` is m x n_x (``cancel="x"``) or m x n_z (``"Z"``)."""

    K: np.ndarray
    A_tilde: np.ndarray
    NB_pinv: np.ndarray
    params: SmcParams
    NB: np.ndarray | None = None
    cancel: str = "x"

    def __post_init__(self):
        for name in ("K", "A_tilde", "NB_pinv"):
            arr = np.atleast_2d(np.asarray(getattr(self, name), dtype=float)).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        m, n_x = self.params.N.shape
        if self.cancel not in CANCEL_READINGS:
            raise ConfigurationError(f"cancel must be one of {CANCEL_READINGS}, got {self.cancel!r}")
        if self.NB_pinv.shape != (self.K.shape[0], m):
            raise InputError(f"NB_pinv must be {self.K.shape[0]}x{m}, got {self.NB_pinv.shape}")
        cols = n_x if self.cancel == "x" else self.K.shape[1]
        if self.A_tilde.shape != (m, cols):
            raise InputError(f"A_tilde must be {m}x{cols} for cancel={self.cancel!r}, got {self.A_tilde.shape}")
        if self.NB is not None:
            NB = np.atleast_2d(np.asarray(self.NB, dtype=float))
            if np.max(np.abs(NB @ self.NB_pinv - np.eye(m))) > 1e-10:
                raise ConfigurationError("NB_pinv is not a right inverse of N B")

    @property
    def n_u(self) -> int:
        return self.K.shape[0]

    @property
    def n_z(self) -> int:
        return self.K.shape[1]


class ControlOutput(NamedTuple):
    u: np.ndarray
    u_n: np.ndarray
    u_r: np.ndarray
    s: np.ndarray
    phi: np.ndarray
    varphi: np.ndarray


def control(ctrl: ControllerState, Z, x) -> ControlOutput:
    Z = np.asarray(Z, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float).reshape(-1)
    if Z.size != ctrl.n_z:
        raise InputError(f"Z must have dimension {ctrl.n_z}, got {Z.size}")
    params = ctrl.params
    s = sliding_variable(params, x)
    phi, varphi = reaching_gains(params, s)
    cancelled = ctrl.A_tilde @ (x if ctrl.cancel == "x" else Z)
    u_n = ctrl.K @ Z
    u_r = ctrl.NB_pinv @ (-cancelled + (1.0 - params.q) * phi * s - varphi * sgn(s))
    return ControlOutput(u_n + u_r, u_n, u_r, s, phi, varphi)


def build_controller(res, B, params: SmcParams, cancel: str = "x") -> ControllerState:
    """Controller from a feasible synthesis result.

    With ``cancel="Z"`` the cancellation matrix is zero-padded over the basis
    part, which equals ``N S G2`` whenever the cancellation equality holds.
    """
    if not res.feasible:
        raise InputError(f"cannot build a controller from a {res.status!r} synthesis result")
    B = np.atleast_2d(np.asarray(B, dtype=float))
    NB = params.N @ B
    A_tilde = res.A_tilde
    if A_tilde.shape[0] != params.m:
        raise ConfigurationError(
            f"synthesis used {A_tilde.shape[0]} sliding rows but the controller has {params.m}"
        )
    if cancel == "Z":
        A_tilde = np.hstack([A_tilde, np.zeros((params.m, res.K.shape[1] - A_tilde.shape[1]))])
    return ControllerState(
        K=res.K, A_tilde=A_tilde, NB_pinv=right_inverse(NB), params=params, NB=NB, cancel=cancel
    )


def f_bar_surrogate(params: SmcParams, D, delta: float, T: int, G, basis, states) -> np.ndarray:
    """A-priori bound on ``N D (d + w)`` over ``states`` using ``|W0 G Z| <= delta sqrt(T) |G Z|``."""
    ND = np.abs(params.N @ np.atleast_2d(D))
    envelope = max(float(np.linalg.norm(G @ np.concatenate([x, basis(x)]))) for x in np.atleast_2d(states))
    return ND @ np.full(ND.shape[1], delta + delta * np.sqrt(T) * envelope)
