"""Backend-neutral semidefinite programs.

A problem is stated over a flat decision vector ``x``::

    minimize    c @ x
    subject to  F0_k + sum_i x_i F_ik  >= 0   (PSD, one per LMI k)
                A_eq @ x == b_eq

Backends only ever see this form. Select one with ``get_solver(name)`` or the
``DDSMC_SOLVER`` environment variable (``cvxopt`` (default), ``clarabel``, ``scs``,
``cvxpy-cvxopt``).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
import scipy.sparse as sp

SOLVER_ENV = "DDSMC_SOLVER"
DEFAULT_SOLVER = "cvxopt"


@dataclass(frozen=True)
class AffineLmi:
    """``F0 + mat(coeffs @ x)`` with column-major vectorization."""

    F0: np.ndarray
    coeffs: sp.csc_matrix
    name: str = ""

    @property
    def dim(self) -> int:
        return self.F0.shape[0]

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        d = self.dim
        return self.F0 + np.asarray(self.coeffs @ x).reshape((d, d), order="F")

    @classmethod
    def from_affine_map(cls, fn: Callable[[np.ndarray], np.ndarray], n: int, name: str = ""):
        """Build from any affine ``fn(x) -> symmetric matrix`` by probing unit vectors."""
        F0 = np.asarray(fn(np.zeros(n)), dtype=float)
        d = F0.shape[0]
        cols = []
        e = np.zeros(n)
        for i in range(n):
            e[i] = 1.0
            cols.append(sp.csc_matrix((np.asarray(fn(e)) - F0).reshape(d * d, 1, order="F")))
            e[i] = 0.0
        coeffs = sp.hstack(cols, format="csc") if cols else sp.csc_matrix((d * d, 0))
        coeffs.eliminate_zeros()
        return cls(F0=F0, coeffs=coeffs, name=name)


@dataclass
class SdpProblem:
    c: np.ndarray
    lmis: list[AffineLmi]
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.c.size


@dataclass
class SdpSolution:
    status: str  # optimal | infeasible | unbounded | error
    x: np.ndarray | None
    duals: list[np.ndarray] | None = None
    message: str = ""
    solver: str = ""
    info: dict = field(default_factory=dict)


class SdpSolver(Protocol):
    name: str

    def solve(self, problem: SdpProblem) -> SdpSolution: ...


class CvxpySolver:
    """Any conic backend reachable through cvxpy."""

    def __init__(self, method: str = "CLARABEL", tol: float = 1e-8):
        self.method = method.upper()
        self.tol = tol
        self.name = f"cvxpy-{self.method.lower()}"

    def _options(self):
        if self.method == "CLARABEL":
            return {
                "tol_gap_abs": self.tol,
                "tol_gap_rel": self.tol,
                "tol_feas": self.tol,
                "max_iter": 500,
            }
        if self.method == "SCS":
            return {"eps_abs": self.tol, "eps_rel": self.tol, "max_iters": 200_000}
        if self.method == "CVXOPT":
            return {"abstol": self.tol, "reltol": self.tol, "feastol": self.tol}
        return {}

    def solve(self, problem: SdpProblem) -> SdpSolution:
        import cvxpy as cp

        x = cp.Variable(problem.n)
        constraints = []
        for lmi in problem.lmis:
            d = lmi.dim
            F = lmi.F0 + cp.reshape(lmi.coeffs @ x, (d, d), order="F")
            constraints.append((F + F.T) / 2 >> 0)
        if problem.A_eq is not None:
            constraints.append(problem.A_eq @ x == problem.b_eq)
        prob = cp.Problem(cp.Minimize(problem.c @ x), constraints)
        try:
            prob.solve(solver=self.method, **self._options())
        except cp.error.SolverError as exc:
            return SdpSolution("error", None, message=str(exc), solver=self.name)
        status = prob.status
        info = {"raw_status": status}
        if status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            duals = [c.dual_value for c in constraints[: len(problem.lmis)]]
            return SdpSolution(
                "optimal", np.asarray(x.value), duals, message=status, solver=self.name, info=info
            )
        if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return SdpSolution("infeasible", None, message=status, solver=self.name, info=info)
        if status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
            return SdpSolution("unbounded", None, message=status, solver=self.name, info=info)
        return SdpSolution("error", None, message=str(status), solver=self.name, info=info)


class CvxoptSolver:
    """Direct call to ``cvxopt.solvers.sdp`` (no modelling layer)."""

    name = "cvxopt"

    def __init__(self, tol: float = 1e-8):
        self.tol = tol

    def solve(self, problem: SdpProblem) -> SdpSolution:
        from cvxopt import matrix, solvers

        # cvxopt form: hs - sum_i x_i Gs[:, i] in PSD cone
        Gs = [matrix(-lmi.coeffs.toarray()) for lmi in problem.lmis]
        hs = [matrix(np.array(lmi.F0, dtype=float)) for lmi in problem.lmis]
        kwargs = {}
        if problem.A_eq is not None:
            kwargs["A"] = matrix(np.asarray(problem.A_eq, dtype=float))
            kwargs["b"] = matrix(np.asarray(problem.b_eq, dtype=float).reshape(-1, 1))
        options = {
            "show_progress": False,
            "abstol": self.tol,
            "reltol": self.tol,
            "feastol": self.tol,
            "maxiters": 200,
        }
        try:
            sol = solvers.sdp(matrix(np.asarray(problem.c, dtype=float)), Gs=Gs, hs=hs, options=options, **kwargs)
        except (ValueError, ArithmeticError) as exc:
            return SdpSolution("error", None, message=str(exc), solver=self.name)
        status = sol["status"]
        info = {"raw_status": status}
        if status == "optimal" or (status == "unknown" and sol["x"] is not None):
            duals = [np.array(z) for z in sol["zs"]] if sol.get("zs") is not None else None
            return SdpSolution(
                "optimal", np.array(sol["x"]).reshape(-1), duals, message=status, solver=self.name, info=info
            )
        if status == "primal infeasible":
            return SdpSolution("infeasible", None, message=status, solver=self.name, info=info)
        if status == "dual infeasible":
            return SdpSolution("unbounded", None, message=status, solver=self.name, info=info)
        return SdpSolution("error", None, message=status, solver=self.name, info=info)


def get_solver(name: str | None = None, tol: float = 1e-8) -> SdpSolver:
    """Solver by name; falls back to ``$DDSMC_SOLVER`` and then direct CVXOPT."""
    name = (name or os.environ.get(SOLVER_ENV) or DEFAULT_SOLVER).lower()
    if name == "cvxopt":
        return CvxoptSolver(tol=tol)
    if name.startswith("cvxpy-"):
        name = name[len("cvxpy-"):]
    if name in ("clarabel", "scs", "cvxopt"):
        return CvxpySolver(name, tol=tol)
    raise ValueError(f"unknown SDP solver {name!r}")
