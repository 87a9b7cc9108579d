"""Data-driven nominal gain from a robust semidefinite program.

Decision variables are ``P`` (n_x x n_x), ``Y`` (T x n_x), ``G2`` (T x n_q) and
``gamma``. The gain is ``K = U0 [Y, G2] diag(P, I)^{-1}`` and the surface
cancellation matrix is ``A_tilde = N S G1`` with ``G1 = Y P^{-1}``, where ``S``
is the successor data matrix (``X1`` by default, see :class:`SynthesisConfig`).

Solving strategy
----------------
``G2`` does not enter the matrix inequality, only the linear equalities
``Z0 G2 = [0; I]`` and ``S G2 = 0``; it is computed exactly by least squares.
``Y`` is parametrized as ``pinv(Z0)[:, :n_x] P + V alpha`` with ``V`` spanning
the null space of ``Z0``, so ``Z0 Y = [P; 0]`` holds by construction. Only
the null-space directions visible through ``S`` are kept, which shrinks the
``T``-sized block to at most ``n_z + n_x`` without changing feasibility or
eigenvalue margins (see ``_Layout``).

The remaining problem in ``(P, alpha, gamma)`` is solved in two phases:

1. maximize a common margin ``t`` on every strict inequality. ``t* > 0`` at a
   point that passes independent eigenvalue checks certifies feasibility.
2. minimize ``gamma`` with margins ``max(min(margin, t*/2), margin_fraction t*)``.
   If that point fails verification, the phase-1 point is returned instead.

When the disturbance input is matched (``Phi D = 0``) the objective is
degenerate: ``gamma`` can be driven down by shrinking ``P`` and ``Y`` together,
and in that limit the ``Y^T Y / eps2`` term that keeps ``G1`` small vanishes.
A margin proportional to ``t*`` keeps the minimizer away from that limit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla

from . import csvblocks
from .data import DataSet, richness_check
from .errors import ConfigurationError, FormatError, InputError
from .linalg import max_eig, min_eig, projector, right_inverse, spd_inverse, spd_right_solve, sym
from .solvers import AffineLmi, SdpProblem, get_solver

SUCCESSORS = ("X1", "X1+BU0")
UNCERTAINTY_GAINS = ("PhiD", "D")
OBJECTIVES = ("min_gamma", "feasibility")


@dataclass(frozen=True, eq=False)
class SynthesisConfig:
    """Synthesis settings.

    ``successor`` selects the data matrix ``S`` standing in for the closed-loop
    successor states: ``"X1"`` (recorded states, consistent with the data
    equation ``X1 = A Z0 + B U0 + D W0``) or ``"X1+BU0"`` (literal transcription).
    ``uncertainty_gain`` selects the matrix multiplying ``Delta`` in the
    robustness block: ``"PhiD"`` (default) or ``"D"``.
    """

    N: np.ndarray
    eps1: float = 1.0
    eps2: float = 1.0
    margin: float = 1e-6
    margin_fraction: float = 0.5
    solver_tol: float = 1e-9
    objective: str = "min_gamma"
    successor: str = "X1"
    uncertainty_gain: str = "PhiD"
    gamma_cap: float = 1e6
    rank_tol: float = 1e-8
    solver: str | None = None

    def __post_init__(self):
        N = np.atleast_2d(np.asarray(self.N, dtype=float))
        object.__setattr__(self, "N", N)
        for name in ("eps1", "eps2", "margin", "solver_tol", "gamma_cap", "rank_tol"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ConfigurationError(f"{name} must be a positive number, got {value}")
        if not 0.0 <= self.margin_fraction < 1.0:
            raise ConfigurationError(f"margin_fraction must lie in [0, 1), got {self.margin_fraction}")
        if self.objective not in OBJECTIVES:
            raise ConfigurationError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.successor not in SUCCESSORS:
            raise ConfigurationError(f"successor must be one of {SUCCESSORS}, got {self.successor!r}")
        if self.uncertainty_gain not in UNCERTAINTY_GAINS:
            raise ConfigurationError(
                f"uncertainty_gain must be one of {UNCERTAINTY_GAINS}, got {self.uncertainty_gain!r}"
            )


def successor_matrix(ds: DataSet, B: np.ndarray, successor: str = "X1") -> np.ndarray:
    if successor == "X1":
        return ds.X1
    if successor == "X1+BU0":
        return ds.X1 + B @ ds.U0
    raise ConfigurationError(f"unknown successor convention {successor!r}")


@dataclass(frozen=True, eq=False)
class LmiBlocks:
    """The 7x7 block matrix of the robust stability condition.

    Block sizes are ``(n_x, n_w, n_x, n_x, n_x, T, n_w)``. Only the upper
    triangle is stored; the lower triangle is its transpose.
    """

    S: np.ndarray
    Phi: np.ndarray
    PhiD: np.ndarray
    Delta: np.ndarray
    uncertainty: np.ndarray
    eps1: float
    eps2: float

    @property
    def n_x(self) -> int:
        return self.S.shape[0]

    @property
    def n_w(self) -> int:
        return self.PhiD.shape[1]

    @property
    def T(self) -> int:
        return self.S.shape[1]

    @property
    def sizes(self) -> tuple[int, ...]:
        n_x, n_w, T = self.n_x, self.n_w, self.T
        return (n_x, n_w, n_x, n_x, n_x, T, n_w)

    @property
    def dim(self) -> int:
        return sum(self.sizes)

    def upsilon_14(self, Y: np.ndarray) -> np.ndarray:
        return (self.S @ Y).T

    def blocks(self, P, Y, gamma) -> dict[tuple[int, int], np.ndarray]:
        """Nonzero upper-triangular blocks, 0-based ``(row, col)`` keys."""
        n_x, n_w, T = self.n_x, self.n_w, self.T
        e1, e2 = self.eps1, self.eps2
        spread = self.uncertainty @ self.Delta
        return {
            (0, 0): P,
            (0, 2): P,
            (0, 3): self.upsilon_14(Y),
            (0, 5): Y.T,
            (1, 1): gamma * np.eye(n_w),
            (1, 4): self.PhiD.T,
            (2, 2): gamma * np.eye(n_x),
            (3, 3): e1 / (1.0 + e1) * P,
            (3, 6): spread,
            (4, 4): P / e1,
            (5, 5): e2 * np.eye(T),
            (6, 6): np.eye(n_w) / e2,
        }

    def matrix(self, P, Y, gamma) -> np.ndarray:
        offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        M = np.zeros((self.dim, self.dim))
        for (i, j), block in self.blocks(P, Y, gamma).items():
            rows = slice(offsets[i], offsets[i + 1])
            cols = slice(offsets[j], offsets[j + 1])
            M[rows, cols] = block
            if i != j:
                M[cols, rows] = block.T
        return M


@dataclass(frozen=True, eq=False)
class LmiSystem:
    """Everything the solver needs: matrix blocks plus the linear equalities."""

    blocks: LmiBlocks
    Z0: np.ndarray
    U0: np.ndarray
    n_q: int

    @property
    def n_x(self) -> int:
        return self.blocks.n_x

    @property
    def T(self) -> int:
        return self.blocks.T

    def identity_target(self, P) -> np.ndarray:
        """``diag(P, I_{n_q})``, the right-hand side of ``Z0 [Y, G2]``."""
        return sla.block_diag(P, np.eye(self.n_q))


def assemble_lmi(ds: DataSet, B, D, cfg: SynthesisConfig) -> LmiSystem:
    B = np.atleast_2d(np.asarray(B, dtype=float))
    D = np.atleast_2d(np.asarray(D, dtype=float))
    N = cfg.N
    if N.shape[1] != ds.n_x:
        raise InputError(f"N has {N.shape[1]} columns, expected n_x={ds.n_x}")
    NB = N @ B
    if NB.shape[0] > B.shape[1] or np.linalg.matrix_rank(NB) < NB.shape[0]:
        raise ConfigurationError(f"N B (shape {NB.shape}) must have full row rank m <= n_u")
    Phi = projector(B, N)
    PhiD = Phi @ D
    Delta = ds.delta * np.sqrt(ds.T) * np.eye(D.shape[1])
    uncertainty = PhiD if cfg.uncertainty_gain == "PhiD" else D
    blocks = LmiBlocks(
        S=successor_matrix(ds, B, cfg.successor),
        Phi=Phi,
        PhiD=PhiD,
        Delta=Delta,
        uncertainty=uncertainty,
        eps1=float(cfg.eps1),
        eps2=float(cfg.eps2),
    )
    return LmiSystem(blocks=blocks, Z0=ds.Z0, U0=ds.U0, n_q=ds.n_z - ds.n_x)


def cancellation_gain(system: LmiSystem) -> tuple[np.ndarray, float]:
    """Minimum-norm ``G2`` with ``Z0 G2 = [0; I]`` and ``S G2 = 0``, plus its residual."""
    n_x, n_q = system.n_x, system.n_q
    lhs = np.vstack([system.Z0, system.blocks.S])
    rhs = np.vstack([np.zeros((n_x, n_q)), np.eye(n_q), np.zeros((n_x, n_q))])
    G2 = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    return G2, float(np.linalg.norm(lhs @ G2 - rhs))


class _Layout:
    """Flat decision vector ``[svec(P), vec(beta), gamma, (t)]`` on a reduced problem.

    ``Y = E [C P; beta]`` where ``E = [row basis of Z0, V W]`` has orthonormal
    columns, ``C P`` is the minimum-norm solution of ``Z0 Y = [P; 0]`` and
    ``V W`` spans the part of the null space of ``Z0`` that ``S`` can see.
    Null-space directions outside ``V W`` only enlarge ``Y^T Y`` without
    changing ``S Y``, so dropping them loses no feasibility. The congruence by
    ``E`` maps the ``eps2 I_T`` block to ``eps2 I`` of size ``n_z + r``; the
    discarded eigenvalues all equal ``eps2``, so margins are unchanged.
    """

    def __init__(self, system: LmiSystem, with_margin: bool):
        n_x = system.n_x
        Z0 = system.Z0
        n_z = Z0.shape[0]
        U, sv, Vt = np.linalg.svd(Z0, full_matrices=True)
        row_basis = Vt[:n_z].T
        null_basis = Vt[n_z:].T
        self.C = (U[:n_x, :] / sv).T
        SV = system.blocks.S @ null_basis
        if SV.size:
            _, s_sv, Wt = np.linalg.svd(SV, full_matrices=False)
            r = int(np.sum(s_sv > 1e-12 * max(s_sv[0], 1e-300)))
            W = Wt[:r].T
        else:
            W = np.zeros((0, 0))
        self.E = np.hstack([row_basis, null_basis @ W])
        self.reduced = replace(system.blocks, S=system.blocks.S @ self.E)
        self.n_x = n_x
        self.n_beta_rows = W.shape[1]
        self.iu = np.triu_indices(n_x)
        self.n_p = len(self.iu[0])
        self.n_beta = self.n_beta_rows * n_x
        self.i_gamma = self.n_p + self.n_beta
        self.i_t = self.i_gamma + 1 if with_margin else None
        self.n = self.i_gamma + (2 if with_margin else 1)

    def P(self, x):
        P = np.zeros((self.n_x, self.n_x))
        P[self.iu] = x[: self.n_p]
        return P + np.triu(P, 1).T

    def Y_reduced(self, x):
        beta = x[self.n_p : self.n_p + self.n_beta].reshape(self.n_beta_rows, self.n_x)
        return np.vstack([self.C @ self.P(x), beta])

    def Y(self, x):
        return self.E @ self.Y_reduced(x)

    def gamma(self, x):
        return x[self.i_gamma]

    def t(self, x):
        return x[self.i_t] if self.i_t is not None else 0.0


def _build_problem(system: LmiSystem, layout: _Layout, margins: float | None, gamma_cap: float):
    """Phase 1 when ``margins is None`` (maximize t), else phase 2 (minimize gamma)."""
    blk = layout.reduced
    n = layout.n
    d = blk.dim
    n_x = layout.n_x

    if margins is None:

        def lmi(x):
            return blk.matrix(layout.P(x), layout.Y_reduced(x), layout.gamma(x)) - layout.t(x) * np.eye(d)

        def p_pos(x):
            return layout.P(x) - layout.t(x) * np.eye(n_x)

        def g_pos(x):
            return np.array([[layout.gamma(x) - layout.t(x)]])

        c = np.zeros(n)
        c[layout.i_t] = -1.0
    else:

        def lmi(x):
            return blk.matrix(layout.P(x), layout.Y_reduced(x), layout.gamma(x)) - margins * np.eye(d)

        def p_pos(x):
            return layout.P(x) - margins * np.eye(n_x)

        def g_pos(x):
            return np.array([[layout.gamma(x) - margins]])

        c = np.zeros(n)
        c[layout.i_gamma] = 1.0

    def g_cap(x):
        return np.array([[gamma_cap - layout.gamma(x)]])

    lmis = [
        AffineLmi.from_affine_map(lmi, n, "robust_stability"),
        AffineLmi.from_affine_map(p_pos, n, "P_positive"),
        AffineLmi.from_affine_map(g_pos, n, "gamma_positive"),
        AffineLmi.from_affine_map(g_cap, n, "gamma_cap"),
    ]
    return SdpProblem(c=c, lmis=lmis)


@dataclass(eq=False)
class SynthesisResult:
    status: str  # feasible | infeasible | solver_error
    P: np.ndarray | None = None
    Y: np.ndarray | None = None
    G2: np.ndarray | None = None
    gamma: float = float("nan")
    G1: np.ndarray | None = None
    K: np.ndarray | None = None
    A_tilde: np.ndarray | None = None
    A_hat: np.ndarray | None = None
    residuals: dict[str, float] = field(default_factory=dict)
    message: str = ""
    successor: str = "X1"
    solver: str = ""

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"

    @property
    def G(self) -> np.ndarray:
        return np.hstack([self.G1, self.G2])


def _point_metrics(system: LmiSystem, P, Y, G2, gamma) -> dict[str, float]:
    blk = system.blocks
    target = system.identity_target(P)
    S = blk.S
    M = blk.matrix(P, Y, gamma)
    return {
        "equality_residual": float(
            np.linalg.norm(system.Z0 @ np.hstack([Y, G2]) - target) / np.linalg.norm(target)
        ),
        "cancellation_residual": float(np.linalg.norm(S @ G2)),
        "cancellation_relative": float(np.linalg.norm(S @ G2) / max(np.linalg.norm(S), 1e-300)),
        "lmi_min_eig": min_eig(M),
        "lmi_norm": float(np.linalg.norm(M, 2)),
        "P_min_eig": min_eig(P),
        "symmetry_error": float(np.max(np.abs(M - M.T))),
    }


def _strictly_feasible(metrics: dict[str, float]) -> bool:
    floor = 64 * np.finfo(float).eps * max(1.0, metrics["lmi_norm"])
    return metrics["lmi_min_eig"] > floor and metrics["P_min_eig"] > 0.0


def _finish(system: LmiSystem, cfg: SynthesisConfig, P, Y, G2, gamma, residuals, message, solver):
    P = sym(P)
    G1 = spd_right_solve(Y, P)
    K = system.U0 @ np.hstack([G1, G2])
    A_hat = system.blocks.S @ G1
    return SynthesisResult(
        status="feasible",
        P=P,
        Y=Y,
        G2=G2,
        gamma=float(gamma),
        G1=G1,
        K=K,
        A_tilde=cfg.N @ A_hat,
        A_hat=A_hat,
        residuals=residuals,
        message=message,
        successor=cfg.successor,
        solver=solver,
    )


def solve(ds: DataSet, B, D, cfg: SynthesisConfig, solver=None) -> SynthesisResult:
    """Synthesize ``K`` and ``A_tilde`` from data; never raises on infeasibility."""
    system = assemble_lmi(ds, B, D, cfg)
    richness = richness_check(ds, cfg.rank_tol)
    if not richness.rich:
        return SynthesisResult(
            status="infeasible",
            message=(
                f"Z0 is not full row rank (rank {richness.rank} < {ds.n_z}, "
                f"smallest singular value {richness.smallest_sv:.3g}); Z0 [Y, G2] = diag(P, I) has no solution"
            ),
            successor=cfg.successor,
        )
    G2, g2_res = cancellation_gain(system)
    if g2_res > 1e-8 * max(1.0, np.linalg.norm(G2)):
        return SynthesisResult(
            status="infeasible",
            message=f"cancellation equalities inconsistent (least-squares residual {g2_res:.3g})",
            successor=cfg.successor,
        )

    solver = solver or get_solver(cfg.solver, tol=cfg.solver_tol)

    layout1 = _Layout(system, with_margin=True)
    sol1 = solver.solve(_build_problem(system, layout1, None, cfg.gamma_cap))
    if sol1.status != "optimal":
        return SynthesisResult(
            status="solver_error",
            message=f"margin maximization failed: {sol1.status} ({sol1.message})",
            successor=cfg.successor,
            solver=solver.name,
        )
    x1 = sol1.x
    P1, Y1, gamma1 = layout1.P(x1), layout1.Y(x1), layout1.gamma(x1)
    t_star = float(layout1.t(x1))
    metrics1 = _point_metrics(system, P1, Y1, G2, gamma1)
    if t_star <= 0 or not _strictly_feasible(metrics1):
        return SynthesisResult(
            status="infeasible",
            message=(
                f"no strictly feasible point: best common margin t* = {t_star:.3e}, "
                f"LMI min eigenvalue {metrics1['lmi_min_eig']:.3e}, P min eigenvalue {metrics1['P_min_eig']:.3e}"
            ),
            residuals={"margin_max": t_star, **metrics1},
            successor=cfg.successor,
            solver=solver.name,
        )

    if cfg.objective == "feasibility":
        residuals = {"margin_max": t_star, "margin_used": t_star, "gamma_optimal": 0.0, **metrics1}
        return _finish(system, cfg, P1, Y1, G2, gamma1, residuals, "feasibility point", solver.name)

    margin = max(min(cfg.margin, 0.5 * t_star), cfg.margin_fraction * t_star)
    layout2 = _Layout(system, with_margin=False)
    sol2 = solver.solve(_build_problem(system, layout2, margin, cfg.gamma_cap))
    if sol2.status == "optimal":
        x2 = sol2.x
        P2, Y2, gamma2 = layout2.P(x2), layout2.Y(x2), layout2.gamma(x2)
        metrics2 = _point_metrics(system, P2, Y2, G2, gamma2)
        if _strictly_feasible(metrics2):
            residuals = {"margin_max": t_star, "margin_used": margin, "gamma_optimal": 1.0, **metrics2}
            return _finish(system, cfg, P2, Y2, G2, gamma2, residuals, f"minimal gamma ({sol2.message})", solver.name)
        note = f"gamma minimization point failed verification (LMI min eigenvalue {metrics2['lmi_min_eig']:.3e})"
    else:
        note = f"gamma minimization returned {sol2.status} ({sol2.message})"
    residuals = {"margin_max": t_star, "margin_used": t_star, "gamma_optimal": 0.0, **metrics1}
    return _finish(system, cfg, P1, Y1, G2, gamma1, residuals, f"{note}; kept feasibility point", solver.name)


def grid_search_eps(ds, B, D, cfg: SynthesisConfig, eps1_values, eps2_values, solver=None):
    """Best feasible result (smallest gamma) over an (eps1, eps2) grid, with its pair."""
    best, best_pair = None, None
    for e1 in eps1_values:
        for e2 in eps2_values:
            res = solve(ds, B, D, replace(cfg, eps1=float(e1), eps2=float(e2)), solver=solver)
            if res.feasible and (best is None or res.gamma < best.gamma):
                best, best_pair = res, (float(e1), float(e2))
    return best, best_pair


def verify_result(
    ds: DataSet,
    B,
    D,
    cfg: SynthesisConfig,
    res: SynthesisResult,
    A_true: np.ndarray | None = None,
    basis=None,
    states: np.ndarray | None = None,
) -> dict[str, float]:
    """Recompute every constraint residual from the raw data, independent of the solver.

    With ``A_true``, ``basis`` (callable x -> Q(x)), ``states`` and the
    dataset's ``W0``, also checks the sliding-surface identity
    ``N A Z + N B K Z = A_tilde x + N D d`` with ``d = -W0 G Z``.
    """
    if not res.feasible:
        raise InputError(f"cannot verify a result with status {res.status!r}")
    system = assemble_lmi(ds, B, D, cfg)
    report = _point_metrics(system, res.P, res.Y, res.G2, res.gamma)
    B = np.atleast_2d(B)
    D = np.atleast_2d(D)
    target = system.identity_target(res.P)
    K_direct = ds.U0 @ np.hstack([res.Y, res.G2]) @ np.linalg.inv(target)
    report["gain_formula_residual"] = float(np.max(np.abs(K_direct - res.K)))
    if A_true is not None and basis is not None and states is not None and ds.W0 is not None:
        N = cfg.N
        G = np.hstack([res.G1, res.G2])
        worst = 0.0
        for x in np.atleast_2d(states):
            Z = np.concatenate([x, basis(x)])
            lhs = N @ A_true @ Z + N @ B @ res.K @ Z
            d = -ds.W0 @ G @ Z
            rhs = res.A_tilde @ x + N @ D @ d
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        report["surface_identity_residual"] = worst
    return report


def nominal_lyapunov_matrix(A_hat, P, gamma) -> np.ndarray:
    """``A_hat^T P^{-1} A_hat - P^{-1} + I / gamma``; negative definite means decrease."""
    P_inv = spd_inverse(sym(P))
    return A_hat.T @ P_inv @ A_hat - P_inv + np.eye(P.shape[0]) / gamma


class NominalStability(NamedTuple):
    A_bar_hat: np.ndarray
    spectral_radius: float
    lyapunov_ok: bool
    lyapunov_max_eig: float


def nominal_stability_check(ds: DataSet, res: SynthesisResult, B) -> NominalStability:
    if not res.feasible:
        raise InputError(f"nominal stability check needs a feasible result, got {res.status!r}")
    A_hat = successor_matrix(ds, np.atleast_2d(B), res.successor) @ res.G1
    rho = float(np.max(np.abs(np.linalg.eigvals(A_hat))))
    top = max_eig(nominal_lyapunov_matrix(A_hat, res.P, res.gamma))
    return NominalStability(A_hat, rho, top < 0.0, top)


_RESULT_MATRICES = ("P", "Y", "G2", "G1", "K", "A_tilde", "A_hat")


def save_result(res: SynthesisResult, path, timestamp: bool = True) -> None:
    matrices = {name: getattr(res, name) for name in _RESULT_MATRICES if getattr(res, name) is not None}
    scalars = {"gamma": res.gamma, **{k: v for k, v in sorted(res.residuals.items())}}
    csvblocks.write(
        path,
        matrices=matrices,
        scalars=scalars,
        texts={
            "status": res.status,
            "successor": res.successor,
            "solver": res.solver,
            "message": res.message.replace("\n", " "),
        },
        title="ddsmc synthesis result",
        timestamp=timestamp,
    )


def load_result(path) -> SynthesisResult:
    matrices, scalars, texts = csvblocks.read(path)
    if "status" not in texts:
        raise FormatError(f"synthesis file {path}: missing text field 'status'")
    status = texts["status"]
    if status == "feasible":
        missing = set(_RESULT_MATRICES) - set(matrices)
        if missing:
            raise FormatError(f"synthesis file {path}: feasible result lacks {sorted(missing)}")
    gamma = scalars.pop("gamma", float("nan"))
    return SynthesisResult(
        status=status,
        gamma=gamma,
        residuals=scalars,
        message=texts.get("message", ""),
        successor=texts.get("successor", "X1"),
        solver=texts.get("solver", ""),
        **{name: matrices.get(name) for name in _RESULT_MATRICES},
    )
