"""Closed-loop runs, runtime verification of the reaching and Lyapunov claims, and sweeps."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .data import ExcitationSpec, collect
from .errors import CollectionError, DivergenceError, InputError, NumericError
from .linalg import projector, spd_inverse, sym
from .plants import STREAM_SIMULATION, DisturbanceSpec, PlantModel, draw_disturbances, eval_basis, step
from .smc import ControllerState, SmcParams, build_controller, control, omega_bound, sgn
from .synthesis import SynthesisConfig, SynthesisResult, solve, successor_matrix

DEFAULT_BLOWUP = 1e6
DEFAULT_X0 = (1.0, 0.0)
DEFAULT_STEPS = {"pendulum": 300, "cart_spring": 1500}
SIM_MODES = ("smc", "nominal")


@dataclass(frozen=True)
class Oracle:
    """Simulation-only truth used by the verification checks (never by the controller)."""

    W0: np.ndarray
    G1: np.ndarray
    G2: np.ndarray
    D: np.ndarray
    A_hat: np.ndarray
    PhiD: np.ndarray
    P: np.ndarray
    gamma: float

    @property
    def G(self) -> np.ndarray:
        return np.hstack([self.G1, self.G2])

    @classmethod
    def from_result(cls, ds, res: SynthesisResult, model: PlantModel, N) -> "Oracle":
        if ds.W0 is None:
            raise InputError("oracle needs the dataset's recorded disturbances W0")
        if not res.feasible:
            raise InputError(f"oracle needs a feasible synthesis result, got {res.status!r}")
        B = model.B
        return cls(
            W0=ds.W0,
            G1=res.G1,
            G2=res.G2,
            D=np.asarray(model.D),
            A_hat=successor_matrix(ds, B, res.successor) @ res.G1,
            PhiD=projector(B, np.atleast_2d(N)) @ model.D,
            P=res.P,
            gamma=res.gamma,
        )


@dataclass(frozen=True)
class SimSpec:
    """One run. ``controller=None`` is the open loop ``u = 0``.

    ``mode="nominal"`` applies only ``u_n = K Z(x)`` (no sliding-mode term).
    """

    model: PlantModel
    controller: ControllerState | None
    dist: DisturbanceSpec
    x0: tuple = DEFAULT_X0
    steps: int = 300
    blowup: float = DEFAULT_BLOWUP
    oracle: Oracle | None = None
    mode: str = "smc"

    def __post_init__(self):
        if self.mode not in SIM_MODES:
            raise InputError(f"mode must be one of {SIM_MODES}, got {self.mode!r}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise InputError(f"steps must be a positive integer, got {self.steps}")
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if x0.size != self.model.n_x:
            raise InputError(f"x0 must have dimension {self.model.n_x}, got {x0.size}")
        if self.controller is not None:
            ctrl = self.controller
            if ctrl.n_u != self.model.n_u or ctrl.n_z != self.model.n_z:
                raise InputError(
                    f"controller expects n_u={ctrl.n_u}, n_z={ctrl.n_z}; "
                    f"plant has n_u={self.model.n_u}, n_z={self.model.n_z}"
                )
        object.__setattr__(self, "x0", tuple(float(v) for v in x0))


@dataclass(eq=False)
class SimTrace:
    """States have ``steps + 1`` rows; inputs, disturbances and residues have ``steps``."""

    x: np.ndarray
    u: np.ndarray
    u_n: np.ndarray
    u_r: np.ndarray
    s: np.ndarray
    w: np.ndarray
    V: np.ndarray
    f: np.ndarray | None = None
    s_predicted: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return self.u.shape[0]


def disturbance_residue(oracle: Oracle, N, Z, w) -> np.ndarray:
    """``N D (d + w)`` with ``d = -W0 G Z``: what the reaching law has to absorb."""
    d = -oracle.W0 @ (oracle.G @ Z)
    return np.atleast_2d(N) @ oracle.D @ (d + w)


def run(spec: SimSpec) -> SimTrace:
    model, ctrl = spec.model, spec.controller
    n = spec.steps
    W = draw_disturbances(spec.dist, n, model.n_w, STREAM_SIMULATION)
    N = ctrl.params.N if ctrl is not None else None
    m = N.shape[0] if N is not None else 0

    X = np.empty((n + 1, model.n_x))
    U = np.zeros((n, model.n_u))
    Un = np.zeros((n, model.n_u))
    Ur = np.zeros((n, model.n_u))
    S = np.empty((n + 1, m))
    F = np.empty((n, m)) if spec.oracle is not None and ctrl is not None else None
    S_pred = np.empty((n, m)) if ctrl is not None else None
    P_inv = spd_inverse(sym(spec.oracle.P)) if spec.oracle is not None else None

    x = np.array(spec.x0, dtype=float)
    X[0] = x
    for k in range(n):
        Z = eval_basis(model, x)
        if ctrl is not None:
            out = control(ctrl, Z, x)
            Un[k], S[k] = out.u_n, out.s
            if spec.mode == "smc":
                U[k], Ur[k] = out.u, out.u_r
            else:
                U[k] = out.u_n
            params = ctrl.params
            S_pred[k] = (1.0 - params.q) * out.phi * out.s - out.varphi * sgn(out.s)
            if F is not None:
                F[k] = disturbance_residue(spec.oracle, N, Z, W[k])
        try:
            x = step(model, x, U[k], W[k])
        except NumericError as exc:
            raise DivergenceError(f"non-finite state at step {k + 1}: {exc}", step=k + 1) from None
        if not np.all(np.abs(x) <= spec.blowup):
            raise DivergenceError(f"state left the blow-up bound {spec.blowup:g} at step {k + 1}", step=k + 1)
        X[k + 1] = x
    if ctrl is not None:
        S[n] = N @ x
    V = np.einsum("ki,ij,kj->k", X, P_inv, X) if P_inv is not None else np.full(n + 1, np.nan)
    return SimTrace(
        x=X,
        u=U,
        u_n=Un,
        u_r=Ur,
        s=S,
        w=W,
        V=V,
        f=F,
        s_predicted=S_pred,
        meta={
            "x0": spec.x0,
            "delta": spec.dist.delta,
            "seed": spec.dist.seed,
            "open_loop": ctrl is None,
            "mode": spec.mode,
        },
    )


class ReachingReport(NamedTuple):
    f_bar_obs: np.ndarray
    lam: np.ndarray
    radii: np.ndarray
    in_omega: np.ndarray  # (steps + 1, m)
    toward_zero: np.ndarray  # (steps, m): s moves toward zero
    no_overshoot: np.ndarray  # (steps, m): s does not jump past -s
    active: np.ndarray  # (steps, m): |s| outside the band, where both conditions must hold
    violations: int
    first_entry: int | None
    residence: float
    residue_error: float  # max |s(k+1) - reaching law - f(k)|, checks the cancellation identity


def check_reaching(trace: SimTrace, params: SmcParams) -> ReachingReport:
    """Reaching conditions outside the band ``|s_i| <= lambda_i f_bar_i`` and band residence.

    Outside the band each step must move ``s_i`` toward zero without
    overshooting past ``-s_i``. ``f_bar`` is the largest observed residue.
    """
    if trace.f is None:
        raise InputError("reaching check needs a trace recorded with an oracle")
    s, s_next = trace.s[:-1], trace.s[1:]
    f_bar = np.max(np.abs(trace.f), axis=0) if trace.steps else np.zeros(params.m)
    lam, radii = omega_bound(params, f_bar)
    sign = sgn(s)
    toward_zero = (s_next - s) * sign < 0
    no_overshoot = (s_next + s) * sign > 0
    active = np.abs(s) > radii
    violations = int(np.sum(active & ~(toward_zero & no_overshoot)))
    in_omega = np.all(np.abs(trace.s) <= radii, axis=1)
    hits = np.flatnonzero(in_omega)
    first = int(hits[0]) if hits.size else None
    residence = float(np.mean(in_omega[first:])) if first is not None else 0.0
    residue_error = float(np.max(np.abs(s_next - trace.s_predicted - trace.f))) if trace.steps else 0.0
    return ReachingReport(
        f_bar_obs=f_bar,
        lam=lam,
        radii=radii,
        in_omega=np.repeat(in_omega[:, None], params.m, axis=1),
        toward_zero=toward_zero,
        no_overshoot=no_overshoot,
        active=active,
        violations=violations,
        first_entry=first,
        residence=residence,
        residue_error=residue_error,
    )


class LyapunovReport(NamedTuple):
    values: np.ndarray  # left-hand side per step, nan at the origin
    holds: np.ndarray  # bool per step (False at the origin, which is excluded)
    counted: int
    fraction: float
    worst: float


def check_lyapunov(trace: SimTrace, oracle: Oracle, model: PlantModel) -> LyapunovReport:
    """Dissipation inequality on the nominal data-based map along the recorded states.

    ``x+ = A_hat x + Phi D w_bar`` with ``w_bar = w - W0 G2 Q(x)``, then
    ``V(x+) - V(x) + |x|^2 / gamma - gamma |w_bar|^2 < 0`` with ``V = x' P^-1 x``.
    """
    P_inv = spd_inverse(sym(oracle.P))
    g = oracle.gamma
    values = np.full(trace.steps, np.nan)
    for k in range(trace.steps):
        x = trace.x[k]
        if not np.any(x):
            continue
        q = model.basis(x)
        w_bar = trace.w[k] - oracle.W0 @ (oracle.G2 @ q)
        x_next = oracle.A_hat @ x + oracle.PhiD @ w_bar
        values[k] = x_next @ P_inv @ x_next - x @ P_inv @ x + x @ x / g - g * (w_bar @ w_bar)
    counted_mask = ~np.isnan(values)
    holds = np.zeros(trace.steps, dtype=bool)
    holds[counted_mask] = values[counted_mask] < 0
    counted = int(np.sum(counted_mask))
    fraction = float(np.sum(holds) / counted) if counted else 1.0
    worst = float(np.nanmax(values)) if counted else float("nan")
    return LyapunovReport(values, holds, counted, fraction, worst)


def converged(trace: SimTrace, tol: float = 0.05, tail: float = 0.2) -> bool:
    """``|x(k)|_inf <= tol`` for every k in the last ``tail`` fraction of the horizon."""
    n = trace.x.shape[0]
    start = n - max(1, int(np.ceil(tail * n)))
    return bool(np.all(np.abs(trace.x[start:]) <= tol))


def trace_to_csv(trace: SimTrace, reaching: ReachingReport | None = None) -> str:
    """Header row then one row per k = 0..steps; quantities undefined at k = steps are blank."""
    n_x, n_u, n_w, m = trace.x.shape[1], trace.u.shape[1], trace.w.shape[1], trace.s.shape[1]
    header = (
        ["k"]
        + [f"x_{i + 1}" for i in range(n_x)]
        + [f"u_{i + 1}" for i in range(n_u)]
        + [f"s_{i + 1}" for i in range(m)]
        + [f"w_{i + 1}" for i in range(n_w)]
        + ["V", "in_omega", "cond9a", "cond9b"]
    )
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)

    def flag(value):
        return "1" if value else "0"

    for k in range(trace.steps + 1):
        last = k == trace.steps
        row = [str(k)] + [repr(float(v)) for v in trace.x[k]]
        row += [""] * n_u if last else [repr(float(v)) for v in trace.u[k]]
        row += [repr(float(v)) for v in trace.s[k]]
        row += [""] * n_w if last else [repr(float(v)) for v in trace.w[k]]
        row.append(repr(float(trace.V[k])))
        if reaching is None:
            row += ["", "", ""]
        else:
            row.append(flag(np.all(reaching.in_omega[k])))
            row += ["", ""] if last else [flag(np.all(reaching.toward_zero[k])), flag(np.all(reaching.no_overshoot[k]))]
        writer.writerow(row)
    return buf.getvalue()


class SweepRow(NamedTuple):
    delta: float
    seed: int
    status: str
    gamma: float
    converged: bool


@dataclass(frozen=True)
class SweepCell:
    model: PlantModel
    exc: ExcitationSpec
    syn: SynthesisConfig
    params: SmcParams
    delta: float
    seed: int
    x0: tuple = DEFAULT_X0
    steps: int = 300
    simulate: bool = True
    tol: float = 0.05
    tail: float = 0.2


def run_cell(cell: SweepCell) -> SweepRow:
    dist = DisturbanceSpec(delta=cell.delta, seed=cell.seed)
    try:
        ds = collect(cell.model, dist, replace(cell.exc, seed=cell.seed))
    except CollectionError:
        return SweepRow(cell.delta, cell.seed, "collection_error", float("nan"), False)
    res = solve(ds, cell.model.B, cell.model.D, cell.syn)
    ok = False
    if res.feasible and cell.simulate:
        ctrl = build_controller(res, cell.model.B, cell.params)
        try:
            trace = run(SimSpec(cell.model, ctrl, dist, cell.x0, cell.steps))
            ok = converged(trace, cell.tol, cell.tail)
        except DivergenceError:
            ok = False
    return SweepRow(cell.delta, cell.seed, res.status, res.gamma, ok)


def sweep_delta(
    model: PlantModel,
    exc: ExcitationSpec,
    syn: SynthesisConfig,
    params: SmcParams,
    deltas: Sequence[float],
    seeds: Sequence[int],
    x0=DEFAULT_X0,
    steps: int = 300,
    simulate: bool = True,
    jobs: int = 1,
) -> list[SweepRow]:
    """Collect, synthesize and (optionally) simulate every (delta, seed) cell, in grid order."""
    if len(deltas) == 0 or len(seeds) == 0:
        raise InputError("sweep needs at least one delta and one seed")
    cells = [
        SweepCell(model, exc, syn, params, float(d), int(s), tuple(x0), steps, simulate)
        for d in deltas
        for s in seeds
    ]
    if jobs <= 1:
        return [run_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_cell, cells))


def sweep_summary(rows: Sequence[SweepRow]) -> dict[float, tuple[float, float]]:
    """Per delta: (fraction feasible, fraction converged)."""
    out = {}
    for d in sorted({r.delta for r in rows}):
        sel = [r for r in rows if r.delta == d]
        out[d] = (
            sum(r.status == "feasible" for r in sel) / len(sel),
            sum(r.converged for r in sel) / len(sel),
        )
    return out


def sweep_to_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["delta", "seed", "status", "gamma", "converged"])
    for r in rows:
        writer.writerow([repr(r.delta), r.seed, r.status, repr(float(r.gamma)), int(r.converged)])
    return buf.getvalue()
