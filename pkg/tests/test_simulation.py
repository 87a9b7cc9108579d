import numpy as np
import pytest

from ddsmc.data import ExcitationSpec, collect
from ddsmc.errors import DivergenceError, InputError
from ddsmc.plants import DisturbanceSpec, eval_basis, step
from ddsmc.simulation import (
    Oracle,
    SimSpec,
    SimTrace,
    SweepRow,
    check_lyapunov,
    check_reaching,
    converged,
    run,
    sweep_delta,
    sweep_summary,
    sweep_to_csv,
    trace_to_csv,
)
from ddsmc.smc import ControllerState, SmcParams, build_controller
from ddsmc.synthesis import SynthesisConfig, solve

from conftest import N_DEFAULT


@pytest.fixture(scope="module")
def ctrl(pend_result, pendulum, smc_params):
    return build_controller(pend_result, pendulum.B, smc_params)


@pytest.fixture(scope="module")
def oracle(pend_data, pend_result, pendulum):
    return Oracle.from_result(pend_data, pend_result, pendulum, N_DEFAULT)


@pytest.fixture(scope="module")
def clean(pendulum, pend_exc, syn_cfg, smc_params):
    """Controller and oracle synthesized from disturbance-free data."""
    ds = collect(pendulum, DisturbanceSpec(0.0, 0), pend_exc)
    res = solve(ds, pendulum.B, pendulum.D, syn_cfg)
    return build_controller(res, pendulum.B, smc_params), Oracle.from_result(ds, res, pendulum, N_DEFAULT)


@pytest.fixture(scope="module")
def closed_trace(pendulum, ctrl, oracle):
    return run(SimSpec(pendulum, ctrl, DisturbanceSpec(0.01, 3), (1.0, 0.0), 300, oracle=oracle))


def test_spec_validation(pendulum, ctrl):
    dist = DisturbanceSpec(0.0)
    with pytest.raises(InputError):
        SimSpec(pendulum, ctrl, dist, steps=0)
    with pytest.raises(InputError):
        SimSpec(pendulum, ctrl, dist, x0=(1.0,))
    with pytest.raises(InputError):
        SimSpec(pendulum, ctrl, dist, mode="bang-bang")


def test_trace_shapes(closed_trace):
    t = closed_trace
    assert t.x.shape == (301, 2) and t.s.shape == (301, 1)
    assert t.u.shape == t.w.shape == t.f.shape == (300, 1)
    assert t.V.shape == (301,) and t.steps == 300
    np.testing.assert_array_equal(t.x[0], [1.0, 0.0])


def test_runs_are_deterministic(pendulum, ctrl):
    spec = SimSpec(pendulum, ctrl, DisturbanceSpec(0.1, 7), (0.5, -0.5), 100)
    a, b = run(spec), run(spec)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.u, b.u)


def test_trace_obeys_plant_equation(pendulum, closed_trace):
    t = closed_trace
    for k in range(0, t.steps, 37):
        np.testing.assert_array_equal(t.x[k + 1], step(pendulum, t.x[k], t.u[k], t.w[k]))
    np.testing.assert_allclose(t.u, t.u_n + t.u_r, atol=1e-14)


def test_zero_controller_reproduces_open_loop(pendulum, smc_params):
    idle = ControllerState(K=np.zeros((1, 3)), A_tilde=np.zeros((1, 2)), NB_pinv=np.zeros((1, 1)), params=smc_params)
    dist = DisturbanceSpec(0.05, 2)
    closed = run(SimSpec(pendulum, idle, dist, (0.2, 0.1), 40))
    open_ = run(SimSpec(pendulum, None, dist, (0.2, 0.1), 40))
    np.testing.assert_array_equal(closed.x, open_.x)
    assert open_.meta["open_loop"] and open_.s.shape == (41, 0)


def test_divergence_reports_step(pendulum):
    with pytest.raises(DivergenceError) as info:
        run(SimSpec(pendulum, None, DisturbanceSpec(0.0), (1.0, 0.0), 300, blowup=1.5))
    assert info.value.step >= 1


def _manual_trace(s, f):
    n = len(s) - 1
    s = np.asarray(s, dtype=float)[:, None]
    return SimTrace(
        x=np.zeros((n + 1, 2)),
        u=np.zeros((n, 1)),
        u_n=np.zeros((n, 1)),
        u_r=np.zeros((n, 1)),
        s=s,
        w=np.zeros((n, 1)),
        V=np.zeros(n + 1),
        f=np.asarray(f, dtype=float)[:, None],
        s_predicted=s[1:] - np.asarray(f, dtype=float)[:, None],
    )


def test_reaching_arithmetic():
    params = SmcParams(N=[[1.0, 1.0]], q=0.1, rho=[0.5])
    # f_bar = 0.01 so the band radius is 1/0.6 * 0.01
    rep = check_reaching(_manual_trace([1.0, 0.5, 0.2, 0.001, -0.001], [0.01, 0.0, 0.0, 0.0]), params)
    assert rep.radii[0] == pytest.approx(0.01 / 0.6)
    assert rep.violations == 0
    assert rep.first_entry == 3 and rep.residence == 1.0
    # overshoot from 1.0 to -1.5 breaks the second condition
    rep = check_reaching(_manual_trace([1.0, -1.5, 0.0], [0.01, 0.0]), params)
    assert rep.violations == 1
    assert rep.toward_zero[0, 0] and not rep.no_overshoot[0, 0]
    # moving away breaks the first
    rep = check_reaching(_manual_trace([1.0, 1.2, 0.0], [0.01, 0.0]), params)
    assert not rep.toward_zero[0, 0] and rep.violations == 1


def test_reaching_without_disturbance_is_monotone(pendulum, clean, smc_params):
    ctrl, oracle = clean
    trace = run(SimSpec(pendulum, ctrl, DisturbanceSpec(0.0, 0), (1.0, 0.5), 200, oracle=oracle))
    np.testing.assert_array_equal(trace.f, 0.0)
    rep = check_reaching(trace, smc_params)
    assert rep.violations == 0
    assert rep.residue_error < 1e-10
    s = np.abs(trace.s[:, 0])
    moving = s[:-1] > 1e-12
    assert np.all(s[1:][moving] < s[:-1][moving])


def test_closed_loop_reaching_and_residue(closed_trace, smc_params):
    rep = check_reaching(closed_trace, smc_params)
    assert rep.violations == 0
    assert rep.first_entry is not None and rep.residence >= 0.95
    assert rep.residue_error < 1e-10


def test_reaching_needs_oracle(pendulum, ctrl, smc_params):
    trace = run(SimSpec(pendulum, ctrl, DisturbanceSpec(0.01), steps=5))
    with pytest.raises(InputError):
        check_reaching(trace, smc_params)


def test_lyapunov_along_closed_loop(closed_trace, oracle, pendulum):
    rep = check_lyapunov(closed_trace, oracle, pendulum)
    assert rep.counted > 0 and rep.fraction >= 0.99


def test_lyapunov_excludes_origin(pendulum, ctrl, oracle):
    trace = run(SimSpec(pendulum, ctrl, DisturbanceSpec(0.0), (0.0, 0.0), 10, oracle=oracle))
    rep = check_lyapunov(trace, oracle, pendulum)
    assert rep.counted == 0 and rep.fraction == 1.0
    assert np.all(np.isnan(rep.values))


def test_nominal_mode_follows_data_model(pendulum, clean):
    ctrl, oracle = clean
    trace = run(SimSpec(pendulum, ctrl, DisturbanceSpec(0.0), (0.5, 0.0), 100, oracle=oracle, mode="nominal"))
    np.testing.assert_array_equal(trace.u_r, 0.0)
    for k in range(trace.steps):
        np.testing.assert_allclose(trace.x[k + 1], oracle.A_hat @ trace.x[k], atol=1e-9)
    V = trace.V
    assert np.all(np.diff(V)[V[:-1] > 1e-20] < 0)


def test_oracle_needs_recorded_disturbances(pend_data, pend_result, pendulum):
    from dataclasses import replace

    with pytest.raises(InputError):
        Oracle.from_result(replace(pend_data, W0=None), pend_result, pendulum, N_DEFAULT)


def test_convergence_window():
    def trace(xs):
        return SimTrace(
            x=np.array(xs, dtype=float)[:, None].repeat(2, axis=1),
            u=np.zeros((len(xs) - 1, 1)),
            u_n=None, u_r=None, s=None, w=None, V=None,
        )

    assert converged(trace([1.0] * 8 + [0.01, 0.0]))
    assert not converged(trace([1.0] * 9 + [0.06]))
    assert not converged(trace([1.0] * 8 + [0.06, 0.0]))
    assert converged(trace([1.0] * 8 + [0.06, 0.0]), tol=0.1)


def test_trace_csv(closed_trace, smc_params):
    rep = check_reaching(closed_trace, smc_params)
    lines = trace_to_csv(closed_trace, rep).splitlines()
    assert lines[0] == "k,x_1,x_2,u_1,s_1,w_1,V,in_omega,cond9a,cond9b"
    assert len(lines) == 302
    last = lines[-1].split(",")
    assert last[0] == "300" and last[3] == "" and last[5] == "" and last[-2:] == ["", ""]
    assert lines[1].split(",")[1:3] == ["1.0", "0.0"]


def test_sweep_parallel_matches_serial(pendulum, smc_params):
    exc = ExcitationSpec(T=30, input_range=(-0.5, 0.5))
    syn = SynthesisConfig(N=N_DEFAULT)
    args = (pendulum, exc, syn, smc_params, [0.0, 0.1], [0, 1])
    serial = sweep_delta(*args, steps=100, jobs=1)
    parallel = sweep_delta(*args, steps=100, jobs=2)
    assert [r[:3] + (r.converged,) for r in serial] == [r[:3] + (r.converged,) for r in parallel]
    assert [(r.delta, r.seed) for r in serial] == [(0.0, 0), (0.0, 1), (0.1, 0), (0.1, 1)]
    assert all(r.status == "feasible" for r in serial if r.delta == 0.0)
    with pytest.raises(InputError):
        sweep_delta(pendulum, exc, syn, smc_params, [], [0])


def test_sweep_summary_and_csv():
    rows = [
        SweepRow(0.1, 0, "feasible", 0.2, True),
        SweepRow(0.1, 1, "infeasible", float("nan"), False),
        SweepRow(0.3, 0, "feasible", 0.4, False),
    ]
    assert sweep_summary(rows) == {0.1: (0.5, 0.5), 0.3: (1.0, 0.0)}
    lines = sweep_to_csv(rows).splitlines()
    assert lines[0] == "delta,seed,status,gamma,converged"
    assert lines[2] == "0.1,1,infeasible,nan,0"


def test_x0_basis_is_finite(pendulum):
    assert np.all(np.isfinite(eval_basis(pendulum, [1.0, 0.0])))
