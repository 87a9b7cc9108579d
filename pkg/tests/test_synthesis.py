from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddsmc.data import ExcitationSpec, collect
from ddsmc.errors import ConfigurationError, FormatError, InputError
from ddsmc.linalg import projector
from ddsmc.plants import DisturbanceSpec, sample_states
from ddsmc.synthesis import (
    SynthesisConfig,
    _Layout,
    assemble_lmi,
    cancellation_gain,
    grid_search_eps,
    load_result,
    nominal_lyapunov_matrix,
    nominal_stability_check,
    save_result,
    solve,
    verify_result,
)

N = [[1.0, 1.0]]


def literal_lmi(S, Phi, D, delta, T, P, Y, gamma, e1, e2):
    """The robust stability matrix written out block by block with np.block."""
    n_x, n_w = P.shape[0], D.shape[1]
    PhiD = Phi @ D
    Delta = delta * np.sqrt(T) * np.eye(n_w)

    def Z(r, c):
        return np.zeros((r, c))

    rows = [
        [P, Z(n_x, n_w), P, (S @ Y).T, Z(n_x, n_x), Y.T, Z(n_x, n_w)],
        [Z(n_w, n_x), gamma * np.eye(n_w), Z(n_w, n_x), Z(n_w, n_x), PhiD.T, Z(n_w, T), Z(n_w, n_w)],
        [P, Z(n_x, n_w), gamma * np.eye(n_x), Z(n_x, n_x), Z(n_x, n_x), Z(n_x, T), Z(n_x, n_w)],
        [S @ Y, Z(n_x, n_w), Z(n_x, n_x), e1 / (1 + e1) * P, Z(n_x, n_x), Z(n_x, T), PhiD @ Delta],
        [Z(n_x, n_x), PhiD, Z(n_x, n_x), Z(n_x, n_x), P / e1, Z(n_x, T), Z(n_x, n_w)],
        [Y, Z(T, n_w), Z(T, n_x), Z(T, n_x), Z(T, n_x), e2 * np.eye(T), Z(T, n_w)],
        [Z(n_w, n_x), Z(n_w, n_w), Z(n_w, n_x), (PhiD @ Delta).T, Z(n_w, n_x), Z(n_w, T), np.eye(n_w) / e2],
    ]
    return np.block(rows)


def test_lmi_dimension(pend_data, pendulum, syn_cfg):
    system = assemble_lmi(pend_data, pendulum.B, pendulum.D, syn_cfg)
    assert system.blocks.sizes == (2, 1, 2, 2, 2, 30, 1)
    assert system.blocks.dim == 40


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 1000), gamma=st.floats(0.01, 10), e1=st.floats(0.1, 10), e2=st.floats(0.1, 10))
def test_block_matrix_matches_literal_layout(pend_data, pendulum, seed, gamma, e1, e2):
    rng = np.random.default_rng(seed)
    cfg = SynthesisConfig(N=N, eps1=e1, eps2=e2)
    system = assemble_lmi(pend_data, pendulum.B, pendulum.D, cfg)
    L = rng.normal(size=(2, 2))
    P = L @ L.T + 0.1 * np.eye(2)
    Y = rng.normal(size=(30, 2))
    Phi = projector(pendulum.B, np.array(N))
    expected = literal_lmi(pend_data.X1, Phi, pendulum.D, pend_data.delta, 30, P, Y, gamma, e1, e2)
    M = system.blocks.matrix(P, Y, gamma)
    np.testing.assert_allclose(M, expected, atol=1e-14)
    np.testing.assert_array_equal(M, M.T)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 1000), gamma=st.floats(0.01, 10), e2=st.floats(0.1, 10))
def test_reduced_problem_preserves_spectrum(cart, seed, gamma, e2):
    ds = collect(cart, DisturbanceSpec(0.1, seed), ExcitationSpec(T=40, input_range=(-1, 1), seed=seed))
    system = assemble_lmi(ds, cart.B, cart.D, SynthesisConfig(N=N, eps2=e2))
    layout = _Layout(system, with_margin=False)
    x = np.random.default_rng(seed).normal(size=layout.n)
    x[layout.i_gamma] = gamma
    P, gamma = layout.P(x), layout.gamma(x)
    full = np.linalg.eigvalsh(system.blocks.matrix(P, layout.Y(x), gamma))
    reduced = np.linalg.eigvalsh(layout.reduced.matrix(P, layout.Y_reduced(x), gamma))
    # the dropped directions contribute eigenvalues equal to eps2
    np.testing.assert_allclose(full[0], min(reduced[0], e2), rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(full[-1], max(reduced[-1], e2), rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(ds.Z0 @ layout.Y(x), np.vstack([P, np.zeros((1, 2))]), atol=1e-9)


def test_cancellation_gain_satisfies_equalities(pend_data, pendulum, syn_cfg):
    system = assemble_lmi(pend_data, pendulum.B, pendulum.D, syn_cfg)
    G2, residual = cancellation_gain(system)
    assert residual < 1e-12
    np.testing.assert_allclose(pend_data.Z0 @ G2, [[0.0], [0.0], [1.0]], atol=1e-12)
    np.testing.assert_allclose(pend_data.X1 @ G2, 0.0, atol=1e-12)


def test_pendulum_solution_fidelity(pend_result, pend_data, pendulum, syn_cfg):
    res = pend_result
    r = res.residuals
    assert r["equality_residual"] <= 1e-6
    assert r["cancellation_relative"] <= 1e-6
    assert r["lmi_min_eig"] >= r["margin_used"] * (1 - 1e-6)
    assert r["P_min_eig"] >= syn_cfg.margin
    assert res.gamma > 0
    np.testing.assert_allclose(res.G1, res.Y @ np.linalg.inv(res.P), rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(res.K, pend_data.U0 @ res.G, atol=1e-9)
    np.testing.assert_allclose(pend_data.Z0 @ res.G, np.eye(3), atol=1e-9)
    np.testing.assert_allclose(res.A_tilde, np.array(N) @ pend_data.X1 @ res.G1, atol=1e-12)


def test_independent_verification(pend_result, pend_data, pendulum, syn_cfg):
    states = sample_states([(-np.pi, np.pi)] * 2, 100, seed=1)
    report = verify_result(pend_data, pendulum.B, pendulum.D, syn_cfg, pend_result, pendulum.A, pendulum.basis, states)
    assert report["gain_formula_residual"] < 1e-9
    assert report["surface_identity_residual"] <= 1e-8
    assert report["lmi_min_eig"] > 0


def test_literal_successor_breaks_surface_identity(pend_data, pendulum):
    cfg = SynthesisConfig(N=N, successor="X1+BU0")
    res = solve(pend_data, pendulum.B, pendulum.D, cfg)
    assert res.feasible
    S = pend_data.X1 + pendulum.B @ pend_data.U0
    assert np.linalg.norm(S @ res.G2) <= 1e-9 * np.linalg.norm(S)
    states = sample_states([(-1, 1)] * 2, 20, seed=2)
    report = verify_result(pend_data, pendulum.B, pendulum.D, cfg, res, pendulum.A, pendulum.basis, states)
    # off by N B K Z(x) exactly
    worst = max(
        abs(float((np.array(N) @ pendulum.B @ res.K @ np.concatenate([x, pendulum.basis(x)]))[0])) for x in states
    )
    assert report["surface_identity_residual"] == pytest.approx(worst, rel=1e-6)


def test_nominal_stability(pend_result, pend_data, pendulum):
    check = nominal_stability_check(pend_data, pend_result, pendulum.B)
    assert check.spectral_radius < 1
    assert check.lyapunov_ok
    M = nominal_lyapunov_matrix(check.A_bar_hat, pend_result.P, pend_result.gamma)
    assert np.max(np.linalg.eigvalsh(M)) < 0


def test_zero_delta_is_feasible(pendulum):
    ds = collect(pendulum, DisturbanceSpec(0.0, 4), ExcitationSpec(T=30, input_range=(-0.5, 0.5), seed=4))
    res = solve(ds, pendulum.B, pendulum.D, SynthesisConfig(N=N))
    assert res.feasible
    assert nominal_stability_check(ds, res, pendulum.B).spectral_radius < 1


def test_rank_deficient_data_is_infeasible(pendulum):
    short = collect(pendulum, DisturbanceSpec(0.01), ExcitationSpec(T=2))
    res = solve(short, pendulum.B, pendulum.D, SynthesisConfig(N=N))
    assert res.status == "infeasible" and not res.feasible
    assert "not full row rank" in res.message


def test_feasibility_objective(pend_data, pendulum):
    res = solve(pend_data, pendulum.B, pendulum.D, SynthesisConfig(N=N, objective="feasibility"))
    assert res.feasible and res.residuals["gamma_optimal"] == 0.0
    assert res.residuals["margin_used"] == res.residuals["margin_max"]


def test_backends_agree(pend_data, pendulum, pend_result):
    res = solve(pend_data, pendulum.B, pendulum.D, SynthesisConfig(N=N, solver="clarabel"))
    assert res.feasible
    assert res.residuals["margin_max"] == pytest.approx(pend_result.residuals["margin_max"], rel=1e-3)


def test_grid_search(pend_data, pendulum):
    best, pair = grid_search_eps(pend_data, pendulum.B, pendulum.D, SynthesisConfig(N=N), [0.5, 1.0], [1.0, 2.0])
    assert best.feasible and pair in {(0.5, 1.0), (0.5, 2.0), (1.0, 1.0), (1.0, 2.0)}


@pytest.mark.parametrize(
    "kwargs",
    [
        {"eps1": 0.0},
        {"eps2": -1.0},
        {"margin": 0.0},
        {"solver_tol": float("nan")},
        {"objective": "max_gamma"},
        {"successor": "X0"},
        {"uncertainty_gain": "B"},
        {"margin_fraction": 1.0},
    ],
)
def test_config_invariants(kwargs):
    with pytest.raises(ConfigurationError):
        SynthesisConfig(N=N, **kwargs)


def test_sliding_matrix_must_see_input(pend_data, pendulum):
    with pytest.raises(ConfigurationError):
        solve(pend_data, pendulum.B, pendulum.D, SynthesisConfig(N=[[1.0, 0.0]]))
    with pytest.raises(InputError):
        solve(pend_data, pendulum.B, pendulum.D, SynthesisConfig(N=[[1.0, 1.0, 1.0]]))


def test_result_round_trip(tmp_path, pend_result):
    path = tmp_path / "synthesis.csv"
    save_result(pend_result, path)
    back = load_result(path)
    assert back.feasible and back.gamma == pend_result.gamma
    for name in ("P", "Y", "G2", "G1", "K", "A_tilde", "A_hat"):
        np.testing.assert_array_equal(getattr(back, name), getattr(pend_result, name))
    assert back.residuals == pend_result.residuals


def test_infeasible_result_round_trip(tmp_path, pendulum):
    short = collect(pendulum, DisturbanceSpec(0.0), ExcitationSpec(T=2))
    cfg = SynthesisConfig(N=N)
    save_result(solve(short, pendulum.B, pendulum.D, cfg), tmp_path / "s.csv")
    back = load_result(tmp_path / "s.csv")
    assert back.status == "infeasible" and back.K is None
    with pytest.raises(InputError):
        verify_result(short, pendulum.B, pendulum.D, cfg, back)


def test_load_result_requires_status(tmp_path):
    (tmp_path / "s.csv").write_text("scalar,gamma,1.0\n")
    with pytest.raises(FormatError):
        load_result(tmp_path / "s.csv")


def test_uncertainty_gain_option_makes_delta_matter(pendulum):
    ds = collect(pendulum, DisturbanceSpec(1.0, 0), ExcitationSpec(T=30, input_range=(-0.5, 0.5)))
    literal = solve(ds, pendulum.B, pendulum.D, SynthesisConfig(N=N))
    strict = solve(ds, pendulum.B, pendulum.D, replace(SynthesisConfig(N=N), uncertainty_gain="D"))
    assert literal.feasible
    assert not strict.feasible
