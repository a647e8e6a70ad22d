import numpy as np
import pytest
from sklearn.base import clone

from conftest import crandn, random_radial_operator
from rare.operators import DenseOperator, MeasurementOperator, SamplingPattern
from rare.priors import IdentityRemover, ScalingRemover, TVParams
from rare.simulation import AcquisitionConfig, make_operator
from rare.solvers import (
    RAREReconstructor,
    SolverConfig,
    SolverDivergedError,
    TVReconstructor,
    fista_tv_solve,
    nesterov_q_update,
    operator_G,
    rare_solve,
)


def dense_problem(rng, n=16, m_factor=2.5):
    npix = n * n
    m = int(m_factor * npix)
    A = crandn(rng, m, npix) / np.sqrt(2 * m)
    op = DenseOperator(A, (1, n, n))
    x = crandn(rng, 1, n, n)
    y = op.forward(x) + 0.1 * crandn(rng, m)
    return op, A, y


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_identity_prior_matches_least_squares(rng):
    op, A, y = dense_problem(rng)
    ref = np.linalg.lstsq(A, y, rcond=None)[0].reshape(op.image_shape)
    rep = rare_solve(y, op, IdentityRemover(), SolverConfig(tau=3.0, max_iters=500),
                     x0=np.zeros(op.image_shape))
    assert rel(rep.image, ref) <= 1e-6


@pytest.mark.parametrize("a,tau", [(0.5, 1.0), (0.2, 0.3)])
def test_scaling_prior_matches_shifted_normal_equations(rng, a, tau):
    op, A, y = dense_problem(rng)
    n = A.shape[1]
    M = A.conj().T @ A + tau * (1 - a) * np.eye(n)
    ref = np.linalg.solve(M, A.conj().T @ y).reshape(op.image_shape)
    rep = rare_solve(y, op, ScalingRemover(a), SolverConfig(tau=tau, max_iters=500))
    assert rel(rep.image, ref) <= 1e-6


def test_operator_G_dense_oracle(rng):
    A = crandn(rng, 10, 8)
    op = DenseOperator(A, (2, 2, 2))
    x = crandn(rng, 2, 2, 2)
    y = crandn(rng, 10)
    a, tau = 0.3, 1.7
    ref = (A.conj().T @ (A @ x.ravel() - y)).reshape(x.shape) + tau * (1 - a) * x
    np.testing.assert_allclose(operator_G(x, op, y, ScalingRemover(a), tau), ref, atol=1e-12)
    np.testing.assert_array_equal(operator_G(x, op, y, IdentityRemover(), tau), op.gradient(x, y))
    np.testing.assert_allclose(operator_G(x, op, op.forward(x), IdentityRemover(), tau), 0, atol=1e-12)


def test_q_sequence():
    assert nesterov_q_update(1.0) == (1 + np.sqrt(2)) / 2
    assert nesterov_q_update(0.0) == 1.0
    q = [1.0]
    for _ in range(5):
        q.append(nesterov_q_update(q[-1]))
    assert all(b > a for a, b in zip(q, q[1:]))
    # q = (1 + sqrt(1 + q^2)) / 2 has the fixed point 4/3, so the sequence is bounded
    assert all(v < 4 / 3 for v in q)
    for _ in range(60):
        q.append(nesterov_q_update(q[-1]))
    assert abs(q[-1] - 4 / 3) < 1e-12
    with pytest.raises(ValueError):
        nesterov_q_update(-1.0)
    with pytest.raises(ValueError):
        nesterov_q_update(np.nan)


def test_trace_q_matches_recurrence_bitwise(rng):
    op = random_radial_operator(rng, n=8, spokes=3, readout=8)
    y = crandn(rng, *op.data_shape)
    rep = rare_solve(y, op, ScalingRemover(0.5), SolverConfig(max_iters=20))
    q = 1.0
    for rec in rep.trace:
        q = nesterov_q_update(q)
        assert rec.q == q


def test_loop_guard_holds_for_every_accepted_iterate(rng):
    op = random_radial_operator(rng, n=12, n_phases=2, spokes=4, readout=12)
    y = crandn(rng, *op.data_shape)
    # gamma0 far above 1/L forces the line search to work
    cfg = SolverConfig(tau=2.0, gamma0=50.0, max_iters=60)
    rep = rare_solve(y, op, ScalingRemover(-0.5), cfg)
    assert len(rep.trace) <= cfg.max_iters
    assert any(r.gamma < 50.0 for r in rep.trace)
    for r in rep.trace:
        assert r.g_norm <= r.g_norm_prev


def test_fixed_point_norm_is_reproducible(rng):
    op = random_radial_operator(rng, n=8, spokes=3, readout=8)
    y = crandn(rng, *op.data_shape)
    R = ScalingRemover(0.4)
    rep = rare_solve(y, op, R, SolverConfig(tau=1.0, max_iters=100))
    again = np.linalg.norm(operator_G(rep.image, op, y, R, 1.0))
    assert abs(again - rep.trace[-1].g_norm) <= 1e-12 * max(1.0, again)


def test_zero_problem_terminates_immediately():
    op = MeasurementOperator(SamplingPattern.full_grid((4, 4)), (4, 4))
    rep = rare_solve(np.zeros(op.data_shape), op, ScalingRemover(0.0), SolverConfig(),
                     x0=np.zeros(op.image_shape))
    assert rep.termination == "converged"
    assert rep.trace == [] and rep.initial_g_norm == 0.0
    assert np.all(rep.image == 0)


def test_without_acceleration_q_is_one(rng):
    op = random_radial_operator(rng)
    y = crandn(rng, *op.data_shape)
    rep = rare_solve(y, op, ScalingRemover(0.5), SolverConfig(max_iters=10, accelerate=False))
    assert all(r.q == 1.0 for r in rep.trace)
    # with s = x the guard compares consecutive iterates, so the norms are monotone
    norms = [rep.initial_g_norm] + list(rep.g_norms)
    assert all(b <= a for a, b in zip(norms, norms[1:]))


def test_step_floor_termination(rng):
    op = random_radial_operator(rng)
    y = crandn(rng, *op.data_shape)

    class Adversarial(ScalingRemover):
        # strongly expansive prior: G is not monotone and steps stall
        def transform(self, x):
            return 50.0 * x.conj()

    rep = rare_solve(y, op, Adversarial(), SolverConfig(gamma0=1e-5, rho=1e-6, max_iters=50))
    assert rep.termination in ("step-floor", "max-iters")
    for r in rep.trace:
        assert r.g_norm <= r.g_norm_prev


def test_divergence_is_reported(rng):
    op = random_radial_operator(rng)
    y = crandn(rng, *op.data_shape)

    class Exploding(ScalingRemover):
        def transform(self, x):
            return np.full_like(x, np.inf)

    with pytest.raises((SolverDivergedError, ValueError)), np.errstate(invalid="ignore"):
        rare_solve(y, op, Exploding(), SolverConfig(max_iters=5), x0=np.zeros(op.image_shape))


def test_determinism(rng):
    op = random_radial_operator(rng)
    y = crandn(rng, *op.data_shape)
    a = rare_solve(y, op, ScalingRemover(0.5), SolverConfig(max_iters=15))
    b = rare_solve(y, op, ScalingRemover(0.5), SolverConfig(max_iters=15))
    np.testing.assert_array_equal(a.image, b.image)
    assert [r.g_norm for r in a.trace] == [r.g_norm for r in b.trace]


def test_real_projection_keeps_real_iterates(rng):
    op = random_radial_operator(rng)
    y = op.forward(rng.random(op.image_shape))
    rep = rare_solve(y, op, ScalingRemover(0.5), SolverConfig(max_iters=10, real_projection=True))
    assert np.all(rep.image.imag == 0)


def test_trace_text_columns(rng):
    op = random_radial_operator(rng)
    rep = rare_solve(crandn(rng, *op.data_shape), op, ScalingRemover(0.5), SolverConfig(max_iters=3))
    lines = rep.trace_text().splitlines()
    assert lines[0].split("\t") == ["iteration", "g_norm", "gamma", "q", "objective", "wall_ms"]
    assert len(lines) == 1 + len(rep.trace)


def test_fista_lambda_zero_full_sampling_gives_pseudoinverse(rng):
    op = MeasurementOperator(SamplingPattern.full_grid((8, 8), n_phases=2), (8, 8))
    x = crandn(rng, 2, 8, 8)
    y = op.forward(x)
    rep = fista_tv_solve(y, op, TVParams(0.0), SolverConfig(max_iters=50), x0=np.zeros_like(x))
    assert rel(rep.image, op.pseudoinverse(y)) <= 1e-6


def test_fista_recovers_constant_with_large_lambda():
    size = 16
    acq = AcquisitionConfig(spokes=4, readout=16, scheme="golden")
    op = make_operator(acq, 1, size)
    assert abs(op.pattern.coords.shape[1] / size**2 - 0.25) < 0.06
    x = np.full((1, size, size), 0.7 + 0j)
    y = op.forward(x)
    # projection onto constants: argmin_c ||H(c 1) - y||^2 = <H1, y> / ||H1||^2
    h1 = op.forward(np.ones_like(x))
    c = np.vdot(h1, y) / np.vdot(h1, h1)
    rep = fista_tv_solve(y, op, TVParams(50.0, 50), SolverConfig(max_iters=200), x0=np.zeros_like(x))
    np.testing.assert_allclose(rep.image, c, atol=1e-3)
    assert abs(c - 0.7) < 1e-12


def test_fista_objective_non_increasing(rng):
    op = random_radial_operator(rng, n=12, n_phases=2, spokes=4, readout=12)
    y = crandn(rng, *op.data_shape)
    rep = fista_tv_solve(y, op, TVParams(0.05, 10), SolverConfig(max_iters=40))
    obj = [r.objective for r in rep.trace]
    assert all(b <= a for a, b in zip(obj, obj[1:]))


def test_estimators(rng):
    op = random_radial_operator(rng)
    y = crandn(rng, *op.data_shape)
    est = RAREReconstructor(ScalingRemover(0.5), tau=1.0, max_iters=5)
    assert est.get_params()["tau"] == 1.0
    assert clone(est).get_params()["max_iters"] == 5
    assert est.fit(y, op).image_.shape == op.image_shape
    tv = TVReconstructor(lam=0.01, max_iters=5).fit(y, op)
    assert tv.image_.shape == op.image_shape
    with pytest.raises(ValueError):
        RAREReconstructor().fit(y, op)


@pytest.mark.parametrize("kw", [dict(tau=0.0), dict(beta=1.0), dict(rho=-1.0), dict(max_iters=0),
                                dict(gamma0=-1.0), dict(step_recovery=0.5)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)
