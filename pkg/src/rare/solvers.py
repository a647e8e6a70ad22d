"""RARE fixed-point iteration and the accelerated FISTA-TV baseline."""

import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_positive, check_unit_interval
from .priors import TVParams, red_residual, tv_denoise, tv_value

__all__ = [
    "SolverConfig",
    "IterationRecord",
    "ReconReport",
    "SolverDivergedError",
    "operator_G",
    "nesterov_q_update",
    "rare_solve",
    "fista_tv_solve",
    "RAREReconstructor",
    "TVReconstructor",
]


class SolverDivergedError(RuntimeError):
    def __init__(self, iteration, message="non-finite iterate"):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class SolverConfig:
    """Step-size and stopping controls.

    ``gamma0=None`` means ``1 / operator_norm_estimate(op)``.  ``step_recovery``
    caps the step at the start of each outer iteration to
    ``min(gamma0, step_recovery * last_accepted)``.
    """

    tau: float = 1.0
    gamma0: float = None
    beta: float = 0.5
    rho: float = 1e-6
    max_iters: int = 500
    accelerate: bool = True
    real_projection: bool = False
    step_recovery: float = 4.0
    norm_iters: int = 50
    seed: int = 0

    def __post_init__(self):
        check_positive(self.tau, "tau")
        if self.gamma0 is not None:
            check_positive(self.gamma0, "gamma0")
        check_unit_interval(self.beta, "beta")
        check_positive(self.rho, "rho")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be >= 1")
        if self.step_recovery < 1:
            raise ValueError("step_recovery must be >= 1")


@dataclass
class IterationRecord:
    iteration: int
    g_norm: float
    g_norm_prev: float  # norm at the extrapolated point the step started from
    gamma: float
    q: float
    objective: float = float("nan")
    wall_ms: float = 0.0


@dataclass
class ReconReport:
    image: np.ndarray
    trace: list = field(default_factory=list)
    termination: str = "max-iters"
    initial_g_norm: float = float("nan")

    @property
    def g_norms(self):
        return np.array([r.g_norm for r in self.trace])

    def trace_text(self, sep="\t"):
        """Delimited trace: iteration, ||G||, gamma, q, objective, wall-time-ms."""
        lines = [sep.join(["iteration", "g_norm", "gamma", "q", "objective", "wall_ms"])]
        for r in self.trace:
            lines.append(
                sep.join(
                    [
                        str(r.iteration),
                        repr(r.g_norm),
                        repr(r.gamma),
                        repr(r.q),
                        repr(r.objective),
                        f"{r.wall_ms:.3f}",
                    ]
                )
            )
        return "\n".join(lines) + "\n"


def operator_G(x, op, y, remover, tau):
    """``G(x) = H^*(Hx - y) + tau (x - R(x))``."""
    return op.gradient(x, y) + red_residual(x, remover, tau)


def nesterov_q_update(q_prev):
    """``q_k = (1 + sqrt(1 + q_{k-1}^2)) / 2``."""
    if not np.isfinite(q_prev) or q_prev < 0:
        raise ValueError(f"q must be finite and >= 0, got {q_prev}")
    return 0.5 * (1.0 + np.sqrt(1.0 + q_prev * q_prev))


def _initial_step(cfg, op):
    if cfg.gamma0 is not None:
        return float(cfg.gamma0)
    lip = op.norm_estimate(cfg.norm_iters, cfg.seed)
    if lip <= 0:
        return 1.0
    return 1.0 / lip


def _project(x, real):
    return x.real.astype(np.complex128) if real else x


def rare_solve(y, op, remover, cfg, x0=None):
    """Run the accelerated RARE iteration with backtracking on ``||G||``.

    An outer iteration computes ``x = s - gamma G(s)`` from the extrapolated
    point ``s`` and shrinks ``gamma`` by ``beta`` until
    ``||G(x)|| <= ||G(s)||``.  If ``gamma`` drops below ``rho`` the step is
    rejected and the solve stops with termination ``"step-floor"``; the last
    accepted iterate is returned.

    With ``cfg.real_projection`` the iterates and ``G`` itself are restricted
    to real values, so the line search measures the residual that the
    projected step can actually reduce.

    Parameters
    ----------
    y : ndarray
        Measurements aligned with ``op``.
    op : MeasurementOperator or DenseOperator
    remover : callable
        Artifact-removal operator ``R``.
    cfg : SolverConfig
    x0 : ndarray, optional
        Starting point; ``R(H^dagger y)`` if omitted.
    """
    tau = cfg.tau

    def G(v):
        return _project(operator_G(v, op, y, remover, tau), cfg.real_projection)

    if x0 is None:
        x0 = remover(op.pseudoinverse(y))
    x = _project(np.array(x0, dtype=np.complex128), cfg.real_projection)
    if x.shape != tuple(op.image_shape):
        raise ValueError(f"x0 shape {x.shape} != operator grid {op.image_shape}")
    gamma_max = _initial_step(cfg, op)
    gamma = gamma_max

    s = x
    g_s = G(s)
    n_s = float(np.linalg.norm(g_s))
    report = ReconReport(image=x, initial_g_norm=n_s)
    q_prev = 1.0
    t0 = time.perf_counter()
    for k in range(1, int(cfg.max_iters) + 1):
        if n_s == 0.0:
            report.termination = "converged"
            break
        gamma = min(gamma_max, cfg.step_recovery * gamma)
        x_new = _project(s - gamma * g_s, cfg.real_projection)
        g_x = G(x_new)
        n_x = float(np.linalg.norm(g_x))
        floored = False
        while n_x > n_s:
            gamma *= cfg.beta
            x_new = _project(s - gamma * g_s, cfg.real_projection)
            g_x = G(x_new)
            n_x = float(np.linalg.norm(g_x))
            if gamma < cfg.rho:
                floored = n_x > n_s
                break
        if not np.all(np.isfinite(x_new)) or not np.isfinite(n_x):
            raise SolverDivergedError(k)
        if floored:
            report.termination = "step-floor"
            break
        q = nesterov_q_update(q_prev) if cfg.accelerate else 1.0
        if cfg.accelerate:
            s_new = x_new + ((q_prev - 1.0) / q) * (x_new - x)
        else:
            s_new = x_new
        report.trace.append(
            IterationRecord(
                iteration=k,
                g_norm=n_x,
                g_norm_prev=n_s,
                gamma=gamma,
                q=q,
                wall_ms=1e3 * (time.perf_counter() - t0),
            )
        )
        x = x_new
        q_prev = q
        if s_new is x_new:
            s, g_s, n_s = x_new, g_x, n_x
        else:
            s = _project(s_new, cfg.real_projection)
            g_s = G(s)
            n_s = float(np.linalg.norm(g_s))
            if not np.isfinite(n_s):
                raise SolverDivergedError(k, "non-finite extrapolated point")
    report.image = x
    return report


def fista_tv_solve(y, op, params, cfg, x0=None):
    """Monotone FISTA for ``0.5 ||Hx - y||^2 + lam TV(x)``.

    A candidate that would increase the objective is discarded in favour of
    the previous iterate and the momentum is restarted, so the recorded
    objective is non-increasing.
    """
    if not isinstance(params, TVParams):
        raise TypeError("params must be TVParams")
    gamma = _initial_step(cfg, op)
    lam = params.lam
    w = params.axis_weights
    step_params = TVParams(lam * gamma, params.n_iter, w)

    def objective(v):
        r = op.forward(v) - y
        return 0.5 * float(np.real(np.vdot(r, r))) + lam * tv_value(v, w)

    if x0 is None:
        x0 = op.pseudoinverse(y)
    x = _project(np.array(x0, dtype=np.complex128), cfg.real_projection)
    f_x = objective(x)
    s = x
    q_prev = 1.0
    dual = None
    report = ReconReport(image=x, initial_g_norm=float("nan"))
    t0 = time.perf_counter()
    for k in range(1, int(cfg.max_iters) + 1):
        grad = op.gradient(s, y)
        z, dual = tv_denoise(
            _project(s - gamma * grad, cfg.real_projection), step_params, p0=dual, return_dual=True
        )
        z = _project(z, cfg.real_projection)
        if not np.all(np.isfinite(z)):
            raise SolverDivergedError(k)
        f_z = objective(z)
        q = nesterov_q_update(q_prev) if cfg.accelerate else 1.0
        if f_z <= f_x:
            x_new, f_new = z, f_z
            s_new = x_new + ((q_prev - 1.0) / q) * (x_new - x) if cfg.accelerate else x_new
        else:
            # restart: keep x, drop momentum
            x_new, f_new, s_new, q = x, f_x, x, 1.0
        step = float(np.linalg.norm(x_new - x))
        report.trace.append(
            IterationRecord(
                iteration=k,
                g_norm=step / gamma,
                g_norm_prev=float("nan"),
                gamma=gamma,
                q=q,
                objective=f_new,
                wall_ms=1e3 * (time.perf_counter() - t0),
            )
        )
        x, f_x, s, q_prev = x_new, f_new, _project(s_new, cfg.real_projection), q
    report.image = x
    return report


class RAREReconstructor(BaseEstimator):
    """Estimator wrapper around :func:`rare_solve`.

    ``fit(y, operator)`` solves the reconstruction problem and stores
    ``image_`` and ``report_``.
    """

    def __init__(
        self,
        prior=None,
        tau=1.0,
        gamma0=None,
        beta=0.5,
        rho=1e-6,
        max_iters=500,
        accelerate=True,
        real_projection=False,
    ):
        self.prior = prior
        self.tau = tau
        self.gamma0 = gamma0
        self.beta = beta
        self.rho = rho
        self.max_iters = max_iters
        self.accelerate = accelerate
        self.real_projection = real_projection

    def _config(self):
        return SolverConfig(
            tau=self.tau,
            gamma0=self.gamma0,
            beta=self.beta,
            rho=self.rho,
            max_iters=self.max_iters,
            accelerate=self.accelerate,
            real_projection=self.real_projection,
        )

    def fit(self, y, operator, x0=None):
        if self.prior is None:
            raise ValueError("RAREReconstructor needs a prior")
        self.report_ = rare_solve(y, operator, self.prior, self._config(), x0=x0)
        self.image_ = self.report_.image
        return self


class TVReconstructor(BaseEstimator):
    """Estimator wrapper around :func:`fista_tv_solve`."""

    def __init__(self, lam=0.01, n_iter=20, axis_weights=(1.0, 1.0, 1.0), max_iters=100,
                 accelerate=True, real_projection=False):
        self.lam = lam
        self.n_iter = n_iter
        self.axis_weights = axis_weights
        self.max_iters = max_iters
        self.accelerate = accelerate
        self.real_projection = real_projection

    def fit(self, y, operator):
        params = TVParams(self.lam, self.n_iter, tuple(self.axis_weights))
        cfg = SolverConfig(max_iters=self.max_iters, accelerate=self.accelerate,
                           real_projection=self.real_projection)
        self.report_ = fista_tv_solve(y, operator, params, cfg)
        self.image_ = self.report_.image
        return self
