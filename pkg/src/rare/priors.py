"""Artifact-removal operators used as priors, and the RED regulariser terms.

Every remover is a scikit-learn style estimator: hyper-parameters go through
``__init__`` (so ``get_params``/``set_params``/``clone`` work) and the image
mapping is ``transform``.  Calling a remover is the same as ``transform``.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_image, check_positive
from .network import conv_net_forward

__all__ = [
    "ArtifactRemover",
    "IdentityRemover",
    "ScalingRemover",
    "TVParams",
    "TVDenoiser",
    "NetRemover",
    "red_residual",
    "red_value",
    "tv_denoise",
    "tv_value",
]


class ArtifactRemover(BaseEstimator):
    """Base class: a deterministic map from an image to an image of equal shape."""

    name = "remover"

    def transform(self, x):
        raise NotImplementedError

    def __call__(self, x):
        x = check_image(x, ndim=None)
        out = self.transform(x)
        if out.shape != x.shape:
            raise RuntimeError(f"{self.name} changed image shape {x.shape} -> {out.shape}")
        return out


class IdentityRemover(ArtifactRemover):
    name = "identity"

    def transform(self, x):
        return np.array(x, dtype=np.complex128, copy=True)


class ScalingRemover(ArtifactRemover):
    """``R(x) = a * x``; a linear prior with closed-form RARE solutions."""

    name = "scaling"

    def __init__(self, a=0.5):
        self.a = a

    def transform(self, x):
        return self.a * np.asarray(x, dtype=np.complex128)


class NetRemover(ArtifactRemover):
    """Wraps fixed :class:`~rare.network.NetWeights` as a remover."""

    name = "cnn"

    def __init__(self, weights=None):
        self.weights = weights

    def transform(self, x):
        if self.weights is None:
            raise ValueError("NetRemover has no weights")
        return conv_net_forward(self.weights, x)


@dataclass(frozen=True)
class TVParams:
    """Total-variation settings.

    ``axis_weights`` scale the finite differences along (phase, x, y).
    """

    lam: float = 0.01
    n_iter: int = 50
    axis_weights: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        check_positive(self.lam, "lam", strict=False)
        if int(self.n_iter) < 1:
            raise ValueError("n_iter must be >= 1")
        if len(self.axis_weights) != 3 or min(self.axis_weights) < 0:
            raise ValueError("axis_weights must be three non-negative numbers")


def _grad(x, w):
    # forward differences, zero across the last sample of each axis
    g = np.zeros((3,) + x.shape, dtype=x.dtype)
    for a in range(3):
        if x.shape[a] > 1 and w[a] != 0:
            d = np.diff(x, axis=a) * w[a]
            idx = [slice(None)] * 3
            idx[a] = slice(0, x.shape[a] - 1)
            g[(a,) + tuple(idx)] = d
    return g


def _grad_adjoint(g, w):
    out = np.zeros(g.shape[1:], dtype=g.dtype)
    for a in range(3):
        n = g.shape[1 + a]
        if n == 1 or w[a] == 0:
            continue
        ga = g[a] * w[a]
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[a] = slice(0, n - 1)
        hi[a] = slice(1, n)
        out[tuple(lo)] -= ga[tuple(lo)]
        out[tuple(hi)] += ga[tuple(lo)]
    return out


def tv_value(x, axis_weights=(1.0, 1.0, 1.0)):
    """Isotropic TV over (phase, x, y), coupling real and imaginary parts."""
    g = _grad(np.asarray(x, dtype=np.complex128), axis_weights)
    return float(np.sum(np.sqrt(np.sum(np.abs(g) ** 2, axis=0))))


def tv_denoise(x, params, p0=None, return_dual=False):
    """Approximate ``prox_{lam TV}(x)`` by fast dual projected gradient.

    Parameters
    ----------
    x : ndarray, shape (p, nx, ny)
    params : TVParams
    p0 : ndarray, optional
        Warm-start dual variable (as returned with ``return_dual=True``).
    """
    x = check_image(x)
    lam = float(params.lam)
    w = tuple(float(v) for v in params.axis_weights)
    if lam == 0:
        return (x.copy(), np.zeros((3,) + x.shape, complex)) if return_dual else x.copy()
    lip = 4.0 * sum(v * v for v, n in zip(w, x.shape) if n > 1)
    if lip == 0:
        return (x.copy(), np.zeros((3,) + x.shape, complex)) if return_dual else x.copy()
    step = 1.0 / (lam * lip)
    p = np.zeros((3,) + x.shape, dtype=np.complex128) if p0 is None else p0.copy()
    r, t = p.copy(), 1.0
    for _ in range(int(params.n_iter)):
        z = x - lam * _grad_adjoint(r, w)
        p_new = r + step * _grad(z, w)
        norm = np.sqrt(np.sum(np.abs(p_new) ** 2, axis=0))
        p_new /= np.maximum(norm, 1.0)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        r = p_new + ((t - 1.0) / t_new) * (p_new - p)
        p, t = p_new, t_new
    out = x - lam * _grad_adjoint(p, w)
    return (out, p) if return_dual else out


class TVDenoiser(ArtifactRemover):
    """TV proximal denoiser (the compressed-sensing baseline prior)."""

    name = "tv"

    def __init__(self, lam=0.01, n_iter=50, axis_weights=(1.0, 1.0, 1.0)):
        self.lam = lam
        self.n_iter = n_iter
        self.axis_weights = axis_weights

    def transform(self, x):
        return tv_denoise(x, TVParams(self.lam, self.n_iter, tuple(self.axis_weights)))


def red_residual(x, remover, tau):
    """Gradient of the RED regulariser: ``tau * (x - R(x))``."""
    tau = check_positive(tau, "tau")
    x = np.asarray(x, dtype=np.complex128)
    return tau * x - tau * remover(x)


def red_value(x, remover, tau):
    """Explicit regulariser ``(tau/2) Re<x, x - R(x)>``."""
    tau = check_positive(tau, "tau")
    x = np.asarray(x, dtype=np.complex128)
    return 0.5 * tau * float(np.real(np.vdot(x, x - remover(x))))
