"""Artifact2Artifact training of the artifact-removal network.

The network is fit to map one artifact-contaminated reconstruction of an
object to another reconstruction of the same object, under a mixed l1/l2
loss.  With clean targets the same code performs ordinary supervised
training.
"""

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import TransformerMixin
from sklearn.exceptions import NotFittedError

from ._validation import check_image, check_positive, check_random_state, check_unit_interval
from .network import (
    backward,
    conv_net_forward,
    forward_with_cache,
    identity_weights,
    init_weights,
    to_channels,
)
from .priors import ArtifactRemover

logger = logging.getLogger(__name__)

__all__ = [
    "TrainPair",
    "TrainConfig",
    "AdamState",
    "TrainingDivergedError",
    "build_pairs",
    "mixed_loss",
    "loss_gradient",
    "adam_step",
    "train",
    "ArtifactRemovalNet",
]


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch):
        super().__init__(f"training loss became non-finite in epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True, eq=False)
class TrainPair:
    input: np.ndarray
    target: np.ndarray
    object_id: object
    input_acquisition: object
    target_acquisition: object

    def __post_init__(self):
        if np.shape(self.input) != np.shape(self.target):
            raise ValueError("pair input and target must have equal shapes")
        if self.input_acquisition == self.target_acquisition:
            raise ValueError("pair must use two different acquisitions")


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.5
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    epochs: int = 10
    seed: int = 0
    patch_size: tuple = None  # optional random (p, x, y) crop per sample

    def __post_init__(self):
        check_unit_interval(self.alpha, "alpha", low_open=False, high_open=False)
        check_positive(self.learning_rate, "learning_rate")
        check_unit_interval(self.beta1, "beta1", low_open=False)
        check_unit_interval(self.beta2, "beta2", low_open=False)
        check_positive(self.eps, "eps")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


def build_pairs(dataset, policy="all"):
    """Ordered same-object pairs of acquisitions.

    Parameters
    ----------
    dataset : mapping
        ``{object_id: [(acquisition_id, image), ...]}``.  Object and
        acquisition order determine pair order.
    policy : {"all", "adjacent"}
        ``"all"`` uses every ordered pair ``(i, i')`` with ``i != i'``;
        ``"adjacent"`` only neighbours in the listed order (both directions).

    Objects with fewer than two acquisitions are skipped with a warning.
    """
    if policy not in ("all", "adjacent"):
        raise ValueError(f"unknown pairing policy {policy!r}")
    pairs = []
    skipped = 0
    for obj, acqs in dataset.items():
        acqs = list(acqs)
        if len(acqs) < 2:
            skipped += 1
            continue
        for a, (ia, xa) in enumerate(acqs):
            for b, (ib, xb) in enumerate(acqs):
                if a == b or (policy == "adjacent" and abs(a - b) != 1):
                    continue
                pairs.append(TrainPair(xa, xb, obj, ia, ib))
    if skipped:
        logger.warning("skipped %d object(s) with a single acquisition", skipped)
    return pairs


def mixed_loss(pred, target, alpha=0.5):
    """``alpha * mean|r| + (1 - alpha) * mean r^2`` over real and imaginary entries."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    r = pred - target
    if np.iscomplexobj(r):
        r = np.stack([r.real, r.imag])
    return float(alpha * np.mean(np.abs(r)) + (1 - alpha) * np.mean(r * r))


def _loss_and_output_grad(out, tgt, alpha):
    # out, tgt: (2, b, p, x, y); loss is the batch mean of per-sample losses
    r = out - tgt
    n = r.size  # = b * entries per sample, so dividing by n averages over the batch too
    loss = alpha * np.abs(r).sum() / n + (1 - alpha) * (r * r).sum() / n
    g = alpha * np.sign(r) / n + (1 - alpha) * 2.0 * r / n
    return float(loss), g


def loss_gradient(weights, inputs, targets, alpha=0.5):
    """Mean mixed loss over a batch and its gradient for every kernel and bias.

    Parameters
    ----------
    weights : NetWeights
    inputs, targets : ndarray, shape (b, p, x, y), complex
    alpha : float

    Returns
    -------
    loss : float
    grads : list of ndarray
        Same layout as ``weights.params()``.
    """
    inputs = check_image(inputs, "inputs", ndim=4)
    targets = check_image(targets, "targets", ndim=4)
    if inputs.shape != targets.shape or inputs.shape[0] == 0:
        raise ValueError("inputs and targets must be non-empty with equal shapes")
    out, cache = forward_with_cache(weights, to_channels(inputs))
    loss, g = _loss_and_output_grad(out, to_channels(targets), alpha)
    return loss, backward(weights, cache, g)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state, cfg):
    """One bias-corrected ADAM update; returns ``(new_params, new_state)``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state must have the same length")
    t = state.t + 1
    b1, b2 = cfg.beta1, cfg.beta2
    new_params, ms, vs = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_params.append(p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps))
        ms.append(m)
        vs.append(v)
    return new_params, AdamState(ms, vs, t)


def _crop(rng, x, y, patch):
    if patch is None:
        return x, y
    sl = []
    for n, p in zip(x.shape, patch):
        p = min(int(p), n)
        start = rng.randint(0, n - p + 1)
        sl.append(slice(start, start + p))
    sl = tuple(sl)
    return x[sl], y[sl]


def train(inputs, targets, weights, cfg, callback=None):
    """Seeded mini-batch ADAM on the mean mixed loss.

    Parameters
    ----------
    inputs, targets : ndarray, shape (n, p, x, y)
        Training pairs (A2A: two reconstructions of the same object).
    weights : NetWeights
        Initial weights.
    cfg : TrainConfig

    Returns
    -------
    weights : NetWeights
    history : list of float
        Mean training loss of each epoch, measured on the mini-batches as
        they were visited (before the update each one triggers).
    """
    inputs = check_image(inputs, "inputs", ndim=4)
    targets = check_image(targets, "targets", ndim=4)
    if inputs.shape != targets.shape:
        raise ValueError("inputs and targets must have equal shapes")
    n = inputs.shape[0]
    if n == 0:
        raise ValueError("no training pairs")
    rng = check_random_state(cfg.seed)
    params = [p.copy() for p in weights.params()]
    state = AdamState.zeros_like(params)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            crops = [_crop(rng, inputs[i], targets[i], cfg.patch_size) for i in idx]
            xb = np.stack([c[0] for c in crops])
            yb = np.stack([c[1] for c in crops])
            loss, grads = loss_gradient(weights.with_params(params), xb, yb, cfg.alpha)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            params, state = adam_step(params, grads, state, cfg)
            total += loss * len(idx)
            count += len(idx)
        history.append(total / count)
        logger.debug("epoch %d loss %.6g", epoch, history[-1])
        if callback is not None:
            callback(epoch, history[-1])
    return weights.with_params(params), history


class ArtifactRemovalNet(ArtifactRemover, TransformerMixin):
    """Trainable CNN artifact remover with a scikit-learn interface.

    ``fit(X, Y)`` trains the network to map each ``X[i]`` to ``Y[i]``; in the
    Artifact2Artifact setting both are reconstructions of the same object
    from different acquisitions.  ``transform`` applies the trained network.

    Parameters
    ----------
    depth, width, kernel_size : int
        Architecture; the default is ten layers of 64 filters.
    alpha : float
        l1 weight of the mixed loss.
    learning_rate, beta1, beta2, eps : float
        ADAM settings.
    batch_size, epochs : int
    patch_size : tuple of int, optional
        Random (phase, x, y) crop used for each training sample.
    init : {"glorot", "identity"}
    random_state : int
        Seeds initialisation, shuffling and cropping.
    """

    name = "cnn"

    def __init__(
        self,
        depth=10,
        width=64,
        kernel_size=3,
        alpha=0.5,
        learning_rate=1e-3,
        beta1=0.9,
        beta2=0.999,
        eps=1e-8,
        batch_size=4,
        epochs=10,
        patch_size=None,
        init="glorot",
        random_state=0,
    ):
        self.depth = depth
        self.width = width
        self.kernel_size = kernel_size
        self.alpha = alpha
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.batch_size = batch_size
        self.epochs = epochs
        self.patch_size = patch_size
        self.init = init
        self.random_state = random_state

    def train_config(self):
        return TrainConfig(
            alpha=self.alpha,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.random_state,
            patch_size=None if self.patch_size is None else tuple(self.patch_size),
        )

    def initial_weights(self):
        if self.init == "identity":
            return identity_weights(self.depth, max(self.width, 4), self.kernel_size)
        if self.init == "glorot":
            return init_weights(self.depth, self.width, self.kernel_size, seed=self.random_state)
        raise ValueError(f"unknown init {self.init!r}")

    def fit(self, X, Y):
        X = check_image(X, "X", ndim=4)
        Y = check_image(Y, "Y", ndim=4)
        self.weights_, self.loss_history_ = train(X, Y, self.initial_weights(), self.train_config())
        return self

    def fit_pairs(self, pairs):
        """Fit on a list of :class:`TrainPair`."""
        if not pairs:
            raise ValueError("no training pairs")
        X = np.stack([p.input for p in pairs])
        Y = np.stack([p.target for p in pairs])
        return self.fit(X, Y)

    @classmethod
    def from_weights(cls, weights, **params):
        net = cls(depth=len(weights), **params)
        net.weights_ = weights
        net.loss_history_ = []
        return net

    def transform(self, X):
        if not hasattr(self, "weights_"):
            raise NotFittedError("ArtifactRemovalNet is not fitted")
        return conv_net_forward(self.weights_, X)

    def score(self, X, Y):
        """Negative mean mixed loss on held-out pairs."""
        return -mixed_loss(self.transform(X), np.asarray(Y), self.alpha)

