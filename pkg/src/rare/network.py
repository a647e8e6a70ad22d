"""Simplified 3D DnCNN-style network on (phase, x, y) volumes.

A complex image is split into two real channels (real, imaginary), passed
through a stack of stride-1, zero-padded 3D convolutions and recombined.
Forward and backward passes are written directly in numpy; activations are
stored in a channel-first layout ``(channels, batch, phase, x, y)`` so that
every kernel tap becomes a single matrix product.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_image, check_random_state

__all__ = [
    "Layer",
    "NetWeights",
    "init_weights",
    "identity_weights",
    "conv_net_forward",
    "forward_with_cache",
    "backward",
]

ACTIVATIONS = ("relu", "none")


@dataclass(eq=False)
class Layer:
    kernel: np.ndarray  # (out_ch, in_ch, kp, kx, ky)
    bias: np.ndarray  # (out_ch,)
    activation: str = "relu"

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.kernel.ndim != 5:
            raise ValueError("kernel must be 5-D (out, in, kp, kx, ky)")
        if any(k % 2 == 0 for k in self.kernel.shape[2:]):
            raise ValueError("kernel extents must be odd for same-size padding")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ValueError("bias length must equal the kernel's output channels")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(self.kernel)) and np.all(np.isfinite(self.bias))):
            raise ValueError("layer parameters must be finite")

    @property
    def in_channels(self):
        return self.kernel.shape[1]

    @property
    def out_channels(self):
        return self.kernel.shape[0]


@dataclass(eq=False)
class NetWeights:
    """Ordered layer stack mapping 2 channels to 2 channels."""

    layers: list = field(default_factory=list)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        if self.layers[0].in_channels != 2 or self.layers[-1].out_channels != 2:
            raise ValueError("first layer must take 2 channels and last layer must emit 2")
        for i, (a, b) in enumerate(zip(self.layers[:-1], self.layers[1:])):
            if a.out_channels != b.in_channels:
                raise ValueError(
                    f"channel chain broken between layers {i} and {i + 1}: "
                    f"{a.out_channels} != {b.in_channels}"
                )

    def __len__(self):
        return len(self.layers)

    def params(self):
        """Flat list ``[k0, b0, k1, b1, ...]`` of the underlying arrays."""
        out = []
        for layer in self.layers:
            out.extend([layer.kernel, layer.bias])
        return out

    def with_params(self, params):
        layers = [
            Layer(params[2 * i], params[2 * i + 1], layer.activation)
            for i, layer in enumerate(self.layers)
        ]
        return NetWeights(layers)

    def copy(self):
        return self.with_params([p.copy() for p in self.params()])

    def receptive_radius(self):
        return sum(np.array(layer.kernel.shape[2:]) // 2 for layer in self.layers)


def init_weights(depth=10, width=64, kernel_size=3, seed=None):
    """Glorot-uniform initialisation of a ``depth``-layer network.

    The first ``depth - 1`` layers are conv + ReLU with ``width`` filters and
    the last is a plain convolution to two channels.  Biases start at zero.
    """
    if depth < 1 or width < 1:
        raise ValueError("depth and width must be >= 1")
    rng = check_random_state(seed)
    ks = (kernel_size,) * 3 if np.isscalar(kernel_size) else tuple(kernel_size)
    taps = int(np.prod(ks))
    chans = [2] + [width] * (depth - 1) + [2]
    layers = []
    for i in range(depth):
        cin, cout = chans[i], chans[i + 1]
        limit = np.sqrt(6.0 / ((cin + cout) * taps))
        kernel = rng.uniform(-limit, limit, size=(cout, cin) + ks)
        act = "relu" if i < depth - 1 else "none"
        layers.append(Layer(kernel, np.zeros(cout), act))
    return NetWeights(layers)


def identity_weights(depth=1, width=4, kernel_size=3):
    """Weights for which the network reproduces its input exactly.

    With ``depth >= 2`` the signal is routed through the ReLU layers as
    ``(relu(re), relu(-re), relu(im), relu(-im))`` and recombined at the end,
    so ``width`` must be at least 4.
    """
    ks = (kernel_size,) * 3 if np.isscalar(kernel_size) else tuple(kernel_size)
    c = tuple(k // 2 for k in ks)
    if depth == 1:
        k = np.zeros((2, 2) + ks)
        k[0, 0][c] = k[1, 1][c] = 1.0
        return NetWeights([Layer(k, np.zeros(2), "none")])
    if width < 4:
        raise ValueError("identity through ReLU layers needs width >= 4")
    layers = []
    first = np.zeros((width, 2) + ks)
    first[0, 0][c], first[1, 0][c], first[2, 1][c], first[3, 1][c] = 1.0, -1.0, 1.0, -1.0
    layers.append(Layer(first, np.zeros(width), "relu"))
    for _ in range(depth - 2):
        mid = np.zeros((width, width) + ks)
        for j in range(4):
            mid[j, j][c] = 1.0
        layers.append(Layer(mid, np.zeros(width), "relu"))
    last = np.zeros((2, width) + ks)
    last[0, 0][c], last[0, 1][c], last[1, 2][c], last[1, 3][c] = 1.0, -1.0, 1.0, -1.0
    layers.append(Layer(last, np.zeros(2), "none"))
    return NetWeights(layers)


def to_channels(x):
    """(batch, p, x, y) complex -> (2, batch, p, x, y) real."""
    return np.stack([x.real, x.imag])


def from_channels(h):
    return h[0] + 1j * h[1]


def _pad(h, kshape):
    r = [k // 2 for k in kshape]
    return np.pad(h, ((0, 0), (0, 0), (r[0], r[0]), (r[1], r[1]), (r[2], r[2])))


def _tap_offsets(padded_shape, kshape):
    _, _, Pp, Xp, Yp = padded_shape
    kp, kx, ky = kshape
    return [
        ((a, i, j), a * Xp * Yp + i * Yp + j)
        for a in range(kp)
        for i in range(kx)
        for j in range(ky)
    ]


# In the padded volume, flattened per channel, shifting a window by a kernel
# tap is a constant offset.  Each tap is then one matrix product on a
# contiguous slice; entries computed for window corners that fall in the
# padding are discarded.


def _conv(h, kernel, bias):
    """Zero-padded stride-1 convolution (cross-correlation) in channel-first layout."""
    cin, b, P, X, Y = h.shape
    cout = kernel.shape[0]
    hp = _pad(h, kernel.shape[2:])
    flat = hp.reshape(cin, -1)
    taps = _tap_offsets(hp.shape, kernel.shape[2:])
    span = flat.shape[1] - taps[-1][1]
    ktaps = np.ascontiguousarray(np.moveaxis(kernel, (0, 1), (3, 4)))
    out = np.zeros((cout, flat.shape[1]))
    acc = out[:, :span]
    for (a, i, j), d in taps:
        acc += ktaps[a, i, j] @ flat[:, d:d + span]
    out = out.reshape((cout,) + hp.shape[1:])[:, :, :P, :X, :Y]
    out += bias[:, None, None, None, None]
    return out


def _conv_backward(h, kernel, gout):
    """Gradients of ``_conv`` w.r.t. input, kernel and bias."""
    cin, b, P, X, Y = h.shape
    cout = kernel.shape[0]
    hp = _pad(h, kernel.shape[2:])
    flat = hp.reshape(cin, -1)
    taps = _tap_offsets(hp.shape, kernel.shape[2:])
    span = flat.shape[1] - taps[-1][1]
    gfull = np.zeros((cout,) + hp.shape[1:])
    gfull[:, :, :P, :X, :Y] = gout
    g = gfull.reshape(cout, -1)[:, :span]
    ktaps_t = np.ascontiguousarray(np.moveaxis(kernel, (0, 1), (4, 3)))
    gk = np.empty(kernel.shape[2:] + kernel.shape[:2])
    gflat = np.zeros_like(flat)
    for (a, i, j), d in taps:
        gk[a, i, j] = g @ flat[:, d:d + span].T
        gflat[:, d:d + span] += ktaps_t[a, i, j] @ g
    gk = np.moveaxis(gk, (3, 4), (0, 1))
    kp, kx, ky = kernel.shape[2:]
    rp, rx, ry = kp // 2, kx // 2, ky // 2
    gh = gflat.reshape(hp.shape)[:, :, rp:rp + P, rx:rx + X, ry:ry + Y]
    return gh, gk, gout.reshape(cout, -1).sum(axis=1)


def forward_with_cache(weights, h):
    """Run the layer stack on channel-first input, keeping what backprop needs."""
    cache = []
    for layer in weights.layers:
        z = _conv(h, layer.kernel, layer.bias)
        cache.append(h)
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
        if layer.activation == "relu":
            cache[-1] = (cache[-1], z > 0)
        else:
            cache[-1] = (cache[-1], None)
    return h, cache


def backward(weights, cache, gout):
    """Backpropagate ``gout`` (gradient w.r.t. the network output)."""
    grads = [None] * (2 * len(weights.layers))
    g = gout
    for idx in range(len(weights.layers) - 1, -1, -1):
        layer = weights.layers[idx]
        h, mask = cache[idx]
        if mask is not None:
            g = g * mask
        g, gk, gb = _conv_backward(h, layer.kernel, g)
        grads[2 * idx] = gk
        grads[2 * idx + 1] = gb
    return grads


def conv_net_forward(weights, x):
    """Apply the network to a complex image of shape (p, x, y) or a stack (b, p, x, y)."""
    x = np.asarray(x)
    single = x.ndim == 3
    x = check_image(x[None] if single else x, ndim=4)
    h = to_channels(x)
    for layer in weights.layers:
        h = _conv(h, layer.kernel, layer.bias)
        if layer.activation == "relu":
            np.maximum(h, 0.0, out=h)
    y = from_channels(h)
    return y[0] if single else y
