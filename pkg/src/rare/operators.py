"""Multi-coil nonuniform Fourier measurement operators.

Images are complex arrays of shape ``(n_phases, nx, ny)`` and k-space data
are complex arrays of shape ``(n_phases, n_coils, n_samples)``.  For phase
``t`` and coil ``i`` the forward model evaluates

    y[t, i, j] = n**-0.5 * sum_p S_i[p] x[t, p] exp(-2j*pi * k[t, j] . p)

where ``p`` runs over centred pixel indices ``-N/2 .. N/2-1`` along each axis
and ``k`` is in cycles per pixel, ``[-0.5, 0.5)``.  On the full Cartesian grid
this is the unitary DFT.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.special import i0

from ._validation import check_image, check_random_state

__all__ = [
    "SamplingPattern",
    "MeasurementOperator",
    "DenseOperator",
    "check_coil_maps",
    "radial_density_weights",
    "forward_apply",
    "adjoint_apply",
    "pseudoinverse_recon",
    "datafid_gradient",
    "operator_norm_estimate",
]

GRID_KERNEL_WIDTH = 4
GRID_OVERSAMPLING = 2.0


@dataclass(frozen=True, eq=False)
class SamplingPattern:
    """Per-phase k-space sample coordinates and density weights.

    Attributes
    ----------
    coords : ndarray, shape (n_phases, m, 2)
        Normalised (kx, ky) coordinates in ``[-0.5, 0.5)``.
    weights : ndarray, shape (n_phases, m)
        Strictly positive density-compensation weights.
    scheme : {"radial", "cartesian-mask"}
    """

    coords: np.ndarray
    weights: np.ndarray
    scheme: str = "radial"

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if coords.ndim != 3 or coords.shape[2] != 2:
            raise ValueError(f"coords must have shape (n_phases, m, 2), got {coords.shape}")
        if coords.shape[1] == 0:
            raise ValueError("sampling pattern needs at least one sample")
        if weights.shape != coords.shape[:2]:
            raise ValueError("weights must have shape (n_phases, m)")
        if not np.all(np.isfinite(coords)) or coords.min() < -0.5 or coords.max() >= 0.5:
            raise ValueError("k-space coordinates must lie in [-0.5, 0.5)")
        if not np.all(weights > 0):
            raise ValueError("density weights must be strictly positive")
        if self.scheme not in ("radial", "cartesian-mask"):
            raise ValueError(f"unknown sampling scheme {self.scheme!r}")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "weights", weights)

    @property
    def n_phases(self):
        return self.coords.shape[0]

    @property
    def n_samples(self):
        return self.coords.shape[1]

    @classmethod
    def cartesian(cls, mask):
        """Build a pattern from a boolean mask of shape (n_phases, nx, ny).

        Every phase must select the same number of grid points.  Mask index
        ``(u, v)`` maps to frequency ``((u - nx//2)/nx, (v - ny//2)/ny)``.
        """
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim == 2:
            mask = mask[None]
        counts = mask.reshape(mask.shape[0], -1).sum(axis=1)
        if counts.min() != counts.max() or counts[0] == 0:
            raise ValueError("each phase must sample the same, nonzero number of points")
        nx, ny = mask.shape[1:]
        coords = []
        for m in mask:
            u, v = np.nonzero(m)
            coords.append(np.stack([(u - nx // 2) / nx, (v - ny // 2) / ny], axis=-1))
        coords = np.asarray(coords)
        return cls(coords, np.ones(coords.shape[:2]), scheme="cartesian-mask")

    @classmethod
    def full_grid(cls, shape, n_phases=1):
        return cls.cartesian(np.ones((n_phases,) + tuple(shape), dtype=bool))


def radial_density_weights(coords, n_spokes, n_readout, n_pixels):
    """Ramp density compensation for radial spokes.

    The weight of a sample is the k-space area it represents, in units of one
    Cartesian grid cell: ``n * pi * |k| / (n_spokes * n_readout)``.  The origin
    uses a quarter of the readout spacing as its radius, which gives every
    spoke's centre sample an equal share of the central disc.
    """
    r = np.hypot(coords[..., 0], coords[..., 1])
    floor = 0.25 / n_readout
    r = np.where(r < floor, floor, r)
    return n_pixels * np.pi * r / (n_spokes * n_readout)


def check_coil_maps(maps, image_shape=None):
    maps = np.asarray(maps, dtype=np.complex128)
    if maps.ndim == 2:
        maps = maps[None]
    if maps.ndim != 3:
        raise ValueError(f"coil maps must have shape (n_coils, nx, ny), got {maps.shape}")
    if image_shape is not None and maps.shape[1:] != tuple(image_shape):
        raise ValueError(f"coil maps {maps.shape[1:]} do not match image grid {image_shape}")
    if not np.all(np.isfinite(maps)):
        raise ValueError("coil maps contain non-finite entries")
    energy = np.sum(np.abs(maps) ** 2, axis=0)
    if np.any(energy <= 0):
        raise ValueError("coil maps have zero total energy at some pixel")
    return maps


def _kaiser_bessel(t, width, beta):
    u = 1.0 - (2.0 * t / width) ** 2
    out = np.zeros_like(t)
    inside = u >= 0
    out[inside] = i0(beta * np.sqrt(u[inside]))
    return out


def _kaiser_bessel_ft(nu, width, beta):
    z = np.sqrt((beta**2 - (np.pi * width * nu) ** 2).astype(np.complex128))
    small = np.abs(z) < 1e-8
    z = np.where(small, 1.0, z)
    val = np.where(small, 1.0, np.sinh(z) / z)
    return width * val.real


class MeasurementOperator:
    """Sampled multi-coil Fourier operator ``H = P F S``.

    Parameters
    ----------
    pattern : SamplingPattern
    image_shape : tuple of int
        In-plane grid ``(nx, ny)``.
    coil_maps : array-like, optional
        Sensitivities of shape ``(n_coils, nx, ny)``; a single unit coil if
        omitted.
    mode : {"direct", "gridding"}
        ``"direct"`` evaluates the nonuniform DFT exactly, ``"gridding"`` uses
        Kaiser-Bessel interpolation (width 4, oversampling 2) on an
        oversampled FFT grid.
    """

    def __init__(self, pattern, image_shape, coil_maps=None, mode="direct"):
        if mode not in ("direct", "gridding"):
            raise ValueError(f"unknown mode {mode!r}")
        self.pattern = pattern
        self.grid_shape = tuple(int(s) for s in image_shape)
        if len(self.grid_shape) != 2:
            raise ValueError("image_shape must be (nx, ny)")
        if coil_maps is None:
            coil_maps = np.ones((1,) + self.grid_shape, dtype=np.complex128)
        self.coil_maps = check_coil_maps(coil_maps, self.grid_shape)
        self.coil_energy = np.sum(np.abs(self.coil_maps) ** 2, axis=0)
        self.mode = mode
        self.norm = 1.0 / np.sqrt(self.grid_shape[0] * self.grid_shape[1])
        if mode == "direct":
            self._setup_direct()
        else:
            self._setup_gridding()

    @property
    def n_coils(self):
        return self.coil_maps.shape[0]

    @property
    def image_shape(self):
        return (self.pattern.n_phases,) + self.grid_shape

    @property
    def data_shape(self):
        return (self.pattern.n_phases, self.n_coils, self.pattern.n_samples)

    def _setup_direct(self):
        nx, ny = self.grid_shape
        px = np.arange(nx) - nx // 2
        py = np.arange(ny) - ny // 2
        kx = self.pattern.coords[..., 0]
        ky = self.pattern.coords[..., 1]
        # separable phase factors: exp(-2i pi (kx px + ky py)) = Ex[j, px] * Ey[j, py]
        self._ex = np.exp(-2j * np.pi * kx[..., None] * px)
        self._ey = np.exp(-2j * np.pi * ky[..., None] * py)

    def _setup_gridding(self):
        W, alpha = GRID_KERNEL_WIDTH, GRID_OVERSAMPLING
        beta = np.pi * np.sqrt((W / alpha) ** 2 * (alpha - 0.5) ** 2 - 0.8)
        self._grid = tuple(int(2 * np.ceil(alpha * n / 2)) for n in self.grid_shape)
        deapod = []
        for n, g in zip(self.grid_shape, self._grid):
            p = np.arange(n) - n // 2
            deapod.append(_kaiser_bessel_ft(p / g, W, beta))
        self._deapod = np.outer(deapod[0], deapod[1])
        self._pix_index = tuple(
            (np.arange(n) - n // 2) % g for n, g in zip(self.grid_shape, self._grid)
        )
        gx, gy = self._grid
        offsets = np.arange(-W // 2, W // 2 + 1)
        mats = []
        for coords in self.pattern.coords:
            m = coords.shape[0]
            ux = coords[:, 0] * gx
            uy = coords[:, 1] * gy
            jx = np.floor(ux)[:, None] + offsets
            jy = np.floor(uy)[:, None] + offsets
            wx = _kaiser_bessel(ux[:, None] - jx, W, beta)
            wy = _kaiser_bessel(uy[:, None] - jy, W, beta)
            rows = np.repeat(np.arange(m), offsets.size**2)
            cols = ((jx.astype(int) % gx)[:, :, None] * gy + (jy.astype(int) % gy)[:, None, :])
            vals = wx[:, :, None] * wy[:, None, :]
            mats.append(
                sparse.csr_matrix(
                    (vals.ravel(), (rows, cols.ravel())), shape=(m, gx * gy)
                )
            )
        self._interp = mats
        self._interp_h = [mat.conj().T.tocsr() for mat in mats]

    def _check_data(self, y):
        y = np.asarray(y)
        if y.shape != self.data_shape:
            raise ValueError(f"k-space data shape {y.shape} != expected {self.data_shape}")
        y = y.astype(np.complex128, copy=False)
        if not np.all(np.isfinite(y)):
            raise ValueError("k-space data contain non-finite entries")
        return y

    def _check_x(self, x):
        x = check_image(x)
        if x.shape != self.image_shape:
            raise ValueError(f"image shape {x.shape} != operator grid {self.image_shape}")
        return x

    def forward(self, x):
        x = self._check_x(x)
        out = np.empty(self.data_shape, dtype=np.complex128)
        for t in range(self.pattern.n_phases):
            z = self.coil_maps * x[t]
            if self.mode == "direct":
                out[t] = np.sum((self._ex[t] @ z) * self._ey[t], axis=-1)
            else:
                out[t] = self._grid_forward(t, z)
        out *= self.norm
        return out

    def adjoint(self, y):
        y = self._check_data(y)
        out = np.empty(self.image_shape, dtype=np.complex128)
        for t in range(self.pattern.n_phases):
            if self.mode == "direct":
                z = self._ex[t].conj().T @ (y[t][:, :, None] * self._ey[t].conj())
            else:
                z = self._grid_adjoint(t, y[t])
            out[t] = np.sum(self.coil_maps.conj() * z, axis=0)
        out *= self.norm
        return out

    def _grid_forward(self, t, z):
        gx, gy = self._grid
        buf = np.zeros((z.shape[0], gx, gy), dtype=np.complex128)
        ix, iy = self._pix_index
        buf[:, ix[:, None], iy[None, :]] = z / self._deapod
        spec = np.fft.fft2(buf).reshape(z.shape[0], -1)
        return (self._interp[t] @ spec.T).T

    def _grid_adjoint(self, t, yt):
        gx, gy = self._grid
        spec = (self._interp_h[t] @ yt.T).T.reshape(-1, gx, gy)
        buf = np.fft.ifft2(spec) * (gx * gy)
        ix, iy = self._pix_index
        return buf[:, ix[:, None], iy[None, :]] / self._deapod

    def pseudoinverse(self, y):
        """Density-compensated adjoint with coil-energy normalisation."""
        y = self._check_data(y)
        return self.adjoint(y * self.pattern.weights[:, None, :]) / self.coil_energy

    def gradient(self, x, y):
        """Gradient ``H^*(Hx - y)`` of ``0.5 * ||Hx - y||^2``."""
        y = self._check_data(y)
        return self.adjoint(self.forward(x) - y)

    def norm_estimate(self, iters=50, seed=0):
        return _power_iteration(self, iters, seed)


class DenseOperator:
    """Explicit matrix operator on flattened images, mainly for oracles and tests.

    Parameters
    ----------
    matrix : array-like, shape (m, n)
    image_shape : tuple
        Shape of the image; ``prod(image_shape) == n``.
    """

    def __init__(self, matrix, image_shape):
        self.matrix = np.asarray(matrix, dtype=np.complex128)
        self.image_shape = tuple(image_shape)
        if self.matrix.shape[1] != int(np.prod(self.image_shape)):
            raise ValueError("matrix columns must equal the number of pixels")
        self.data_shape = (self.matrix.shape[0],)
        self._pinv = None

    def forward(self, x):
        x = check_image(x, ndim=None)
        if x.shape != self.image_shape:
            raise ValueError(f"image shape {x.shape} != {self.image_shape}")
        return self.matrix @ x.ravel()

    def adjoint(self, y):
        y = np.asarray(y, dtype=np.complex128)
        if y.shape != self.data_shape:
            raise ValueError(f"data shape {y.shape} != {self.data_shape}")
        return (self.matrix.conj().T @ y).reshape(self.image_shape)

    def pseudoinverse(self, y):
        if self._pinv is None:
            self._pinv = np.linalg.pinv(self.matrix)
        return (self._pinv @ np.asarray(y, dtype=np.complex128)).reshape(self.image_shape)

    def gradient(self, x, y):
        return self.adjoint(self.forward(x) - y)

    def norm_estimate(self, iters=50, seed=0):
        return _power_iteration(self, iters, seed)


def _power_iteration(op, iters, seed):
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = check_random_state(seed)
    shape = op.image_shape
    v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = op.adjoint(op.forward(v))
        lam = float(np.real(np.vdot(v, w)))
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
    return lam


def forward_apply(op, x):
    return op.forward(x)


def adjoint_apply(op, y):
    return op.adjoint(y)


def pseudoinverse_recon(op, y):
    return op.pseudoinverse(y)


def datafid_gradient(op, x, y):
    return op.gradient(x, y)


def operator_norm_estimate(op, iters=50, seed=0):
    """Power-iteration estimate of the largest eigenvalue of ``H^* H``."""
    return op.norm_estimate(iters, seed)
