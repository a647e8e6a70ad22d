"""Synthetic moving phantoms, radial trajectories, coil maps and noisy data."""

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ._validation import check_random_state
from .operators import MeasurementOperator, SamplingPattern, radial_density_weights

__all__ = [
    "GOLDEN_ANGLE",
    "Ellipse",
    "PhantomConfig",
    "AcquisitionConfig",
    "make_phantom",
    "displacement_schedule",
    "default_ellipses",
    "radial_trajectory",
    "radial_pattern",
    "spokes_for_rate",
    "synth_coil_maps",
    "add_noise",
    "acquire",
    "make_dataset",
    "config_digest",
]

# spokes through the origin repeat every pi, so the increment is pi / phi
GOLDEN_ANGLE = math.pi * (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Ellipse:
    """Ellipse in normalised coordinates ``[-1, 1]`` along (x, y).

    ``displacement`` is the peak respiratory shift along x, in pixels.
    """

    center: tuple = (0.0, 0.0)
    axes: tuple = (0.5, 0.5)
    intensity: float = 1.0
    angle: float = 0.0  # degrees
    displacement: float = 0.0


@dataclass(frozen=True)
class PhantomConfig:
    size: int = 64
    n_phases: int = 10
    ellipses: tuple = None  # None -> default_ellipses(seed)
    seed: int = 0
    supersample: int = 4
    texture: float = 0.0  # relative amplitude of smooth intensity variation inside shapes

    def __post_init__(self):
        if self.size < 2 or self.n_phases < 1 or self.supersample < 1:
            raise ValueError("size >= 2, n_phases >= 1 and supersample >= 1 required")
        if not 0 <= self.texture < 1:
            raise ValueError("texture must lie in [0, 1)")

    def resolved_ellipses(self):
        if self.ellipses is None:
            return default_ellipses(self.seed)
        return tuple(e if isinstance(e, Ellipse) else Ellipse(**e) for e in self.ellipses)


@dataclass(frozen=True)
class AcquisitionConfig:
    """Radial acquisition settings for one acquisition of every phase.

    ``rotation`` (radians) turns the whole spoke fan, so that repeated
    acquisitions of one object sample different k-space lines.
    """

    spokes: int = 7
    readout: int = 64
    scheme: str = "golden"
    rotation: float = 0.0
    snr_db: float = None  # None means noiseless
    seed: int = 0
    n_coils: int = 1

    def __post_init__(self):
        if self.spokes < 1 or self.readout < 2:
            raise ValueError("spokes >= 1 and readout >= 2 required")
        if self.scheme not in ("golden", "uniform"):
            raise ValueError(f"unknown angle scheme {self.scheme!r}")
        if self.snr_db is not None and not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite or None")
        if self.n_coils < 1:
            raise ValueError("n_coils must be >= 1")


def config_digest(cfg):
    payload = json.dumps(asdict(cfg), sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def default_ellipses(seed=0):
    """Abdominal-looking phantom: body, liver, kidneys, spine and lesions.

    The anatomy is jittered and the lesion count, position and contrast are
    drawn from ``seed``, so different seeds give different objects.
    """
    rng = np.random.default_rng(seed)

    def jit(v, s):
        return float(v + s * rng.uniform(-1, 1))

    breath = jit(3.0, 1.0)
    body = Ellipse((0.0, 0.0), (jit(0.72, 0.05), jit(0.88, 0.05)), 0.35, 0.0, 0.3 * breath)
    liver = Ellipse(
        (jit(-0.25, 0.05), jit(-0.25, 0.05)), (jit(0.32, 0.04), jit(0.42, 0.05)), 0.35,
        jit(20.0, 10.0), breath,
    )
    spleen = Ellipse(
        (jit(-0.25, 0.05), jit(0.5, 0.05)), (jit(0.15, 0.03), jit(0.12, 0.03)), 0.25,
        jit(-10.0, 10.0), 0.8 * breath,
    )
    kid_l = Ellipse((jit(0.3, 0.04), jit(-0.38, 0.04)), (0.14, 0.09), 0.45, 60.0, 0.4 * breath)
    kid_r = Ellipse((jit(0.3, 0.04), jit(0.38, 0.04)), (0.14, 0.09), 0.45, -60.0, 0.4 * breath)
    spine = Ellipse((0.55, 0.0), (0.1, 0.1), 0.55, 0.0, 0.0)
    aorta = Ellipse((0.35, jit(0.08, 0.03)), (0.05, 0.05), 0.6, 0.0, 0.0)
    shapes = [body, liver, spleen, kid_l, kid_r, spine, aorta]
    for _ in range(int(rng.integers(2, 6))):
        r = rng.uniform(0.04, 0.1)
        shapes.append(
            Ellipse(
                (liver.center[0] + rng.uniform(-0.2, 0.2), liver.center[1] + rng.uniform(-0.25, 0.25)),
                (r, r * rng.uniform(0.7, 1.3)),
                float(rng.choice([-1.0, 1.0]) * rng.uniform(0.1, 0.25)),
                float(rng.uniform(0, 180)),
                breath,
            )
        )
    return tuple(shapes)


def displacement_schedule(amplitude, n_phases):
    """Shift in pixels of each phase: ``amplitude * sin(2 pi p / n_phases)``."""
    p = np.arange(n_phases)
    return amplitude * np.sin(2.0 * np.pi * p / n_phases)


def make_phantom(cfg):
    """Rasterise the phantom; returns a real-valued complex array (p, N, N) in [0, 1]."""
    N, s = cfg.size, cfg.supersample
    # subpixel sample positions in pixel units, centred on the grid
    sub = (np.arange(N * s) + 0.5) / s - 0.5 - (N - 1) / 2.0
    half = N / 2.0
    out = np.zeros((cfg.n_phases, N, N))
    rng = np.random.default_rng([cfg.seed, 7])
    for e in cfg.resolved_ellipses():
        # a few random plane waves in shape-local coordinates, so texture moves with the shape
        freqs = rng.uniform(-2.0, 2.0, size=(4, 2))
        phases = rng.uniform(0, 2 * np.pi, size=4)
        shifts = displacement_schedule(e.displacement, cfg.n_phases)
        th = np.deg2rad(e.angle)
        c, sn = np.cos(th), np.sin(th)
        for p in range(cfg.n_phases):
            u = (sub - shifts[p]) / half - e.center[0]
            v = sub / half - e.center[1]
            uu, vv = np.meshgrid(u, v, indexing="ij")
            ru = c * uu + sn * vv
            rv = -sn * uu + c * vv
            inside = (ru / e.axes[0]) ** 2 + (rv / e.axes[1]) ** 2 <= 1.0
            value = e.intensity * inside
            if cfg.texture:
                arg = np.pi * (freqs[:, 0, None, None] * ru / e.axes[0]
                               + freqs[:, 1, None, None] * rv / e.axes[1]) + phases[:, None, None]
                value = value * (1.0 + cfg.texture * np.cos(arg).mean(axis=0))
            out[p] += value.reshape(N, s, N, s).mean(axis=(1, 3))
    return np.clip(out, 0.0, 1.0).astype(np.complex128)


def spoke_angles(cfg, phase, n_phases=1):
    """Angles (radians, in [0, pi)) of the spokes of one phase."""
    s = np.arange(cfg.spokes)
    if cfg.scheme == "golden":
        idx = phase * cfg.spokes + s
        ang = cfg.rotation + idx * GOLDEN_ANGLE
    else:
        ang = cfg.rotation + np.pi * s / cfg.spokes + phase * np.pi / (cfg.spokes * n_phases)
    return np.mod(ang, np.pi)


def radial_trajectory(cfg, phase, n_phases=1):
    """Sampling coordinates (spokes * readout, 2) for one phase.

    Readout points are ``-0.5 + j / readout``; golden-angle spokes continue the
    sequence across phases.
    """
    if n_phases < 1 or not 0 <= phase < n_phases:
        raise ValueError(f"phase {phase} out of range for {n_phases} phases")
    ang = spoke_angles(cfg, phase, n_phases)
    k = -0.5 + np.arange(cfg.readout) / cfg.readout
    coords = np.stack(
        [k[None, :] * np.cos(ang)[:, None], k[None, :] * np.sin(ang)[:, None]], axis=-1
    ).reshape(-1, 2)
    # keep -0.5 <= k < 0.5 after rounding
    return np.clip(coords, -0.5, np.nextafter(0.5, 0))


def radial_pattern(cfg, n_phases, size):
    coords = np.stack([radial_trajectory(cfg, p, n_phases) for p in range(n_phases)])
    weights = radial_density_weights(coords, cfg.spokes, cfg.readout, size * size)
    return SamplingPattern(coords, weights, scheme="radial")


def spokes_for_rate(rate, size, readout=None):
    """Number of spokes giving ``rate`` of the ``size x size`` Cartesian samples."""
    readout = size if readout is None else readout
    return max(1, int(round(rate * size * size / readout)))


def synth_coil_maps(n_coils, shape, seed=0, uniform=False, width=0.9):
    """Smooth complex sensitivities with Gaussian magnitude and linear phase.

    Coil centres sit on a ring outside the field of view.  The maps are
    scaled so that the summed energy lies in ``[0.1, 4]`` at every pixel.
    """
    nx, ny = shape
    if n_coils < 1:
        raise ValueError("n_coils must be >= 1")
    if uniform:
        if n_coils != 1:
            raise ValueError("uniform maps are only defined for a single coil")
        return np.ones((1, nx, ny), dtype=np.complex128)
    rng = np.random.default_rng(seed)
    u = (np.arange(nx) - (nx - 1) / 2) / (nx / 2)
    v = (np.arange(ny) - (ny - 1) / 2) / (ny / 2)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    maps = np.empty((n_coils, nx, ny), dtype=np.complex128)
    for i in range(n_coils):
        phi = 2 * np.pi * i / n_coils + rng.uniform(-0.2, 0.2)
        cu, cv = 1.3 * np.cos(phi), 1.3 * np.sin(phi)
        mag = 0.25 + np.exp(-((uu - cu) ** 2 + (vv - cv) ** 2) / (2 * width**2))
        ramp = rng.uniform(-1, 1, size=2) * 0.5 * np.pi
        maps[i] = mag * np.exp(1j * (ramp[0] * uu + ramp[1] * vv + rng.uniform(0, 2 * np.pi)))
    energy = np.sum(np.abs(maps) ** 2, axis=0)
    maps *= np.sqrt(2.0 / energy.max())
    energy = np.sum(np.abs(maps) ** 2, axis=0)
    if energy.min() < 0.1:
        maps *= np.sqrt(0.1 / energy.min())
    return maps


def add_noise(y, snr_db, seed=0):
    """Add circular complex Gaussian noise at the given input SNR (dB).

    Per-sample variance is ``||y||^2 / (m * 10^(snr/10))``.  ``snr_db=None``
    or ``inf`` returns a copy of ``y``.
    """
    y = np.asarray(y, dtype=np.complex128)
    if snr_db is None or snr_db == np.inf:
        return y.copy()
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite, None or +inf")
    power = float(np.sum(np.abs(y) ** 2))
    if power == 0:
        raise ValueError("input SNR undefined for zero-energy data")
    sigma2 = power / (y.size * 10.0 ** (snr_db / 10.0))
    rng = check_random_state(seed)
    noise = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
    return y + np.sqrt(sigma2 / 2.0) * noise


def make_operator(cfg, n_phases, size, coil_seed=0, mode="direct"):
    pattern = radial_pattern(cfg, n_phases, size)
    maps = synth_coil_maps(cfg.n_coils, (size, size), seed=coil_seed, uniform=cfg.n_coils == 1)
    return MeasurementOperator(pattern, (size, size), maps, mode=mode)


def acquire(x, cfg, coil_seed=0, mode="direct"):
    """Simulate one acquisition of image ``x``; returns ``(operator, y)``."""
    n_phases, size = x.shape[0], x.shape[1]
    op = make_operator(cfg, n_phases, size, coil_seed=coil_seed, mode=mode)
    y = add_noise(op.forward(x), cfg.snr_db, cfg.seed)
    return op, y


@dataclass
class DatasetEntry:
    object_id: str
    acquisition_id: int
    image: np.ndarray
    digest: str
    path: str = None


@dataclass
class Dataset:
    entries: list = field(default_factory=list)

    def grouped(self):
        """``{object_id: [(acquisition_id, image), ...]}`` in insertion order."""
        out = {}
        for e in self.entries:
            out.setdefault(e.object_id, []).append((e.acquisition_id, e.image))
        return out


def make_dataset(phantoms, acq_cfgs, out_dir=None, coil_seed=0):
    """Pseudoinverse reconstructions of every object under every acquisition.

    Parameters
    ----------
    phantoms : mapping
        ``{object_id: image (p, N, N)}``.
    acq_cfgs : sequence of AcquisitionConfig, or mapping of object_id to one
        The acquisitions applied to each object.  Noise seeds are offset by
        object index so objects never share a noise realisation.
    out_dir : path, optional
        If given, images are written there and a ``manifest.json`` is saved.
    """
    from . import io as rio

    entries = []
    for j, (obj, x) in enumerate(phantoms.items()):
        cfgs = acq_cfgs[obj] if isinstance(acq_cfgs, dict) else acq_cfgs
        for i, cfg in enumerate(cfgs):
            cfg = replace(cfg, seed=cfg.seed + 1000 * j)
            op, y = acquire(x, cfg, coil_seed=coil_seed)
            xhat = op.pseudoinverse(y)
            entry = DatasetEntry(str(obj), i, xhat, config_digest(cfg))
            if out_dir is not None:
                entry.path = rio.write_image(f"{out_dir}/xhat_{obj}_{i}", xhat)
            entries.append(entry)
    dataset = Dataset(entries)
    if out_dir is not None:
        rio.write_manifest(
            f"{out_dir}/manifest.json",
            [
                {
                    "object_id": e.object_id,
                    "acquisition_id": e.acquisition_id,
                    "config_digest": e.digest,
                    "image": e.path,
                }
                for e in entries
            ],
        )
    return dataset
