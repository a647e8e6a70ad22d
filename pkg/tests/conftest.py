import numpy as np
import pytest

from rare.operators import MeasurementOperator, SamplingPattern, radial_density_weights
from rare.simulation import synth_coil_maps


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_radial_operator(rng, n=8, n_phases=1, spokes=3, readout=8, n_coils=1, mode="direct"):
    """Radial operator with random spoke angles and (optionally) random coil maps."""
    t = (np.arange(readout) - readout // 2) / readout
    coords = []
    for _ in range(n_phases):
        ang = rng.uniform(0, np.pi, spokes)
        c = np.stack([np.outer(np.cos(ang), t), np.outer(np.sin(ang), t)], axis=-1)
        coords.append(c.reshape(-1, 2))
    coords = np.clip(np.asarray(coords), -0.5, np.nextafter(0.5, 0))
    w = radial_density_weights(coords, spokes, readout, n * n)
    maps = None
    if n_coils > 1:
        maps = synth_coil_maps(n_coils, (n, n), seed=int(rng.integers(1 << 30)))
    return MeasurementOperator(SamplingPattern(coords, w), (n, n), maps, mode=mode)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def toy_denoising_set(seed, n, size=16, sigma=0.15):
    """Piecewise-constant discs with two independent complex noise draws.

    Returns ``(clean, noisy_a, noisy_b)``, each of shape (n, 1, size, size).
    """
    rng = np.random.default_rng(seed)
    clean = np.zeros((n, 1, size, size), complex)
    yy, xx = np.mgrid[:size, :size]
    for k in range(n):
        for _ in range(3):
            cx, cy = rng.uniform(3, size - 3, 2)
            r = rng.uniform(2, 5)
            clean[k, 0][(xx - cx) ** 2 + (yy - cy) ** 2 < r * r] += rng.uniform(0.3, 0.7)

    def noise():
        return sigma / np.sqrt(2) * (rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape))

    return clean, clean + noise(), clean + noise()


ACCEPTANCE_LINES = []


def record_criterion(name, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
